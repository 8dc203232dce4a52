#include "vcae/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "vcae/archive.hpp"
#include "vcae/png_io.hpp"

namespace fs = std::filesystem;

namespace vcae::data {

const double kMogMean = 2.0;
const double kMogStd = 0.35;

MogSample generate_mog(int n, uint64_t seed) {
  require(n >= 4, "generate_mog: need n >= 4");
  Rng rng(seed);
  static const double cx[4] = {+kMogMean, -kMogMean, -kMogMean, +kMogMean};
  static const double cy[4] = {+kMogMean, +kMogMean, -kMogMean, -kMogMean};
  MogSample s;
  s.points.resize(n, 2);
  s.labels.resize(n);
  for (int i = 0; i < n; ++i) {
    int c = i % 4;  // balanced round-robin assignment
    s.labels[i] = c;
    s.points(i, 0) = cx[c] + kMogStd * rng.normal();
    s.points(i, 1) = cy[c] + kMogStd * rng.normal();
  }
  return s;
}

Mat project_highdim(const Mat& points, int D, uint64_t seed, bool identity_when_square) {
  require(D >= 2, "project_highdim: D must be >= 2");
  const int d = static_cast<int>(points.cols());
  if (identity_when_square && D == d) return points;
  require(D >= d, "project_highdim: target dimension below source dimension");
  Rng rng(seed);
  Mat g = rng.normal_mat(D, d);
  Eigen::HouseholderQR<Mat> qr(g);
  Mat q = qr.householderQ() * Mat::Identity(D, d);  // orthonormal columns
  return points * q.transpose();
}

Dataset make_mog_dataset(int n, int D, uint64_t seed, const std::string& split) {
  MogSample s = generate_mog(n, seed);
  Dataset ds;
  ds.name = "mog";
  ds.split = split;
  // the embedding is shared between splits: derived from the base seed only
  uint64_t embed_seed = 0x90D00000;
  ds.items = project_highdim(s.points, D, embed_seed);
  ds.shape = ItemShape{1, 1, D};
  ds.labels = s.labels;
  return ds;
}

// ---------------------------------------------------------------------------
// IDX
// ---------------------------------------------------------------------------

namespace {

std::vector<unsigned char> read_file_maybe_gz(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IngestionError("cannot open file: " + path);
  std::vector<unsigned char> raw((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
  if (raw.size() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b) {
    // gzip stream: inflate in chunks
    z_stream zs{};
    if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK)
      throw IngestionError("zlib init failed for " + path);
    std::vector<unsigned char> out;
    out.reserve(raw.size() * 4);
    std::vector<unsigned char> buf(1 << 16);
    zs.next_in = raw.data();
    zs.avail_in = static_cast<uInt>(raw.size());
    int rc = Z_OK;
    while (rc != Z_STREAM_END) {
      zs.next_out = buf.data();
      zs.avail_out = static_cast<uInt>(buf.size());
      rc = inflate(&zs, Z_NO_FLUSH);
      if (rc != Z_OK && rc != Z_STREAM_END) {
        inflateEnd(&zs);
        throw IngestionError("corrupt gzip stream: " + path);
      }
      out.insert(out.end(), buf.data(), buf.data() + (buf.size() - zs.avail_out));
    }
    inflateEnd(&zs);
    return out;
  }
  return raw;
}

uint32_t be32(const unsigned char* p) {
  return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
         (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

void put_be32(std::ofstream& f, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  f.write(reinterpret_cast<char*>(b), 4);
}

std::string idx_path(const std::string& root, const std::string& split, bool labels) {
  std::string stem = split == "train" ? "train" : "t10k";
  std::string name = labels ? stem + "-labels-idx1-ubyte" : stem + "-images-idx3-ubyte";
  std::string base = root + "/mnist/" + name;
  if (fs::exists(base)) return base;
  if (fs::exists(base + ".gz")) return base + ".gz";
  return base;  // loader reports the missing plain path
}

}  // namespace

Mat read_idx_images(const std::string& path, int* rows_out, int* cols_out) {
  std::vector<unsigned char> d = read_file_maybe_gz(path);
  if (d.size() < 16 || be32(d.data()) != 0x00000803)
    throw IngestionError("not an IDX image file (magic 0x803 expected): " + path);
  uint32_t n = be32(d.data() + 4), h = be32(d.data() + 8), w = be32(d.data() + 12);
  if (d.size() != 16 + static_cast<size_t>(n) * h * w)
    throw IngestionError("truncated IDX image file: " + path);
  Mat items(n, static_cast<long>(h) * w);
  const unsigned char* px = d.data() + 16;
  for (uint32_t i = 0; i < n; ++i)
    for (uint32_t p = 0; p < h * w; ++p)
      items(i, p) = px[static_cast<size_t>(i) * h * w + p] / 255.0;
  if (rows_out) *rows_out = static_cast<int>(h);
  if (cols_out) *cols_out = static_cast<int>(w);
  return items;
}

std::vector<int> read_idx_labels(const std::string& path) {
  std::vector<unsigned char> d = read_file_maybe_gz(path);
  if (d.size() < 8 || be32(d.data()) != 0x00000801)
    throw IngestionError("not an IDX label file (magic 0x801 expected): " + path);
  uint32_t n = be32(d.data() + 4);
  if (d.size() != 8 + n) throw IngestionError("truncated IDX label file: " + path);
  return std::vector<int>(d.begin() + 8, d.end());
}

void write_idx_images(const std::string& path, const Mat& items, int h, int w) {
  require(items.cols() == static_cast<long>(h) * w, "write_idx_images: size mismatch");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IngestionError("cannot open for writing: " + path);
  put_be32(f, 0x00000803);
  put_be32(f, static_cast<uint32_t>(items.rows()));
  put_be32(f, static_cast<uint32_t>(h));
  put_be32(f, static_cast<uint32_t>(w));
  std::vector<unsigned char> row(items.cols());
  for (long i = 0; i < items.rows(); ++i) {
    for (long j = 0; j < items.cols(); ++j) {
      double v = std::min(1.0, std::max(0.0, items(i, j)));
      row[j] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    f.write(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
}

void write_idx_labels(const std::string& path, const std::vector<int>& labels) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IngestionError("cannot open for writing: " + path);
  put_be32(f, 0x00000801);
  put_be32(f, static_cast<uint32_t>(labels.size()));
  for (int l : labels) {
    unsigned char b = static_cast<unsigned char>(l);
    f.write(reinterpret_cast<char*>(&b), 1);
  }
}

bool mnist_available(const std::string& root) {
  return fs::exists(idx_path(root, "train", false)) &&
         fs::exists(idx_path(root, "train", true)) &&
         fs::exists(idx_path(root, "test", false)) && fs::exists(idx_path(root, "test", true));
}

Dataset load_mnist(const std::string& root, const std::string& split) {
  require(split == "train" || split == "test", "load_mnist: split must be train|test");
  Dataset ds;
  ds.name = "mnist";
  ds.split = split;
  int h = 0, w = 0;
  ds.items = read_idx_images(idx_path(root, split, false), &h, &w);
  ds.labels = read_idx_labels(idx_path(root, split, true));
  if (static_cast<long>(ds.labels.size()) != ds.items.rows())
    throw IngestionError("mnist: image/label count mismatch under " + root);
  ds.shape = ItemShape{1, h, w};
  return ds;
}

Dataset reduced_mnist(const std::string& root, uint64_t seed) {
  Dataset full = load_mnist(root, "train");
  const int per_class = 60;
  std::vector<std::vector<int>> by_class(10);
  for (int i = 0; i < full.size(); ++i) {
    int l = full.labels[i];
    require(l >= 0 && l < 10, "reduced_mnist: label out of range");
    by_class[l].push_back(i);
  }
  Rng rng(seed);
  std::vector<int> chosen;
  for (int c = 0; c < 10; ++c) {
    require(static_cast<int>(by_class[c].size()) >= per_class,
            "reduced_mnist: class " + std::to_string(c) + " has too few samples");
    rng.shuffle(by_class[c]);
    for (int k = 0; k < per_class; ++k) chosen.push_back(by_class[c][k]);
  }
  std::sort(chosen.begin(), chosen.end());
  Dataset ds;
  ds.name = "reduced_mnist";
  ds.split = "train";
  ds.shape = full.shape;
  ds.items.resize(chosen.size(), full.items.cols());
  ds.labels.resize(chosen.size());
  for (size_t i = 0; i < chosen.size(); ++i) {
    ds.items.row(i) = full.items.row(chosen[i]);
    ds.labels[i] = full.labels[chosen[i]];
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic digit rendering
// ---------------------------------------------------------------------------

namespace {

struct Pt {
  double x, y;
};
using Polyline = std::vector<Pt>;

Polyline arc(double cx, double cy, double rx, double ry, double a0, double a1, int n) {
  Polyline p;
  for (int i = 0; i <= n; ++i) {
    double a = a0 + (a1 - a0) * i / n;
    p.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
  }
  return p;
}

// Digit skeletons in the unit square (x right, y down).
std::vector<Polyline> digit_strokes(int d) {
  const double pi = M_PI;
  switch (d) {
    case 0:
      return {arc(0.5, 0.5, 0.22, 0.34, 0, 2 * pi, 16)};
    case 1:
      return {{{0.35, 0.3}, {0.52, 0.14}, {0.52, 0.86}}, {{0.36, 0.86}, {0.68, 0.86}}};
    case 2:
      return {arc(0.5, 0.32, 0.22, 0.18, -pi, 0.35 * pi, 10),
              {{0.66, 0.48}, {0.28, 0.85}, {0.74, 0.85}}};
    case 3:
      return {arc(0.47, 0.3, 0.2, 0.16, -0.9 * pi, 0.5 * pi, 10),
              arc(0.47, 0.66, 0.22, 0.2, -0.5 * pi, 0.9 * pi, 10)};
    case 4:
      return {{{0.62, 0.12}, {0.26, 0.6}, {0.78, 0.6}}, {{0.62, 0.12}, {0.62, 0.88}}};
    case 5:
      return {{{0.7, 0.14}, {0.32, 0.14}, {0.3, 0.48}},
              arc(0.48, 0.64, 0.22, 0.2, -0.55 * pi, 0.75 * pi, 12)};
    case 6:
      return {arc(0.48, 0.66, 0.2, 0.19, 0, 2 * pi, 14),
              arc(0.62, 0.42, 0.36, 0.42, -0.85 * pi, -0.5 * pi, 8)};
    case 7:
      return {{{0.26, 0.15}, {0.74, 0.15}, {0.42, 0.86}}};
    case 8:
      return {arc(0.5, 0.31, 0.17, 0.15, 0, 2 * pi, 14),
              arc(0.5, 0.66, 0.21, 0.19, 0, 2 * pi, 14)};
    case 9:
      return {arc(0.52, 0.34, 0.2, 0.19, 0, 2 * pi, 14),
              {{0.72, 0.36}, {0.68, 0.88}}};
  }
  throw ConfigError("digit_strokes: digit out of range");
}

double seg_dist(const Pt& p, const Pt& a, const Pt& b) {
  double vx = b.x - a.x, vy = b.y - a.y;
  double wx = p.x - a.x, wy = p.y - a.y;
  double vv = vx * vx + vy * vy;
  double t = vv > 0 ? std::min(1.0, std::max(0.0, (wx * vx + wy * vy) / vv)) : 0.0;
  double dx = p.x - (a.x + t * vx), dy = p.y - (a.y + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

RowVec render_digit(int digit, Rng& rng, int hw) {
  // jittered affine placement
  double th = rng.uniform(-0.2, 0.2);
  double sx = rng.uniform(0.85, 1.15), sy = rng.uniform(0.85, 1.15);
  double shear = rng.uniform(-0.15, 0.15);
  double tx = rng.uniform(-0.05, 0.05), ty = rng.uniform(-0.05, 0.05);
  double thick = rng.uniform(0.045, 0.075);
  double intensity = rng.uniform(0.78, 1.0);

  auto xform = [&](const Pt& p) {
    double x = (p.x - 0.5) * sx, y = (p.y - 0.5) * sy;
    x += shear * y;
    double xr = x * std::cos(th) - y * std::sin(th);
    double yr = x * std::sin(th) + y * std::cos(th);
    return Pt{xr + 0.5 + tx, yr + 0.5 + ty};
  };

  std::vector<std::pair<Pt, Pt>> segs;
  for (const auto& stroke : digit_strokes(digit)) {
    for (size_t i = 0; i + 1 < stroke.size(); ++i)
      segs.emplace_back(xform(stroke[i]), xform(stroke[i + 1]));
  }

  RowVec out = RowVec::Zero(static_cast<long>(hw) * hw);
  const double aa = 0.75 / hw;  // anti-aliasing width
  for (int y = 0; y < hw; ++y) {
    for (int x = 0; x < hw; ++x) {
      Pt p{(x + 0.5) / hw, (y + 0.5) / hw};
      double dmin = 1e9;
      for (const auto& [a, b] : segs) dmin = std::min(dmin, seg_dist(p, a, b));
      double cov = std::min(1.0, std::max(0.0, (thick / 2 + aa - dmin) / (2 * aa)));
      if (cov > 0) out(y * hw + x) = intensity * cov;
    }
  }
  return out;
}

}  // namespace

void generate_synthetic_mnist(const std::string& root, int n_train, int n_test, uint64_t seed) {
  fs::create_directories(root + "/mnist");
  Rng rng(seed);
  auto make_split = [&](int n, const std::string& stem) {
    Mat items(n, 28 * 28);
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) {
      int d = rng.uniform_int(0, 9);
      labels[i] = d;
      items.row(i) = render_digit(d, rng, 28);
    }
    write_idx_images(root + "/mnist/" + stem + "-images-idx3-ubyte", items, 28, 28);
    write_idx_labels(root + "/mnist/" + stem + "-labels-idx1-ubyte", labels);
  };
  make_split(n_train, "train");
  make_split(n_test, "t10k");
}

// ---------------------------------------------------------------------------
// Factor dataset
// ---------------------------------------------------------------------------

int FactorDataset::index_of(const std::vector<int>& combo) const {
  require(combo.size() == factor_sizes.size(), "factor index: wrong arity");
  int idx = 0;
  for (size_t k = 0; k < combo.size(); ++k) {
    require(combo[k] >= 0 && combo[k] < factor_sizes[k], "factor index: value out of range");
    idx = idx * factor_sizes[k] + combo[k];
  }
  return idx;
}

namespace {

void hue_to_rgb(double t, double* r, double* g, double* b) {
  // simple HSV walk (s = 0.85, v = 0.9) over 80% of the wheel
  double h = 6.0 * 0.8 * t;
  int i = static_cast<int>(h) % 6;
  double f = h - std::floor(h);
  double v = 0.9, s = 0.85;
  double p = v * (1 - s), q = v * (1 - s * f), u = v * (1 - s * (1 - f));
  switch (i) {
    case 0: *r = v, *g = u, *b = p; break;
    case 1: *r = q, *g = v, *b = p; break;
    case 2: *r = p, *g = v, *b = u; break;
    case 3: *r = p, *g = q, *b = v; break;
    case 4: *r = u, *g = p, *b = v; break;
    default: *r = v, *g = p, *b = q; break;
  }
}

RowVec render_factor_image(const std::vector<double>& t, int hw) {
  // t holds normalised factor values in [0,1]: hue, floor hue, scale, x-pos
  RowVec out(3L * hw * hw);
  double orr, og, ob, fr, fg, fb;
  hue_to_rgb(t[0], &orr, &og, &ob);
  hue_to_rgb(t[1], &fr, &fg, &fb);
  const double wall[3] = {0.82, 0.84, 0.9};
  const int floor_y = static_cast<int>(0.62 * hw);
  double radius = (0.09 + 0.16 * t[2]) * hw;
  double cx = (0.2 + 0.6 * t[3]) * hw;
  double cy = floor_y - radius * 0.55;

  for (int y = 0; y < hw; ++y) {
    for (int x = 0; x < hw; ++x) {
      double r, g, b;
      if (y < floor_y) {
        r = wall[0], g = wall[1], b = wall[2];
      } else {
        r = fr, g = fg, b = fb;
      }
      double d = std::sqrt((x + 0.5 - cx) * (x + 0.5 - cx) + (y + 0.5 - cy) * (y + 0.5 - cy));
      double cov = std::min(1.0, std::max(0.0, radius - d + 0.5));
      if (cov > 0) {
        r = (1 - cov) * r + cov * orr;
        g = (1 - cov) * g + cov * og;
        b = (1 - cov) * b + cov * ob;
      }
      out(0L * hw * hw + y * hw + x) = r;
      out(1L * hw * hw + y * hw + x) = g;
      out(2L * hw * hw + y * hw + x) = b;
    }
  }
  return out;
}

}  // namespace

FactorDataset generate_factor_dataset(const std::vector<int>& factor_sizes, uint64_t seed) {
  (void)seed;  // rendering is deterministic; the seed is reserved for variants
  const int K = static_cast<int>(factor_sizes.size());
  if (K < 2) throw ConfigError("factor dataset: need at least 2 factors");
  if (K > 4) throw ConfigError("factor dataset: renderer supports at most 4 factors");
  long total = 1;
  for (int s : factor_sizes) {
    if (s < 2) throw ConfigError("factor dataset: every factor needs >= 2 values");
    total *= s;
    if (total > 1000000) throw ConfigError("factor dataset: grid exceeds 10^6 combinations");
  }

  const int hw = 32;
  FactorDataset fd;
  fd.shape = ItemShape{3, hw, hw};
  fd.factor_sizes = factor_sizes;
  fd.images.resize(total, 3L * hw * hw);
  fd.factor_values.resize(total, K);

  std::vector<int> combo(K, 0);
  for (long i = 0; i < total; ++i) {
    std::vector<double> t(4);
    // defaults for roles not covered by the requested factors
    const double fallback[4] = {0.0, 0.65, 0.5, 0.5};
    for (int k = 0; k < 4; ++k) {
      if (k < K)
        t[k] = factor_sizes[k] > 1 ? static_cast<double>(combo[k]) / (factor_sizes[k] - 1) : 0.0;
      else
        t[k] = fallback[k];
    }
    fd.images.row(i) = render_factor_image(t, hw);
    for (int k = 0; k < K; ++k) fd.factor_values(i, k) = combo[k];
    // odometer increment (row-major over the grid, matching index_of)
    for (int k = K - 1; k >= 0; --k) {
      if (++combo[k] < factor_sizes[k]) break;
      combo[k] = 0;
    }
  }
  return fd;
}

void FactorDataset::save(const std::string& path) const {
  ArchiveWriter w;
  w.meta["kind"] = "factor_dataset";
  w.meta["factor_sizes"] = factor_sizes;
  w.meta["shape"] = {shape.channels, shape.height, shape.width};
  w.add("images", images);
  Mat fv = factor_values.cast<double>();
  w.add("factor_values", fv);
  w.save(path);
}

FactorDataset FactorDataset::load(const std::string& path) {
  Archive a = Archive::load(path);
  FactorDataset fd;
  auto sh = a.meta().at("shape");
  fd.shape = ItemShape{sh[0].get<int>(), sh[1].get<int>(), sh[2].get<int>()};
  fd.factor_sizes = a.meta().at("factor_sizes").get<std::vector<int>>();
  fd.images = a.get("images");
  fd.factor_values = a.get("factor_values").cast<int>();
  return fd;
}

// ---------------------------------------------------------------------------
// CelebA preprocessing
// ---------------------------------------------------------------------------

PreprocessStats preprocess_celeba(const std::string& src_dir, const std::string& dst_dir) {
  if (!fs::exists(src_dir)) throw IngestionError("preprocess: missing source dir " + src_dir);
  fs::create_directories(dst_dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(src_dir))
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());

  PreprocessStats stats;
  for (const auto& p : files) {
    img::Image im = img::read_png(p.string());
    if (im.width < 140 || im.height < 140) {
      ++stats.skipped;
      continue;
    }
    int x0 = (im.width - 140) / 2, y0 = (im.height - 140) / 2;
    img::Image crop = img::Image::blank(140, 140, im.channels);
    for (int y = 0; y < 140; ++y)
      for (int x = 0; x < 140; ++x)
        for (int c = 0; c < im.channels; ++c) crop.at(y, x, c) = im.at(y0 + y, x0 + x, c);
    img::Image out = img::resize_bilinear(crop, 64, 64);
    img::write_png((fs::path(dst_dir) / p.filename()).string(), out);
    ++stats.processed;
  }
  return stats;
}

Dataset load_image_dir(const std::string& dir, const std::string& name,
                       const std::string& split) {
  if (!fs::exists(dir)) throw IngestionError("load_image_dir: missing " + dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IngestionError("load_image_dir: no png files in " + dir);

  Dataset ds;
  ds.name = name;
  ds.split = split;
  for (size_t i = 0; i < files.size(); ++i) {
    img::Image im = img::read_png(files[i].string());
    if (i == 0) {
      ds.shape = ItemShape{im.channels, im.height, im.width};
      ds.items.resize(files.size(), ds.shape.size());
    }
    require(im.channels == ds.shape.channels && im.height == ds.shape.height &&
                im.width == ds.shape.width,
            "load_image_dir: inconsistent image sizes");
    ds.items.row(i) = img::image_to_row(im);
  }
  return ds;
}

}  // namespace vcae::data
