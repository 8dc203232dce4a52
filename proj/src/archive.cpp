#include "vcae/archive.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

namespace vcae {

namespace {
constexpr char kMagic[] = "VCAR1\n";
}

void ArchiveWriter::add(const std::string& name, const Mat& m) {
  for (const auto& [n, _] : arrays_)
    if (n == name) throw ConfigError("archive: duplicate array name " + name);
  arrays_.emplace_back(name, m);
}

void ArchiveWriter::save(const std::string& path) const {
  nlohmann::json header;
  header["meta"] = meta;
  header["arrays"] = nlohmann::json::array();
  long offset = 0;
  for (const auto& [name, m] : arrays_) {
    header["arrays"].push_back({{"name", name},
                                {"rows", m.rows()},
                                {"cols", m.cols()},
                                {"offset", offset}});
    offset += m.size();
  }
  std::string hs = header.dump();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IngestionError("archive: cannot open for writing: " + path);
  f << kMagic << hs.size() << "\n" << hs;
  std::vector<double> row;
  for (const auto& [name, m] : arrays_) {
    row.resize(m.cols());
    for (long i = 0; i < m.rows(); ++i) {
      for (long j = 0; j < m.cols(); ++j) row[j] = m(i, j);
      f.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(sizeof(double) * row.size()));
    }
  }
  if (!f) throw IngestionError("archive: write failed: " + path);
}

Archive Archive::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IngestionError("archive: cannot open: " + path);
  std::string magic(6, '\0');
  f.read(magic.data(), 6);
  if (magic != kMagic) throw IngestionError("archive: bad magic in " + path);
  std::string len_line;
  std::getline(f, len_line);
  size_t hlen = 0;
  try {
    hlen = std::stoul(len_line);
  } catch (...) {
    throw IngestionError("archive: bad header length in " + path);
  }
  std::string hs(hlen, '\0');
  f.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!f) throw IngestionError("archive: truncated header in " + path);

  Archive a;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hs);
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError("archive: corrupt header in " + path + ": " + e.what());
  }
  a.meta_ = header.value("meta", nlohmann::json::object());

  std::streampos payload = f.tellg();
  for (const auto& e : header.at("arrays")) {
    long rows = e.at("rows").get<long>();
    long cols = e.at("cols").get<long>();
    long offset = e.at("offset").get<long>();
    Mat m(rows, cols);
    f.seekg(payload + static_cast<std::streamoff>(offset * sizeof(double)));
    std::vector<double> row(cols);
    for (long i = 0; i < rows; ++i) {
      f.read(reinterpret_cast<char*>(row.data()),
             static_cast<std::streamsize>(sizeof(double) * cols));
      for (long j = 0; j < cols; ++j) m(i, j) = row[j];
    }
    if (!f) throw IngestionError("archive: truncated payload in " + path);
    a.arrays_.emplace(e.at("name").get<std::string>(), std::move(m));
  }
  return a;
}

const Mat& Archive::get(const std::string& name) const {
  auto it = arrays_.find(name);
  if (it == arrays_.end()) throw IngestionError("archive: missing array " + name);
  return it->second;
}

std::vector<std::string> Archive::names() const {
  std::vector<std::string> ns;
  for (const auto& [n, _] : arrays_) ns.push_back(n);
  return ns;
}

}  // namespace vcae
