#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vcae/common.hpp"
#include "vcae/rng.hpp"

namespace vcae::data {

// In-memory dataset; one row per item, pixel values in [0, 1].
struct Dataset {
  std::string name;
  std::string split;  // "train" | "test"
  ItemShape shape;
  Mat items;
  std::vector<int> labels;  // empty when unlabeled

  int size() const { return static_cast<int>(items.rows()); }
};

// ---------------------------------------------------------------------------
// Mixture-of-Gaussians toy (four components at (+-2, +-2), std 0.35; these
// constants are this lab's choice, the reference figures do not pin them).
// ---------------------------------------------------------------------------

struct MogSample {
  Mat points;               // n x 2
  std::vector<int> labels;  // component ids, round-robin balanced
};

MogSample generate_mog(int n, uint64_t seed);

extern const double kMogMean;  // 2.0
extern const double kMogStd;   // 0.35

// Seeded linear embedding with orthonormal columns (isometric), so distances
// and squared errors are comparable between the 2D and D-dimensional views.
// With identity_when_square, D == input dim returns the points unchanged.
Mat project_highdim(const Mat& points, int D, uint64_t seed,
                    bool identity_when_square = true);

Dataset make_mog_dataset(int n, int D, uint64_t seed, const std::string& split);

// ---------------------------------------------------------------------------
// MNIST (IDX format, gzip-transparent) and the ReducedMNIST subset.
// ---------------------------------------------------------------------------

Dataset load_mnist(const std::string& root, const std::string& split);
// Seeded class-balanced 600-element subset of the train split (60 per class).
Dataset reduced_mnist(const std::string& root, uint64_t seed);
bool mnist_available(const std::string& root);

// Low-level IDX access (exposed for tooling and tests).
Mat read_idx_images(const std::string& path, int* rows_out = nullptr, int* cols_out = nullptr);
std::vector<int> read_idx_labels(const std::string& path);
void write_idx_images(const std::string& path, const Mat& items, int h, int w);
void write_idx_labels(const std::string& path, const std::vector<int>& labels);

// Procedural MNIST-format stand-in (rendered digit glyphs with affine and
// stroke variation) written as standard IDX files under <root>/mnist. Lets
// the whole pipeline run offline; real IDX files, when supplied, are read by
// the same loader.
void generate_synthetic_mnist(const std::string& root, int n_train = 60000,
                              int n_test = 10000, uint64_t seed = 1234);

// ---------------------------------------------------------------------------
// Synthetic factor dataset (complete grid, desk-scale stand-in for a
// shape/room dataset). Factor roles in order: object hue, floor hue, object
// scale, object x-position; up to four factors, each with >= 2 values.
// ---------------------------------------------------------------------------

struct FactorDataset {
  ItemShape shape;
  Mat images;                      // N x size, N = prod(factor_sizes)
  std::vector<int> factor_sizes;   // K entries
  Eigen::MatrixXi factor_values;   // N x K, row i = combination of image i

  int n_factors() const { return static_cast<int>(factor_sizes.size()); }
  int index_of(const std::vector<int>& combo) const;

  void save(const std::string& path) const;
  static FactorDataset load(const std::string& path);
};

FactorDataset generate_factor_dataset(const std::vector<int>& factor_sizes, uint64_t seed);

// ---------------------------------------------------------------------------
// CelebA-style preprocessing: 140x140 centre crop, bilinear resize to 64x64,
// written as a PNG tree mirroring source names.
// ---------------------------------------------------------------------------

struct PreprocessStats {
  int processed = 0;
  int skipped = 0;  // undersized sources
};

PreprocessStats preprocess_celeba(const std::string& src_dir, const std::string& dst_dir);

// Loads a directory of equally-sized PNGs (sorted by name) as a dataset.
Dataset load_image_dir(const std::string& dir, const std::string& name,
                       const std::string& split);

}  // namespace vcae::data
