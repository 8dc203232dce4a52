#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace vcae {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;

// Error taxonomy. Everything user-facing derives from Error so the CLI can
// map failures to exit codes uniformly.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad tensor shapes, malformed batches and the like.
struct InputError : Error {
  using Error::Error;
};

// Invalid configuration values (negative variance, unknown preset, ...).
struct ConfigError : Error {
  using Error::Error;
};

// Missing or corrupt files during dataset ingestion.
struct IngestionError : Error {
  using Error::Error;
};

// Non-finite losses, divergent optimisation, undefined scores.
struct NumericError : Error {
  using Error::Error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw InputError(msg);
}

inline bool all_finite(const Mat& m) { return m.allFinite(); }

// Shape of one dataset item. Dense data uses {1, 1, dim}.
struct ItemShape {
  int channels = 1;
  int height = 1;
  int width = 1;
  int size() const { return channels * height * width; }
  bool operator==(const ItemShape&) const = default;
};

}  // namespace vcae
