#pragma once

#include <string>

#include "vcae/common.hpp"

namespace vcae::nn {

// Trainable tensor plus its gradient accumulator and Adam state.
struct Parameter {
  std::string name;
  Mat value;
  Mat grad;
  Mat adam_m;
  Mat adam_v;

  Parameter() = default;
  Parameter(std::string n, Mat v) : name(std::move(n)), value(std::move(v)) { reset_state(); }

  void reset_state() {
    grad = Mat::Zero(value.rows(), value.cols());
    adam_m = Mat::Zero(value.rows(), value.cols());
    adam_v = Mat::Zero(value.rows(), value.cols());
  }

  void zero_grad() { grad.setZero(); }
};

}  // namespace vcae::nn
