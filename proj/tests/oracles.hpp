#pragma once

// Independent numerical oracles shared by the test suites: central finite
// differences, quadrature, and small statistics helpers. Nothing here may
// call into the gradient machinery it is used to check.

#include <cmath>
#include <functional>

#include "vcae/common.hpp"

namespace oracle {

using vcae::Mat;

// Central finite differences of a scalar-valued function with respect to the
// entries of `x`. `f` must not cache state across calls.
inline Mat fd_grad(Mat x, const std::function<double(const Mat&)>& f, double h = 1e-5) {
  Mat g(x.rows(), x.cols());
  for (int i = 0; i < x.rows(); ++i) {
    for (int j = 0; j < x.cols(); ++j) {
      double keep = x(i, j);
      x(i, j) = keep + h;
      double fp = f(x);
      x(i, j) = keep - h;
      double fm = f(x);
      x(i, j) = keep;
      g(i, j) = (fp - fm) / (2.0 * h);
    }
  }
  return g;
}

inline double rel_err(const Mat& a, const Mat& b) {
  double denom = std::max(a.norm(), b.norm());
  if (denom == 0.0) return 0.0;
  return (a - b).norm() / denom;
}

inline double max_abs_diff(const Mat& a, const Mat& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

// Composite Simpson quadrature on [a, b].
inline double simpson(const std::function<double(double)>& f, double a, double b, int n) {
  if (n % 2 == 1) ++n;
  double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 == 1 ? 4.0 : 2.0);
  return s * h / 3.0;
}

// Least-squares slope of y against x.
inline double slope(const std::vector<double>& x, const std::vector<double>& y) {
  double mx = 0, my = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= x.size();
  my /= y.size();
  double num = 0, den = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    num += (x[i] - mx) * (y[i] - my);
    den += (x[i] - mx) * (x[i] - mx);
  }
  return num / den;
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace oracle
