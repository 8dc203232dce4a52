#pragma once

#include "vcae/common.hpp"
#include "vcae/tape.hpp"

namespace vcae::div {

// Inverse multi-quadratic kernel selection; C is the bandwidth-like constant.
struct KernelSpec {
  enum class Kind { IMQ } kind = Kind::IMQ;
  double C = 1.0;
};

// C / (C + |x - y|^2); equals 1 iff x == y.
double imq_kernel(const RowVec& x, const RowVec& y, double C);

// IMQ kernel constant used against a N(0, sigma_z^2 I) prior.
inline double imq_c(int z_dim, double prior_variance = 1.0) {
  return 2.0 * z_dim * prior_variance;
}

// Unbiased (U-statistic) MMD^2 estimate between sample sets a (n x d) and
// b (m x d): mean over distinct pairs within each set minus twice the mean
// over cross pairs. Centered at 0 when both sets share a distribution.
double mmd_unbiased(const Mat& a, const Mat& b, const KernelSpec& kernel);

// Same estimator assembled on a tape so gradients flow into both sample sets.
ad::Var mmd_unbiased_ad(ad::Var a, ad::Var b, const KernelSpec& kernel);

// KL( N(mean, diag(std^2)) || N(0, I) ), closed form.
double gaussian_kl_diag(const RowVec& mean, const RowVec& std);

}  // namespace vcae::div
