#include "vcae/divergences.hpp"

#include <cmath>

namespace vcae::div {

double imq_kernel(const RowVec& x, const RowVec& y, double C) {
  if (C <= 0.0) throw ConfigError("imq_kernel: C must be positive");
  require(x.size() == y.size(), "imq_kernel: dimension mismatch");
  return C / (C + (x - y).squaredNorm());
}

namespace {

Mat imq_gram(const Mat& a, const Mat& b, double C) {
  Vec an = a.rowwise().squaredNorm();
  Vec bn = b.rowwise().squaredNorm();
  Mat d = -2.0 * a * b.transpose();
  d.colwise() += an;
  d.rowwise() += bn.transpose();
  d = d.cwiseMax(0.0);
  return (C / (C + d.array())).matrix();
}

}  // namespace

double mmd_unbiased(const Mat& a, const Mat& b, const KernelSpec& kernel) {
  if (kernel.C <= 0.0) throw ConfigError("mmd_unbiased: kernel C must be positive");
  const long n = a.rows(), m = b.rows();
  if (n < 2 || m < 2) throw InputError("mmd_unbiased: need at least two samples per set");
  require(a.cols() == b.cols(), "mmd_unbiased: dimension mismatch");
  Mat kaa = imq_gram(a, a, kernel.C);
  Mat kbb = imq_gram(b, b, kernel.C);
  Mat kab = imq_gram(a, b, kernel.C);
  double within_a = (kaa.sum() - kaa.trace()) / (static_cast<double>(n) * (n - 1));
  double within_b = (kbb.sum() - kbb.trace()) / (static_cast<double>(m) * (m - 1));
  double cross = kab.sum() / (static_cast<double>(n) * m);
  return within_a + within_b - 2.0 * cross;
}

ad::Var mmd_unbiased_ad(ad::Var a, ad::Var b, const KernelSpec& kernel) {
  const long n = a.rows(), m = b.rows();
  if (n < 2 || m < 2) throw InputError("mmd_unbiased_ad: need at least two samples per set");
  using namespace ad;
  // Diagonal kernel entries are identically 1 with zero gradient, so the
  // trace can be subtracted as a constant.
  Var kaa = imq_from_sqdist(pairwise_sqdist(a, a), kernel.C);
  Var kbb = imq_from_sqdist(pairwise_sqdist(b, b), kernel.C);
  Var kab = imq_from_sqdist(pairwise_sqdist(a, b), kernel.C);
  Var ta = scale(add_scalar(sum(kaa), -static_cast<double>(n)),
                 1.0 / (static_cast<double>(n) * (n - 1)));
  Var tb = scale(add_scalar(sum(kbb), -static_cast<double>(m)),
                 1.0 / (static_cast<double>(m) * (m - 1)));
  Var tab = scale(sum(kab), -2.0 / (static_cast<double>(n) * m));
  return add(add(ta, tb), tab);
}

double gaussian_kl_diag(const RowVec& mean, const RowVec& std) {
  require(mean.size() == std.size(), "gaussian_kl_diag: dimension mismatch");
  if ((std.array() <= 0.0).any())
    throw InputError("gaussian_kl_diag: standard deviations must be positive");
  double kl = 0.0;
  for (int i = 0; i < mean.size(); ++i) {
    double s2 = std(i) * std(i);
    kl += 0.5 * (mean(i) * mean(i) + s2 - 1.0 - std::log(s2));
  }
  return kl;
}

}  // namespace vcae::div
