#include "vcae/nn.hpp"

#include <cmath>

namespace vcae::nn {

Mat init_dense(int in, int out, Rng& rng, double scale) {
  double s = scale > 0.0 ? scale : std::sqrt(2.0 / in);
  return rng.normal_mat(in, out, s);
}

Dense::Dense(std::string name, int in, int out, Rng& rng, double init_scale)
    : w_(name + ".w", init_dense(in, out, rng, init_scale)),
      b_(name + ".b", Mat::Zero(1, out)) {}

ad::Var Dense::apply(ad::Tape& t, ad::Var x, bool) {
  return ad::add_rowvec(ad::matmul(x, t.param(w_)), t.param(b_));
}

Conv::Conv(std::string name, const ad::ConvGeom& g, Rng& rng)
    : g_(g),
      w_(name + ".w", rng.normal_mat(g.out_c, g.cols_k(), std::sqrt(2.0 / g.cols_k()))),
      b_(name + ".b", Mat::Zero(1, g.out_c)) {}

ad::Var Conv::apply(ad::Tape& t, ad::Var x, bool) {
  return ad::conv2d(x, t.param(w_), t.param(b_), g_);
}

TConv::TConv(std::string name, int in_c, int in_h, int in_w, int out_c, int k, int stride,
             Rng& rng)
    : adj_(ad::ConvGeom::same(out_c, in_h * stride, in_w * stride, in_c, k, stride)),
      w_(name + ".w",
         rng.normal_mat(adj_.out_c, adj_.cols_k(), std::sqrt(2.0 / adj_.cols_k()))),
      b_(name + ".b", Mat::Zero(1, out_c)) {
  // The adjoint conv maps the upsampled grid back onto the tconv input grid;
  // verify it lands exactly there.
  require(adj_.out_h == in_h && adj_.out_w == in_w,
          "TConv: adjoint geometry does not reproduce the input grid");
}

ad::Var TConv::apply(ad::Tape& t, ad::Var x, bool) {
  return ad::tconv2d(x, t.param(w_), t.param(b_), adj_);
}

BatchNorm::BatchNorm(std::string name, int channels, int hw)
    : c_(channels),
      hw_(hw),
      gamma_(name + ".gamma", Mat::Ones(1, channels)),
      beta_(name + ".beta", Mat::Zero(1, channels)),
      name_(name) {}

ad::Var BatchNorm::apply(ad::Tape& t, ad::Var x, bool train) {
  return ad::batchnorm(x, t.param(gamma_), t.param(beta_), c_, hw_, train, buf_);
}

std::vector<std::pair<std::string, Mat>> BatchNorm::buffers() const {
  Mat rm = buf_.initialised ? Mat(buf_.running_mean.transpose()) : Mat::Zero(1, c_);
  Mat rv = buf_.initialised ? Mat(buf_.running_var.transpose()) : Mat::Ones(1, c_);
  return {{name_ + ".running_mean", rm}, {name_ + ".running_var", rv}};
}

void BatchNorm::set_buffer(const std::string& name, const Mat& value) {
  if (name == name_ + ".running_mean") {
    buf_.running_mean = value.row(0).transpose();
    buf_.initialised = true;
  } else if (name == name_ + ".running_var") {
    buf_.running_var = value.row(0).transpose();
    buf_.initialised = true;
  }
}

void Adam::step(const std::vector<Parameter*>& params, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (Parameter* p : params) {
    p->adam_m = beta1_ * p->adam_m + (1.0 - beta1_) * p->grad;
    p->adam_v = (beta2_ * p->adam_v.array() + (1.0 - beta2_) * p->grad.array().square()).matrix();
    Mat mhat = p->adam_m / bc1;
    Mat vhat = p->adam_v / bc2;
    p->value -= (lr * mhat.array() / (vhat.array().sqrt() + eps_)).matrix();
    p->zero_grad();
  }
}

}  // namespace vcae::nn
