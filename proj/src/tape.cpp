#include "vcae/tape.hpp"

#include <cmath>
#include <memory>

#include "vcae/parameter.hpp"

namespace vcae::ad {

Var Tape::param(nn::Parameter& p) {
  Var v = push(p.value, true);
  nn::Parameter* pp = &p;
  Tape* t = this;
  set_back(v, [t, v, pp]() { pp->grad += t->grad(v); });
  return v;
}

namespace {

void check_same_shape(Var a, Var b, const char* op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(),
          std::string(op) + ": shape mismatch");
}

// Builds a node and wires its backward only when gradients actually flow.
template <typename F>
Var make(Tape* t, Mat value, std::initializer_list<Var> parents, F&& back) {
  bool ng = any_grad(parents);
  Var out = t->node(std::move(value), ng);
  if (ng) t->set_back(out, [t, out, back = std::forward<F>(back)]() { back(out); });
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise / linear algebra
// ---------------------------------------------------------------------------

Var add(Var a, Var b) {
  check_same_shape(a, b, "add");
  Tape* t = a.tape;
  return make(t, a.val() + b.val(), {a, b}, [t, a, b](Var out) {
    const Mat& u = t->grad(out);
    t->accum(a, u);
    t->accum(b, u);
  });
}

Var sub(Var a, Var b) {
  check_same_shape(a, b, "sub");
  Tape* t = a.tape;
  return make(t, a.val() - b.val(), {a, b}, [t, a, b](Var out) {
    const Mat& u = t->grad(out);
    t->accum(a, u);
    t->accum(b, -u);
  });
}

Var mul(Var a, Var b) {
  check_same_shape(a, b, "mul");
  Tape* t = a.tape;
  return make(t, a.val().cwiseProduct(b.val()), {a, b}, [t, a, b](Var out) {
    const Mat& u = t->grad(out);
    t->accum(a, u.cwiseProduct(b.val()));
    t->accum(b, u.cwiseProduct(a.val()));
  });
}

Var neg(Var a) { return scale(a, -1.0); }

Var scale(Var a, double c) {
  Tape* t = a.tape;
  return make(t, a.val() * c, {a}, [t, a, c](Var out) { t->accum(a, t->grad(out) * c); });
}

Var add_scalar(Var a, double c) {
  Tape* t = a.tape;
  return make(t, Mat(a.val().array() + c), {a}, [t, a](Var out) { t->accum(a, t->grad(out)); });
}

Var matmul(Var a, Var b) {
  require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Tape* t = a.tape;
  return make(t, a.val() * b.val(), {a, b}, [t, a, b](Var out) {
    const Mat& u = t->grad(out);
    t->accum(a, u * b.val().transpose());
    t->accum(b, a.val().transpose() * u);
  });
}

Var matmul_masked(Var x, Var w, const Mat& mask) {
  require(x.cols() == w.rows(), "matmul_masked: inner dimensions differ");
  require(mask.rows() == w.rows() && mask.cols() == w.cols(),
          "matmul_masked: mask shape");
  Tape* t = x.tape;
  Mat wm = w.val().cwiseProduct(mask);
  return make(t, x.val() * wm, {x, w}, [t, x, w, mask](Var out) {
    const Mat& u = t->grad(out);
    Mat wm = w.val().cwiseProduct(mask);
    t->accum(x, u * wm.transpose());
    t->accum(w, (x.val().transpose() * u).cwiseProduct(mask));
  });
}

Var transpose(Var a) {
  Tape* t = a.tape;
  return make(t, a.val().transpose(), {a},
              [t, a](Var out) { t->accum(a, t->grad(out).transpose()); });
}

Var add_rowvec(Var a, Var r) {
  require(r.rows() == 1 && r.cols() == a.cols(), "add_rowvec: shape");
  Tape* t = a.tape;
  Mat v = a.val();
  v.rowwise() += Eigen::RowVectorXd(r.val().row(0));
  return make(t, std::move(v), {a, r}, [t, a, r](Var out) {
    const Mat& u = t->grad(out);
    t->accum(a, u);
    t->accum(r, u.colwise().sum());
  });
}

Var mul_rowvec(Var a, Var r) {
  require(r.rows() == 1 && r.cols() == a.cols(), "mul_rowvec: shape");
  Tape* t = a.tape;
  Mat v = (a.val().array().rowwise() * r.val().row(0).array()).matrix();
  return make(t, std::move(v), {a, r}, [t, a, r](Var out) {
    const Mat& u = t->grad(out);
    t->accum(a, (u.array().rowwise() * r.val().row(0).array()).matrix());
    t->accum(r, u.cwiseProduct(a.val()).colwise().sum());
  });
}

Var add_colvec(Var a, Var c) {
  require(c.cols() == 1 && c.rows() == a.rows(), "add_colvec: shape");
  Tape* t = a.tape;
  Mat v = a.val();
  v.colwise() += Eigen::VectorXd(c.val().col(0));
  return make(t, std::move(v), {a, c}, [t, a, c](Var out) {
    const Mat& u = t->grad(out);
    t->accum(a, u);
    t->accum(c, u.rowwise().sum());
  });
}

// ---------------------------------------------------------------------------
// Nonlinearities
// ---------------------------------------------------------------------------

Var relu(Var a) {
  Tape* t = a.tape;
  return make(t, a.val().cwiseMax(0.0), {a}, [t, a](Var out) {
    Mat m = (a.val().array() > 0.0).cast<double>().matrix();
    t->accum(a, t->grad(out).cwiseProduct(m));
  });
}

Var leaky_relu(Var a, double alpha) {
  Tape* t = a.tape;
  Mat v = a.val().array().max(a.val().array() * alpha).matrix();
  return make(t, std::move(v), {a}, [t, a, alpha](Var out) {
    Mat m = (a.val().array() > 0.0).select(Mat::Ones(a.rows(), a.cols()),
                                           Mat::Constant(a.rows(), a.cols(), alpha));
    t->accum(a, t->grad(out).cwiseProduct(m));
  });
}

Var tanh_(Var a) {
  Tape* t = a.tape;
  return make(t, Mat(a.val().array().tanh().matrix()), {a}, [t, a](Var out) {
    Mat o = t->val(out);
    t->accum(a, t->grad(out).cwiseProduct((1.0 - o.array().square()).matrix()));
  });
}

Var sigmoid(Var a) {
  Tape* t = a.tape;
  Mat v = (1.0 / (1.0 + (-a.val().array()).exp())).matrix();
  return make(t, std::move(v), {a}, [t, a](Var out) {
    Mat o = t->val(out);
    t->accum(a, t->grad(out).cwiseProduct((o.array() * (1.0 - o.array())).matrix()));
  });
}

Var exp_(Var a) {
  Tape* t = a.tape;
  return make(t, Mat(a.val().array().exp().matrix()), {a}, [t, a](Var out) {
    t->accum(a, t->grad(out).cwiseProduct(t->val(out)));
  });
}

Var log_(Var a) {
  Tape* t = a.tape;
  return make(t, Mat(a.val().array().log().matrix()), {a}, [t, a](Var out) {
    t->accum(a, t->grad(out).cwiseQuotient(a.val()));
  });
}

Var softplus(Var a) {
  Tape* t = a.tape;
  // log(1 + e^x) computed stably as max(x,0) + log1p(exp(-|x|)).
  Mat v = (a.val().array().max(0.0) + (-a.val().array().abs()).exp().log1p()).matrix();
  return make(t, std::move(v), {a}, [t, a](Var out) {
    Mat s = (1.0 / (1.0 + (-a.val().array()).exp())).matrix();
    t->accum(a, t->grad(out).cwiseProduct(s));
  });
}

Var square(Var a) {
  Tape* t = a.tape;
  return make(t, Mat(a.val().array().square().matrix()), {a}, [t, a](Var out) {
    t->accum(a, 2.0 * t->grad(out).cwiseProduct(a.val()));
  });
}

Var sqrt_(Var a) {
  Tape* t = a.tape;
  return make(t, Mat(a.val().array().sqrt().matrix()), {a}, [t, a](Var out) {
    t->accum(a, (t->grad(out).array() / (2.0 * t->val(out).array())).matrix());
  });
}

Var abs_(Var a) {
  Tape* t = a.tape;
  return make(t, Mat(a.val().array().abs().matrix()), {a}, [t, a](Var out) {
    // sign() is 0 at 0: the subgradient at the kink is taken to be 0.
    Mat s = a.val().array().sign().matrix();
    t->accum(a, t->grad(out).cwiseProduct(s));
  });
}

Var tanh_squash(Var a, double cap) {
  Tape* t = a.tape;
  Mat v = (cap * (a.val().array() / cap).tanh()).matrix();
  return make(t, std::move(v), {a}, [t, a, cap](Var out) {
    Mat o = t->val(out);
    Mat d = (1.0 - (o.array() / cap).square()).matrix();
    t->accum(a, t->grad(out).cwiseProduct(d.matrix()));
  });
}

// ---------------------------------------------------------------------------
// Reductions and reshaping
// ---------------------------------------------------------------------------

Var sum(Var a) {
  Tape* t = a.tape;
  Mat v(1, 1);
  v(0, 0) = a.val().sum();
  return make(t, std::move(v), {a}, [t, a](Var out) {
    t->accum(a, Mat::Constant(a.rows(), a.cols(), t->grad(out)(0, 0)));
  });
}

Var mean_all(Var a) {
  Tape* t = a.tape;
  double n = static_cast<double>(a.rows()) * a.cols();
  Mat v(1, 1);
  v(0, 0) = a.val().sum() / n;
  return make(t, std::move(v), {a}, [t, a, n](Var out) {
    t->accum(a, Mat::Constant(a.rows(), a.cols(), t->grad(out)(0, 0) / n));
  });
}

Var colwise_sum(Var a) {
  Tape* t = a.tape;
  return make(t, a.val().colwise().sum(), {a}, [t, a](Var out) {
    const Mat& u = t->grad(out);
    t->accum(a, u.replicate(a.rows(), 1));
  });
}

Var colwise_mean(Var a) {
  Tape* t = a.tape;
  double n = static_cast<double>(a.rows());
  return make(t, a.val().colwise().sum() / n, {a}, [t, a, n](Var out) {
    const Mat& u = t->grad(out);
    t->accum(a, u.replicate(a.rows(), 1) / n);
  });
}

Var rowwise_sum(Var a) {
  Tape* t = a.tape;
  return make(t, a.val().rowwise().sum(), {a}, [t, a](Var out) {
    const Mat& u = t->grad(out);
    t->accum(a, u.replicate(1, a.cols()));
  });
}

Var slice_cols(Var a, int j0, int width) {
  require(j0 >= 0 && j0 + width <= a.cols(), "slice_cols: out of range");
  Tape* t = a.tape;
  return make(t, a.val().middleCols(j0, width), {a}, [t, a, j0, width](Var out) {
    Mat d = Mat::Zero(a.rows(), a.cols());
    d.middleCols(j0, width) = t->grad(out);
    t->accum(a, d);
  });
}

Var concat_cols(Var a, Var b) {
  require(a.rows() == b.rows(), "concat_cols: row mismatch");
  Tape* t = a.tape;
  Mat v(a.rows(), a.cols() + b.cols());
  v.leftCols(a.cols()) = a.val();
  v.rightCols(b.cols()) = b.val();
  return make(t, std::move(v), {a, b}, [t, a, b](Var out) {
    const Mat& u = t->grad(out);
    t->accum(a, u.leftCols(a.cols()));
    t->accum(b, u.rightCols(b.cols()));
  });
}

Var permute_cols(Var a, const std::vector<int>& perm) {
  require(static_cast<int>(perm.size()) == a.cols(), "permute_cols: size");
  Tape* t = a.tape;
  Mat v(a.rows(), a.cols());
  for (int j = 0; j < a.cols(); ++j) v.col(j) = a.val().col(perm[j]);
  return make(t, std::move(v), {a}, [t, a, perm](Var out) {
    const Mat& u = t->grad(out);
    Mat d = Mat::Zero(a.rows(), a.cols());
    for (int j = 0; j < a.cols(); ++j) d.col(perm[j]) = u.col(j);
    t->accum(a, d);
  });
}

// ---------------------------------------------------------------------------
// Kernel helpers
// ---------------------------------------------------------------------------

Var pairwise_sqdist(Var a, Var b) {
  require(a.cols() == b.cols(), "pairwise_sqdist: dim mismatch");
  Tape* t = a.tape;
  Vec an = a.val().rowwise().squaredNorm();
  Vec bn = b.val().rowwise().squaredNorm();
  Mat d = (-2.0 * a.val() * b.val().transpose());
  d.colwise() += an;
  d.rowwise() += bn.transpose();
  d = d.cwiseMax(0.0);  // guard tiny negatives from cancellation
  return make(t, std::move(d), {a, b}, [t, a, b](Var out) {
    const Mat& u = t->grad(out);
    Vec ru = u.rowwise().sum();
    Vec cu = u.colwise().sum();
    t->accum(a, 2.0 * (ru.asDiagonal() * a.val() - u * b.val()));
    t->accum(b, 2.0 * (cu.asDiagonal() * b.val() - u.transpose() * a.val()));
  });
}

Var imq_from_sqdist(Var d, double C) {
  require(C > 0.0, "imq_from_sqdist: C must be positive");
  Tape* t = d.tape;
  Mat k = (C / (C + d.val().array())).matrix();
  return make(t, std::move(k), {d}, [t, d, C](Var out) {
    Mat k = t->val(out);
    t->accum(d, -t->grad(out).cwiseProduct((k.array().square() / C).matrix()));
  });
}

Var logsumexp_rows(Var a) {
  Tape* t = a.tape;
  Vec m = a.val().rowwise().maxCoeff();
  Mat shifted = a.val();
  shifted.colwise() -= m;
  Vec lse = shifted.array().exp().rowwise().sum().log().matrix();
  Mat v = (m + lse);
  return make(t, std::move(v), {a}, [t, a](Var out) {
    const Mat& u = t->grad(out);
    Mat soft = a.val();
    soft.colwise() -= Vec(t->val(out).col(0));
    soft = soft.array().exp().matrix();
    t->accum(a, (soft.array().colwise() * u.col(0).array()).matrix());
  });
}

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

ConvGeom ConvGeom::same(int in_c, int in_h, int in_w, int out_c, int k, int stride) {
  ConvGeom g;
  g.in_c = in_c;
  g.in_h = in_h;
  g.in_w = in_w;
  g.out_c = out_c;
  g.k = k;
  g.stride = stride;
  g.out_h = (in_h + stride - 1) / stride;
  g.out_w = (in_w + stride - 1) / stride;
  int pad_h = std::max(0, (g.out_h - 1) * stride + k - in_h);
  int pad_w = std::max(0, (g.out_w - 1) * stride + k - in_w);
  g.pad_t = pad_h / 2;
  g.pad_b = pad_h - g.pad_t;
  g.pad_l = pad_w / 2;
  g.pad_r = pad_w - g.pad_l;
  return g;
}

Mat conv_im2col(const Mat& x, const ConvGeom& g) {
  const int B = static_cast<int>(x.rows());
  const int ohw = g.out_h * g.out_w;
  Mat cols = Mat::Zero(static_cast<long>(B) * ohw, g.cols_k());
  for (int b = 0; b < B; ++b) {
    for (int c = 0; c < g.in_c; ++c) {
      const int base_in = c * g.in_h * g.in_w;
      for (int kh = 0; kh < g.k; ++kh) {
        for (int kw = 0; kw < g.k; ++kw) {
          const int col = (c * g.k + kh) * g.k + kw;
          for (int oh = 0; oh < g.out_h; ++oh) {
            const int ih = oh * g.stride - g.pad_t + kh;
            if (ih < 0 || ih >= g.in_h) continue;
            const long row0 = static_cast<long>(b) * ohw + static_cast<long>(oh) * g.out_w;
            for (int ow = 0; ow < g.out_w; ++ow) {
              const int iw = ow * g.stride - g.pad_l + kw;
              if (iw < 0 || iw >= g.in_w) continue;
              cols(row0 + ow, col) = x(b, base_in + ih * g.in_w + iw);
            }
          }
        }
      }
    }
  }
  return cols;
}

namespace {

// (B*OH*OW) x OC  ->  B x (OC*OH*OW)
Mat fold_out(const Mat& y2, int B, const ConvGeom& g) {
  const int ohw = g.out_h * g.out_w;
  Mat out(B, g.out_c * ohw);
  for (int b = 0; b < B; ++b)
    for (int oc = 0; oc < g.out_c; ++oc)
      for (int p = 0; p < ohw; ++p)
        out(b, oc * ohw + p) = y2(static_cast<long>(b) * ohw + p, oc);
  return out;
}

// B x (OC*OH*OW)  ->  (B*OH*OW) x OC
Mat unfold_out(const Mat& y, const ConvGeom& g) {
  const int B = static_cast<int>(y.rows());
  const int ohw = g.out_h * g.out_w;
  Mat y2(static_cast<long>(B) * ohw, g.out_c);
  for (int b = 0; b < B; ++b)
    for (int oc = 0; oc < g.out_c; ++oc)
      for (int p = 0; p < ohw; ++p)
        y2(static_cast<long>(b) * ohw + p, oc) = y(b, oc * ohw + p);
  return y2;
}

// Scatter-add of column patches back onto the input grid.
Mat col2im(const Mat& cols, int B, const ConvGeom& g) {
  const int ohw = g.out_h * g.out_w;
  Mat x = Mat::Zero(B, g.in_size());
  for (int b = 0; b < B; ++b) {
    for (int c = 0; c < g.in_c; ++c) {
      const int base_in = c * g.in_h * g.in_w;
      for (int kh = 0; kh < g.k; ++kh) {
        for (int kw = 0; kw < g.k; ++kw) {
          const int col = (c * g.k + kh) * g.k + kw;
          for (int oh = 0; oh < g.out_h; ++oh) {
            const int ih = oh * g.stride - g.pad_t + kh;
            if (ih < 0 || ih >= g.in_h) continue;
            const long row0 = static_cast<long>(b) * ohw + static_cast<long>(oh) * g.out_w;
            for (int ow = 0; ow < g.out_w; ++ow) {
              const int iw = ow * g.stride - g.pad_l + kw;
              if (iw < 0 || iw >= g.in_w) continue;
              x(b, base_in + ih * g.in_w + iw) += cols(row0 + ow, col);
            }
          }
        }
      }
    }
  }
  return x;
}

}  // namespace

Mat conv_fwd(const Mat& x, const Mat& w, const ConvGeom& g) {
  Mat cols = conv_im2col(x, g);
  Mat y2 = cols * w.transpose();
  return fold_out(y2, static_cast<int>(x.rows()), g);
}

Mat conv_bwd_data(const Mat& dy, const Mat& w, const ConvGeom& g) {
  Mat dy2 = unfold_out(dy, g);
  Mat dcols = dy2 * w;
  return col2im(dcols, static_cast<int>(dy.rows()), g);
}

Mat conv_bwd_weights(const Mat& x, const Mat& dy, const ConvGeom& g) {
  Mat cols = conv_im2col(x, g);
  Mat dy2 = unfold_out(dy, g);
  return dy2.transpose() * cols;
}

Var conv2d(Var x, Var w, Var b, const ConvGeom& g) {
  require(x.cols() == g.in_size(), "conv2d: input size mismatch");
  require(w.rows() == g.out_c && w.cols() == g.cols_k(), "conv2d: weight shape");
  require(b.rows() == 1 && b.cols() == g.out_c, "conv2d: bias shape");
  Tape* t = x.tape;
  const int B = x.rows();
  auto cols = std::make_shared<Mat>(conv_im2col(x.val(), g));
  Mat y2 = (*cols) * w.val().transpose();
  Mat y = fold_out(y2, B, g);
  const int ohw = g.out_h * g.out_w;
  for (int oc = 0; oc < g.out_c; ++oc)
    y.middleCols(oc * ohw, ohw).array() += b.val()(0, oc);
  return make(t, std::move(y), {x, w, b}, [t, x, w, b, g, cols, B](Var out) {
    const Mat& u = t->grad(out);
    Mat du2 = unfold_out(u, g);
    if (t->needs_grad(b)) {
      Mat db(1, g.out_c);
      for (int oc = 0; oc < g.out_c; ++oc) db(0, oc) = du2.col(oc).sum();
      t->accum(b, db);
    }
    if (t->needs_grad(w)) t->accum(w, du2.transpose() * (*cols));
    if (t->needs_grad(x)) t->accum(x, col2im(du2 * w.val(), B, g));
  });
}

Var tconv2d(Var x, Var w, Var b, const ConvGeom& g) {
  // `g` is the adjoint convolution: tconv input lives on the conv output
  // grid, tconv output on the conv input grid (channels g.in_c).
  require(x.cols() == g.out_size(), "tconv2d: input size mismatch");
  require(w.rows() == g.out_c && w.cols() == g.cols_k(), "tconv2d: weight shape");
  require(b.rows() == 1 && b.cols() == g.in_c, "tconv2d: bias shape");
  Tape* t = x.tape;
  const int B = x.rows();
  Mat y = conv_bwd_data(x.val(), w.val(), g);
  const int hw = g.in_h * g.in_w;
  for (int c = 0; c < g.in_c; ++c) y.middleCols(c * hw, hw).array() += b.val()(0, c);
  return make(t, std::move(y), {x, w, b}, [t, x, w, b, g, B](Var out) {
    const Mat& u = t->grad(out);
    const int hw = g.in_h * g.in_w;
    if (t->needs_grad(b)) {
      Mat db(1, g.in_c);
      for (int c = 0; c < g.in_c; ++c) db(0, c) = u.middleCols(c * hw, hw).sum();
      t->accum(b, db);
    }
    if (t->needs_grad(w)) t->accum(w, conv_bwd_weights(u, x.val(), g));
    if (t->needs_grad(x)) t->accum(x, conv_fwd(u, w.val(), g));
    (void)B;
  });
}

// ---------------------------------------------------------------------------
// Batch normalisation
// ---------------------------------------------------------------------------

Var batchnorm(Var x, Var gamma, Var beta, int C, int HW, bool train,
              BnBuffers& buf, double momentum, double eps) {
  require(x.cols() == C * HW, "batchnorm: feature size mismatch");
  require(gamma.cols() == C && beta.cols() == C, "batchnorm: affine shape");
  Tape* t = x.tape;
  const int B = x.rows();
  const double n = static_cast<double>(B) * HW;

  Vec mean(C), var(C);
  if (train) {
    for (int c = 0; c < C; ++c) {
      auto block = x.val().middleCols(c * HW, HW);
      double m = block.sum() / n;
      mean(c) = m;
      var(c) = (block.array() - m).square().sum() / n;
    }
    if (!buf.initialised) {
      buf.running_mean = mean;
      buf.running_var = var;
      buf.initialised = true;
    } else {
      buf.running_mean = momentum * buf.running_mean + (1.0 - momentum) * mean;
      buf.running_var = momentum * buf.running_var + (1.0 - momentum) * var;
    }
  } else {
    if (!buf.initialised) {
      buf.running_mean = Vec::Zero(C);
      buf.running_var = Vec::Ones(C);
    }
    mean = buf.running_mean;
    var = buf.running_var;
  }

  Vec ivar = (var.array() + eps).rsqrt();
  auto xhat = std::make_shared<Mat>(B, C * HW);
  Mat y(B, C * HW);
  for (int c = 0; c < C; ++c) {
    auto block = x.val().middleCols(c * HW, HW);
    xhat->middleCols(c * HW, HW) = ((block.array() - mean(c)) * ivar(c)).matrix();
    y.middleCols(c * HW, HW) =
        (gamma.val()(0, c) * xhat->middleCols(c * HW, HW).array() + beta.val()(0, c)).matrix();
  }

  return make(t, std::move(y), {x, gamma, beta},
              [t, x, gamma, beta, C, HW, train, ivar, xhat, n](Var out) {
    const Mat& u = t->grad(out);
    if (t->needs_grad(gamma) || t->needs_grad(beta)) {
      Mat dg = Mat::Zero(1, C), db = Mat::Zero(1, C);
      for (int c = 0; c < C; ++c) {
        dg(0, c) = u.middleCols(c * HW, HW).cwiseProduct(xhat->middleCols(c * HW, HW)).sum();
        db(0, c) = u.middleCols(c * HW, HW).sum();
      }
      t->accum(gamma, dg);
      t->accum(beta, db);
    }
    if (t->needs_grad(x)) {
      Mat dx(u.rows(), u.cols());
      for (int c = 0; c < C; ++c) {
        auto ub = u.middleCols(c * HW, HW);
        auto xh = xhat->middleCols(c * HW, HW);
        double g = gamma.val()(0, c);
        if (train) {
          // dx = g*ivar/n * (n*u - sum(u) - xhat * sum(u .* xhat))
          double su = ub.sum();
          double sux = ub.cwiseProduct(xh).sum();
          dx.middleCols(c * HW, HW) =
              ((g * ivar(c) / n) * (n * ub.array() - su - xh.array() * sux)).matrix();
        } else {
          dx.middleCols(c * HW, HW) = (g * ivar(c) * ub.array()).matrix();
        }
      }
      t->accum(x, dx);
    }
  });
}

}  // namespace vcae::ad
