#include "vcae/flows.hpp"

#include <cmath>

namespace vcae::flows {

namespace {
constexpr double kLogScaleCap = 5.0;  // smooth bound on flow log-scales
constexpr double kIafGateBias = 1.5;

double squash(double a) { return kLogScaleCap * std::tanh(a / kLogScaleCap); }

Mat squash_mat(const Mat& a) {
  return (kLogScaleCap * (a.array() / kLogScaleCap).tanh()).matrix();
}

// B x 1 broadcast of a 1 x 1 tape scalar, keeping gradients attached.
ad::Var broadcast_rows(ad::Tape& t, ad::Var scalar, int rows) {
  return ad::matmul(t.constant(Mat::Ones(rows, 1)), scalar);
}
}  // namespace

ad::Var FlowLayer::forward_ad(ad::Tape&, ad::Var, ad::Var&, ad::Var) {
  throw Error("flow layer '" + kind() + "' does not support a differentiable forward pass");
}

// ---------------------------------------------------------------------------
// MADE
// ---------------------------------------------------------------------------

Made::Made(const std::string& name, int dim, std::vector<int> hidden, int ctx_dim, Rng& rng)
    : dim_(dim), ctx_dim_(ctx_dim) {
  require(dim >= 1, "made: dim must be >= 1");
  require(!hidden.empty(), "made: need at least one hidden layer");

  // Degree assignment: inputs 1..d, hidden units cycle 1..d-1 (0 when d == 1,
  // leaving the outputs as trainable constants).
  std::vector<int> prev_deg(dim);
  for (int j = 0; j < dim; ++j) prev_deg[j] = j + 1;

  int in = dim;
  for (size_t l = 0; l < hidden.size(); ++l) {
    int h = hidden[l];
    std::vector<int> deg(h);
    for (int u = 0; u < h; ++u) deg[u] = dim == 1 ? 0 : 1 + (u % (dim - 1));
    Mat mask = Mat::Zero(in, h);
    for (int j = 0; j < in; ++j)
      for (int u = 0; u < h; ++u)
        if (deg[u] >= prev_deg[j]) mask(j, u) = 1.0;
    masks_.push_back(mask);
    ws_.emplace_back(name + ".w" + std::to_string(l),
                     rng.normal_mat(in, h, std::sqrt(2.0 / in)));
    bs_.emplace_back(name + ".b" + std::to_string(l), Mat::Zero(1, h));
    if (l == 0 && ctx_dim > 0)
      wctx_.emplace(name + ".wctx", rng.normal_mat(ctx_dim, h, std::sqrt(1.0 / ctx_dim)));
    prev_deg = deg;
    in = h;
  }

  // Output layer (mu and alpha heads side by side), strictly autoregressive
  // and zero-initialised so a fresh chain is the identity flow.
  Mat mask = Mat::Zero(in, 2 * dim);
  for (int j = 0; j < in; ++j)
    for (int i = 0; i < dim; ++i)
      if (i + 1 > prev_deg[j]) {
        mask(j, i) = 1.0;
        mask(j, dim + i) = 1.0;
      }
  masks_.push_back(mask);
  ws_.emplace_back(name + ".w_out", Mat::Zero(in, 2 * dim));
  bs_.emplace_back(name + ".b_out", Mat::Zero(1, 2 * dim));
}

std::pair<Mat, Mat> Made::eval(const Mat& x, const Mat* ctx) const {
  require(x.cols() == dim_, "made: input dim mismatch");
  Mat h = x * ws_[0].value.cwiseProduct(masks_[0]);
  h.rowwise() += bs_[0].value.row(0);
  if (wctx_ && ctx != nullptr) {
    require(ctx->cols() == ctx_dim_, "made: context dim mismatch");
    h += (*ctx) * wctx_->value;  // absent context is treated as zeros
  }
  h = h.array().tanh().matrix();
  for (size_t l = 1; l + 1 < ws_.size(); ++l) {
    h = h * ws_[l].value.cwiseProduct(masks_[l]);
    h.rowwise() += bs_[l].value.row(0);
    h = h.array().tanh().matrix();
  }
  Mat out = h * ws_.back().value.cwiseProduct(masks_.back());
  out.rowwise() += bs_.back().value.row(0);
  return {out.leftCols(dim_), out.rightCols(dim_)};
}

std::pair<ad::Var, ad::Var> Made::eval_ad(ad::Tape& t, ad::Var x, ad::Var ctx) {
  using namespace ad;
  Var h = matmul_masked(x, t.param(ws_[0]), masks_[0]);
  h = add_rowvec(h, t.param(bs_[0]));
  if (wctx_) {
    require(ctx.valid(), "made: missing context");
    h = add(h, matmul(ctx, t.param(*wctx_)));
  }
  h = tanh_(h);
  for (size_t l = 1; l + 1 < ws_.size(); ++l) {
    h = add_rowvec(matmul_masked(h, t.param(ws_[l]), masks_[l]), t.param(bs_[l]));
    h = tanh_(h);
  }
  Var out = add_rowvec(matmul_masked(h, t.param(ws_.back()), masks_.back()),
                       t.param(bs_.back()));
  return {slice_cols(out, 0, dim_), slice_cols(out, dim_, dim_)};
}

std::vector<nn::Parameter*> Made::params() {
  std::vector<nn::Parameter*> ps;
  for (auto& w : ws_) ps.push_back(&w);
  for (auto& b : bs_) ps.push_back(&b);
  if (wctx_) ps.push_back(&*wctx_);
  return ps;
}

// ---------------------------------------------------------------------------
// MAF
// ---------------------------------------------------------------------------

MafLayer::MafLayer(const std::string& name, int dim, std::vector<int> hidden, Rng& rng)
    : made_(name, dim, std::move(hidden), 0, rng) {}

Mat MafLayer::forward(const Mat& w, Vec* logdet) const {
  const int d = made_.dim();
  Mat z = w;
  // dimension i only depends on final values of dimensions < i
  for (int i = 0; i < d; ++i) {
    auto [mu, a] = made_.eval(z, nullptr);
    z.col(i) = (w.col(i).array() * squash_mat(a.col(i)).array().exp() + mu.col(i).array())
                   .matrix();
  }
  if (logdet) {
    auto [mu, a] = made_.eval(z, nullptr);
    *logdet = squash_mat(a).rowwise().sum();
  }
  if (!z.allFinite()) throw NumericError("maf forward produced non-finite values");
  return z;
}

Mat MafLayer::inverse(const Mat& z, Vec* logdet) const {
  auto [mu, a] = made_.eval(z, nullptr);
  Mat sa = squash_mat(a);
  Mat u = ((z - mu).array() * (-sa).array().exp()).matrix();
  if (logdet) *logdet = -sa.rowwise().sum();
  if (!u.allFinite()) throw NumericError("maf inverse produced non-finite values");
  return u;
}

ad::Var MafLayer::inverse_ad(ad::Tape& t, ad::Var z, ad::Var& logdet_acc) {
  using namespace ad;
  auto [mu, a] = made_.eval_ad(t, z, Var{});
  Var sa = tanh_squash(a, kLogScaleCap);
  Var u = mul(sub(z, mu), exp_(neg(sa)));
  logdet_acc = add(logdet_acc, neg(rowwise_sum(sa)));
  return u;
}

// ---------------------------------------------------------------------------
// IAF
// ---------------------------------------------------------------------------

IafLayer::IafLayer(const std::string& name, int dim, std::vector<int> hidden, int ctx_dim,
                   Rng& rng)
    : made_(name, dim, std::move(hidden), ctx_dim, rng) {}

Mat IafLayer::forward(const Mat& w, Vec* logdet) const {
  auto [m, s_raw] = made_.eval(w, nullptr);
  Mat s = (1.0 / (1.0 + (-(s_raw.array() + kIafGateBias)).exp())).matrix();
  Mat z = (s.array() * w.array() + (1.0 - s.array()) * m.array()).matrix();
  if (logdet) *logdet = s.array().log().rowwise().sum();
  return z;
}

Mat IafLayer::inverse(const Mat& z, Vec* logdet) const {
  const int d = made_.dim();
  Mat w = z;
  for (int i = 0; i < d; ++i) {
    auto [m, s_raw] = made_.eval(w, nullptr);
    Mat s = (1.0 / (1.0 + (-(s_raw.array() + kIafGateBias)).exp())).matrix();
    w.col(i) =
        ((z.col(i).array() - (1.0 - s.col(i).array()) * m.col(i).array()) / s.col(i).array())
            .matrix();
  }
  if (logdet) {
    auto [m, s_raw] = made_.eval(w, nullptr);
    (void)m;
    Mat s = (1.0 / (1.0 + (-(s_raw.array() + kIafGateBias)).exp())).matrix();
    *logdet = -s.array().log().rowwise().sum();
  }
  return w;
}

ad::Var IafLayer::inverse_ad(ad::Tape&, ad::Var, ad::Var&) {
  throw Error("iaf: differentiable inverse is not supported; use maf for density fitting");
}

ad::Var IafLayer::forward_ad(ad::Tape& t, ad::Var w, ad::Var& logdet_acc, ad::Var ctx) {
  using namespace ad;
  auto [m, s_raw] = made_.eval_ad(t, w, ctx);
  Var s = sigmoid(add_scalar(s_raw, kIafGateBias));
  Var z = add(mul(s, w), mul(sub(t.constant(Mat::Ones(w.rows(), w.cols())), s), m));
  logdet_acc = add(logdet_acc, rowwise_sum(log_(s)));
  return z;
}

// ---------------------------------------------------------------------------
// Coupling
// ---------------------------------------------------------------------------

CouplingLayer::CouplingLayer(const std::string& name, int dim, std::vector<int> hidden,
                             Rng& rng)
    : dim_(dim), split_((dim + 1) / 2) {
  require(dim >= 2, "coupling: dim must be >= 2");
  int out = 2 * (dim_ - split_);
  int in = split_;
  for (size_t l = 0; l < hidden.size(); ++l) {
    ws_.emplace_back(name + ".w" + std::to_string(l),
                     rng.normal_mat(in, hidden[l], std::sqrt(2.0 / in)));
    bs_.emplace_back(name + ".b" + std::to_string(l), Mat::Zero(1, hidden[l]));
    in = hidden[l];
  }
  ws_.emplace_back(name + ".w_out", Mat::Zero(in, out));  // identity at init
  bs_.emplace_back(name + ".b_out", Mat::Zero(1, out));
}

std::pair<Mat, Mat> CouplingLayer::st(const Mat& a) const {
  Mat h = a;
  for (size_t l = 0; l + 1 < ws_.size(); ++l) {
    h = h * ws_[l].value;
    h.rowwise() += bs_[l].value.row(0);
    h = h.cwiseMax(0.0);
  }
  Mat out = h * ws_.back().value;
  out.rowwise() += bs_.back().value.row(0);
  int nb = dim_ - split_;
  return {out.leftCols(nb), out.rightCols(nb)};
}

Mat CouplingLayer::forward(const Mat& w, Vec* logdet) const {
  Mat a = w.leftCols(split_);
  Mat b = w.rightCols(dim_ - split_);
  auto [shift, s_raw] = st(a);
  Mat sa = squash_mat(s_raw);
  Mat out(w.rows(), dim_);
  out.leftCols(split_) = a;
  out.rightCols(dim_ - split_) = (b.array() * sa.array().exp() + shift.array()).matrix();
  if (logdet) *logdet = sa.rowwise().sum();
  return out;
}

Mat CouplingLayer::inverse(const Mat& z, Vec* logdet) const {
  Mat a = z.leftCols(split_);
  Mat bp = z.rightCols(dim_ - split_);
  auto [shift, s_raw] = st(a);
  Mat sa = squash_mat(s_raw);
  Mat out(z.rows(), dim_);
  out.leftCols(split_) = a;
  out.rightCols(dim_ - split_) = ((bp - shift).array() * (-sa).array().exp()).matrix();
  if (logdet) *logdet = -sa.rowwise().sum();
  return out;
}

namespace {
// Shared by the coupling AD passes: computes (shift, squashed log-scale).
std::pair<ad::Var, ad::Var> coupling_st_ad(ad::Tape& t, ad::Var a,
                                           std::vector<nn::Parameter>& ws,
                                           std::vector<nn::Parameter>& bs, int nb) {
  using namespace ad;
  Var h = a;
  for (size_t l = 0; l + 1 < ws.size(); ++l)
    h = relu(add_rowvec(matmul(h, t.param(ws[l])), t.param(bs[l])));
  Var out = add_rowvec(matmul(h, t.param(ws.back())), t.param(bs.back()));
  return {slice_cols(out, 0, nb), tanh_squash(slice_cols(out, nb, nb), kLogScaleCap)};
}
}  // namespace

ad::Var CouplingLayer::inverse_ad(ad::Tape& t, ad::Var z, ad::Var& logdet_acc) {
  using namespace ad;
  Var a = slice_cols(z, 0, split_);
  Var bp = slice_cols(z, split_, dim_ - split_);
  auto [shift, sa] = coupling_st_ad(t, a, ws_, bs_, dim_ - split_);
  Var b = mul(sub(bp, shift), exp_(neg(sa)));
  logdet_acc = add(logdet_acc, neg(rowwise_sum(sa)));
  return concat_cols(a, b);
}

ad::Var CouplingLayer::forward_ad(ad::Tape& t, ad::Var w, ad::Var& logdet_acc, ad::Var) {
  using namespace ad;
  Var a = slice_cols(w, 0, split_);
  Var b = slice_cols(w, split_, dim_ - split_);
  auto [shift, sa] = coupling_st_ad(t, a, ws_, bs_, dim_ - split_);
  Var bp = add(mul(b, exp_(sa)), shift);
  logdet_acc = add(logdet_acc, rowwise_sum(sa));
  return concat_cols(a, bp);
}

std::vector<nn::Parameter*> CouplingLayer::params() {
  std::vector<nn::Parameter*> ps;
  for (auto& w : ws_) ps.push_back(&w);
  for (auto& b : bs_) ps.push_back(&b);
  return ps;
}

// ---------------------------------------------------------------------------
// Elementwise layers
// ---------------------------------------------------------------------------

ScaleLayer::ScaleLayer(const std::string& name, int dim)
    : alpha_(name + ".alpha", Mat::Zero(1, dim)) {}

Mat ScaleLayer::forward(const Mat& w, Vec* logdet) const {
  Mat sa = squash_mat(alpha_.value);
  Mat z = (w.array().rowwise() * sa.row(0).array().exp()).matrix();
  if (logdet) *logdet = Vec::Constant(w.rows(), sa.sum());
  return z;
}

Mat ScaleLayer::inverse(const Mat& z, Vec* logdet) const {
  Mat sa = squash_mat(alpha_.value);
  Mat w = (z.array().rowwise() * (-sa.row(0)).array().exp()).matrix();
  if (logdet) *logdet = Vec::Constant(z.rows(), -sa.sum());
  return w;
}

ad::Var ScaleLayer::inverse_ad(ad::Tape& t, ad::Var z, ad::Var& logdet_acc) {
  using namespace ad;
  Var sa = tanh_squash(t.param(alpha_), kLogScaleCap);
  Var w = mul_rowvec(z, exp_(neg(sa)));
  logdet_acc = add(logdet_acc, broadcast_rows(t, neg(sum(sa)), z.rows()));
  return w;
}

ad::Var ScaleLayer::forward_ad(ad::Tape& t, ad::Var w, ad::Var& logdet_acc, ad::Var) {
  using namespace ad;
  Var sa = tanh_squash(t.param(alpha_), kLogScaleCap);
  Var z = mul_rowvec(w, exp_(sa));
  logdet_acc = add(logdet_acc, broadcast_rows(t, sum(sa), w.rows()));
  return z;
}

ShiftLayer::ShiftLayer(const std::string& name, int dim)
    : shift_(name + ".shift", Mat::Zero(1, dim)) {}

Mat ShiftLayer::forward(const Mat& w, Vec* logdet) const {
  if (logdet) *logdet = Vec::Zero(w.rows());
  Mat z = w;
  z.rowwise() += shift_.value.row(0);
  return z;
}

Mat ShiftLayer::inverse(const Mat& z, Vec* logdet) const {
  if (logdet) *logdet = Vec::Zero(z.rows());
  Mat w = z;
  w.rowwise() -= shift_.value.row(0);
  return w;
}

ad::Var ShiftLayer::inverse_ad(ad::Tape& t, ad::Var z, ad::Var&) {
  return ad::sub(z, ad::matmul(t.constant(Mat::Ones(z.rows(), 1)), t.param(shift_)));
}

ad::Var ShiftLayer::forward_ad(ad::Tape& t, ad::Var w, ad::Var&, ad::Var) {
  return ad::add_rowvec(w, t.param(shift_));
}

PermuteLayer::PermuteLayer(std::vector<int> perm) : perm_(std::move(perm)) {
  inv_.resize(perm_.size());
  for (size_t j = 0; j < perm_.size(); ++j) inv_[perm_[j]] = static_cast<int>(j);
}

Mat PermuteLayer::forward(const Mat& w, Vec* logdet) const {
  if (logdet) *logdet = Vec::Zero(w.rows());
  Mat z(w.rows(), w.cols());
  for (size_t j = 0; j < perm_.size(); ++j) z.col(j) = w.col(perm_[j]);
  return z;
}

Mat PermuteLayer::inverse(const Mat& z, Vec* logdet) const {
  if (logdet) *logdet = Vec::Zero(z.rows());
  Mat w(z.rows(), z.cols());
  for (size_t j = 0; j < inv_.size(); ++j) w.col(j) = z.col(inv_[j]);
  return w;
}

ad::Var PermuteLayer::inverse_ad(ad::Tape&, ad::Var z, ad::Var&) {
  return ad::permute_cols(z, inv_);
}

ad::Var PermuteLayer::forward_ad(ad::Tape&, ad::Var w, ad::Var&, ad::Var) {
  return ad::permute_cols(w, perm_);
}

// ---------------------------------------------------------------------------
// Chain
// ---------------------------------------------------------------------------

std::pair<Mat, Vec> FlowChain::forward(const Mat& w) const {
  require(w.cols() == dim_, "flow_forward: dimension mismatch");
  Mat z = w;
  Vec ld = Vec::Zero(w.rows());
  for (const auto& l : layers_) {
    Vec d;
    z = l->forward(z, &d);
    ld += d;
  }
  if (!z.allFinite() || !ld.allFinite())
    throw NumericError("flow_forward: non-finite intermediate");
  return {z, ld};
}

std::pair<Mat, Vec> FlowChain::inverse(const Mat& z) const {
  require(z.cols() == dim_, "flow_inverse: dimension mismatch");
  Mat w = z;
  Vec ld = Vec::Zero(z.rows());
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    Vec d;
    w = (*it)->inverse(w, &d);
    ld += d;
  }
  if (!w.allFinite() || !ld.allFinite())
    throw NumericError("flow_inverse: non-finite intermediate");
  return {w, ld};
}

Vec base_log_prob(const Mat& w) {
  const double c = -0.5 * w.cols() * std::log(2.0 * M_PI);
  return (-0.5 * w.rowwise().squaredNorm().array() + c).matrix();
}

ad::Var base_log_prob_ad(ad::Tape&, ad::Var w) {
  using namespace ad;
  const double c = -0.5 * w.cols() * std::log(2.0 * M_PI);
  return add_scalar(scale(rowwise_sum(square(w)), -0.5), c);
}

Vec FlowChain::log_prob(const Mat& z) const {
  auto [w, ld] = inverse(z);
  return base_log_prob(w) + ld;
}

ad::Var FlowChain::log_prob_ad(ad::Tape& t, ad::Var z) {
  ad::Var ld = t.constant(Mat::Zero(z.rows(), 1));
  ad::Var w = z;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it)
    w = (*it)->inverse_ad(t, w, ld);
  return ad::add(base_log_prob_ad(t, w), ld);
}

ad::Var FlowChain::forward_ad(ad::Tape& t, ad::Var w, ad::Var& logdet_acc, ad::Var ctx) {
  for (const auto& l : layers_) w = l->forward_ad(t, w, logdet_acc, ctx);
  return w;
}

std::vector<nn::Parameter*> FlowChain::params() const {
  std::vector<nn::Parameter*> ps;
  for (const auto& l : layers_)
    for (nn::Parameter* p : l->params()) ps.push_back(p);
  return ps;
}

FlowChain make_chain(const std::string& preset, int dim, Rng& rng) {
  FlowChain c(dim);
  auto maf_stack = [&](int blocks, std::vector<int> widths) {
    for (int i = 0; i < blocks; ++i) {
      if (i > 0) c.emplace<PermuteLayer>(rng.permutation(dim));
      c.emplace<MafLayer>("maf" + std::to_string(i), dim, widths, rng);
    }
  };
  auto coupling_stack = [&](int blocks, std::vector<int> widths) {
    for (int i = 0; i < blocks; ++i) {
      if (i > 0) c.emplace<PermuteLayer>(rng.permutation(dim));
      c.emplace<CouplingLayer>("cpl" + std::to_string(i), dim, widths, rng);
    }
  };
  if (preset == "maf_mnist") {
    maf_stack(6, {64, 64});
    c.emplace<ScaleLayer>("scale", dim);
    c.emplace<ShiftLayer>("shift", dim);
  } else if (preset == "maf_desk") {
    maf_stack(6, {32, 32});
    c.emplace<ScaleLayer>("scale", dim);
    c.emplace<ShiftLayer>("shift", dim);
  } else if (preset == "realnvp_celeba") {
    coupling_stack(8, {256, 256, 256});
  } else if (preset == "realnvp_desk") {
    coupling_stack(8, {32, 32});
  } else if (preset == "iaf_posterior") {
    c.emplace<IafLayer>("iaf0", dim, std::vector<int>{32}, dim, rng);
    c.emplace<PermuteLayer>(rng.permutation(dim));
    c.emplace<IafLayer>("iaf1", dim, std::vector<int>{32}, dim, rng);
  } else {
    throw ConfigError("unknown flow preset: " + preset);
  }
  return c;
}

FlowTrainResult train_flows(FlowChain& chain,
                            const std::function<Mat(int, Rng&)>& sample_batch,
                            const FlowTrainConfig& cfg) {
  FlowTrainResult res;
  Rng rng(cfg.seed);
  nn::Adam opt;
  auto params = chain.params();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double acc = 0.0;
    for (int b = 0; b < cfg.batches_per_epoch; ++b) {
      Mat z = sample_batch(cfg.batch_size, rng);
      ad::Tape t;
      ad::Var loss = ad::scale(ad::sum(chain.log_prob_ad(t, t.constant(z))),
                               -1.0 / static_cast<double>(z.rows()));
      double lv = t.val(loss)(0, 0);
      if (!std::isfinite(lv)) {
        res.diverged = true;
        return res;
      }
      acc += lv;
      t.backward(loss);
      opt.step(params, cfg.learning_rate);
    }
    res.epoch_loss.push_back(acc / cfg.batches_per_epoch);
  }
  return res;
}

}  // namespace vcae::flows
