#include "vcae/core_models.hpp"

#include <cmath>

#include "vcae/archive.hpp"
#include "vcae/divergences.hpp"

namespace vcae::core {

namespace {

// Independent evaluation stream so metric computation never disturbs the
// training stream.
Rng eval_stream(uint64_t seed, int epoch) {
  return Rng(seed ^ (0xE7A1C0DEULL + 0x9e3779b97f4a7c15ULL * (epoch + 1)));
}

Mat gather_rows(const Mat& items, const std::vector<int>& idx, int begin, int count) {
  Mat out(count, items.cols());
  for (int i = 0; i < count; ++i) out.row(i) = items.row(idx[begin + i]);
  return out;
}

}  // namespace

Mat AutoencoderPair::encode_raw(const Mat& x) const {
  require(x.cols() == input_shape.size(), "encode: input shape mismatch");
  return encoder.forward(x, false);
}

Mat AutoencoderPair::decode_eval(const Mat& z) const {
  require(z.cols() == cfg.z_dim, "decode: latent dimension mismatch");
  return decoder.forward(z, false);
}

std::vector<nn::Parameter*> AutoencoderPair::params() const {
  std::vector<nn::Parameter*> ps = encoder.params();
  for (nn::Parameter* p : decoder.params()) ps.push_back(p);
  if (posterior_flow)
    for (nn::Parameter* p : posterior_flow->params()) ps.push_back(p);
  return ps;
}

AutoencoderPair make_pair(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  AutoencoderPair pair;
  pair.cfg = cfg;
  int head = arch::head_multiplier(cfg.objective);
  arch::Built built = arch::build(cfg.architecture, cfg.z_dim, head, rng);
  pair.encoder = std::move(built.encoder);
  pair.decoder = std::move(built.decoder);
  pair.input_shape = built.input;
  if (base_objective(cfg.objective) == Objective::VAE_IAF)
    pair.posterior_flow = std::make_unique<flows::FlowChain>(
        flows::make_chain("iaf_posterior", cfg.z_dim, rng));
  return pair;
}

AutoencoderPair make_pair(const ModelConfig& cfg) {
  Rng rng(cfg.seed);
  return make_pair(cfg, rng);
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

Mat encode(const Mat& x, const AutoencoderPair& pair) {
  Mat raw = pair.encode_raw(x);
  return raw.leftCols(pair.cfg.z_dim);
}

Mat sample_latent(const Mat& mu, double noise_variance, Rng& rng) {
  if (noise_variance < 0.0) throw ConfigError("sample_latent: negative noise variance");
  if (noise_variance == 0.0) return mu;
  return mu + rng.normal_mat(static_cast<int>(mu.rows()), static_cast<int>(mu.cols()),
                             std::sqrt(noise_variance));
}

Mat decode(const Mat& z, const AutoencoderPair& pair) { return pair.decode_eval(z); }

double reconstruction_error(const Mat& x, const Mat& x_hat) {
  require(x.rows() == x_hat.rows() && x.cols() == x_hat.cols(),
          "reconstruction_error: shape mismatch");
  return (x - x_hat).rowwise().squaredNorm().mean();
}

double batch_total_variance(const Mat& z) {
  if (z.rows() < 2) throw InputError("batch_total_variance: degenerate batch (need B >= 2)");
  RowVec mean = z.colwise().mean();
  return (z.rowwise() - mean).squaredNorm() / static_cast<double>(z.rows());
}

// ---------------------------------------------------------------------------
// Loss graphs
// ---------------------------------------------------------------------------

namespace {

using ad::Var;

Var recon_term(ad::Tape& t, Var x_hat, const Mat& x) {
  Var diff = ad::sub(x_hat, t.constant(x));
  return ad::scale(ad::sum(ad::square(diff)), 1.0 / static_cast<double>(x.rows()));
}

Var total_variance_term(ad::Tape& t, Var z) {
  Var centered = ad::add_rowvec(z, ad::neg(ad::colwise_mean(z)));
  return ad::scale(ad::sum(ad::square(centered)), 1.0 / static_cast<double>(z.rows()));
}

// Closed-form diagonal KL to N(0, I) from mean and log-std nodes, meaned over
// the batch.
Var kl_term(ad::Tape& t, Var mu, Var logstd, int batch) {
  Var var = ad::exp_(ad::scale(logstd, 2.0));
  Var inner = ad::add(ad::add(ad::square(mu), var),
                      ad::add_scalar(ad::scale(logstd, -2.0), -1.0));
  return ad::scale(ad::sum(inner), 0.5 / static_cast<double>(batch));
}

}  // namespace

BuiltLoss build_objective(ad::Tape& t, AutoencoderPair& pair, const Mat& x, Rng& rng,
                          bool train_mode) {
  const ModelConfig& cfg = pair.cfg;
  require(x.cols() == pair.input_shape.size(), "loss: input shape mismatch");
  const int B = static_cast<int>(x.rows());
  const Objective obj = base_objective(cfg.objective);

  BuiltLoss out;
  Var xin = t.constant(x);
  Var head = pair.encoder.apply(t, xin, train_mode);

  Var z{};  // latents fed to the decoder
  Var loss{};
  if (obj == Objective::VCAE || obj == Objective::CWAE) {
    Var mu = head;
    if (cfg.noise_variance > 0.0) {
      Mat eps = rng.normal_mat(B, cfg.z_dim, std::sqrt(cfg.noise_variance));
      z = ad::add(mu, t.constant(eps));
    } else {
      z = mu;
    }
    Var xhat = pair.decoder.apply(t, z, train_mode);
    Var recon = recon_term(t, xhat, x);
    out.breakdown.recon = t.val(recon)(0, 0);
    out.breakdown.batch_variance = B >= 2 ? batch_total_variance(t.val(z)) : 0.0;
    loss = recon;
    if (cfg.penalty_weight > 0.0) {
      Var pen{};
      if (obj == Objective::VCAE) {
        Var btv = total_variance_term(t, z);
        pen = ad::scale(ad::abs_(ad::add_scalar(btv, -cfg.variance_target)),
                        cfg.penalty_weight);
      } else {
        Mat prior = rng.normal_mat(B, cfg.z_dim);
        div::KernelSpec k{div::KernelSpec::Kind::IMQ, div::imq_c(cfg.z_dim)};
        pen = ad::scale(div::mmd_unbiased_ad(z, t.constant(prior), k), cfg.penalty_weight);
      }
      out.breakdown.penalty = t.val(pen)(0, 0);
      loss = ad::add(loss, pen);
    }
  } else {
    // VAE family: head carries (mean, log-std[, context])
    Var mu = ad::slice_cols(head, 0, cfg.z_dim);
    Var logstd = ad::slice_cols(head, cfg.z_dim, cfg.z_dim);
    Var std = ad::exp_(logstd);
    Mat eps = rng.normal_mat(B, cfg.z_dim);
    Var z0 = ad::add(mu, ad::mul(std, t.constant(eps)));
    Var kl = kl_term(t, mu, logstd, B);

    if (obj == Objective::VAE) {
      z = z0;
      Var xhat = pair.decoder.apply(t, z, train_mode);
      Var recon = recon_term(t, xhat, x);
      out.breakdown.recon = t.val(recon)(0, 0);
      out.breakdown.penalty = t.val(kl)(0, 0);
      loss = ad::add(recon, kl);
    } else {
      require(pair.posterior_flow != nullptr, "vae_iaf: missing posterior flow");
      Var ctx = ad::slice_cols(head, 2 * cfg.z_dim, cfg.z_dim);
      Var logdet = t.constant(Mat::Zero(B, 1));
      Var zT = pair.posterior_flow->forward_ad(t, z0, logdet, ctx);
      z = zT;
      Var xhat = pair.decoder.apply(t, z, train_mode);
      Var recon = recon_term(t, xhat, x);
      // Posterior correction on top of the closed-form base KL:
      //   E[log p(z0) - log p(zT) - logdet], exactly zero for an empty chain.
      Var corr = ad::scale(
          ad::sum(ad::sub(ad::sub(flows::base_log_prob_ad(t, z0),
                                  flows::base_log_prob_ad(t, zT)),
                          logdet)),
          1.0 / static_cast<double>(B));
      out.breakdown.recon = t.val(recon)(0, 0);
      out.breakdown.penalty = t.val(kl)(0, 0) + t.val(corr)(0, 0);
      loss = ad::add(recon, ad::add(kl, corr));
    }
    out.breakdown.batch_variance = B >= 2 ? batch_total_variance(t.val(z)) : 0.0;
  }

  out.loss = loss;
  out.latent = z;
  out.breakdown.total = t.val(loss)(0, 0);
  return out;
}

namespace {

double loss_entry(AutoencoderPair& pair, Objective expect, const Mat& x, Rng& rng,
                  bool with_grad, bool train_mode, LossBreakdown* out) {
  require(base_objective(pair.cfg.objective) == expect,
          "loss called with a mismatched objective");
  ad::Tape t;
  BuiltLoss b = build_objective(t, pair, x, rng, train_mode);
  if (with_grad) t.backward(b.loss);
  if (out) *out = b.breakdown;
  return b.breakdown.total;
}

}  // namespace

double vcae_loss(AutoencoderPair& pair, const Mat& x, Rng& rng, bool with_grad,
                 bool train_mode, LossBreakdown* out) {
  return loss_entry(pair, Objective::VCAE, x, rng, with_grad, train_mode, out);
}

double cwae_loss(AutoencoderPair& pair, const Mat& x, Rng& rng, bool with_grad,
                 bool train_mode, LossBreakdown* out) {
  return loss_entry(pair, Objective::CWAE, x, rng, with_grad, train_mode, out);
}

double vae_loss(AutoencoderPair& pair, const Mat& x, Rng& rng, bool with_grad,
                bool train_mode, LossBreakdown* out) {
  return loss_entry(pair, Objective::VAE, x, rng, with_grad, train_mode, out);
}

double vae_iaf_loss(AutoencoderPair& pair, const Mat& x, Rng& rng, bool with_grad,
                    bool train_mode, LossBreakdown* out) {
  return loss_entry(pair, Objective::VAE_IAF, x, rng, with_grad, train_mode, out);
}

double objective_loss(AutoencoderPair& pair, const Mat& x, Rng& rng, bool with_grad,
                      bool train_mode, LossBreakdown* out) {
  return loss_entry(pair, base_objective(pair.cfg.objective), x, rng, with_grad,
                    train_mode, out);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

Mat sample_generative(const AutoencoderPair& pair, const flows::FlowChain& chain, int n,
                      Rng& rng) {
  if (n < 0) throw InputError("sample_generative: n must be nonnegative");
  require(chain.dim() == pair.cfg.z_dim, "sample_generative: flow/latent dim mismatch");
  if (n == 0) return Mat(0, pair.input_shape.size());
  Mat w = rng.normal_mat(n, pair.cfg.z_dim);
  auto [z, ld] = chain.forward(w);
  (void)ld;
  return pair.decode_eval(z);
}

double eval_reconstruction(const AutoencoderPair& pair, const Mat& items,
                           double noise_variance, Rng* rng) {
  const int chunk = 256;
  double acc = 0.0;
  for (int i0 = 0; i0 < items.rows(); i0 += chunk) {
    int n = std::min<long>(chunk, items.rows() - i0);
    Mat x = items.middleRows(i0, n);
    Mat mu = encode(x, pair);
    Mat z = noise_variance > 0.0 && rng ? sample_latent(mu, noise_variance, *rng) : mu;
    Mat xhat = pair.decode_eval(z);
    acc += (x - xhat).rowwise().squaredNorm().sum();
  }
  return acc / static_cast<double>(items.rows());
}

Mat encode_dataset(const AutoencoderPair& pair, const Mat& items, int chunk) {
  Mat out(items.rows(), pair.cfg.z_dim);
  for (int i0 = 0; i0 < items.rows(); i0 += chunk) {
    int n = std::min<long>(chunk, items.rows() - i0);
    out.middleRows(i0, n) = encode(items.middleRows(i0, n), pair);
  }
  return out;
}

TrainResult train_loop(AutoencoderPair& pair, const data::Dataset& train_ds,
                       const data::Dataset& test_ds, Rng& rng) {
  const ModelConfig& cfg = pair.cfg;
  TrainResult res;
  nn::Adam opt;
  auto params = pair.params();
  const int n = train_ds.size();
  require(n > 0, "train: empty dataset");
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;

  for (int epoch = 0; epoch < cfg.optimizer.epochs; ++epoch) {
    const double lr = cfg.optimizer.lr_at_epoch(epoch);
    rng.shuffle(idx);
    double loss_acc = 0, recon_acc = 0;
    int batches = 0;
    for (int b0 = 0; b0 < n; b0 += cfg.optimizer.batch_size) {
      int bs = std::min(cfg.optimizer.batch_size, n - b0);
      if (bs < 2) continue;  // variance and MMD terms need at least two rows
      Mat x = gather_rows(train_ds.items, idx, b0, bs);
      ad::Tape t;
      BuiltLoss built = build_objective(t, pair, x, rng, true);
      if (!std::isfinite(built.breakdown.total)) {
        res.diverged = true;
        res.abort_reason = "non-finite loss at epoch " + std::to_string(epoch) +
                           " batch " + std::to_string(batches);
        return res;
      }
      t.backward(built.loss);
      opt.step(params, lr);
      loss_acc += built.breakdown.total;
      recon_acc += built.breakdown.recon;
      ++batches;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.loss = batches ? loss_acc / batches : 0.0;
    rec.train_err = batches ? recon_acc / batches : 0.0;
    rec.test_err = eval_reconstruction(pair, test_ds.items);
    Mat test_mu = encode_dataset(pair, test_ds.items);
    rec.latent_variance = test_mu.rows() >= 2 ? batch_total_variance(test_mu) : 0.0;
    rec.latent_variance_noisy =
        rec.latent_variance + cfg.z_dim * cfg.noise_variance;
    res.history.push_back(rec);
  }
  return res;
}

Trained train(const ModelConfig& cfg, const data::Dataset& train_ds,
              const data::Dataset& test_ds) {
  Rng rng(cfg.seed);
  Trained tr{make_pair(cfg, rng), {}, {}};
  tr.result = train_loop(tr.pair, train_ds, test_ds, rng);
  tr.rng_state = rng.state();
  return tr;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

void save_checkpoint(const std::string& path, const AutoencoderPair& pair,
                     const std::string& rng_state, const nlohmann::json& extra_meta) {
  ArchiveWriter w;
  w.meta["kind"] = "checkpoint";
  w.meta["config"] = pair.cfg.to_json();
  w.meta["rng_state"] = rng_state;
  for (auto it = extra_meta.begin(); it != extra_meta.end(); ++it)
    w.meta[it.key()] = it.value();
  for (nn::Parameter* p : pair.params()) w.add(p->name, p->value);
  for (const nn::Net* net : {&pair.encoder, &pair.decoder})
    for (nn::Layer* l : net->layers())
      for (const auto& [name, value] : l->buffers()) w.add(name, value);
  w.save(path);
}

AutoencoderPair load_checkpoint(const std::string& path, std::string* rng_state) {
  Archive a = Archive::load(path);
  if (a.meta().value("kind", "") != "checkpoint")
    throw IngestionError("not a checkpoint archive: " + path);
  ModelConfig cfg = ModelConfig::from_json(a.meta().at("config"));
  AutoencoderPair pair = make_pair(cfg);
  for (nn::Parameter* p : pair.params()) {
    const Mat& v = a.get(p->name);
    require(v.rows() == p->value.rows() && v.cols() == p->value.cols(),
            "checkpoint: shape mismatch for " + p->name);
    p->value = v;
  }
  for (nn::Net* net : {&pair.encoder, &pair.decoder})
    for (nn::Layer* l : net->layers())
      for (const auto& [name, value] : l->buffers())
        if (a.has(name)) l->set_buffer(name, a.get(name));
  if (rng_state) *rng_state = a.meta().value("rng_state", "");
  return pair;
}

void save_flow_checkpoint(const std::string& path, const flows::FlowChain& chain,
                          const std::string& preset, uint64_t perm_seed,
                          const nlohmann::json& extra_meta) {
  ArchiveWriter w;
  w.meta["kind"] = "flow_checkpoint";
  w.meta["preset"] = preset;
  w.meta["dim"] = chain.dim();
  w.meta["perm_seed"] = perm_seed;
  for (auto it = extra_meta.begin(); it != extra_meta.end(); ++it)
    w.meta[it.key()] = it.value();
  for (nn::Parameter* p : chain.params()) w.add(p->name, p->value);
  w.save(path);
}

flows::FlowChain load_flow_checkpoint(const std::string& path) {
  Archive a = Archive::load(path);
  if (a.meta().value("kind", "") != "flow_checkpoint")
    throw IngestionError("not a flow checkpoint archive: " + path);
  Rng rng(a.meta().at("perm_seed").get<uint64_t>());
  flows::FlowChain chain = flows::make_chain(a.meta().at("preset").get<std::string>(),
                                             a.meta().at("dim").get<int>(), rng);
  for (nn::Parameter* p : chain.params()) {
    const Mat& v = a.get(p->name);
    require(v.rows() == p->value.rows() && v.cols() == p->value.cols(),
            "flow checkpoint: shape mismatch for " + p->name);
    p->value = v;
  }
  return chain;
}

}  // namespace vcae::core
