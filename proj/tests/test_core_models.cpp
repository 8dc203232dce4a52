#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "vcae/core_models.hpp"
#include "vcae/divergences.hpp"

using namespace vcae;
using core::AutoencoderPair;

namespace {

ModelConfig tiny_cfg(Objective obj, double noise = 0.0, double v = 1.0, double lambda = 0.0) {
  ModelConfig c;
  c.z_dim = 3;
  c.noise_variance = noise;
  c.variance_target = v;
  c.penalty_weight = lambda;
  c.objective = obj;
  c.architecture = "tiny";
  c.seed = 11;
  return c;
}

void zero_params(AutoencoderPair& p) {
  for (nn::Parameter* q : p.params()) q->value.setZero();
}

// Relative gradient error of the configured objective against central finite
// differences at step 1e-3, over every parameter of the pair.
double max_grad_rel_err(AutoencoderPair& pair, const Mat& x, uint64_t noise_seed) {
  for (nn::Parameter* p : pair.params()) p->zero_grad();
  Rng r0(noise_seed);
  core::objective_loss(pair, x, r0, true, false);
  double worst = 0.0;
  for (nn::Parameter* p : pair.params()) {
    Mat analytic = p->grad;
    Mat fd = oracle::fd_grad(
        p->value,
        [&](const Mat& w) {
          Mat keep = p->value;
          p->value = w;
          Rng r(noise_seed);
          double v = core::objective_loss(pair, x, r, false, false);
          p->value = keep;
          return v;
        },
        1e-3);
    worst = std::max(worst, oracle::rel_err(analytic, fd));
    p->zero_grad();
  }
  return worst;
}

}  // namespace

TEST_CASE("encode: zero parameters give the zero map") {
  auto pair = core::make_pair(tiny_cfg(Objective::VCAE));
  zero_params(pair);
  Rng rng(3);
  Mat x = rng.normal_mat(5, 6);
  CHECK(core::encode(x, pair).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("encode/decode: identity preset passes data through") {
  ModelConfig c = tiny_cfg(Objective::VCAE);
  c.architecture = "identity";
  c.z_dim = 2;
  auto pair = core::make_pair(c);
  Mat x(1, 2);
  x << 0.3, -0.7;
  CHECK((core::encode(x, pair) - x).cwiseAbs().maxCoeff() == 0.0);
  Mat z(1, 2);
  z << 1.0, 2.0;
  CHECK((core::decode(z, pair) - z).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("decode: linear preset applies its weight matrix") {
  ModelConfig c = tiny_cfg(Objective::VCAE);
  c.architecture = "linear";
  c.z_dim = 3;
  auto pair = core::make_pair(c);
  Mat w = pair.decoder.params()[0]->value;  // z_dim x z_dim
  pair.decoder.params()[1]->value.setZero();
  Rng rng(8);
  Mat z = rng.normal_mat(4, 3);
  CHECK(oracle::max_abs_diff(core::decode(z, pair), z * w) < 1e-14);
}

TEST_CASE("mnist preset shape contract: 100x(28x28) -> 100x16 -> back") {
  ModelConfig c;
  c.z_dim = 16;
  c.objective = Objective::VCAE;
  c.architecture = "mnist_desk";
  c.variance_target = 16.0;
  c.seed = 5;
  auto pair = core::make_pair(c);
  Rng rng(4);
  Mat x = rng.uniform_mat(100, 28 * 28);
  Mat z = core::encode(x, pair);
  CHECK(z.rows() == 100);
  CHECK(z.cols() == 16);
  Mat xhat = core::decode(z, pair);
  CHECK(xhat.rows() == 100);
  CHECK(xhat.cols() == 28 * 28);
  CHECK(xhat.allFinite());

  Mat bad = rng.uniform_mat(10, 123);
  CHECK_THROWS_AS(core::encode(bad, pair), InputError);
}

TEST_CASE("sample_latent: zero noise, monte-carlo variance, determinism") {
  Mat mu = Mat::Zero(100000, 4);
  Rng rng(17);
  CHECK(core::sample_latent(Mat::Zero(3, 2), 0.0, rng).cwiseAbs().maxCoeff() == 0.0);

  Mat z = core::sample_latent(mu, 0.05, rng);
  for (int j = 0; j < 4; ++j) {
    double var = z.col(j).squaredNorm() / z.rows() - std::pow(z.col(j).mean(), 2);
    CHECK(var == doctest::Approx(0.05).epsilon(0.06));  // 0.05 +- 0.003
    CHECK(std::abs(var - 0.05) < 0.003);
  }

  Rng r1(99), r2(99);
  Mat a = core::sample_latent(Mat::Zero(8, 3), 0.3, r1);
  Mat b = core::sample_latent(Mat::Zero(8, 3), 0.3, r2);
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(core::sample_latent(mu, -0.1, rng), ConfigError);
}

TEST_CASE("reconstruction_error: hand values") {
  Mat x(1, 2), y(1, 2);
  x << 1, 1;
  y << 0, 0;
  CHECK(core::reconstruction_error(x, x) == 0.0);
  CHECK(core::reconstruction_error(x, y) == doctest::Approx(2.0).epsilon(1e-15));

  Mat b(2, 2);
  b << 1, 0, 0, 1;
  CHECK(core::reconstruction_error(b, Mat::Zero(2, 2)) == doctest::Approx(1.0).epsilon(1e-15));

  CHECK_THROWS_AS(core::reconstruction_error(x, Mat::Zero(2, 2)), InputError);
}

TEST_CASE("batch_total_variance: hand values, errors, properties") {
  CHECK(core::batch_total_variance(Mat::Constant(5, 3, 2.5)) == doctest::Approx(0.0));

  Mat two(2, 2);
  two << 1, 1, -1, -1;
  CHECK(core::batch_total_variance(two) == doctest::Approx(2.0).epsilon(1e-15));

  Rng rng(23);
  Mat big = rng.normal_mat(100000, 16);
  CHECK(std::abs(core::batch_total_variance(big) - 16.0) < 0.3);

  CHECK_THROWS_AS(core::batch_total_variance(Mat::Zero(1, 4)), InputError);

  // translation invariance and quadratic scaling
  Mat z = rng.normal_mat(37, 5);
  double v = core::batch_total_variance(z);
  Mat shifted = z;
  RowVec c(5);
  c << 3, -1, 0.5, 7, -2;
  shifted.rowwise() += c;
  CHECK(core::batch_total_variance(shifted) == doctest::Approx(v).epsilon(1e-10));
  CHECK(core::batch_total_variance(2.5 * z) == doctest::Approx(6.25 * v).epsilon(1e-12));
}

TEST_CASE("vcae_loss: lambda 0 equals the reconstruction error exactly") {
  for (uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    ModelConfig c = tiny_cfg(Objective::VCAE, 0.05, 2.0, 0.0);
    c.seed = seed;
    auto pair = core::make_pair(c);
    Rng rd(seed + 100);
    Mat x = rd.normal_mat(6, 6);
    Rng r1(55), r2(55);
    double loss = core::vcae_loss(pair, x, r1);
    Mat z = core::sample_latent(core::encode(x, pair), c.noise_variance, r2);
    double recon = core::reconstruction_error(x, core::decode(z, pair));
    CHECK(loss == doctest::Approx(recon).epsilon(1e-14));
  }
}

TEST_CASE("vcae_loss: constant encoder pays the full variance target") {
  ModelConfig c = tiny_cfg(Objective::VCAE, 0.0, 2.0, 1.0);
  auto pair = core::make_pair(c);
  // zero encoder weights make mu constant across the batch
  for (nn::Parameter* p : pair.encoder.params()) p->value.setZero();
  Rng rng(7), rloss(7);
  Mat x = rng.normal_mat(8, 6);
  core::LossBreakdown bd;
  double loss = core::vcae_loss(pair, x, rloss, false, false, &bd);
  double mse = core::reconstruction_error(x, core::decode(core::encode(x, pair), pair));
  CHECK(bd.penalty == doctest::Approx(2.0).epsilon(1e-13));
  CHECK(loss == doctest::Approx(mse + 2.0).epsilon(1e-12));
}

TEST_CASE("cwae_loss: lambda 0 reduces to reconstruction; C follows the kernel rule") {
  ModelConfig c = tiny_cfg(Objective::CWAE, 0.1, 1.0, 0.0);
  auto pair = core::make_pair(c);
  Rng rd(9);
  Mat x = rd.normal_mat(5, 6);
  Rng r1(31), r2(31);
  double loss = core::cwae_loss(pair, x, r1);
  Mat z = core::sample_latent(core::encode(x, pair), c.noise_variance, r2);
  CHECK(loss == doctest::Approx(core::reconstruction_error(x, core::decode(z, pair)))
                    .epsilon(1e-14));
  CHECK(div::imq_c(16) == doctest::Approx(32.0));
}

TEST_CASE("vae_loss: prior posterior gives zero KL; unit-mean case gives 0.5") {
  ModelConfig c = tiny_cfg(Objective::VAE);
  auto pair = core::make_pair(c);
  // zero encoder => mean 0, log-std 0 => N(0, I) posterior
  for (nn::Parameter* p : pair.encoder.params()) p->value.setZero();
  Rng rng(13);
  Mat x = rng.normal_mat(6, 6);
  core::LossBreakdown bd;
  Rng rl(21);
  core::vae_loss(pair, x, rl, false, false, &bd);
  CHECK(bd.penalty == doctest::Approx(0.0).epsilon(1e-14));

  // shift every posterior mean to exactly 1 via the head bias
  nn::Parameter* head_bias = pair.encoder.params().back();
  head_bias->value.setZero();
  head_bias->value.block(0, 0, 1, c.z_dim).setConstant(1.0);
  Rng rl2(21);
  core::vae_loss(pair, x, rl2, false, false, &bd);
  CHECK(bd.penalty == doctest::Approx(0.5 * c.z_dim).epsilon(1e-12));
}

TEST_CASE("vae_iaf_loss: empty flow equals the plain vae loss pointwise") {
  ModelConfig c = tiny_cfg(Objective::VAE_IAF);
  auto pair = core::make_pair(c);
  pair.posterior_flow = std::make_unique<flows::FlowChain>(c.z_dim);  // identity
  Rng rd(2);
  Mat x = rd.normal_mat(7, 6);

  Rng rl(77);
  core::LossBreakdown bd;
  double loss = core::vae_iaf_loss(pair, x, rl, false, false, &bd);

  // manual ELBO with the same draw
  Mat raw = pair.encode_raw(x);
  Mat mu = raw.leftCols(c.z_dim);
  Mat logstd = raw.middleCols(c.z_dim, c.z_dim);
  Rng rl2(77);
  Mat eps = rl2.normal_mat(7, c.z_dim);
  Mat z0 = mu + (logstd.array().exp() * eps.array()).matrix();
  double recon = core::reconstruction_error(x, core::decode(z0, pair));
  double kl = 0;
  for (int i = 0; i < 7; ++i)
    kl += div::gaussian_kl_diag(mu.row(i), logstd.row(i).array().exp().matrix());
  kl /= 7;
  CHECK(loss == doctest::Approx(recon + kl).epsilon(1e-12));
}

TEST_CASE("vae_iaf_loss: a scale-by-2 step shifts the posterior log-density by -d log 2") {
  const int d = 3;
  ModelConfig c = tiny_cfg(Objective::VAE_IAF);
  auto pair = core::make_pair(c);
  auto chain = std::make_unique<flows::FlowChain>(d);
  auto& sc = chain->emplace<flows::ScaleLayer>("s", d);
  // tanh-squashed alpha solving squash(a) = log 2
  double a = 5.0 * std::atanh(std::log(2.0) / 5.0);
  sc.alpha().value.setConstant(a);
  pair.posterior_flow = std::move(chain);

  Rng rd(4);
  Mat x = rd.normal_mat(6, 6);
  Rng rl(123);
  core::LossBreakdown bd;
  core::vae_iaf_loss(pair, x, rl, false, false, &bd);

  // reconstruct the pieces: penalty = KL0 + E[log p(z0) - log p(2 z0)] - E[logdet]
  Mat raw = pair.encode_raw(x);
  Mat mu = raw.leftCols(d), logstd = raw.middleCols(d, d);
  Rng rl2(123);
  Mat eps = rl2.normal_mat(6, d);
  Mat z0 = mu + (logstd.array().exp() * eps.array()).matrix();
  Mat zT = 2.0 * z0;
  double kl0 = 0;
  for (int i = 0; i < 6; ++i)
    kl0 += div::gaussian_kl_diag(mu.row(i), logstd.row(i).array().exp().matrix());
  kl0 /= 6;
  double base_diff = (flows::base_log_prob(z0) - flows::base_log_prob(zT)).mean();
  double logdet_part = bd.penalty - kl0 - base_diff;
  CHECK(logdet_part == doctest::Approx(-d * std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("gradients of every objective match finite differences (rel err < 1e-4)") {
  Rng rd(6);
  Mat x = rd.normal_mat(5, 6);
  for (Objective obj :
       {Objective::VCAE, Objective::CWAE, Objective::VAE, Objective::VAE_IAF}) {
    ModelConfig c = tiny_cfg(obj, 0.04, 2.0, 1.3);
    auto pair = core::make_pair(c);
    double err = max_grad_rel_err(pair, x, 321);
    INFO("objective " << to_string(obj) << " rel err " << err);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("train: zero epochs leaves parameters untouched and history empty") {
  ModelConfig c = tiny_cfg(Objective::VCAE, 0.05, 2.0, 1.0);
  c.optimizer.epochs = 0;
  auto reference = core::make_pair(c);
  data::Dataset ds;
  Rng rng(3);
  ds.items = rng.normal_mat(32, 6);
  ds.shape = ItemShape{1, 1, 6};
  auto trained = core::train(c, ds, ds);
  CHECK(trained.result.history.empty());
  auto pa = trained.pair.params();
  auto pb = reference.params();
  for (size_t i = 0; i < pa.size(); ++i)
    CHECK((pa[i]->value - pb[i]->value).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("train: noise-free lambda-0 vcae matches a plain mse autoencoder trace") {
  ModelConfig c = tiny_cfg(Objective::VCAE, 0.0, 2.0, 0.0);
  c.optimizer.epochs = 3;
  c.optimizer.batch_size = 8;
  c.optimizer.learning_rate = 1e-3;
  data::Dataset ds;
  Rng rd(19);
  ds.items = rd.normal_mat(24, 6);
  ds.shape = ItemShape{1, 1, 6};

  auto trained = core::train(c, ds, ds);

  // hand-rolled MSE-only loop with the same stream discipline
  Rng rng(c.seed);
  auto pair = core::make_pair(c, rng);
  nn::Adam opt;
  auto params = pair.params();
  std::vector<int> idx(ds.size());
  for (int i = 0; i < ds.size(); ++i) idx[i] = i;
  std::vector<double> trace;
  for (int epoch = 0; epoch < 3; ++epoch) {
    rng.shuffle(idx);
    double acc = 0;
    int nb = 0;
    for (int b0 = 0; b0 < ds.size(); b0 += 8) {
      int bs = std::min(8, ds.size() - b0);
      Mat x(bs, 6);
      for (int i = 0; i < bs; ++i) x.row(i) = ds.items.row(idx[b0 + i]);
      ad::Tape t;
      ad::Var mu = pair.encoder.apply(t, t.constant(x), true);
      ad::Var xhat = pair.decoder.apply(t, mu, true);
      ad::Var loss = ad::scale(ad::sum(ad::square(ad::sub(xhat, t.constant(x)))),
                               1.0 / static_cast<double>(bs));
      acc += t.val(loss)(0, 0);
      ++nb;
      t.backward(loss);
      opt.step(params, 1e-3);
    }
    trace.push_back(acc / nb);
  }
  for (int e = 0; e < 3; ++e)
    CHECK(trained.result.history[e].loss == doctest::Approx(trace[e]).epsilon(1e-14));
}

TEST_CASE("train: bitwise reproducible for a fixed seed") {
  ModelConfig c = tiny_cfg(Objective::CWAE, 0.05, 1.0, 2.0);
  c.optimizer.epochs = 2;
  c.optimizer.batch_size = 8;
  data::Dataset ds;
  Rng rd(29);
  ds.items = rd.normal_mat(40, 6);
  ds.shape = ItemShape{1, 1, 6};
  auto a = core::train(c, ds, ds);
  auto b = core::train(c, ds, ds);
  auto pa = a.pair.params(), pb = b.pair.params();
  for (size_t i = 0; i < pa.size(); ++i)
    CHECK((pa[i]->value - pb[i]->value).cwiseAbs().maxCoeff() == 0.0);
  for (size_t e = 0; e < a.result.history.size(); ++e) {
    CHECK(a.result.history[e].loss == b.result.history[e].loss);
    CHECK(a.result.history[e].test_err == b.result.history[e].test_err);
  }
}

TEST_CASE("train: divergent optimisation aborts with a diagnostic") {
  ModelConfig c = tiny_cfg(Objective::VCAE, 0.0, 1.0, 0.0);
  c.optimizer.epochs = 50;
  c.optimizer.batch_size = 8;
  c.optimizer.learning_rate = 1e160;  // squared errors overflow to inf
  data::Dataset ds;
  Rng rd(31);
  ds.items = (rd.normal_mat(16, 6).array() * 10.0).matrix();
  ds.shape = ItemShape{1, 1, 6};
  auto trained = core::train(c, ds, ds);
  CHECK(trained.result.diverged);
  CHECK(!trained.result.abort_reason.empty());
}

TEST_CASE("train: vcae on the MoG toy satisfies its variance constraint") {
  // scaled-down rerun of the mixture toy: |var(z) - v| must settle below 0.2
  data::Dataset train = data::make_mog_dataset(2000, 100, 101, "train");
  data::Dataset test = data::make_mog_dataset(512, 100, 202, "test");
  ModelConfig c;
  c.z_dim = 2;
  c.noise_variance = 0.1;
  c.variance_target = 2.0;
  c.penalty_weight = 2.0;
  c.objective = Objective::VCAE;
  c.architecture = "mlp_small";
  c.optimizer.learning_rate = 1e-3;
  c.optimizer.batch_size = 100;
  c.optimizer.epochs = 25;
  c.seed = 7;
  auto trained = core::train(c, train, test);
  REQUIRE(!trained.result.diverged);
  double final_var = trained.result.history.back().latent_variance_noisy;
  INFO("final noisy latent total variance " << final_var);
  CHECK(std::abs(final_var - 2.0) < 0.2);
}

TEST_CASE("checkpoint round trip restores parameters, buffers and config") {
  ModelConfig c = tiny_cfg(Objective::VCAE, 0.02, 2.0, 0.5);
  auto pair = core::make_pair(c);
  Rng rng(41);
  // nudge parameters away from init so the round trip is meaningful
  for (nn::Parameter* p : pair.params())
    p->value += rng.normal_mat(p->value.rows(), p->value.cols(), 0.1);
  std::string path = std::string(std::getenv("VCAE_DATA_ROOT") ? std::getenv("VCAE_DATA_ROOT")
                                                               : "/tmp") +
                     "/ckpt_test.vca";
  core::save_checkpoint(path, pair, Rng(1).state(), {{"note", "test"}});
  std::string rng_state;
  auto loaded = core::load_checkpoint(path, &rng_state);
  CHECK(!rng_state.empty());
  CHECK(loaded.cfg.architecture == c.architecture);
  auto pa = pair.params(), pb = loaded.params();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i)
    CHECK((pa[i]->value - pb[i]->value).cwiseAbs().maxCoeff() == 0.0);

  Mat x = rng.normal_mat(4, 6);
  CHECK(oracle::max_abs_diff(core::encode(x, pair), core::encode(x, loaded)) == 0.0);
}
