#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "vcae/core_models.hpp"
#include "vcae/data.hpp"
#include "vcae/flows.hpp"

using namespace vcae;
using flows::FlowChain;

namespace {

// Kick a freshly built (identity) chain into a random configuration so
// invertibility is exercised on nontrivial maps.
void randomise(FlowChain& chain, uint64_t seed, double scale = 0.5) {
  Rng rng(seed);
  for (nn::Parameter* p : chain.params())
    p->value += rng.normal_mat(static_cast<int>(p->value.rows()),
                               static_cast<int>(p->value.cols()), scale);
}

FlowChain random_chain(const std::string& preset, int dim, uint64_t seed,
                       double scale = 0.5) {
  Rng rng(seed);
  FlowChain c = flows::make_chain(preset, dim, rng);
  randomise(c, seed + 1, scale);
  return c;
}

}  // namespace

TEST_CASE("flow_forward: empty chain is the identity with zero logdet") {
  FlowChain c(3);
  Rng rng(1);
  Mat w = rng.normal_mat(5, 3);
  auto [z, ld] = c.forward(w);
  CHECK(oracle::max_abs_diff(z, w) == 0.0);
  CHECK(ld.cwiseAbs().maxCoeff() == 0.0);
  auto [w2, ld2] = c.inverse(w);
  CHECK(oracle::max_abs_diff(w2, w) == 0.0);
  CHECK(ld2.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("flow_forward/inverse: scale-by-2 layer has logdet d log 2") {
  const int d = 4;
  FlowChain c(d);
  auto& s = c.emplace<flows::ScaleLayer>("s", d);
  s.alpha().value.setConstant(5.0 * std::atanh(std::log(2.0) / 5.0));
  Rng rng(2);
  Mat w = rng.normal_mat(6, d);
  auto [z, ld] = c.forward(w);
  CHECK(oracle::max_abs_diff(z, 2.0 * w) < 1e-12);
  for (int i = 0; i < 6; ++i) CHECK(ld(i) == doctest::Approx(d * std::log(2.0)).epsilon(1e-12));
  auto [winv, ldi] = c.inverse(z);
  CHECK(oracle::max_abs_diff(winv, w) < 1e-12);
  for (int i = 0; i < 6; ++i) CHECK(ldi(i) == doctest::Approx(-d * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("permutation layer reorders with zero logdet") {
  FlowChain c(4);
  c.emplace<flows::PermuteLayer>(std::vector<int>{2, 0, 3, 1});
  Mat w(1, 4);
  w << 10, 20, 30, 40;
  auto [z, ld] = c.forward(w);
  CHECK(z(0, 0) == 30);
  CHECK(z(0, 1) == 10);
  CHECK(z(0, 2) == 40);
  CHECK(z(0, 3) == 20);
  CHECK(ld(0) == 0.0);
  auto [wb, ldi] = c.inverse(z);
  CHECK(oracle::max_abs_diff(wb, w) == 0.0);
  CHECK(ldi(0) == 0.0);
}

TEST_CASE("roundtrip and logdet antisymmetry on randomised chains") {
  struct Case {
    std::string preset;
    int dim;
  };
  struct Cfg {
    Case c;
    double scale;
  };
  // perturbation sized so the stacked scales stay in a usable regime (deep
  // coupling stacks compound exp(s) across 8 blocks)
  for (const Cfg& cfg : {Cfg{{"maf_desk", 2}, 0.15}, Cfg{{"maf_desk", 5}, 0.15},
                         Cfg{{"realnvp_desk", 4}, 0.05}, Cfg{{"iaf_posterior", 3}, 0.15}}) {
    const Case& cs = cfg.c;
    FlowChain c = random_chain(cs.preset, cs.dim, 7 + cs.dim, cfg.scale);
    Rng rng(3);
    Mat w = rng.normal_mat(1000, cs.dim);
    auto [z, ld_f] = c.forward(w);
    auto [wr, ld_i] = c.inverse(z);
    INFO(cs.preset << " dim " << cs.dim);
    CHECK(oracle::max_abs_diff(wr, w) < 1e-6);
    CHECK((ld_f + ld_i).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("nf_log_prob: identity chain matches the standard normal") {
  FlowChain c(1);
  Mat z = Mat::Zero(1, 1);
  Vec lp = c.log_prob(z);
  CHECK(lp(0) == doctest::Approx(-0.5 * std::log(2.0 * M_PI)).epsilon(1e-12));
  CHECK(lp(0) == doctest::Approx(-0.9189385).epsilon(1e-6));
}

TEST_CASE("nf_log_prob: scale-by-2 chain shifts density by change of variables") {
  FlowChain c(1);
  auto& s = c.emplace<flows::ScaleLayer>("s", 1);
  s.alpha().value.setConstant(5.0 * std::atanh(std::log(2.0) / 5.0));
  for (double zv : {-3.0, -0.5, 0.0, 1.2, 4.0}) {
    Mat z(1, 1);
    z << zv;
    double expect = -0.5 * (zv / 2) * (zv / 2) - 0.5 * std::log(2 * M_PI) - std::log(2.0);
    CHECK(c.log_prob(z)(0) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("nf_log_prob: 1d quadrature normalisation within 1e-4") {
  for (uint64_t seed : {11ULL, 12ULL, 13ULL}) {
    FlowChain c(1);
    {
      Rng rng(seed);
      c.emplace<flows::MafLayer>("m0", 1, std::vector<int>{16}, rng);
      c.emplace<flows::ScaleLayer>("s", 1);
      c.emplace<flows::ShiftLayer>("t", 1);
    }
    randomise(c, seed * 17, 0.4);
    double mass = oracle::simpson(
        [&](double zv) {
          Mat z(1, 1);
          z << zv;
          return std::exp(c.log_prob(z)(0));
        },
        -20.0, 20.0, 4000);
    INFO("seed " << seed << " mass " << mass);
    CHECK(std::abs(mass - 1.0) < 1e-4);
  }
}

TEST_CASE("nf_log_prob agrees with a finite-difference jacobian on 2d chains") {
  FlowChain c = random_chain("maf_desk", 2, 23);
  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    Mat z = rng.normal_mat(1, 2);
    // numeric |det dw/dz| via finite differences of the inverse map
    const double h = 1e-6;
    Mat j(2, 2);
    for (int k = 0; k < 2; ++k) {
      Mat zp = z, zm = z;
      zp(0, k) += h;
      zm(0, k) -= h;
      Mat wp = c.inverse(zp).first, wm = c.inverse(zm).first;
      j.col(k) = (wp - wm).transpose() / (2 * h);
    }
    Mat w = c.inverse(z).first;
    double expect = flows::base_log_prob(w)(0) + std::log(std::abs(j.determinant()));
    CHECK(c.log_prob(z)(0) == doctest::Approx(expect).epsilon(1e-4));
  }
}

TEST_CASE("autoregressive masks: perturbing input j never changes outputs below j") {
  Rng rng(9);
  FlowChain c(5);
  auto& layer = c.emplace<flows::MafLayer>("m", 5, std::vector<int>{32, 32}, rng);
  randomise(c, 31);
  Rng rd(6);
  Mat z = rd.normal_mat(1, 5);
  Vec ld0;
  Mat u0 = layer.inverse(z, &ld0);
  for (int j = 0; j < 5; ++j) {
    Mat zp = z;
    zp(0, j) += 0.35;
    Vec ld;
    Mat up = layer.inverse(zp, &ld);
    for (int i = 0; i < j; ++i) CHECK(up(0, i) == u0(0, i));
    // the direct pass-through term may move coordinate j itself; everything
    // strictly below must be bitwise identical
  }
}

TEST_CASE("coupling layer: pass-through partition is exactly identity") {
  FlowChain c = random_chain("realnvp_desk", 6, 77);
  auto* first = dynamic_cast<flows::CouplingLayer*>(c.layers().front().get());
  REQUIRE(first != nullptr);
  Rng rng(8);
  Mat w = rng.normal_mat(9, 6);
  Vec ld;
  Mat z = first->forward(w, &ld);
  int keep = first->passthrough_dims();
  CHECK(oracle::max_abs_diff(z.leftCols(keep), w.leftCols(keep)) == 0.0);
  Mat wi = first->inverse(z, &ld);
  CHECK(oracle::max_abs_diff(wi, w) < 1e-10);
}

TEST_CASE("train_flows: standard-normal target is already optimal for the identity chain") {
  Rng chain_rng(15);
  FlowChain c = flows::make_chain("maf_desk", 2, chain_rng);
  flows::FlowTrainConfig cfg;
  cfg.epochs = 8;
  cfg.batches_per_epoch = 25;
  cfg.batch_size = 100;
  cfg.seed = 3;
  auto res = flows::train_flows(
      c, [](int n, Rng& r) { return r.normal_mat(n, 2); }, cfg);
  REQUIRE(!res.diverged);
  const double entropy = 0.5 * 2 * std::log(2.0 * M_PI * std::exp(1.0));
  INFO("first " << res.epoch_loss.front() << " last " << res.epoch_loss.back()
                << " entropy " << entropy);
  CHECK(std::abs(res.epoch_loss.front() - entropy) < 0.02 * entropy);
  CHECK(std::abs(res.epoch_loss.back() - res.epoch_loss.front()) <
        0.02 * res.epoch_loss.front());
}

TEST_CASE("train_flows: fits a shifted 1d gaussian") {
  Rng chain_rng(25);
  FlowChain c = flows::make_chain("maf_desk", 1, chain_rng);
  flows::FlowTrainConfig cfg;
  cfg.epochs = 40;
  cfg.batches_per_epoch = 20;
  cfg.batch_size = 100;
  cfg.learning_rate = 1e-2;
  cfg.seed = 4;
  auto res = flows::train_flows(
      c, [](int n, Rng& r) { return (r.normal_mat(n, 1).array() + 3.0).matrix(); }, cfg);
  REQUIRE(!res.diverged);
  Rng rng(5);
  Mat w = rng.normal_mat(10000, 1);
  auto [z, ld] = c.forward(w);
  INFO("sample mean " << z.mean());
  CHECK(z.mean() > 2.8);
  CHECK(z.mean() < 3.2);
}

TEST_CASE("train_flows: loss non-increasing in 10-epoch moving average on the MoG target") {
  data::MogSample mog = data::generate_mog(4000, 51);
  Rng chain_rng(35);
  FlowChain c = flows::make_chain("maf_desk", 2, chain_rng);
  flows::FlowTrainConfig cfg;
  cfg.epochs = 40;
  cfg.batches_per_epoch = 20;
  cfg.batch_size = 100;
  cfg.seed = 6;
  const Mat& pts = mog.points;
  auto res = flows::train_flows(
      c,
      [&pts](int n, Rng& r) {
        Mat out(n, 2);
        for (int i = 0; i < n; ++i)
          out.row(i) = pts.row(r.uniform_int(0, static_cast<int>(pts.rows()) - 1));
        return out;
      },
      cfg);
  REQUIRE(!res.diverged);
  auto moving = [&](int e) {
    double s = 0;
    for (int k = e; k < e + 10; ++k) s += res.epoch_loss[k];
    return s / 10;
  };
  for (int e = 0; e + 11 <= static_cast<int>(res.epoch_loss.size()); ++e)
    CHECK(moving(e + 1) <= moving(e) + 1e-9);
}

TEST_CASE("sample_generative: contracts") {
  ModelConfig mc;
  mc.z_dim = 2;
  mc.objective = Objective::VCAE;
  mc.architecture = "linear";
  mc.variance_target = 1.0;
  mc.seed = 9;
  auto pair = core::make_pair(mc);
  FlowChain identity(2);

  Rng r0(1);
  CHECK(core::sample_generative(pair, identity, 0, r0).rows() == 0);

  Rng r1(77), r2(77);
  Mat via_chain = core::sample_generative(pair, identity, 16, r1);
  Mat direct = core::decode(r2.normal_mat(16, 2), pair);
  CHECK(oracle::max_abs_diff(via_chain, direct) == 0.0);
}

TEST_CASE("sample_generative: mnist desk preset emits finite 28x28 images") {
  ModelConfig mc;
  mc.z_dim = 16;
  mc.objective = Objective::VCAE;
  mc.architecture = "mnist_desk";
  mc.variance_target = 16.0;
  mc.seed = 10;
  auto pair = core::make_pair(mc);
  Rng chain_rng(11);
  FlowChain chain = flows::make_chain("maf_desk", 16, chain_rng);
  Rng rng(12);
  Mat x = core::sample_generative(pair, chain, 5, rng);
  CHECK(x.rows() == 5);
  CHECK(x.cols() == 28 * 28);
  CHECK(x.allFinite());
}
