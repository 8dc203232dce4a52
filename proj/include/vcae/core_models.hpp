#pragma once

#include <memory>
#include <string>
#include <vector>

#include "vcae/architectures.hpp"
#include "vcae/data.hpp"
#include "vcae/flows.hpp"
#include "vcae/model_config.hpp"
#include "vcae/nn.hpp"

namespace vcae::core {

// Deterministic encoder mean map plus decoder mean map; the stochastic
// encoder is realised by additive latent noise drawn at loss-build time.
struct AutoencoderPair {
  ModelConfig cfg;
  ItemShape input_shape;
  nn::Net encoder;
  nn::Net decoder;
  // Amortised posterior flow, present for the VAE+IAF objective only.
  std::unique_ptr<flows::FlowChain> posterior_flow;

  // Full encoder head in eval mode (z, 2z or 3z columns depending on the
  // objective's head).
  Mat encode_raw(const Mat& x) const;
  Mat decode_eval(const Mat& z) const;

  std::vector<nn::Parameter*> params() const;
  int head_width() const { return arch::head_multiplier(cfg.objective) * cfg.z_dim; }
};

// Builds a pair from the config; all weight draws come from a fresh stream
// seeded by cfg.seed.
AutoencoderPair make_pair(const ModelConfig& cfg);
AutoencoderPair make_pair(const ModelConfig& cfg, Rng& rng);

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

// Row-per-item encoder means (the mean head for VAE-style objectives).
Mat encode(const Mat& x, const AutoencoderPair& pair);

// z = mu + eps with eps ~ N(0, noise_variance) elementwise.
Mat sample_latent(const Mat& mu, double noise_variance, Rng& rng);

Mat decode(const Mat& z, const AutoencoderPair& pair);

// Mean over batch items of the per-item summed squared error.
double reconstruction_error(const Mat& x, const Mat& x_hat);

// Sum over dimensions of the per-dimension population variance.
double batch_total_variance(const Mat& z);

struct LossBreakdown {
  double total = 0;
  double recon = 0;
  double penalty = 0;         // the lambda-scaled constraint / divergence term
  double batch_variance = 0;  // total variance of the latents used by the loss
};

// Loss entry points. With with_grad, parameter gradients are accumulated into
// pair.params() (caller applies the optimiser step). `rng` supplies latent
// noise (and prior draws for the MMD objective); `train_mode` selects batch
// norm behaviour.
double vcae_loss(AutoencoderPair& pair, const Mat& x, Rng& rng, bool with_grad = false,
                 bool train_mode = false, LossBreakdown* out = nullptr);
double cwae_loss(AutoencoderPair& pair, const Mat& x, Rng& rng, bool with_grad = false,
                 bool train_mode = false, LossBreakdown* out = nullptr);
double vae_loss(AutoencoderPair& pair, const Mat& x, Rng& rng, bool with_grad = false,
                bool train_mode = false, LossBreakdown* out = nullptr);
double vae_iaf_loss(AutoencoderPair& pair, const Mat& x, Rng& rng, bool with_grad = false,
                    bool train_mode = false, LossBreakdown* out = nullptr);
double objective_loss(AutoencoderPair& pair, const Mat& x, Rng& rng, bool with_grad = false,
                      bool train_mode = false, LossBreakdown* out = nullptr);

// Graph-building form used by the trainer and by the TC extension: returns
// the loss node and the latent batch node so callers can extend the graph
// before running backward.
struct BuiltLoss {
  ad::Var loss;
  ad::Var latent;
  LossBreakdown breakdown;
};
BuiltLoss build_objective(ad::Tape& t, AutoencoderPair& pair, const Mat& x, Rng& rng,
                          bool train_mode);

// ---------------------------------------------------------------------------
// Training (minibatch Adam with the configured schedule)
// ---------------------------------------------------------------------------

struct EpochRecord {
  int epoch = 0;
  double train_err = 0;          // epoch mean of minibatch reconstruction errors
  double test_err = 0;           // noise-free reconstruction error on the test set
  double latent_variance = 0;    // total variance of noise-free test encodings
  double latent_variance_noisy = 0;
  double loss = 0;
  double lr = 0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  bool diverged = false;
  std::string abort_reason;
};

struct Trained {
  AutoencoderPair pair;
  TrainResult result;
  std::string rng_state;  // training stream state at completion
};

Trained train(const ModelConfig& cfg, const data::Dataset& train_ds,
              const data::Dataset& test_ds);

// Continues training an existing pair with an explicit stream (used by the
// alternating TC trainer).
TrainResult train_loop(AutoencoderPair& pair, const data::Dataset& train_ds,
                       const data::Dataset& test_ds, Rng& rng);

// Generative sampling: w ~ N(0, I), z = flow_forward(w), x = decoder mean.
Mat sample_generative(const AutoencoderPair& pair, const flows::FlowChain& chain, int n,
                      Rng& rng);

// Noise-free (or noisy, when noise_variance > 0) reconstruction error of a
// frozen pair over a dataset, evaluated in chunks.
double eval_reconstruction(const AutoencoderPair& pair, const Mat& items,
                           double noise_variance = 0.0, Rng* rng = nullptr);

// Noise-free encodings of a frozen pair, evaluated in chunks.
Mat encode_dataset(const AutoencoderPair& pair, const Mat& items, int chunk = 256);

// ---------------------------------------------------------------------------
// Checkpoints: one self-describing archive per run with config echo,
// parameter arrays, batch-norm buffers and the RNG state.
// ---------------------------------------------------------------------------

void save_checkpoint(const std::string& path, const AutoencoderPair& pair,
                     const std::string& rng_state,
                     const nlohmann::json& extra_meta = nlohmann::json::object());
AutoencoderPair load_checkpoint(const std::string& path, std::string* rng_state = nullptr);

void save_flow_checkpoint(const std::string& path, const flows::FlowChain& chain,
                          const std::string& preset, uint64_t perm_seed,
                          const nlohmann::json& extra_meta = nlohmann::json::object());
flows::FlowChain load_flow_checkpoint(const std::string& path);

}  // namespace vcae::core
