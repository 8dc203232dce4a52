#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vcae/nn.hpp"
#include "vcae/rng.hpp"
#include "vcae/tape.hpp"

namespace vcae::flows {

// One invertible transform. Convention: forward maps base samples w toward
// the latent space z (the sampling direction); inverse maps latents back to
// the base. Log-determinants always refer to the direction being applied,
// one value per batch row.
class FlowLayer {
 public:
  virtual ~FlowLayer() = default;

  virtual Mat forward(const Mat& w, Vec* logdet) const = 0;
  virtual Mat inverse(const Mat& z, Vec* logdet) const = 0;

  // Inverse pass on a tape (density evaluation / flow training). Adds this
  // layer's inverse log-determinant (B x 1) into `logdet_acc`.
  virtual ad::Var inverse_ad(ad::Tape& t, ad::Var z, ad::Var& logdet_acc) = 0;

  // Forward pass on a tape, used by amortised posterior flows. `ctx` may be
  // an invalid Var for layers that ignore context.
  virtual ad::Var forward_ad(ad::Tape& t, ad::Var w, ad::Var& logdet_acc, ad::Var ctx);

  virtual std::vector<nn::Parameter*> params() { return {}; }
  virtual std::string kind() const = 0;
};

// Masked autoregressive dense network emitting per-dimension shift and
// log-scale. Optional context enters the first hidden layer unmasked.
class Made {
 public:
  Made(const std::string& name, int dim, std::vector<int> hidden, int ctx_dim, Rng& rng);

  // Returns (mu, alpha); alpha is the raw log-scale before squashing.
  std::pair<Mat, Mat> eval(const Mat& x, const Mat* ctx) const;
  std::pair<ad::Var, ad::Var> eval_ad(ad::Tape& t, ad::Var x, ad::Var ctx);

  std::vector<nn::Parameter*> params();
  int dim() const { return dim_; }

 private:
  int dim_, ctx_dim_;
  std::vector<nn::Parameter> ws_, bs_;
  std::optional<nn::Parameter> wctx_;
  std::vector<Mat> masks_;
};

// Masked autoregressive flow layer. The inverse (density) direction is a
// single parallel pass; the forward (sampling) direction fills dimensions
// sequentially.
class MafLayer : public FlowLayer {
 public:
  MafLayer(const std::string& name, int dim, std::vector<int> hidden, Rng& rng);
  Mat forward(const Mat& w, Vec* logdet) const override;
  Mat inverse(const Mat& z, Vec* logdet) const override;
  ad::Var inverse_ad(ad::Tape& t, ad::Var z, ad::Var& logdet_acc) override;
  std::vector<nn::Parameter*> params() override { return made_.params(); }
  std::string kind() const override { return "maf"; }

 private:
  Made made_;
};

// Inverse-autoregressive step for amortised posteriors: the forward
// (sampling) direction is the parallel one. Gated update
// z' = s .* z + (1 - s) .* m with s = sigmoid(raw + bias).
class IafLayer : public FlowLayer {
 public:
  IafLayer(const std::string& name, int dim, std::vector<int> hidden, int ctx_dim, Rng& rng);
  Mat forward(const Mat& w, Vec* logdet) const override;  // context-free evaluation
  Mat inverse(const Mat& z, Vec* logdet) const override;
  ad::Var inverse_ad(ad::Tape& t, ad::Var z, ad::Var& logdet_acc) override;
  ad::Var forward_ad(ad::Tape& t, ad::Var w, ad::Var& logdet_acc, ad::Var ctx) override;
  std::vector<nn::Parameter*> params() override { return made_.params(); }
  std::string kind() const override { return "iaf"; }

 private:
  Made made_;
};

// Affine coupling (RealNVP-style): the first ceil(d/2) dimensions pass
// through unchanged and parameterise scale/shift of the rest.
class CouplingLayer : public FlowLayer {
 public:
  CouplingLayer(const std::string& name, int dim, std::vector<int> hidden, Rng& rng);
  Mat forward(const Mat& w, Vec* logdet) const override;
  Mat inverse(const Mat& z, Vec* logdet) const override;
  ad::Var inverse_ad(ad::Tape& t, ad::Var z, ad::Var& logdet_acc) override;
  ad::Var forward_ad(ad::Tape& t, ad::Var w, ad::Var& logdet_acc, ad::Var ctx) override;
  std::vector<nn::Parameter*> params() override;
  std::string kind() const override { return "coupling"; }
  int passthrough_dims() const { return split_; }

 private:
  std::pair<Mat, Mat> st(const Mat& a) const;  // (shift, raw log-scale)
  int dim_, split_;
  std::vector<nn::Parameter> ws_, bs_;
};

// Trainable elementwise scale; log-scales squashed smoothly to keep
// determinants finite.
class ScaleLayer : public FlowLayer {
 public:
  ScaleLayer(const std::string& name, int dim);
  Mat forward(const Mat& w, Vec* logdet) const override;
  Mat inverse(const Mat& z, Vec* logdet) const override;
  ad::Var inverse_ad(ad::Tape& t, ad::Var z, ad::Var& logdet_acc) override;
  ad::Var forward_ad(ad::Tape& t, ad::Var w, ad::Var& logdet_acc, ad::Var ctx) override;
  std::vector<nn::Parameter*> params() override { return {&alpha_}; }
  std::string kind() const override { return "scale"; }
  nn::Parameter& alpha() { return alpha_; }

 private:
  nn::Parameter alpha_;
};

// Trainable elementwise shift (volume preserving).
class ShiftLayer : public FlowLayer {
 public:
  ShiftLayer(const std::string& name, int dim);
  Mat forward(const Mat& w, Vec* logdet) const override;
  Mat inverse(const Mat& z, Vec* logdet) const override;
  ad::Var inverse_ad(ad::Tape& t, ad::Var z, ad::Var& logdet_acc) override;
  ad::Var forward_ad(ad::Tape& t, ad::Var w, ad::Var& logdet_acc, ad::Var ctx) override;
  std::vector<nn::Parameter*> params() override { return {&shift_}; }
  std::string kind() const override { return "shift"; }

 private:
  nn::Parameter shift_;
};

// Fixed permutation of dimensions (volume preserving).
class PermuteLayer : public FlowLayer {
 public:
  PermuteLayer(std::vector<int> perm);
  Mat forward(const Mat& w, Vec* logdet) const override;
  Mat inverse(const Mat& z, Vec* logdet) const override;
  ad::Var inverse_ad(ad::Tape& t, ad::Var z, ad::Var& logdet_acc) override;
  ad::Var forward_ad(ad::Tape& t, ad::Var w, ad::Var& logdet_acc, ad::Var ctx) override;
  std::string kind() const override { return "permute"; }
  const std::vector<int>& perm() const { return perm_; }

 private:
  std::vector<int> perm_, inv_;
};

// Ordered chain f_1 ... f_m over a standard-normal base distribution.
class FlowChain {
 public:
  FlowChain() = default;
  explicit FlowChain(int dim) : dim_(dim) {}

  int dim() const { return dim_; }
  size_t depth() const { return layers_.size(); }

  template <typename L, typename... Args>
  L& emplace(Args&&... args) {
    layers_.push_back(std::make_unique<L>(std::forward<Args>(args)...));
    return static_cast<L&>(*layers_.back());
  }

  // Applies f_1 ... f_m in order; logdet per row.
  std::pair<Mat, Vec> forward(const Mat& w) const;
  // Applies f_m^{-1} ... f_1^{-1}; logdet per row.
  std::pair<Mat, Vec> inverse(const Mat& z) const;

  // log q(z) under the flow-induced density, per row.
  Vec log_prob(const Mat& z) const;
  ad::Var log_prob_ad(ad::Tape& t, ad::Var z);

  // Forward pass on a tape (amortised posterior use), with optional context.
  ad::Var forward_ad(ad::Tape& t, ad::Var w, ad::Var& logdet_acc, ad::Var ctx);

  std::vector<nn::Parameter*> params() const;
  const std::vector<std::unique_ptr<FlowLayer>>& layers() const { return layers_; }

 private:
  int dim_ = 0;
  std::vector<std::unique_ptr<FlowLayer>> layers_;
};

// Standard-normal log-density per row.
Vec base_log_prob(const Mat& w);
ad::Var base_log_prob_ad(ad::Tape& t, ad::Var w);

// Registered chain presets. Permutations are drawn from `rng`.
//   maf_mnist       6 x MAF[64,64] with interleaved permutations,
//                   terminal elementwise scale and shift
//   maf_desk        same structure at [32,32]
//   realnvp_celeba  8 x coupling[256,256,256] with permutations
//   realnvp_desk    same structure at [32,32]
//   iaf_posterior   2 x IAF[32] with a permutation between (context-aware)
FlowChain make_chain(const std::string& preset, int dim, Rng& rng);

struct FlowTrainConfig {
  int epochs = 100;
  int batches_per_epoch = 100;
  int batch_size = 100;
  double learning_rate = 1e-3;
  uint64_t seed = 1;
};

struct FlowTrainResult {
  std::vector<double> epoch_loss;  // mean negative log-likelihood per epoch
  bool diverged = false;
};

// Second-stage training (encoder/decoder untouched by construction: only the
// chain's parameters are updated). `sample_batch` must return a batch of
// latent draws from the frozen aggregate posterior.
FlowTrainResult train_flows(FlowChain& chain,
                            const std::function<Mat(int batch, Rng& rng)>& sample_batch,
                            const FlowTrainConfig& cfg);

}  // namespace vcae::flows
