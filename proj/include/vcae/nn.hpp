#pragma once

#include <memory>
#include <string>
#include <vector>

#include "vcae/parameter.hpp"
#include "vcae/rng.hpp"
#include "vcae/tape.hpp"

namespace vcae::nn {

// A layer maps a batch (one row per item) to a batch on the tape. Layers own
// their parameters; stateful layers (batch norm) also own running buffers.
class Layer {
 public:
  virtual ~Layer() = default;
  virtual ad::Var apply(ad::Tape& t, ad::Var x, bool train) = 0;
  virtual std::vector<Parameter*> params() { return {}; }
  // Non-parameter state (running statistics); name/value pairs for archives.
  virtual std::vector<std::pair<std::string, Mat>> buffers() const { return {}; }
  virtual void set_buffer(const std::string& name, const Mat& value) { (void)name, (void)value; }
};

class Dense : public Layer {
 public:
  Dense(std::string name, int in, int out, Rng& rng, double init_scale = -1.0);
  ad::Var apply(ad::Tape& t, ad::Var x, bool train) override;
  std::vector<Parameter*> params() override { return {&w_, &b_}; }
  Parameter& weight() { return w_; }
  Parameter& bias() { return b_; }

 private:
  Parameter w_, b_;  // w: in x out, b: 1 x out
};

class Conv : public Layer {
 public:
  Conv(std::string name, const ad::ConvGeom& g, Rng& rng);
  ad::Var apply(ad::Tape& t, ad::Var x, bool train) override;
  std::vector<Parameter*> params() override { return {&w_, &b_}; }
  const ad::ConvGeom& geom() const { return g_; }

 private:
  ad::ConvGeom g_;
  Parameter w_, b_;
};

// Transpose convolution; constructed from its own in/out grids, internally
// holds the adjoint conv geometry.
class TConv : public Layer {
 public:
  TConv(std::string name, int in_c, int in_h, int in_w, int out_c, int k, int stride,
        Rng& rng);
  ad::Var apply(ad::Tape& t, ad::Var x, bool train) override;
  std::vector<Parameter*> params() override { return {&w_, &b_}; }
  int out_size() const { return adj_.in_size(); }

 private:
  ad::ConvGeom adj_;  // adjoint conv: maps tconv output grid -> input grid
  Parameter w_, b_;
};

class BatchNorm : public Layer {
 public:
  BatchNorm(std::string name, int channels, int hw);
  ad::Var apply(ad::Tape& t, ad::Var x, bool train) override;
  std::vector<Parameter*> params() override { return {&gamma_, &beta_}; }
  std::vector<std::pair<std::string, Mat>> buffers() const override;
  void set_buffer(const std::string& name, const Mat& value) override;

 private:
  int c_, hw_;
  Parameter gamma_, beta_;
  ad::BnBuffers buf_;
  std::string name_;
};

enum class Act { ReLU, LeakyReLU, Tanh, Sigmoid };

class Activation : public Layer {
 public:
  explicit Activation(Act kind, double alpha = 0.2) : kind_(kind), alpha_(alpha) {}
  ad::Var apply(ad::Tape& t, ad::Var x, bool) override {
    switch (kind_) {
      case Act::ReLU: return ad::relu(x);
      case Act::LeakyReLU: return ad::leaky_relu(x, alpha_);
      case Act::Tanh: return ad::tanh_(x);
      case Act::Sigmoid: return ad::sigmoid(x);
    }
    throw ConfigError("unknown activation");
  }

 private:
  Act kind_;
  double alpha_;
};

// Ordered stack of layers.
class Net {
 public:
  Net() = default;
  Net(Net&&) = default;
  Net& operator=(Net&&) = default;

  template <typename L, typename... Args>
  L& emplace(Args&&... args) {
    layers_.push_back(std::make_unique<L>(std::forward<Args>(args)...));
    return static_cast<L&>(*layers_.back());
  }

  ad::Var apply(ad::Tape& t, ad::Var x, bool train) const {
    for (const auto& l : layers_) x = l->apply(t, x, train);
    return x;
  }

  // Convenience evaluation without gradient bookkeeping.
  Mat forward(const Mat& x, bool train = false) const {
    ad::Tape t;
    return t.val(apply(t, t.constant(x), train));
  }

  std::vector<Parameter*> params() const {
    std::vector<Parameter*> ps;
    for (const auto& l : layers_)
      for (Parameter* p : l->params()) ps.push_back(p);
    return ps;
  }

  std::vector<Layer*> layers() const {
    std::vector<Layer*> ls;
    for (const auto& l : layers_) ls.push_back(l.get());
    return ls;
  }

  size_t depth() const { return layers_.size(); }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

// Adam with global step count; `lr` is supplied per step so schedules stay in
// the caller's hands.
class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<Parameter*>& params, double lr);
  void reset() { t_ = 0; }
  long steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  long t_ = 0;
};

// Fan-in-scaled normal init used everywhere (He-style for the ReLU family).
Mat init_dense(int in, int out, Rng& rng, double scale = -1.0);

}  // namespace vcae::nn
