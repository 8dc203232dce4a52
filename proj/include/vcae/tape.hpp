#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "vcae/common.hpp"

namespace vcae::nn {
struct Parameter;
}

namespace vcae::ad {

class Tape;

// Lightweight handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr; }
  const Mat& val() const;
  int rows() const { return static_cast<int>(val().rows()); }
  int cols() const { return static_cast<int>(val().cols()); }
};

// Reverse-mode tape over Eigen matrices. A fresh graph is built for every
// loss evaluation (define-by-run); backward() walks nodes in reverse
// insertion order, which is a valid topological order by construction.
class Tape {
 public:
  Var constant(Mat value) { return push(std::move(value), false); }

  // Leaf whose gradient is wanted (read back via grad()).
  Var leaf(Mat value) { return push(std::move(value), true); }

  // Leaf bound to an external parameter; backward() accumulates into p.grad.
  Var param(nn::Parameter& p);

  // Register a computed node, then attach its backward via set_back so the
  // closure can capture the output handle itself.
  Var node(Mat value, bool needs_grad) { return push(std::move(value), needs_grad); }

  void set_back(Var v, std::function<void()> back) { nodes_[v.id].back = std::move(back); }

  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

  const Mat& val(Var v) const { return nodes_[v.id].value; }

  // Gradient of a node; zero matrix if backward never reached it.
  const Mat& grad(Var v) {
    ensure_grad(v.id);
    return nodes_[v.id].grad;
  }

  // Adds `delta` into the gradient of node `id` (no-op when grads are not
  // tracked for that node).
  template <typename Expr>
  void accum(Var v, const Expr& delta) {
    Node& n = nodes_[v.id];
    if (!n.needs_grad) return;
    ensure_grad(v.id);
    n.grad += delta;
  }

  // Backward sweep from a scalar (1x1) root.
  void backward(Var root) {
    const Mat& rv = val(root);
    require(rv.rows() == 1 && rv.cols() == 1, "backward root must be scalar");
    ensure_grad(root.id);
    nodes_[root.id].grad(0, 0) += 1.0;
    for (int id = root.id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.needs_grad && n.back && n.grad_alloc) n.back();
    }
  }

  size_t size() const { return nodes_.size(); }

 private:
  friend struct Var;

  struct Node {
    Mat value;
    Mat grad;
    std::function<void()> back;
    bool needs_grad = false;
    bool grad_alloc = false;
  };

  Var push(Mat value, bool needs_grad) {
    nodes_.push_back(Node{std::move(value), Mat(), nullptr, needs_grad, false});
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  void ensure_grad(int id) {
    Node& n = nodes_[id];
    if (!n.grad_alloc) {
      n.grad = Mat::Zero(n.value.rows(), n.value.cols());
      n.grad_alloc = true;
    }
  }

  std::vector<Node> nodes_;
};

inline const Mat& Var::val() const { return tape->val(*this); }

inline bool any_grad(std::initializer_list<Var> vs) {
  for (const Var& v : vs)
    if (v.tape->needs_grad(v)) return true;
  return false;
}

// ---------------------------------------------------------------------------
// Elementwise and linear-algebra ops.
// ---------------------------------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // elementwise
Var neg(Var a);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var matmul(Var a, Var b);
// y = x * (W .* mask) ; mask is a fixed 0/1 matrix shaped like W.
Var matmul_masked(Var x, Var w, const Mat& mask);
Var transpose(Var a);

// Row-vector broadcast: a is n x d, r is 1 x d.
Var add_rowvec(Var a, Var r);
Var mul_rowvec(Var a, Var r);
// Column-vector broadcast: a is n x m, c is n x 1.
Var add_colvec(Var a, Var c);

Var relu(Var a);
Var leaky_relu(Var a, double alpha);
Var tanh_(Var a);
Var sigmoid(Var a);
Var exp_(Var a);
Var log_(Var a);
Var softplus(Var a);
Var square(Var a);
Var sqrt_(Var a);
// |a| with subgradient 0 at the kink.
Var abs_(Var a);
// cap * tanh(a / cap): smooth squashing used to keep flow log-scales bounded.
Var tanh_squash(Var a, double cap);

Var sum(Var a);        // 1x1
Var mean_all(Var a);   // 1x1
Var colwise_sum(Var a);   // 1 x d
Var colwise_mean(Var a);  // 1 x d
Var rowwise_sum(Var a);   // n x 1

Var slice_cols(Var a, int j0, int width);
Var concat_cols(Var a, Var b);
// out(:, j) = a(:, perm[j]); backward scatters accordingly.
Var permute_cols(Var a, const std::vector<int>& perm);

// Pairwise squared distances: a is n x d, b is m x d -> n x m.
Var pairwise_sqdist(Var a, Var b);
// IMQ kernel applied to a matrix of squared distances: k = C / (C + d).
Var imq_from_sqdist(Var d, double C);
// Row log-sum-exp: n x k -> n x 1 (numerically stable).
Var logsumexp_rows(Var a);

// ---------------------------------------------------------------------------
// Convolution ops. Data layout: one row per item, features flattened
// channel-major as [c][h][w].
// ---------------------------------------------------------------------------

struct ConvGeom {
  int in_c = 1, in_h = 1, in_w = 1;
  int out_c = 1, k = 1, stride = 1;
  int pad_t = 0, pad_l = 0, pad_b = 0, pad_r = 0;
  int out_h = 1, out_w = 1;

  int in_size() const { return in_c * in_h * in_w; }
  int out_size() const { return out_c * out_h * out_w; }
  int cols_k() const { return in_c * k * k; }

  // TensorFlow-style SAME padding for a given stride (out = ceil(in/stride));
  // the surplus padding goes to the bottom/right edge.
  static ConvGeom same(int in_c, int in_h, int in_w, int out_c, int k, int stride);
};

// x: B x (in_c*in_h*in_w); w: out_c x (in_c*k*k); b: 1 x out_c.
Var conv2d(Var x, Var w, Var b, const ConvGeom& g);

// Transpose convolution expressed through the adjoint conv geometry `g`,
// which maps the tconv *output* grid back onto its *input* grid. The weight
// keeps the conv layout: (tconv in_c) x (tconv out_c * k * k).
// x: B x (g.out_c*g.out_h*g.out_w) -> B x (g.in_c*g.in_h*g.in_w).
Var tconv2d(Var x, Var w, Var b, const ConvGeom& g);

// Plain-matrix kernels (shared by forward and backward paths; also handy as
// test oracles' counterpart).
Mat conv_im2col(const Mat& x, const ConvGeom& g);
Mat conv_fwd(const Mat& x, const Mat& w, const ConvGeom& g);
Mat conv_bwd_data(const Mat& dy, const Mat& w, const ConvGeom& g);
Mat conv_bwd_weights(const Mat& x, const Mat& dy, const ConvGeom& g);

// ---------------------------------------------------------------------------
// Batch normalisation over channels; location columns grouped per channel.
// ---------------------------------------------------------------------------

struct BnBuffers {
  Vec running_mean;
  Vec running_var;
  bool initialised = false;
};

// x: B x (C*HW); gamma, beta: 1 x C. In training mode uses batch statistics
// (population variance) and updates the running buffers in place.
Var batchnorm(Var x, Var gamma, Var beta, int C, int HW, bool train,
              BnBuffers& buf, double momentum = 0.9, double eps = 1e-5);

}  // namespace vcae::ad
