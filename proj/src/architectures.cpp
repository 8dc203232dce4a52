#include "vcae/architectures.hpp"

#include <map>

namespace vcae::arch {

int head_multiplier(Objective o) {
  switch (base_objective(o)) {
    case Objective::VAE: return 2;
    case Objective::VAE_IAF: return 3;
    default: return 1;
  }
}

namespace {

struct GridState {
  int c, h, w;
  int size() const { return c * h * w; }
};

// Conv[out_c, k, s] (+ optional BN) (+ optional ReLU), SAME padding.
GridState conv_block(nn::Net& net, const std::string& name, GridState in, int out_c, int k,
                     int s, bool bn, bool relu, Rng& rng) {
  ad::ConvGeom g = ad::ConvGeom::same(in.c, in.h, in.w, out_c, k, s);
  net.emplace<nn::Conv>(name, g, rng);
  GridState out{out_c, g.out_h, g.out_w};
  if (bn) net.emplace<nn::BatchNorm>(name + ".bn", out_c, g.out_h * g.out_w);
  if (relu) net.emplace<nn::Activation>(nn::Act::ReLU);
  return out;
}

// TConv[out_c, k, s] (+ optional BN/ReLU); output grid is in.h*s x in.w*s.
GridState tconv_block(nn::Net& net, const std::string& name, GridState in, int out_c, int k,
                      int s, bool bn, bool relu, Rng& rng) {
  net.emplace<nn::TConv>(name, in.c, in.h, in.w, out_c, k, s, rng);
  GridState out{out_c, in.h * s, in.w * s};
  if (bn) net.emplace<nn::BatchNorm>(name + ".bn", out_c, out.h * out.w);
  if (relu) net.emplace<nn::Activation>(nn::Act::ReLU);
  return out;
}

struct WaePreset {
  ItemShape input;
  int base_channels;  // first conv width; later convs double it
  int k;
  int dec_grid;       // spatial size after the decoder's dense layer
};

// MNIST / CelebA structure: four stride-2 convs with doubling widths and
// batch norm, mirrored by three/four transpose convs.
Built build_wae_conv(const WaePreset& p, int z_dim, int head_mult, Rng& rng) {
  Built b;
  b.input = p.input;
  GridState s{p.input.channels, p.input.height, p.input.width};
  int c1 = p.base_channels;
  s = conv_block(b.encoder, "enc.c1", s, c1, p.k, 2, true, true, rng);
  s = conv_block(b.encoder, "enc.c2", s, c1 * 2, p.k, 2, true, true, rng);
  s = conv_block(b.encoder, "enc.c3", s, c1 * 4, p.k, 2, true, true, rng);
  s = conv_block(b.encoder, "enc.c4", s, c1 * 8, p.k, 2, true, true, rng);
  b.encoder.emplace<nn::Dense>("enc.head", s.size(), head_mult * z_dim, rng,
                               std::sqrt(1.0 / s.size()));

  int cd = c1 * 8;
  GridState d{cd, p.dec_grid, p.dec_grid};
  b.decoder.emplace<nn::Dense>("dec.fc", z_dim, d.size(), rng);
  d = tconv_block(b.decoder, "dec.t1", d, cd / 2, p.k, 2, true, true, rng);
  d = tconv_block(b.decoder, "dec.t2", d, cd / 4, p.k, 2, true, true, rng);
  if (p.input.height == 64) {
    // CelebA shape: one more upsampling stage before the output layer.
    d = tconv_block(b.decoder, "dec.t3", d, cd / 8, p.k, 2, true, true, rng);
  }
  d = tconv_block(b.decoder, "dec.out", d, p.input.channels, p.k, 1, false, false, rng);
  require(d.h == p.input.height && d.w == p.input.width,
          "decoder output grid does not match the input shape");
  return b;
}

struct ShapesPreset {
  ItemShape input;
  int c_small, c_big;  // first/second pair of conv widths
  int fc;              // width of the dense trunk layer
};

// 3D-Shapes structure: four stride-2 convs (no batch norm), dense trunk,
// dense head; decoder mirrors with four transpose convs.
Built build_shapes_conv(const ShapesPreset& p, int z_dim, int head_mult, Rng& rng) {
  Built b;
  b.input = p.input;
  GridState s{p.input.channels, p.input.height, p.input.width};
  s = conv_block(b.encoder, "enc.c1", s, p.c_small, 4, 2, false, true, rng);
  s = conv_block(b.encoder, "enc.c2", s, p.c_small, 4, 2, false, true, rng);
  s = conv_block(b.encoder, "enc.c3", s, p.c_big, 4, 2, false, true, rng);
  s = conv_block(b.encoder, "enc.c4", s, p.c_big, 4, 2, false, true, rng);
  b.encoder.emplace<nn::Dense>("enc.fc", s.size(), p.fc, rng);
  b.encoder.emplace<nn::Dense>("enc.head", p.fc, head_mult * z_dim, rng,
                               std::sqrt(1.0 / p.fc));

  GridState d{p.c_big, s.h, s.w};
  b.decoder.emplace<nn::Dense>("dec.fc1", z_dim, p.fc, rng);
  b.decoder.emplace<nn::Activation>(nn::Act::ReLU);
  b.decoder.emplace<nn::Dense>("dec.fc2", p.fc, d.size(), rng);
  b.decoder.emplace<nn::Activation>(nn::Act::ReLU);
  d = tconv_block(b.decoder, "dec.t1", d, p.c_big, 4, 2, false, true, rng);
  d = tconv_block(b.decoder, "dec.t2", d, p.c_small, 4, 2, false, true, rng);
  d = tconv_block(b.decoder, "dec.t3", d, p.c_small, 4, 2, false, true, rng);
  d = tconv_block(b.decoder, "dec.out", d, p.input.channels, 4, 2, false, false, rng);
  require(d.h == p.input.height && d.w == p.input.width,
          "decoder output grid does not match the input shape");
  return b;
}

Built build_mlp(int data_dim, const std::vector<int>& hidden, nn::Act act, int z_dim,
                int head_mult, Rng& rng) {
  Built b;
  b.input = ItemShape{1, 1, data_dim};
  int in = data_dim;
  int i = 0;
  for (int h : hidden) {
    b.encoder.emplace<nn::Dense>("enc.fc" + std::to_string(++i), in, h, rng);
    b.encoder.emplace<nn::Activation>(act);
    in = h;
  }
  b.encoder.emplace<nn::Dense>("enc.head", in, head_mult * z_dim, rng,
                               std::sqrt(1.0 / in));

  in = z_dim;
  i = 0;
  for (auto it = hidden.rbegin(); it != hidden.rend(); ++it) {
    b.decoder.emplace<nn::Dense>("dec.fc" + std::to_string(++i), in, *it, rng);
    b.decoder.emplace<nn::Activation>(act);
    in = *it;
  }
  b.decoder.emplace<nn::Dense>("dec.out", in, data_dim, rng, std::sqrt(1.0 / in));
  return b;
}

}  // namespace

bool exists(const std::string& preset) {
  for (const auto& n : names())
    if (n == preset) return true;
  return false;
}

std::vector<std::string> names() {
  return {"mnist",      "mnist_desk",    "celeba",   "celeba_desk", "shapes3d",
          "shapes3d_desk", "factor32_desk", "mlp_small", "tiny",        "identity",
          "linear",     "linear_wide"};
}

ItemShape input_shape(const std::string& preset) {
  if (preset == "mnist" || preset == "mnist_desk") return {1, 28, 28};
  if (preset == "celeba" || preset == "celeba_desk") return {3, 64, 64};
  if (preset == "shapes3d" || preset == "shapes3d_desk") return {3, 64, 64};
  if (preset == "factor32_desk") return {3, 32, 32};
  if (preset == "mlp_small") return {1, 1, 100};
  if (preset == "tiny") return {1, 1, 6};
  throw ConfigError("input shape of '" + preset + "' depends on z_dim");
}

Built build(const std::string& preset, int z_dim, int head_mult, Rng& rng) {
  if (z_dim < 1) throw ConfigError("z_dim must be >= 1");
  if (preset == "mnist")
    return build_wae_conv({{1, 28, 28}, 128, 4, 7}, z_dim, head_mult, rng);
  if (preset == "mnist_desk")
    return build_wae_conv({{1, 28, 28}, 16, 4, 7}, z_dim, head_mult, rng);
  if (preset == "celeba")
    return build_wae_conv({{3, 64, 64}, 128, 5, 8}, z_dim, head_mult, rng);
  if (preset == "celeba_desk")
    return build_wae_conv({{3, 64, 64}, 16, 5, 8}, z_dim, head_mult, rng);
  if (preset == "shapes3d")
    return build_shapes_conv({{3, 64, 64}, 32, 64, 256}, z_dim, head_mult, rng);
  if (preset == "shapes3d_desk")
    return build_shapes_conv({{3, 64, 64}, 4, 8, 32}, z_dim, head_mult, rng);
  if (preset == "factor32_desk")
    return build_shapes_conv({{3, 32, 32}, 4, 8, 32}, z_dim, head_mult, rng);
  if (preset == "mlp_small")
    return build_mlp(100, {128, 128}, nn::Act::ReLU, z_dim, head_mult, rng);
  if (preset == "tiny")
    return build_mlp(6, {5}, nn::Act::Tanh, z_dim, head_mult, rng);
  if (preset == "identity") {
    if (head_mult != 1)
      throw ConfigError("identity preset supports the plain head only");
    Built b;
    b.input = ItemShape{1, 1, z_dim};
    return b;
  }
  if (preset == "linear") {
    Built b;
    b.input = ItemShape{1, 1, z_dim};
    b.encoder.emplace<nn::Dense>("enc.w", z_dim, head_mult * z_dim, rng);
    b.decoder.emplace<nn::Dense>("dec.w", z_dim, z_dim, rng);
    return b;
  }
  if (preset == "linear_wide") {
    Built b;
    int d = 3 * z_dim;
    b.input = ItemShape{1, 1, d};
    b.encoder.emplace<nn::Dense>("enc.w", d, head_mult * z_dim, rng);
    b.decoder.emplace<nn::Dense>("dec.w", z_dim, d, rng);
    return b;
  }
  throw ConfigError("unknown architecture preset: " + preset);
}

}  // namespace vcae::arch
