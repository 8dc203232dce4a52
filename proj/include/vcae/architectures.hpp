#pragma once

#include <string>
#include <vector>

#include "vcae/model_config.hpp"
#include "vcae/nn.hpp"

namespace vcae::arch {

// Width of the encoder head relative to z_dim: plain objectives emit means
// only; VAE adds a log-std vector; VAE+IAF additionally emits a context
// vector for the posterior flow.
int head_multiplier(Objective o);

bool exists(const std::string& preset);
std::vector<std::string> names();
ItemShape input_shape(const std::string& preset);

// Builds encoder and decoder for a named preset. The encoder's final dense
// layer has width head_mult * z_dim; the decoder always consumes z_dim.
struct Built {
  nn::Net encoder;
  nn::Net decoder;
  ItemShape input;
};
Built build(const std::string& preset, int z_dim, int head_mult, Rng& rng);

}  // namespace vcae::arch
