#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "vcae/common.hpp"

namespace vcae {

enum class Objective { VCAE, CWAE, VAE, VAE_IAF, TC_VCAE, TC_CWAE, FACTOR_VAE };

std::string to_string(Objective o);
Objective objective_from_string(const std::string& s);

// TC variants share the training core of their base objective.
Objective base_objective(Objective o);
bool is_tc_objective(Objective o);

struct LrMilestone {
  int epoch = 0;      // learning rate changes once this epoch is reached
  double factor = 1;  // multiplier applied to the *initial* rate
};

struct OptimizerConfig {
  double learning_rate = 1e-3;
  std::vector<LrMilestone> milestones;  // strictly increasing epochs
  int batch_size = 100;
  int epochs = 10;

  double lr_at_epoch(int epoch) const {
    double lr = learning_rate;
    for (const auto& m : milestones)
      if (epoch >= m.epoch) lr = learning_rate * m.factor;
    return lr;
  }
};

// Full experiment recipe for one model.
struct ModelConfig {
  int z_dim = 2;
  double noise_variance = 0.0;   // sigma_eps^2
  double variance_target = 1.0;  // v
  double penalty_weight = 0.0;   // lambda
  double tc_gamma = 0.0;         // gamma for TC variants
  Objective objective = Objective::VCAE;
  std::string architecture = "mlp_small";
  OptimizerConfig optimizer;
  uint64_t seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

}  // namespace vcae
