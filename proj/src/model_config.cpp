#include "vcae/model_config.hpp"

namespace vcae {

std::string to_string(Objective o) {
  switch (o) {
    case Objective::VCAE: return "vcae";
    case Objective::CWAE: return "cwae";
    case Objective::VAE: return "vae";
    case Objective::VAE_IAF: return "vae_iaf";
    case Objective::TC_VCAE: return "tc_vcae";
    case Objective::TC_CWAE: return "tc_cwae";
    case Objective::FACTOR_VAE: return "factor_vae";
  }
  throw ConfigError("unknown objective enum value");
}

Objective objective_from_string(const std::string& s) {
  if (s == "vcae") return Objective::VCAE;
  if (s == "cwae" || s == "wae") return Objective::CWAE;
  if (s == "vae") return Objective::VAE;
  if (s == "vae_iaf") return Objective::VAE_IAF;
  if (s == "tc_vcae") return Objective::TC_VCAE;
  if (s == "tc_cwae" || s == "tc_wae") return Objective::TC_CWAE;
  if (s == "factor_vae") return Objective::FACTOR_VAE;
  throw ConfigError("unknown objective: " + s);
}

Objective base_objective(Objective o) {
  switch (o) {
    case Objective::TC_VCAE: return Objective::VCAE;
    case Objective::TC_CWAE: return Objective::CWAE;
    case Objective::FACTOR_VAE: return Objective::VAE;
    default: return o;
  }
}

bool is_tc_objective(Objective o) {
  return o == Objective::TC_VCAE || o == Objective::TC_CWAE || o == Objective::FACTOR_VAE;
}

void ModelConfig::validate() const {
  if (z_dim < 1) throw ConfigError("z_dim must be >= 1");
  if (noise_variance < 0.0) throw ConfigError("noise_variance must be >= 0");
  if (variance_target <= 0.0) throw ConfigError("variance_target must be > 0");
  if (penalty_weight < 0.0) throw ConfigError("penalty_weight must be >= 0");
  if (tc_gamma < 0.0) throw ConfigError("tc_gamma must be >= 0");
  if (optimizer.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (optimizer.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (optimizer.learning_rate <= 0.0) throw ConfigError("learning_rate must be > 0");
  for (size_t i = 1; i < optimizer.milestones.size(); ++i)
    if (optimizer.milestones[i].epoch <= optimizer.milestones[i - 1].epoch)
      throw ConfigError("schedule milestones must be strictly increasing");
}

nlohmann::json ModelConfig::to_json() const {
  nlohmann::json m = nlohmann::json::array();
  for (const auto& ms : optimizer.milestones)
    m.push_back({{"epoch", ms.epoch}, {"factor", ms.factor}});
  return {
      {"z_dim", z_dim},
      {"noise_variance", noise_variance},
      {"variance_target", variance_target},
      {"penalty_weight", penalty_weight},
      {"tc_gamma", tc_gamma},
      {"objective", to_string(objective)},
      {"architecture", architecture},
      {"optimizer",
       {{"learning_rate", optimizer.learning_rate},
        {"milestones", m},
        {"batch_size", optimizer.batch_size},
        {"epochs", optimizer.epochs}}},
      {"seed", seed},
  };
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.z_dim = j.at("z_dim").get<int>();
    c.noise_variance = j.at("noise_variance").get<double>();
    c.variance_target = j.at("variance_target").get<double>();
    c.penalty_weight = j.at("penalty_weight").get<double>();
    c.tc_gamma = j.value("tc_gamma", 0.0);
    c.objective = objective_from_string(j.at("objective").get<std::string>());
    c.architecture = j.at("architecture").get<std::string>();
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      c.optimizer.learning_rate = o.value("learning_rate", 1e-3);
      c.optimizer.batch_size = o.value("batch_size", 100);
      c.optimizer.epochs = o.value("epochs", 10);
      if (o.contains("milestones"))
        for (const auto& m : o.at("milestones"))
          c.optimizer.milestones.push_back(
              {m.at("epoch").get<int>(), m.at("factor").get<double>()});
    }
    c.seed = j.value("seed", 1ULL);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad model config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace vcae
