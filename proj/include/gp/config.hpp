#ifndef GP_CONFIG_HPP_
#define GP_CONFIG_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "gp/ppo.hpp"

namespace gp {

// Full experiment description. Parsing is strict: unknown keys anywhere are
// rejected so that typos cannot silently fall back to defaults.
struct ExperimentConfig {
  EnvSpec env;
  ShapingConfig shaping;
  PpoConfig ppo;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  int eval_episodes = 100;
  std::string output_dir = "runs/out";

  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig from_file(const std::string& path);
  nlohmann::json to_json() const;
  void validate() const;
};

// Applies a dotted-path override like "ppo.gamma=0.98" onto a config JSON.
// The value is parsed as a JSON literal, falling back to a plain string.
void apply_config_override(nlohmann::json& config, const std::string& assignment);

}  // namespace gp

#endif  // GP_CONFIG_HPP_
