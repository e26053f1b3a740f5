#include "gp/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

namespace gp {

namespace {

// Tracks which keys of an object were consumed; leftovers are config errors.
class StrictObject {
 public:
  StrictObject(const nlohmann::json& j, std::string context) : j_(j), context_(std::move(context)) {
    if (!j_.is_object()) throw std::invalid_argument("config: " + context_ + " must be an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    auto it = j_.find(key);
    if (it == j_.end()) return;
    seen_.insert(key);
    try {
      out = it->get<T>();
    } catch (const nlohmann::json::exception&) {
      throw std::invalid_argument("config: bad value type for " + path(key));
    }
  }

  const nlohmann::json* child(const char* key) {
    auto it = j_.find(key);
    if (it == j_.end()) return nullptr;
    seen_.insert(key);
    return &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) {
        throw std::invalid_argument("config: unknown key " + path(it.key().c_str()));
      }
    }
  }

 private:
  std::string path(const char* key) const {
    return context_.empty() ? std::string(key) : context_ + "." + key;
  }

  const nlohmann::json& j_;
  std::string context_;
  std::set<std::string> seen_;
};

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;
  StrictObject root(j, "");
  if (const nlohmann::json* env = root.child("env")) {
    StrictObject o(*env, "env");
    o.read("name", cfg.env.name);
    o.read("maze_size", cfg.env.maze_size);
    o.read("view", cfg.env.view);
    o.finish();
  }
  if (const nlohmann::json* shaping = root.child("shaping")) {
    StrictObject o(*shaping, "shaping");
    o.read("family", cfg.shaping.family);
    o.read("eta", cfg.shaping.eta);
    o.read("l0", cfg.shaping.l0);
    o.read("lr", cfg.shaping.lr);
    o.read("steps_per_update", cfg.shaping.steps_per_update);
    o.read("max_nodes", cfg.shaping.max_nodes);
    o.read("unique_nodes", cfg.shaping.unique_nodes);
    o.read("hidden", cfg.shaping.hidden);
    o.read("heads", cfg.shaping.heads);
    o.finish();
  }
  if (const nlohmann::json* ppo = root.child("ppo")) {
    StrictObject o(*ppo, "ppo");
    o.read("gamma", cfg.ppo.gamma);
    o.read("clip_eps", cfg.ppo.clip_eps);
    o.read("epochs", cfg.ppo.epochs);
    o.read("minibatches", cfg.ppo.minibatches);
    o.read("value_coef", cfg.ppo.value_coef);
    o.read("entropy_coef", cfg.ppo.entropy_coef);
    o.read("lr", cfg.ppo.lr);
    o.read("n_envs", cfg.ppo.n_envs);
    o.read("rollout_steps", cfg.ppo.rollout_steps);
    o.read("total_steps", cfg.ppo.total_steps);
    o.read("shaping_scale", cfg.ppo.shaping_scale);
    o.finish();
  }
  root.read("seeds", cfg.seeds);
  root.read("eval_episodes", cfg.eval_episodes);
  root.read("output_dir", cfg.output_dir);
  root.finish();
  cfg.validate();
  return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument("config: " + path + ": " + e.what());
  }
  return from_json(j);
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j;
  j["env"] = {{"name", env.name}, {"maze_size", env.maze_size}, {"view", env.view}};
  j["shaping"] = {{"family", shaping.family},
                  {"eta", shaping.eta},
                  {"l0", shaping.l0},
                  {"lr", shaping.lr},
                  {"steps_per_update", shaping.steps_per_update},
                  {"max_nodes", shaping.max_nodes},
                  {"unique_nodes", shaping.unique_nodes},
                  {"hidden", shaping.hidden},
                  {"heads", shaping.heads}};
  j["ppo"] = {{"gamma", ppo.gamma},
              {"clip_eps", ppo.clip_eps},
              {"epochs", ppo.epochs},
              {"minibatches", ppo.minibatches},
              {"value_coef", ppo.value_coef},
              {"entropy_coef", ppo.entropy_coef},
              {"lr", ppo.lr},
              {"n_envs", ppo.n_envs},
              {"rollout_steps", ppo.rollout_steps},
              {"total_steps", ppo.total_steps},
              {"shaping_scale", ppo.shaping_scale}};
  j["seeds"] = seeds;
  j["eval_episodes"] = eval_episodes;
  j["output_dir"] = output_dir;
  return j;
}

void ExperimentConfig::validate() const {
  env.validate();
  shaping.validate();
  ppo.validate();
  if (seeds.empty()) throw std::invalid_argument("config: seeds must not be empty");
  if (eval_episodes < 1) throw std::invalid_argument("config: eval_episodes must be >= 1");
  if (output_dir.empty()) throw std::invalid_argument("config: output_dir must not be empty");
}

void apply_config_override(nlohmann::json& config, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw std::invalid_argument("override must look like path.to.key=value, got '" + assignment + "'");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::parse_error&) {
    value = raw;  // unquoted strings like family names
  }
  nlohmann::json* node = &config;
  std::size_t pos = 0;
  for (;;) {
    const std::size_t dot = path.find('.', pos);
    const std::string key = path.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    if (key.empty()) throw std::invalid_argument("override has an empty path segment: '" + path + "'");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    pos = dot + 1;
  }
}

}  // namespace gp
