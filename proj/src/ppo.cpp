#include "gp/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gp {

namespace {

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v, double mean) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace

void PpoConfig::validate() const {
  if (!(clip_eps > 0.0 && clip_eps < 1.0)) throw std::invalid_argument("ppo.clip_eps must lie in (0,1)");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("ppo.gamma must lie in [0,1)");
  if (epochs < 1) throw std::invalid_argument("ppo.epochs must be >= 1");
  if (minibatches < 1) throw std::invalid_argument("ppo.minibatches must be >= 1");
  if (n_envs < 1) throw std::invalid_argument("ppo.n_envs must be >= 1");
  if (rollout_steps < 1) throw std::invalid_argument("ppo.rollout_steps must be >= 1");
  if ((static_cast<std::int64_t>(n_envs) * rollout_steps) % minibatches != 0) {
    throw std::invalid_argument("ppo.minibatches must divide n_envs * rollout_steps");
  }
  if (total_steps < 0) throw std::invalid_argument("ppo.total_steps must be >= 0");
  if (!(lr > 0.0)) throw std::invalid_argument("ppo.lr must be > 0");
  if (value_coef < 0.0) throw std::invalid_argument("ppo.value_coef must be >= 0");
  if (entropy_coef < 0.0) throw std::invalid_argument("ppo.entropy_coef must be >= 0");
}

void ShapingConfig::validate() const {
  if (family != "none" && family != "gcn" && family != "gat" && family != "sage") {
    throw std::invalid_argument("shaping.family must be one of none|gcn|gat|sage, got '" + family + "'");
  }
  if (l0 != "bce" && l0 != "literal") {
    throw std::invalid_argument("shaping.l0 must be bce or literal, got '" + l0 + "'");
  }
  if (steps_per_update < 1) throw std::invalid_argument("shaping.steps_per_update must be >= 1");
  if (max_nodes < 2) throw std::invalid_argument("shaping.max_nodes must be >= 2");
  if (eta < 0.0) throw std::invalid_argument("shaping.eta must be >= 0");
  if (hidden < 1) throw std::invalid_argument("shaping.hidden must be >= 1");
  if (family == "gat" && (heads < 1 || hidden % heads != 0)) {
    throw std::invalid_argument("shaping.heads must divide shaping.hidden");
  }
  if (!(lr > 0.0)) throw std::invalid_argument("shaping.lr must be > 0");
}

void EnvSpec::validate() const {
  if (name != "four_rooms" && name != "maze") {
    throw std::invalid_argument("env.name must be four_rooms or maze, got '" + name + "'");
  }
  if (view < 3 || view % 2 == 0) throw std::invalid_argument("env.view must be odd and >= 3");
  if (name == "maze" && (maze_size < 5 || maze_size % 2 == 0)) {
    throw std::invalid_argument("env.maze_size must be odd and >= 5");
  }
}

GridWorld make_env(const EnvSpec& spec, std::uint64_t seed) {
  if (spec.name == "four_rooms") return make_four_rooms(seed);
  if (spec.name == "maze") return make_maze(seed, spec.maze_size);
  throw std::invalid_argument("make_env: unknown environment '" + spec.name + "'");
}

double apply_shaping(double raw_reward, double phi_s, double phi_s_next, double gamma, bool done,
                     double scale) {
  const double next_potential = done ? 0.0 : gamma * phi_s_next;
  return raw_reward + scale * (next_potential - phi_s);
}

void RolloutBuffer::reset(int envs, int step_count, std::size_t od) {
  n_envs = envs;
  steps = step_count;
  obs_dim = od;
  const std::size_t n = total();
  obs.assign(n * obs_dim, 0.0);
  actions.assign(n, 0);
  log_probs.assign(n, 0.0);
  values.assign(n, 0.0);
  raw_rewards.assign(n, 0.0);
  shaped_rewards.assign(n, 0.0);
  dones.assign(n, 0);
  embeddings.assign(n * kEmbeddingDim, 0.0);
  state_ids.assign(n, StateId{});
  next_state_ids.assign(n, StateId{});
  episode_serials.assign(n, 0);
  bootstrap_values.assign(n_envs, 0.0);
}

AdvantageResult compute_advantages(const RolloutBuffer& buffer, double gamma) {
  AdvantageResult out;
  const std::size_t n = buffer.total();
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  for (int e = 0; e < buffer.n_envs; ++e) {
    for (int t = 0; t < buffer.steps; ++t) {
      const std::size_t i = buffer.idx(e, t);
      double next_value = 0.0;
      if (!buffer.dones[i]) {
        next_value = (t + 1 < buffer.steps) ? buffer.values[buffer.idx(e, t + 1)]
                                            : buffer.bootstrap_values[e];
      }
      const double target = buffer.shaped_rewards[i] + gamma * next_value;
      out.returns[i] = target;
      out.advantages[i] = target - buffer.values[i];
    }
  }
  return out;
}

PpoStats ppo_update(PolicyNet& policy, Adam& optimizer, const RolloutBuffer& buffer,
                    const AdvantageResult& adv, const PpoConfig& cfg, Rng& shuffle_rng) {
  const std::size_t n = buffer.total();
  if (n == 0) throw std::logic_error("ppo_update: empty buffer");

  // advantages normalized once per update
  const double mean = mean_of(adv.advantages);
  const double stdev = std::max(std_of(adv.advantages, mean), 1e-8);
  std::vector<double> norm_adv(n);
  for (std::size_t i = 0; i < n; ++i) norm_adv[i] = (adv.advantages[i] - mean) / stdev;

  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  const std::size_t mb_size = n / cfg.minibatches;

  PpoStats stats;
  int updates = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = n - 1; i > 0; --i) {
      const std::size_t j = shuffle_rng.uniform_int(i + 1);
      std::swap(perm[i], perm[j]);
    }
    for (int mb = 0; mb < cfg.minibatches; ++mb) {
      Tensor mb_obs = Tensor::zeros(mb_size, buffer.obs_dim);
      std::vector<int> mb_actions(mb_size);
      std::vector<double> old_lp(mb_size), a(mb_size), ret(mb_size);
      for (std::size_t r = 0; r < mb_size; ++r) {
        const std::size_t i = perm[mb * mb_size + r];
        std::copy(buffer.obs.begin() + i * buffer.obs_dim, buffer.obs.begin() + (i + 1) * buffer.obs_dim,
                  mb_obs.values().begin() + r * buffer.obs_dim);
        mb_actions[r] = buffer.actions[i];
        old_lp[r] = buffer.log_probs[i];
        a[r] = norm_adv[i];
        ret[r] = adv.returns[i];
      }
      const Tensor old_lp_t = Tensor::from_vector(mb_size, 1, old_lp);
      const Tensor adv_t = Tensor::from_vector(mb_size, 1, a);
      const Tensor ret_t = Tensor::from_vector(mb_size, 1, ret);

      Tape tape;
      Tape::Scope scope(tape);
      const PolicyOutput out = policy.forward(mb_obs);
      const Tensor log_probs = log_softmax_rows(out.logits);
      const Tensor new_lp = select_per_row(log_probs, mb_actions);
      const Tensor ratio = exp_op(sub(new_lp, old_lp_t));
      const Tensor surr1 = mul(ratio, adv_t);
      const Tensor surr2 = mul(clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps), adv_t);
      const Tensor surrogate = mean_all(minimum(surr1, surr2));
      const Tensor vdiff = sub(out.values, ret_t);
      const Tensor value_loss = mean_all(mul(vdiff, vdiff));
      const Tensor probs = softmax_rows(out.logits);
      const Tensor entropy = scale(mean_all(row_sum(mul(probs, log_probs))), -1.0);
      const Tensor loss = add(sub(scale(surrogate, -1.0), scale(entropy, cfg.entropy_coef)),
                              scale(value_loss, cfg.value_coef));
      backward(loss);
      for (Tensor p : policy.parameters()) p.grad();
      optimizer.step();

      double clipped = 0.0;
      for (double r : ratio.values()) {
        if (std::abs(r - 1.0) > cfg.clip_eps) clipped += 1.0;
      }
      stats.policy_loss += -surrogate.item();
      stats.value_loss += value_loss.item();
      stats.entropy += entropy.item();
      stats.clip_frac += clipped / static_cast<double>(mb_size);
      ++updates;
    }
  }
  stats.policy_loss /= updates;
  stats.value_loss /= updates;
  stats.entropy /= updates;
  stats.clip_frac /= updates;
  return stats;
}

EvalResult evaluate(const PolicyNet& policy, const EnvSpec& spec, int episodes, std::uint64_t seed) {
  if (episodes < 1) throw std::invalid_argument("evaluate: episodes must be >= 1");
  std::vector<double> returns;
  returns.reserve(episodes);
  for (int k = 0; k < episodes; ++k) {
    GridWorld world = make_env(spec, Rng::derive_seed(seed, static_cast<std::uint64_t>(k)));
    double total = 0.0;
    while (!world.done()) {
      const Observation o = world.observe(spec.view);
      Tensor obs = Tensor::from_vector(1, spec.obs_dim(), o.data);
      const PolicyOutput out = policy.forward(obs);
      const int action = argmax_action(out.logits.values());
      total += world.step(static_cast<Action>(action)).reward;
    }
    returns.push_back(total);
  }
  EvalResult r;
  r.episodes = episodes;
  const double m = mean_of(returns);
  r.mean = 100.0 * m;
  r.std = 100.0 * std_of(returns, m);
  return r;
}

// ---- Trainer ----

Trainer::Trainer(const EnvSpec& env_spec, const PpoConfig& ppo, const ShapingConfig& shaping,
                 std::uint64_t master_seed)
    : env_spec_(env_spec), ppo_(ppo), shaping_(shaping), master_seed_(master_seed) {
  env_spec_.validate();
  ppo_.validate();
  shaping_.validate();
  shaping_active_ = shaping_.enabled() && ppo_.shaping_scale != 0.0;

  Rng policy_rng(Rng::derive_seed(master_seed_, 1));
  policy_ = std::make_unique<PolicyNet>(env_spec_.obs_dim(), policy_rng);
  policy_opt_ = std::make_unique<Adam>(policy_->parameters(), ppo_.lr);
  if (shaping_active_) {
    Rng pot_rng(Rng::derive_seed(master_seed_, 2));
    PotentialConfig pc;
    pc.family = gnn_family_from_string(shaping_.family);
    pc.feature_dim = kEmbeddingDim;
    pc.hidden = shaping_.hidden;
    pc.heads = shaping_.heads;
    pc.eta = shaping_.eta;
    pc.l0 = shaping_.l0 == "bce" ? L0Mode::bce : L0Mode::literal;
    pc.lr = shaping_.lr;
    potential_ = std::make_unique<PotentialModel>(pc, pot_rng);
  }
  shuffle_rng_ = Rng(Rng::derive_seed(master_seed_, 3));

  envs_.reserve(ppo_.n_envs);
  for (int e = 0; e < ppo_.n_envs; ++e) {
    Rng rng(Rng::derive_seed(master_seed_, 100 + static_cast<std::uint64_t>(e)));
    GridWorld world = make_env(env_spec_, rng.next_u64());
    envs_.emplace_back(std::move(world), rng);
    envs_[e].current_id = stamp_state(envs_[e]);
  }
  if (shaping_active_ && shaping_.max_nodes < envs_[0].world.max_steps() + 1) {
    throw std::invalid_argument("shaping.max_nodes must cover one full episode (need >= " +
                                std::to_string(envs_[0].world.max_steps() + 1) + ")");
  }
}

StateId Trainer::stamp_state(EnvSlot& slot) const {
  StateId id = slot.world.state_id();
  if (shaping_.unique_nodes) id.uid = ++slot.uid_counter;
  return id;
}

void Trainer::begin_episode(EnvSlot& slot, const std::vector<double>& emb, bool goal_visible) {
  slot.traj.states.push_back(slot.current_id);
  slot.traj.embeddings.push_back(emb);
  slot.traj.goal_visible.push_back(goal_visible);
}

void Trainer::handle_episode_end(EnvSlot& slot, double /*reward*/) {
  if (shaping_active_) {
    slot.graph.finalize_episode(slot.traj);
    if (env_spec_.name == "maze") {
      // the next episode lives on a new layout; keep this one for its update
      const int stash_slot = static_cast<int>(slot.stashed.size());
      slot.stashed.push_back(std::move(slot.graph));
      slot.graph = TransitionGraph(kEmbeddingDim);
      slot.serial_to_stash[slot.episode_serial] = stash_slot;
    }
    slot.finished_serials.push_back(slot.episode_serial);
  }
  window_returns_.push_back(slot.episode_return);
  window_lengths_.push_back(static_cast<double>(slot.episode_len));

  slot.world = make_env(env_spec_, slot.rng.next_u64());
  slot.episode_return = 0.0;
  slot.episode_len = 0;
  ++slot.episode_serial;
  slot.traj = Trajectory{};
  slot.has_pending = false;
  slot.current_id = stamp_state(slot);
}

void Trainer::collect_rollout(RolloutBuffer& buffer) {
  const int n = ppo_.n_envs;
  const std::size_t obs_dim = env_spec_.obs_dim();
  buffer.reset(n, ppo_.rollout_steps, obs_dim);

  for (int t = 0; t < ppo_.rollout_steps; ++t) {
    Tensor obs_batch = Tensor::zeros(n, obs_dim);
    std::vector<bool> goal_vis(n);
    for (int e = 0; e < n; ++e) {
      const Observation o = envs_[e].world.observe(env_spec_.view);
      goal_vis[e] = o.goal_visible();
      std::copy(o.data.begin(), o.data.end(), obs_batch.values().begin() + e * obs_dim);
    }
    const PolicyOutput out = policy_->forward(obs_batch);

    for (int e = 0; e < n; ++e) {
      EnvSlot& slot = envs_[e];
      const std::size_t i = buffer.idx(e, t);
      std::vector<double> emb(out.embeddings.values().begin() + e * kEmbeddingDim,
                              out.embeddings.values().begin() + (e + 1) * kEmbeddingDim);
      if (shaping_active_) {
        if (slot.traj.states.empty()) {
          begin_episode(slot, emb, goal_vis[e]);
        } else if (slot.has_pending) {
          slot.graph.add_transition(slot.pending_from, slot.current_id, slot.pending_emb, emb,
                                    slot.pending_goal_visible, goal_vis[e]);
          slot.traj.states.push_back(slot.current_id);
          slot.traj.embeddings.push_back(emb);
          slot.traj.goal_visible.push_back(goal_vis[e]);
          slot.has_pending = false;
        }
      }

      std::copy(obs_batch.values().begin() + e * obs_dim, obs_batch.values().begin() + (e + 1) * obs_dim,
                buffer.obs.begin() + i * obs_dim);
      std::copy(emb.begin(), emb.end(), buffer.embeddings.begin() + i * kEmbeddingDim);
      buffer.values[i] = out.values.at(e, 0);
      buffer.state_ids[i] = slot.current_id;
      buffer.episode_serials[i] = slot.episode_serial;

      std::vector<double> logits(out.logits.values().begin() + e * 3,
                                 out.logits.values().begin() + (e + 1) * 3);
      const ActionSample action = sample_action(logits, slot.rng);
      buffer.actions[i] = action.action;
      buffer.log_probs[i] = action.log_prob;

      const StateId from_id = slot.current_id;
      const StepResult sr = slot.world.step(static_cast<Action>(action.action));
      buffer.raw_rewards[i] = sr.reward;
      buffer.dones[i] = sr.done ? 1 : 0;
      slot.episode_return += sr.reward;
      slot.episode_len += 1;
      if (shaping_active_) slot.traj.rewards.push_back(sr.reward);

      StateId next_id;
      if (!sr.done) {
        next_id = stamp_state(slot);
        slot.current_id = next_id;
        if (shaping_active_) {
          slot.has_pending = true;
          slot.pending_from = from_id;
          slot.pending_emb = std::move(emb);
          slot.pending_goal_visible = goal_vis[e];
        }
      } else {
        next_id = stamp_state(slot);
        if (shaping_active_) {
          const Observation term_obs = slot.world.observe(env_spec_.view);
          const PolicyOutput term_out =
              policy_->forward(Tensor::from_vector(1, obs_dim, term_obs.data));
          std::vector<double> term_emb = term_out.embeddings.values();
          const bool term_gv = term_obs.goal_visible();
          slot.graph.add_transition(from_id, next_id, emb, term_emb, goal_vis[e], term_gv);
          slot.traj.states.push_back(next_id);
          slot.traj.embeddings.push_back(std::move(term_emb));
          slot.traj.goal_visible.push_back(term_gv);
        }
        handle_episode_end(slot, sr.reward);
      }
      buffer.next_state_ids[i] = next_id;
    }
  }
  env_steps_ += static_cast<std::int64_t>(n) * ppo_.rollout_steps;

  // bootstrap values for the state after the final step; the same forward
  // resolves any pending transition features
  Tensor obs_batch = Tensor::zeros(n, obs_dim);
  std::vector<bool> goal_vis(n);
  for (int e = 0; e < n; ++e) {
    const Observation o = envs_[e].world.observe(env_spec_.view);
    goal_vis[e] = o.goal_visible();
    std::copy(o.data.begin(), o.data.end(), obs_batch.values().begin() + e * obs_dim);
  }
  const PolicyOutput out = policy_->forward(obs_batch);
  for (int e = 0; e < n; ++e) {
    EnvSlot& slot = envs_[e];
    buffer.bootstrap_values[e] = out.values.at(e, 0);
    if (shaping_active_ && slot.has_pending) {
      std::vector<double> emb(out.embeddings.values().begin() + e * kEmbeddingDim,
                              out.embeddings.values().begin() + (e + 1) * kEmbeddingDim);
      slot.graph.add_transition(slot.pending_from, slot.current_id, slot.pending_emb, emb,
                                slot.pending_goal_visible, goal_vis[e]);
      slot.traj.states.push_back(slot.current_id);
      slot.traj.embeddings.push_back(std::move(emb));
      slot.traj.goal_visible.push_back(goal_vis[e]);
      slot.has_pending = false;
    }
  }
}

void Trainer::apply_shaping_to_buffer(RolloutBuffer& buffer, double& phi_mean, double& phi_std) {
  phi_mean = 0.0;
  phi_std = 0.0;
  if (!shaping_active_) {
    buffer.shaped_rewards = buffer.raw_rewards;
    return;
  }
  std::vector<double> all_phis;
  for (int e = 0; e < buffer.n_envs; ++e) {
    EnvSlot& slot = envs_[e];
    // phi per graph involved in this rollout: the live graph plus any layouts
    // finished (and stashed) along the way
    std::vector<const TransitionGraph*> graphs{&slot.graph};
    for (const TransitionGraph& g : slot.stashed) graphs.push_back(&g);
    std::vector<std::vector<double>> phis(graphs.size());
    for (std::size_t k = 0; k < graphs.size(); ++k) {
      if (graphs[k]->node_count() == 0) continue;
      const DenseGraph dense = graphs[k]->to_dense();
      const Adjacency adj = Adjacency::from_dense(dense.adjacency);
      const Tensor phi = potential_->phi(adj, dense.features);
      phis[k] = phi.values();
      all_phis.insert(all_phis.end(), phis[k].begin(), phis[k].end());
    }
    auto graph_of = [&](std::int64_t serial) -> std::size_t {
      auto it = slot.serial_to_stash.find(serial);
      return it == slot.serial_to_stash.end() ? 0 : static_cast<std::size_t>(it->second) + 1;
    };
    auto phi_of = [&](std::size_t g, const StateId& id) {
      const int node = graphs[g]->find_node(id);
      if (node < 0) throw std::logic_error("shaping: state missing from transition graph");
      return phis[g][node];
    };
    for (int t = 0; t < buffer.steps; ++t) {
      const std::size_t i = buffer.idx(e, t);
      const std::size_t g = graph_of(buffer.episode_serials[i]);
      const bool done = buffer.dones[i] != 0;
      const double phi_s = phi_of(g, buffer.state_ids[i]);
      const double phi_next = done ? 0.0 : phi_of(g, buffer.next_state_ids[i]);
      buffer.shaped_rewards[i] =
          apply_shaping(buffer.raw_rewards[i], phi_s, phi_next, ppo_.gamma, done, ppo_.shaping_scale);
    }
  }
  phi_mean = mean_of(all_phis);
  phi_std = std_of(all_phis, phi_mean);
}

double Trainer::run_gnn_updates() {
  if (!shaping_active_) return 0.0;
  std::vector<double> losses;
  for (EnvSlot& slot : envs_) {
    for (std::int64_t serial : slot.finished_serials) {
      auto it = slot.serial_to_stash.find(serial);
      const TransitionGraph& g = it == slot.serial_to_stash.end() ? slot.graph : slot.stashed[it->second];
      if (g.node_count() == 0) continue;
      const DenseGraph dense = g.to_dense();
      for (int k = 0; k < shaping_.steps_per_update; ++k) {
        losses.push_back(potential_->train_step(dense));
      }
    }
    slot.finished_serials.clear();
    slot.serial_to_stash.clear();
    slot.stashed.clear();
    slot.graph.prune(static_cast<std::size_t>(shaping_.max_nodes));
  }
  return mean_of(losses);
}

std::vector<MetricsRow> Trainer::train(const std::function<void(const MetricsRow&)>& on_row) {
  std::vector<MetricsRow> rows;
  RolloutBuffer buffer;
  while (env_steps_ < ppo_.total_steps) {
    collect_rollout(buffer);
    double phi_mean = 0.0, phi_std = 0.0;
    apply_shaping_to_buffer(buffer, phi_mean, phi_std);
    const AdvantageResult adv = compute_advantages(buffer, ppo_.gamma);
    const PpoStats stats = ppo_update(*policy_, *policy_opt_, buffer, adv, ppo_, shuffle_rng_);
    const double gnn_loss = run_gnn_updates();

    if (!window_returns_.empty()) {
      carry_mean_return_ = mean_of(window_returns_);
      carry_std_return_ = std_of(window_returns_, carry_mean_return_);
      carry_mean_len_ = mean_of(window_lengths_);
      window_returns_.clear();
      window_lengths_.clear();
    }
    MetricsRow row;
    row.step = rollout_index_;
    row.env_steps = env_steps_;
    row.mean_return_raw = carry_mean_return_;
    row.std_return = carry_std_return_;
    row.mean_ep_len = carry_mean_len_;
    row.policy_loss = stats.policy_loss;
    row.value_loss = stats.value_loss;
    row.entropy = stats.entropy;
    row.clip_frac = stats.clip_frac;
    row.gnn_loss = gnn_loss;
    row.phi_mean = phi_mean;
    row.phi_std = phi_std;
    rows.push_back(row);
    if (on_row) on_row(row);
    ++rollout_index_;
  }
  return rows;
}

}  // namespace gp
