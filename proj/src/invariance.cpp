#include "gp/invariance.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "gp/rng.hpp"

namespace gp {

TabularMdp make_grid_mdp(int size) {
  TabularMdp mdp;
  mdp.n_states = size * size;
  mdp.n_actions = 4;
  mdp.next.assign(mdp.n_states * 4, 0);
  mdp.reward.assign(mdp.n_states * 4, 0.0);
  mdp.terminal.assign(mdp.n_states, 0);
  const int goal = mdp.n_states - 1;
  mdp.terminal[goal] = 1;
  const int dx[4] = {0, 1, 0, -1};
  const int dy[4] = {-1, 0, 1, 0};
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const int s = y * size + x;
      for (int a = 0; a < 4; ++a) {
        int nx = std::clamp(x + dx[a], 0, size - 1);
        int ny = std::clamp(y + dy[a], 0, size - 1);
        const int sn = ny * size + nx;
        mdp.next[mdp.sa(s, a)] = sn;
        mdp.reward[mdp.sa(s, a)] = (sn == goal && s != goal) ? 1.0 : 0.0;
      }
    }
  }
  return mdp;
}

std::vector<double> q_value_iteration(const TabularMdp& mdp, const std::vector<double>& extra_reward,
                                      double gamma, double tol) {
  if (!extra_reward.empty() && extra_reward.size() != mdp.reward.size()) {
    throw std::invalid_argument("q_value_iteration: extra_reward size mismatch");
  }
  std::vector<double> q(mdp.reward.size(), 0.0);
  std::vector<double> vmax(mdp.n_states, 0.0);
  for (;;) {
    for (int s = 0; s < mdp.n_states; ++s) {
      double best = q[mdp.sa(s, 0)];
      for (int a = 1; a < mdp.n_actions; ++a) best = std::max(best, q[mdp.sa(s, a)]);
      vmax[s] = best;
    }
    double delta = 0.0;
    for (int s = 0; s < mdp.n_states; ++s) {
      if (mdp.terminal[s]) continue;
      for (int a = 0; a < mdp.n_actions; ++a) {
        const int i = mdp.sa(s, a);
        double r = mdp.reward[i];
        if (!extra_reward.empty()) r += extra_reward[i];
        const int sn = mdp.next[i];
        const double target = r + (mdp.terminal[sn] ? 0.0 : gamma * vmax[sn]);
        delta = std::max(delta, std::abs(target - q[i]));
        q[i] = target;
      }
    }
    if (delta < tol) break;
  }
  return q;
}

std::vector<std::vector<int>> greedy_sets(const TabularMdp& mdp, const std::vector<double>& q,
                                          double tie_tol) {
  std::vector<std::vector<int>> sets(mdp.n_states);
  for (int s = 0; s < mdp.n_states; ++s) {
    if (mdp.terminal[s]) continue;
    double best = q[mdp.sa(s, 0)];
    for (int a = 1; a < mdp.n_actions; ++a) best = std::max(best, q[mdp.sa(s, a)]);
    for (int a = 0; a < mdp.n_actions; ++a) {
      if (q[mdp.sa(s, a)] >= best - tie_tol) sets[s].push_back(a);
    }
  }
  return sets;
}

std::vector<double> potential_shaping_rewards(const TabularMdp& mdp, const std::vector<double>& phi,
                                              double gamma) {
  if (phi.size() != static_cast<std::size_t>(mdp.n_states)) {
    throw std::invalid_argument("potential_shaping_rewards: phi size mismatch");
  }
  std::vector<double> f(mdp.reward.size(), 0.0);
  for (int s = 0; s < mdp.n_states; ++s) {
    for (int a = 0; a < mdp.n_actions; ++a) {
      const int i = mdp.sa(s, a);
      const int sn = mdp.next[i];
      f[i] = (mdp.terminal[sn] ? 0.0 : gamma * phi[sn]) - phi[s];
    }
  }
  return f;
}

InvarianceReport run_invariance_check(std::uint64_t seed, int draws, double gamma, double tol) {
  const TabularMdp mdp = make_grid_mdp(5);
  Rng rng(seed);
  const std::vector<double> q_raw = q_value_iteration(mdp, {}, gamma, tol);
  const auto greedy_raw = greedy_sets(mdp, q_raw);

  InvarianceReport report;
  report.all_potential_match = true;
  const double scales[4] = {0.5, 1.0, 10.0, 100.0};
  for (int d = 0; d < draws; ++d) {
    const double scale = scales[d % 4];
    std::vector<double> phi(mdp.n_states);
    for (double& v : phi) v = rng.uniform(-scale, scale);
    const auto f = potential_shaping_rewards(mdp, phi, gamma);
    const auto q = q_value_iteration(mdp, f, gamma, tol);
    const bool match = greedy_sets(mdp, q) == greedy_raw;
    report.potential_draws.push_back(InvarianceDraw{scale, match});
    report.all_potential_match = report.all_potential_match && match;
  }
  for (int d = 0; d < draws; ++d) {
    std::vector<double> f(mdp.reward.size());
    for (double& v : f) v = rng.uniform(-1.0, 1.0);
    const auto q = q_value_iteration(mdp, f, gamma, tol);
    const bool match = greedy_sets(mdp, q) == greedy_raw;
    report.control_draws.push_back(InvarianceDraw{1.0, match});
    if (!match) ++report.control_changes;
  }
  report.control_detected = report.control_changes > 0;
  return report;
}

}  // namespace gp
