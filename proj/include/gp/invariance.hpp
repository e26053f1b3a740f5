#ifndef GP_INVARIANCE_HPP_
#define GP_INVARIANCE_HPP_

#include <cstdint>
#include <vector>

namespace gp {

// Deterministic tabular MDP used as the policy-invariance oracle.
struct TabularMdp {
  int n_states = 0;
  int n_actions = 0;
  std::vector<int> next;              // (s * n_actions + a) -> s'
  std::vector<double> reward;         // (s * n_actions + a)
  std::vector<std::uint8_t> terminal; // per state

  int sa(int s, int a) const { return s * n_actions + a; }
};

// Fully observable size x size grid, four moves (blocked moves stay put),
// reward 1 on entering the absorbing goal corner, 0 elsewhere.
TabularMdp make_grid_mdp(int size = 5);

// Q-value iteration to sup-norm tolerance. extra_reward, when non-empty, is
// added per (s, a) on top of the MDP reward.
std::vector<double> q_value_iteration(const TabularMdp& mdp, const std::vector<double>& extra_reward,
                                      double gamma, double tol);

// Set of greedy actions per non-terminal state (within tie_tol of the max).
std::vector<std::vector<int>> greedy_sets(const TabularMdp& mdp, const std::vector<double>& q,
                                          double tie_tol = 1e-6);

// Per (s, a) shaping increments F(s,a,s') = gamma * phi(s') * [s' not
// terminal] - phi(s) for a state potential phi.
std::vector<double> potential_shaping_rewards(const TabularMdp& mdp, const std::vector<double>& phi,
                                              double gamma);

struct InvarianceDraw {
  double scale = 0.0;
  bool policies_match = false;
};

struct InvarianceReport {
  std::vector<InvarianceDraw> potential_draws;
  std::vector<InvarianceDraw> control_draws;  // random non-potential F(s, a)
  bool all_potential_match = false;
  int control_changes = 0;  // draws where the control changed the greedy policy
  bool control_detected = false;
};

// 20 random-potential draws must leave the greedy policy untouched; random
// non-potential shaping of the same magnitude must visibly change it.
InvarianceReport run_invariance_check(std::uint64_t seed, int draws = 20, double gamma = 0.99,
                                      double tol = 1e-10);

}  // namespace gp

#endif  // GP_INVARIANCE_HPP_
