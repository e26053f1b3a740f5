#ifndef GP_ENV_HPP_
#define GP_ENV_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "gp/rng.hpp"

namespace gp {

enum class Action : int { forward = 0, turn_left = 1, turn_right = 2 };
inline constexpr int kNumActions = 3;

// Facing: N is -y, E is +x, S is +y, W is -x.
enum class Dir : int { N = 0, E = 1, S = 2, W = 3 };

// Canonical node key for the transition graph. Two timesteps with an
// identical key are the same state. `uid` is 0 in the default discrete-state
// mode; the per-timestep-unique-node mode stamps a serial number into it.
struct StateId {
  int x = 0;
  int y = 0;
  int dir = 0;
  std::uint64_t layout_hash = 0;
  std::uint64_t uid = 0;

  bool operator==(const StateId&) const = default;
};

struct StateIdHash {
  std::size_t operator()(const StateId& s) const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](std::uint64_t v) {
      h ^= v;
      h *= 1099511628211ULL;
    };
    mix(static_cast<std::uint64_t>(s.x));
    mix(static_cast<std::uint64_t>(s.y));
    mix(static_cast<std::uint64_t>(s.dir));
    mix(s.layout_hash);
    mix(s.uid);
    return static_cast<std::size_t>(h);
  }
};

// Egocentric window, rotated so the agent faces "up". The agent's own cell is
// the window center; cells behind walls are reported as-is (the partial
// observability comes only from the window's limited extent).
struct Observation {
  static constexpr int kChannels = 3;  // wall, goal, out-of-bounds
  int view = 0;
  std::vector<double> data;  // channel-major: [channel][row][col]

  double at(int channel, int r, int c) const { return data[(channel * view + r) * view + c]; }
  bool goal_visible() const {
    for (int i = view * view; i < 2 * view * view; ++i)
      if (data[i] != 0.0) return true;
    return false;
  }
};

struct StepResult {
  double reward = 0.0;
  bool done = false;
};

class GridWorld {
 public:
  int width() const { return width_; }
  int height() const { return height_; }
  bool is_wall(int x, int y) const { return walls_[y * width_ + x] != 0; }
  int agent_x() const { return ax_; }
  int agent_y() const { return ay_; }
  Dir agent_dir() const { return dir_; }
  int goal_x() const { return gx_; }
  int goal_y() const { return gy_; }
  int step_count() const { return steps_; }
  int max_steps() const { return max_steps_; }
  bool done() const { return done_; }
  std::uint64_t layout_hash() const { return layout_hash_; }

  StateId state_id() const {
    return StateId{ax_, ay_, static_cast<int>(dir_), layout_hash_, 0};
  }

  StepResult step(Action action);
  Observation observe(int view = 7) const;
  std::string dump_text() const;

  friend GridWorld make_four_rooms(std::uint64_t seed);
  friend GridWorld make_maze(std::uint64_t seed, int size);

 private:
  void place_agent_and_goal(Rng& rng);
  void compute_layout_hash();

  int width_ = 0, height_ = 0;
  std::vector<std::uint8_t> walls_;
  int ax_ = 0, ay_ = 0;
  Dir dir_ = Dir::N;
  int gx_ = 0, gy_ = 0;
  int steps_ = 0;
  int max_steps_ = 0;
  bool done_ = false;
  std::uint64_t layout_hash_ = 0;
};

// 19x19 grid split into four rooms by two wall lines with one opening each;
// agent and goal are uniform over distinct open cells. Time limit 250 steps.
GridWorld make_four_rooms(std::uint64_t seed);

// Perfect maze (recursive backtracker) on an odd-sized grid, regenerated per
// episode by the caller. Time limit 216 steps. size must be odd and >= 5.
GridWorld make_maze(std::uint64_t seed, int size = 13);

}  // namespace gp

#endif  // GP_ENV_HPP_
