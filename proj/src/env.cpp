#include "gp/env.hpp"

#include <algorithm>
#include <stdexcept>

namespace gp {

namespace {

constexpr int kDx[4] = {0, 1, 0, -1};  // N E S W
constexpr int kDy[4] = {-1, 0, 1, 0};

}  // namespace

void GridWorld::compute_layout_hash() {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint64_t v) {
    h ^= v;
    h *= 1099511628211ULL;
  };
  mix(static_cast<std::uint64_t>(width_));
  mix(static_cast<std::uint64_t>(height_));
  for (std::uint8_t w : walls_) mix(w);
  layout_hash_ = h;
}

void GridWorld::place_agent_and_goal(Rng& rng) {
  std::vector<int> open;
  for (int y = 0; y < height_; ++y)
    for (int x = 0; x < width_; ++x)
      if (!is_wall(x, y)) open.push_back(y * width_ + x);
  const int a = open[rng.uniform_int(open.size())];
  int g = a;
  while (g == a) g = open[rng.uniform_int(open.size())];
  ax_ = a % width_;
  ay_ = a / width_;
  gx_ = g % width_;
  gy_ = g / width_;
  dir_ = static_cast<Dir>(rng.uniform_int(4));
}

GridWorld make_four_rooms(std::uint64_t seed) {
  constexpr int kSize = 19;
  GridWorld w;
  w.width_ = kSize;
  w.height_ = kSize;
  w.max_steps_ = 250;
  w.walls_.assign(kSize * kSize, 0);
  const int mid = kSize / 2;  // 9
  for (int y = 0; y < kSize; ++y) {
    for (int x = 0; x < kSize; ++x) {
      const bool border = x == 0 || y == 0 || x == kSize - 1 || y == kSize - 1;
      if (border || x == mid || y == mid) w.walls_[y * kSize + x] = 1;
    }
  }
  // one opening per half-wall, four in total
  const int lo = mid / 2;            // 4
  const int hi = mid + 1 + mid / 2;  // 14
  w.walls_[lo * kSize + mid] = 0;
  w.walls_[hi * kSize + mid] = 0;
  w.walls_[mid * kSize + lo] = 0;
  w.walls_[mid * kSize + hi] = 0;
  w.compute_layout_hash();
  Rng rng(seed);
  w.place_agent_and_goal(rng);
  return w;
}

GridWorld make_maze(std::uint64_t seed, int size) {
  if (size < 5 || size % 2 == 0) {
    throw std::invalid_argument("make_maze: size must be odd and >= 5, got " + std::to_string(size));
  }
  GridWorld w;
  w.width_ = size;
  w.height_ = size;
  w.max_steps_ = 216;
  w.walls_.assign(size * size, 1);
  Rng rng(seed);

  // recursive backtracker over the lattice of odd-coordinate cells
  const int cells = (size - 1) / 2;
  auto cell_open = [&](int cx, int cy) { return w.walls_[(2 * cy + 1) * size + (2 * cx + 1)] == 0; };
  std::vector<std::pair<int, int>> stack;
  int sx = static_cast<int>(rng.uniform_int(cells));
  int sy = static_cast<int>(rng.uniform_int(cells));
  w.walls_[(2 * sy + 1) * size + (2 * sx + 1)] = 0;
  stack.emplace_back(sx, sy);
  while (!stack.empty()) {
    auto [cx, cy] = stack.back();
    int order[4] = {0, 1, 2, 3};
    for (int i = 3; i > 0; --i) std::swap(order[i], order[rng.uniform_int(i + 1)]);
    bool advanced = false;
    for (int oi = 0; oi < 4 && !advanced; ++oi) {
      const int d = order[oi];
      const int nx = cx + kDx[d];
      const int ny = cy + kDy[d];
      if (nx < 0 || ny < 0 || nx >= cells || ny >= cells || cell_open(nx, ny)) continue;
      w.walls_[(2 * ny + 1) * size + (2 * nx + 1)] = 0;
      w.walls_[(cy + ny + 1) * size + (cx + nx + 1)] = 0;  // passage between the cells
      stack.emplace_back(nx, ny);
      advanced = true;
    }
    if (!advanced) stack.pop_back();
  }
  w.compute_layout_hash();
  w.place_agent_and_goal(rng);
  return w;
}

StepResult GridWorld::step(Action action) {
  if (done_) throw std::logic_error("step: episode already done");
  switch (action) {
    case Action::forward: {
      const int nx = ax_ + kDx[static_cast<int>(dir_)];
      const int ny = ay_ + kDy[static_cast<int>(dir_)];
      const bool blocked = nx < 0 || ny < 0 || nx >= width_ || ny >= height_ || is_wall(nx, ny);
      if (!blocked) {
        ax_ = nx;
        ay_ = ny;
      }
      break;
    }
    case Action::turn_left:
      dir_ = static_cast<Dir>((static_cast<int>(dir_) + 3) % 4);
      break;
    case Action::turn_right:
      dir_ = static_cast<Dir>((static_cast<int>(dir_) + 1) % 4);
      break;
  }
  ++steps_;
  StepResult r;
  if (ax_ == gx_ && ay_ == gy_) {
    done_ = true;
    r.done = true;
    r.reward = 1.0 - 0.2 * static_cast<double>(steps_) / static_cast<double>(max_steps_);
  } else if (steps_ >= max_steps_) {
    done_ = true;
    r.done = true;
    r.reward = 0.0;
  }
  return r;
}

Observation GridWorld::observe(int view) const {
  Observation obs;
  obs.view = view;
  obs.data.assign(static_cast<std::size_t>(Observation::kChannels) * view * view, 0.0);
  const int center = view / 2;
  const int d = static_cast<int>(dir_);
  // forward is "up" in the window; right is the facing rotated clockwise
  const int fx = kDx[d], fy = kDy[d];
  const int rx = kDx[(d + 1) % 4], ry = kDy[(d + 1) % 4];
  for (int r = 0; r < view; ++r) {
    for (int c = 0; c < view; ++c) {
      const int ahead = center - r;
      const int side = c - center;
      const int wx = ax_ + ahead * fx + side * rx;
      const int wy = ay_ + ahead * fy + side * ry;
      const std::size_t cell = static_cast<std::size_t>(r) * view + c;
      if (wx < 0 || wy < 0 || wx >= width_ || wy >= height_) {
        obs.data[2 * view * view + cell] = 1.0;
        continue;
      }
      if (is_wall(wx, wy)) obs.data[cell] = 1.0;
      if (wx == gx_ && wy == gy_) obs.data[view * view + cell] = 1.0;
    }
  }
  return obs;
}

std::string GridWorld::dump_text() const {
  std::string out;
  out.reserve((width_ + 1) * height_);
  for (int y = 0; y < height_; ++y) {
    for (int x = 0; x < width_; ++x) {
      char ch = is_wall(x, y) ? '#' : '.';
      if (x == gx_ && y == gy_) ch = 'G';
      if (x == ax_ && y == ay_) ch = 'A';
      out.push_back(ch);
    }
    out.push_back('\n');
  }
  return out;
}

}  // namespace gp
