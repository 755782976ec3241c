#include "hyprl/envs.hpp"

#include <algorithm>
#include <deque>
#include <stdexcept>

#include "hyprl/rng.hpp"

namespace hyprl::envs {

namespace {

bool contains(const std::vector<int>& v, int x) {
  return std::find(v.begin(), v.end(), x) != v.end();
}

}  // namespace

bool ProcGridEnv::goal_reachable() const {
  const int n = cfg_.size;
  std::vector<uint8_t> blocked = wall_;
  for (int h : hazards_) blocked[static_cast<size_t>(h)] = 1;
  std::vector<uint8_t> seen(static_cast<size_t>(n) * n, 0);
  std::deque<int> queue{agent_start_};
  seen[static_cast<size_t>(agent_start_)] = 1;
  while (!queue.empty()) {
    const int cur = queue.front();
    queue.pop_front();
    if (cur == goal_) return true;
    const int r = cur / n, c = cur % n;
    const int moves[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
    for (const auto& m : moves) {
      if (m[0] < 0 || m[0] >= n || m[1] < 0 || m[1] >= n) continue;
      const int nx = m[0] * n + m[1];
      if (seen[static_cast<size_t>(nx)] || blocked[static_cast<size_t>(nx)]) continue;
      seen[static_cast<size_t>(nx)] = 1;
      queue.push_back(nx);
    }
  }
  return false;
}

ProcGridEnv ProcGridEnv::generate(uint64_t seed, const GridConfig& cfg) {
  if (cfg.size < 3) throw std::invalid_argument("grid size must be at least 3");
  const int cells = cfg.size * cfg.size;
  const int needed = 2 + cfg.n_hazards + cfg.n_collectibles;
  if (needed > cells) throw std::invalid_argument("grid too small for the requested entities");

  uint64_t stream = mix_seed(seed, 0x67726964ull);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    Rng rng(stream);
    ProcGridEnv env;
    env.cfg_ = cfg;
    env.seed_ = seed;
    env.wall_.assign(static_cast<size_t>(cells), 0);
    for (int i = 0; i < cells; ++i) env.wall_[static_cast<size_t>(i)] = rng.uniform() < cfg.wall_prob;

    std::vector<int> free;
    for (int i = 0; i < cells; ++i) {
      if (!env.wall_[static_cast<size_t>(i)]) free.push_back(i);
    }
    if (static_cast<int>(free.size()) >= needed) {
      for (int i = 0; i < needed; ++i) {
        const int j = i + static_cast<int>(rng.uniform_int(free.size() - static_cast<size_t>(i)));
        std::swap(free[static_cast<size_t>(i)], free[static_cast<size_t>(j)]);
      }
      env.agent_start_ = free[0];
      env.goal_ = free[1];
      env.hazards_.assign(free.begin() + 2, free.begin() + 2 + cfg.n_hazards);
      env.collectibles_.assign(free.begin() + 2 + cfg.n_hazards, free.begin() + needed);
      if (env.goal_reachable()) {
        env.reset();
        return env;
      }
    }
    stream = splitmix64(stream);
  }
  throw std::runtime_error("level generation failed 1000 times; generator is misconfigured");
}

ProcGridEnv ProcGridEnv::empty_room(int size, int max_steps) {
  if (size < 2) throw std::invalid_argument("empty room needs size >= 2");
  ProcGridEnv env;
  env.cfg_.size = size;
  env.cfg_.wall_prob = 0.0;
  env.cfg_.n_hazards = 0;
  env.cfg_.n_collectibles = 0;
  env.cfg_.max_steps = max_steps;
  env.wall_.assign(static_cast<size_t>(size) * size, 0);
  env.agent_start_ = 0;
  env.goal_ = size * size - 1;
  env.reset();
  return env;
}

void ProcGridEnv::reset() {
  agent_ = agent_start_;
  collected_.assign(collectibles_.size(), 0);
  steps_ = 0;
  done_ = false;
  episode_return_ = 0.0;
}

std::vector<double> ProcGridEnv::observation() const {
  const int cells = cfg_.size * cfg_.size;
  std::vector<double> obs(static_cast<size_t>(5) * cells, 0.0);
  for (int i = 0; i < cells; ++i) obs[static_cast<size_t>(i)] = wall_[static_cast<size_t>(i)];
  obs[static_cast<size_t>(cells) + agent_] = 1.0;
  obs[static_cast<size_t>(2) * cells + goal_] = 1.0;
  for (int h : hazards_) obs[static_cast<size_t>(3) * cells + h] = 1.0;
  for (size_t k = 0; k < collectibles_.size(); ++k) {
    if (!collected_[k]) obs[static_cast<size_t>(4) * cells + collectibles_[k]] = 1.0;
  }
  return obs;
}

StepResult ProcGridEnv::step(int action) {
  if (done_) throw std::logic_error("step called on a finished episode");
  if (action < 0 || action >= 4) throw std::invalid_argument("action must be in [0, 4)");

  const int n = cfg_.size;
  int r = agent_ / n, c = agent_ % n;
  switch (action) {
    case kUp: --r; break;
    case kDown: ++r; break;
    case kLeft: --c; break;
    case kRight: ++c; break;
  }
  if (r >= 0 && r < n && c >= 0 && c < n && !wall_[static_cast<size_t>(r * n + c)]) {
    agent_ = r * n + c;
  }

  double reward = 0.0;
  if (agent_ == goal_) {
    reward = 1.0;
    done_ = true;
  } else if (contains(hazards_, agent_)) {
    reward = -1.0;
    done_ = true;
  } else {
    for (size_t k = 0; k < collectibles_.size(); ++k) {
      if (!collected_[k] && collectibles_[k] == agent_) {
        collected_[k] = 1;
        reward = 0.1;
        break;
      }
    }
  }

  ++steps_;
  if (steps_ >= cfg_.max_steps) done_ = true;
  episode_return_ += reward;
  return {observation(), reward, done_};
}

std::string ProcGridEnv::render() const {
  const int n = cfg_.size;
  std::string out;
  out.reserve(static_cast<size_t>(n) * (n + 1));
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      const int idx = r * n + c;
      char ch = '.';
      if (wall_[static_cast<size_t>(idx)]) ch = '#';
      if (contains(hazards_, idx)) ch = 'x';
      for (size_t k = 0; k < collectibles_.size(); ++k) {
        if (!collected_[k] && collectibles_[k] == idx) ch = 'o';
      }
      if (idx == goal_) ch = 'G';
      if (idx == agent_) ch = 'A';
      out.push_back(ch);
    }
    out.push_back('\n');
  }
  return out;
}

int tree_node_count(const TreeSpec& spec) {
  if (spec.branching < 2 || spec.depth < 1) {
    throw std::invalid_argument("tree spec needs branching >= 2 and depth >= 1");
  }
  int64_t count = 1, layer = 1;
  for (int d = 0; d < spec.depth; ++d) {
    layer *= spec.branching;
    count += layer;
    if (count > 4096) throw std::invalid_argument("tree exceeds the 4096-node budget");
  }
  return static_cast<int>(count);
}

hyp::DistanceMatrix tree_metric(const TreeSpec& spec) {
  const int n = tree_node_count(spec);
  const int b = spec.branching;
  hyp::DistanceMatrix D;
  D.n = n;
  D.d.assign(static_cast<size_t>(n) * n, 0.0);
  // BFS from every node over the implicit child/parent adjacency.
  std::vector<int> dist(static_cast<size_t>(n));
  for (int src = 0; src < n; ++src) {
    std::fill(dist.begin(), dist.end(), -1);
    dist[static_cast<size_t>(src)] = 0;
    std::deque<int> queue{src};
    while (!queue.empty()) {
      const int cur = queue.front();
      queue.pop_front();
      const int base = dist[static_cast<size_t>(cur)];
      auto visit = [&](int nx) {
        if (nx >= 0 && nx < n && dist[static_cast<size_t>(nx)] < 0) {
          dist[static_cast<size_t>(nx)] = base + 1;
          queue.push_back(nx);
        }
      };
      if (cur != 0) visit((cur - 1) / b);
      for (int j = 0; j < b; ++j) visit(b * cur + 1 + j);
    }
    for (int j = 0; j < n; ++j) {
      D.d[static_cast<size_t>(src) * n + j] = dist[static_cast<size_t>(j)];
    }
  }
  return D;
}

}  // namespace hyprl::envs
