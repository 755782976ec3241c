#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hyprl/hyperbolicity.hpp"

namespace hyprl::envs {

struct GridConfig {
  int size = 9;
  double wall_prob = 0.2;
  int n_hazards = 4;
  int n_collectibles = 3;
  int max_steps = 64;
};

struct StepResult {
  std::vector<double> obs;
  double reward = 0.0;
  bool done = false;
};

// Procedurally generated gridworld. Layouts are a pure function of the seed;
// generation retries with a remixed seed until BFS confirms the goal is
// reachable without crossing walls or hazards. Observations are the one-hot
// flattening of 5 channels (wall, agent, goal, hazard, collectible), each
// size*size, row-major within a channel. Rewards: +1 goal (terminal), -1
// hazard (terminal), +0.1 per collectible, 0 otherwise; hitting the step cap
// ends the episode.
class ProcGridEnv {
 public:
  // Actions: 0 up, 1 down, 2 left, 3 right. Moves into walls or out of
  // bounds are no-ops.
  static constexpr int kUp = 0, kDown = 1, kLeft = 2, kRight = 3;

  static ProcGridEnv generate(uint64_t seed, const GridConfig& cfg = {});
  // Wall-free room with the agent at the top-left and the goal at the
  // bottom-right; no hazards or collectibles.
  static ProcGridEnv empty_room(int size, int max_steps = 64);

  std::vector<double> observation() const;
  StepResult step(int action);
  void reset();

  bool done() const { return done_; }
  int steps() const { return steps_; }
  double episode_return() const { return episode_return_; }
  uint64_t seed() const { return seed_; }
  const GridConfig& config() const { return cfg_; }
  int obs_dim() const { return 5 * cfg_.size * cfg_.size; }
  static int n_actions() { return 4; }
  std::string render() const;

 private:
  ProcGridEnv() = default;
  bool goal_reachable() const;

  GridConfig cfg_;
  uint64_t seed_ = 0;
  std::vector<uint8_t> wall_;
  int agent_start_ = 0;
  int goal_ = 0;
  std::vector<int> hazards_;
  std::vector<int> collectibles_;

  int agent_ = 0;
  std::vector<uint8_t> collected_;
  int steps_ = 0;
  bool done_ = false;
  double episode_return_ = 0.0;
};

// Perfect b-ary tree with unit edges, nodes in level order (root 0, children
// of i at b*i+1+j). The metric is the graph shortest-path distance.
struct TreeSpec {
  int branching = 2;
  int depth = 3;
};

int tree_node_count(const TreeSpec& spec);
hyp::DistanceMatrix tree_metric(const TreeSpec& spec);

}  // namespace hyprl::envs
