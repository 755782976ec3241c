#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "hyprl/envs.hpp"
#include "hyprl/nn.hpp"
#include "hyprl/rng.hpp"
#include "hyprl/tensor.hpp"

namespace hyprl::rl {

// Thrown when a training loss goes non-finite; the CLI maps it to exit code 3.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Advantage estimation

// Standard GAE backward recursion over a single trajectory slice:
//   delta_t = r_t + gamma*V_{t+1}*(1-done_t) - V_t
//   A_t     = delta_t + gamma*lambda*(1-done_t)*A_{t+1}
// `bootstrap` stands in for V_T at the end of the slice. returns = A + V.
void gae(const std::vector<double>& rewards, const std::vector<double>& values,
         const std::vector<uint8_t>& dones, double bootstrap, double gamma, double lambda,
         std::vector<double>& advantages, std::vector<double>& returns);

// Exact mean-0/std-1 normalization (population std). A batch with std below
// 1e-12 has no direction to prefer and normalizes to all zeros.
std::vector<double> normalize_advantages(std::vector<double> adv);

// ---------------------------------------------------------------------------
// PPO

struct PPOConfig {
  double clip_eps = 0.2;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  double gae_lambda = 0.95;
  int epochs = 3;
  int minibatch = 32;  // 8 minibatches per epoch at the default 8x32 rollout
};

// Aligned rollout storage, sample index = t*k + e (time-major over k envs).
struct RolloutBatch {
  int T = 0, k = 0, obs_dim = 0;
  std::vector<double> obs;        // [T*k, obs_dim]
  std::vector<int> actions;       // T*k
  std::vector<double> rewards;    // T*k
  std::vector<uint8_t> dones;     // T*k
  std::vector<double> logp;       // T*k, behavior log-probs
  std::vector<double> values;     // T*k
  std::vector<double> bootstrap;  // k, V(s_T) per env
  int size() const { return T * k; }
};

struct PPOLossOut {
  ad::Tensor total;  // scalar node on the caller's tape
  double policy_term = 0.0;
  double value_term = 0.0;
  double entropy_term = 0.0;
  double mean_entropy = 0.0;
};

// Clipped-surrogate loss on network outputs [B, A+1] (A action logits, then
// the value column). Advantages must already be normalized. Throws
// DivergenceError naming the term if any component is non-finite.
PPOLossOut ppo_loss(const ad::Tensor& outputs, const std::vector<int>& actions,
                    const std::vector<double>& old_logp, const std::vector<double>& advantages,
                    const std::vector<double>& returns, const PPOConfig& cfg);

// ---------------------------------------------------------------------------
// DQN-lite

struct DQNConfig {
  int batch = 128;
  int n_step = 3;
  int capacity = 10000;
  int target_sync_every = 10;  // updates between target-network syncs
  int grad_steps = 4;          // gradient steps per update round
  double eps_start = 1.0;
  double eps_end = 0.01;
  double eps_anneal_frac = 0.5;  // fraction of total env steps to finish annealing
};

// Ring buffer of transitions with n-step assembly. A window starts anywhere in
// the live region (never crossing the write head) and consumes up to n
// transitions, stopping early at a terminal or when the next slot belongs to a
// different episode; the discount exponent equals the steps consumed.
class ReplayBuffer {
 public:
  ReplayBuffer(int capacity, int n_step, double gamma);

  void push(const std::vector<double>& obs, int action, double reward,
            const std::vector<double>& next_obs, bool done, uint64_t episode);
  int size() const { return size_; }
  int capacity() const { return capacity_; }
  int n_step() const { return n_step_; }

  struct Sample {
    std::vector<double> s;        // [B, obs_dim]
    std::vector<int> a;           // B
    std::vector<double> r_acc;    // B, discounted n-step reward sums
    std::vector<double> s_boot;   // [B, obs_dim] bootstrap states
    std::vector<uint8_t> term;    // B, 1 = window ended on a terminal
    std::vector<int> steps;       // B, steps consumed (discount exponent)
    std::vector<int> start;       // B, insertion-order start indices (for tests)
    int obs_dim = 0;
  };
  // Uniform over window starts in [0, size-n]; throws if size < batch or
  // size < n_step.
  Sample sample(int batch, Rng& rng) const;

  // Single window assembled at insertion-order index i (oldest = 0).
  void window(int i, Sample& out) const;

  // Raw slot access in insertion order, for oracle tests.
  struct Raw {
    const std::vector<double>* s;
    int a;
    double r;
    const std::vector<double>* s2;
    bool done;
    uint64_t episode;
  };
  Raw raw(int i) const;

 private:
  struct Slot {
    std::vector<double> s, s2;
    int a = 0;
    double r = 0.0;
    bool done = false;
    uint64_t episode = 0;
  };
  const Slot& slot(int i) const;  // insertion-order indexing

  int capacity_, n_step_;
  double gamma_;
  std::vector<Slot> ring_;
  int head_ = 0, size_ = 0;
};

// y_b = r_acc + gamma^steps * max_a q_boot[b*n_actions + a] * (1 - term).
std::vector<double> dqn_targets(const ReplayBuffer::Sample& sample,
                                const std::vector<double>& q_boot, int n_actions, double gamma);
// Same, with the bootstrap Q-values produced by an eval forward of `target`.
std::vector<double> dqn_targets(const ReplayBuffer::Sample& sample, nn::Net& target, double gamma);

// With probability eps a uniform action, otherwise the lowest-index argmax.
int epsilon_greedy(const std::vector<double>& q, double eps, Rng& rng);

// Exact entropy of the eps-greedy distribution over n actions.
double epsilon_greedy_entropy(double eps, int n_actions);

// ---------------------------------------------------------------------------
// Gradient instrumentation

struct GradStats {
  double latent_mag = 0.0;   // mean per-sample L2 norm of the latent gradient
  double latent_var = 0.0;   // population variance of those norms
  double encoder_mag = 0.0;  // same, over all encoder-parameter gradients
  double encoder_var = 0.0;
};

// Runs `n_samples` independent single-sample eval forward/backward passes over
// rows of obs ([n_samples, obs_dim]); `sample_loss` builds the scalar loss for
// row i. Throws std::runtime_error if backward never reaches the latent cut.
GradStats grad_probe(nn::Net& net, const std::vector<double>& obs, int obs_dim, int n_samples,
                     const std::function<ad::Tensor(ad::Tape&, nn::Net::Fwd&, int)>& sample_loss);

// ---------------------------------------------------------------------------
// Metrics

struct MetricsRecord {
  long update = 0;
  long env_steps = 0;
  std::string split = "train";
  double mean_return = 0.0;
  double entropy = 0.0;
  double grad_latent_mag = 0.0;
  double grad_latent_var = 0.0;
  double grad_encoder_mag = 0.0;
  double grad_encoder_var = 0.0;
  double delta_rel = 0.0;
  long wall_ms = 0;
};

// Append-only JSONL sink, flushed per record; also keeps records in memory.
// An empty path collects in memory only.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& path);
  ~MetricsWriter();
  MetricsWriter(const MetricsWriter&) = delete;
  MetricsWriter& operator=(const MetricsWriter&) = delete;

  void write(const MetricsRecord& rec);
  const std::vector<MetricsRecord>& records() const { return records_; }

  static std::string to_json_line(const MetricsRecord& rec);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::vector<MetricsRecord> records_;
};

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  nn::HeadKind head = nn::HeadKind::Srym;
  int latent_dim = 32;
  std::vector<int> hidden = {128, 128};
  double curvature = 1.0;
  double lr = 5e-4;
  double gamma = 0.99;
  double grad_clip = 0.5;
  int n_envs = 8;
  int rollout_len = 32;  // env steps per env per update (PPO and DQN alike)
  int updates = 300;
  int train_levels = 32;   // level seeds 0..train_levels-1
  int test_levels = 200;   // level seeds 1000..1000+test_levels-1
  int eval_every = 25;     // 0 disables periodic eval; a final eval always runs
  int eval_episodes = 40;  // episodes per periodic eval (final eval uses all test levels)
  int delta_every = 10;    // updates between delta_rel measurements, 0 disables
  int delta_samples = 256;
  int probe_samples = 16;
  uint64_t seed = 0;
  // Wall-clock timing off by default: identical runs then produce
  // byte-identical metrics files (wall_ms stays 0).
  bool record_timing = false;
  envs::GridConfig grid{};
  PPOConfig ppo{};
  DQNConfig dqn{};
};

struct TrainResult {
  double final_train_return = 0.0;
  double final_test_return = 0.0;
  long env_steps = 0;
};

// Steps k environments in lockstep; finished episodes auto-reset onto the
// next scheduled level. The level for (env e, episode i) is
// levels[mix(run_seed, e, i) % levels.size()] — independent of the policy, so
// matched-seed runs see identical level streams.
class VecEnv {
 public:
  VecEnv(int k, std::vector<uint64_t> levels, uint64_t run_seed, const envs::GridConfig& cfg);

  const std::vector<double>& obs() const { return obs_; }
  int obs_dim() const { return obs_dim_; }
  int k() const { return k_; }
  // Unique per (env, episode); adjacent episodes always get distinct tags.
  uint64_t episode_tag(int e) const;

  struct StepOut {
    std::vector<double> rewards;
    std::vector<uint8_t> dones;
  };
  StepOut step(const std::vector<int>& actions);

  // Drains returns of episodes completed since the last call.
  std::vector<double> take_completed();

 private:
  void load_level(int e);

  int k_, obs_dim_ = 0;
  std::vector<uint64_t> levels_;
  uint64_t run_seed_;
  envs::GridConfig cfg_;
  std::vector<envs::ProcGridEnv> envs_;
  std::vector<long> episode_idx_;
  std::vector<double> obs_;
  std::vector<double> completed_;
};

TrainResult train_ppo(const TrainConfig& cfg, MetricsWriter& metrics);
TrainResult train_dqn(const TrainConfig& cfg, MetricsWriter& metrics);

}  // namespace hyprl::rl
