#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>
#include <utility>

#include "hyprl/hyperbolicity.hpp"
#include "hyprl/optim.hpp"
#include "hyprl/rl.hpp"

namespace hyprl::rl {

namespace {

// rng stream tags, mixed into the run seed per concern
constexpr uint64_t kTagNet = 0x6e6574ULL;      // "net"
constexpr uint64_t kTagLevels = 0x6c766cULL;   // "lvl"
constexpr uint64_t kTagActions = 0x616374ULL;  // "act"
constexpr uint64_t kTagShuffle = 0x73687566ULL;
constexpr uint64_t kTagReplay = 0x72706cULL;
constexpr uint64_t kTagProbe = 0x707262ULL;
constexpr uint64_t kTagEval = 0x6576616cULL;
constexpr uint64_t kTagDelta = 0x646c7461ULL;

int argmax_first(const double* v, int n) {
  int best = 0;
  for (int i = 1; i < n; ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

// Numerically stable softmax draw; also reports log p(action).
int sample_categorical(const double* logits, int n, Rng& rng, double& logp) {
  double m = logits[0];
  for (int i = 1; i < n; ++i) m = std::max(m, logits[i]);
  double z = 0.0;
  for (int i = 0; i < n; ++i) z += std::exp(logits[i] - m);
  const double u = rng.uniform() * z;
  double acc = 0.0;
  int pick = n - 1;
  for (int i = 0; i < n; ++i) {
    acc += std::exp(logits[i] - m);
    if (u < acc) {
      pick = i;
      break;
    }
  }
  logp = (logits[pick] - m) - std::log(z);
  return pick;
}

double mean_of(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

// Adam on flat parameters (joint gradient clip), Riemannian Adam on ball
// points (unclipped); per-parameter moment state persists across updates.
class DualOptimizer {
 public:
  DualOptimizer(const optim::AdamConfig& cfg, const geo::BallConfig& ball, double clip)
      : cfg_(cfg), ball_(ball), clip_(clip) {}

  void step(nn::Net& net, ad::Tape& tape, const nn::Net::Fwd& fwd) {
    auto& params = net.params().params;
    states_.resize(params.size());
    std::vector<std::vector<double>> grads(params.size());
    for (size_t i = 0; i < params.size(); ++i)
      grads[i] = tape.has_grad(fwd.leaves[i])
                     ? tape.grad(fwd.leaves[i])
                     : std::vector<double>(params[i].value.size(), 0.0);
    std::vector<std::vector<double>*> flat;
    for (size_t i = 0; i < params.size(); ++i)
      if (!params[i].ball) flat.push_back(&grads[i]);
    optim::clip_global_norm(flat, clip_);
    for (size_t i = 0; i < params.size(); ++i) {
      if (params[i].ball)
        optim::radam_step(params[i].value, grads[i], states_[i], cfg_, ball_);
      else
        optim::adam_step(params[i].value, grads[i], states_[i], cfg_);
    }
  }

 private:
  optim::AdamConfig cfg_;
  geo::BallConfig ball_;
  double clip_;
  std::vector<optim::AdamState> states_;
};

std::vector<uint64_t> train_level_seeds(const TrainConfig& cfg) {
  std::vector<uint64_t> v(static_cast<size_t>(cfg.train_levels));
  for (int i = 0; i < cfg.train_levels; ++i) v[static_cast<size_t>(i)] = static_cast<uint64_t>(i);
  return v;
}

std::vector<uint64_t> test_level_seeds(const TrainConfig& cfg) {
  std::vector<uint64_t> v(static_cast<size_t>(cfg.test_levels));
  for (int i = 0; i < cfg.test_levels; ++i)
    v[static_cast<size_t>(i)] = static_cast<uint64_t>(1000 + i);
  return v;
}

// Runs every level exactly once (waves of <= wave lockstepped episodes) and
// returns the mean episode return. Greedy picks argmax over the first
// n_actions outputs; otherwise actions are sampled from the logits.
double eval_mean_return(nn::Net& net, const std::vector<uint64_t>& levels,
                        const envs::GridConfig& grid, int n_actions, bool greedy, uint64_t seed,
                        int wave) {
  if (levels.empty()) throw std::invalid_argument("eval: need >= 1 level");
  Rng rng(seed);
  double total = 0.0;
  const int n_out = net.config().n_outputs;
  for (size_t base = 0; base < levels.size(); base += static_cast<size_t>(wave)) {
    const int nw = static_cast<int>(std::min(static_cast<size_t>(wave), levels.size() - base));
    std::vector<envs::ProcGridEnv> es;
    es.reserve(static_cast<size_t>(nw));
    for (int j = 0; j < nw; ++j) es.push_back(envs::ProcGridEnv::generate(levels[base + j], grid));
    const int obs_dim = es[0].obs_dim();
    std::vector<double> obs(static_cast<size_t>(nw) * obs_dim);
    std::vector<uint8_t> fin(static_cast<size_t>(nw), 0);
    int remaining = nw;
    while (remaining > 0) {
      for (int j = 0; j < nw; ++j) {
        if (fin[j]) continue;
        auto o = es[j].observation();
        std::copy(o.begin(), o.end(), obs.begin() + static_cast<size_t>(j) * obs_dim);
      }
      ad::Tape tape;
      auto fwd = net.forward(tape, obs, nw, /*train=*/false);
      const auto& out = fwd.outputs.data();
      for (int j = 0; j < nw; ++j) {
        if (fin[j]) continue;
        const double* row = out.data() + static_cast<size_t>(j) * n_out;
        int a;
        if (greedy) {
          a = argmax_first(row, n_actions);
        } else {
          double lp;
          a = sample_categorical(row, n_actions, rng, lp);
        }
        auto res = es[j].step(a);
        if (res.done) {
          total += es[j].episode_return();
          fin[j] = 1;
          --remaining;
        }
      }
    }
  }
  return total / static_cast<double>(levels.size());
}

void validate_common(const TrainConfig& cfg) {
  if (cfg.n_envs < 1) throw std::invalid_argument("train: n_envs must be >= 1");
  if (cfg.rollout_len < 1) throw std::invalid_argument("train: rollout_len must be >= 1");
  if (cfg.updates < 1) throw std::invalid_argument("train: updates must be >= 1");
  if (cfg.train_levels < 1) throw std::invalid_argument("train: train_levels must be >= 1");
  if (cfg.test_levels < 1) throw std::invalid_argument("train: test_levels must be >= 1");
  if (cfg.lr < 0.0) throw std::invalid_argument("train: lr must be >= 0");
  if (cfg.gamma < 0.0 || cfg.gamma > 1.0) throw std::invalid_argument("train: gamma in [0,1]");
  if (cfg.curvature <= 0.0) throw std::invalid_argument("train: curvature must be > 0");
}

nn::NetConfig make_net_config(const TrainConfig& cfg, int n_outputs) {
  nn::NetConfig ncfg;
  ncfg.obs_dim = 5 * cfg.grid.size * cfg.grid.size;
  ncfg.n_outputs = n_outputs;
  ncfg.latent_dim = cfg.latent_dim;
  ncfg.hidden = cfg.hidden;
  ncfg.head = cfg.head;
  ncfg.ball.c = cfg.curvature;
  ncfg.seed = mix_seed(cfg.seed, kTagNet);
  return ncfg;
}

long wall_ms_since(std::chrono::steady_clock::time_point t0, bool enabled) {
  if (!enabled) return 0;
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() -
                                                               t0)
      .count();
}

// delta_rel of the euclidean latent vectors the encoder produces on a batch
// of observations (the pre-map tap point).
double latent_delta_rel(nn::Net& net, const std::vector<double>& obs, int batch, int sample_size,
                        uint64_t seed) {
  ad::Tape tape;
  auto fwd = net.forward(tape, obs, batch, /*train=*/false);
  const auto& lat = fwd.latent.data();
  const int dim = net.config().latent_dim;
  std::vector<geo::Vec> pts(static_cast<size_t>(batch));
  for (int i = 0; i < batch; ++i)
    pts[static_cast<size_t>(i)] =
        geo::Vec(lat.begin() + static_cast<size_t>(i) * dim,
                 lat.begin() + static_cast<size_t>(i + 1) * dim);
  return hyp::delta_rel(pts, hyp::Metric::Euclid, sample_size, seed).delta_rel;
}

}  // namespace

// ---------------------------------------------------------------------------
// VecEnv

VecEnv::VecEnv(int k, std::vector<uint64_t> levels, uint64_t run_seed, const envs::GridConfig& cfg)
    : k_(k), levels_(std::move(levels)), run_seed_(run_seed), cfg_(cfg) {
  if (k_ < 1) throw std::invalid_argument("vecenv: need >= 1 env");
  if (levels_.empty()) throw std::invalid_argument("vecenv: need >= 1 level");
  episode_idx_.assign(static_cast<size_t>(k_), 0);
  envs_.reserve(static_cast<size_t>(k_));
  for (int e = 0; e < k_; ++e) load_level(e);
  obs_dim_ = envs_[0].obs_dim();
  obs_.resize(static_cast<size_t>(k_) * obs_dim_);
  for (int e = 0; e < k_; ++e) {
    auto o = envs_[static_cast<size_t>(e)].observation();
    std::copy(o.begin(), o.end(), obs_.begin() + static_cast<size_t>(e) * obs_dim_);
  }
}

void VecEnv::load_level(int e) {
  const uint64_t i = static_cast<uint64_t>(episode_idx_[static_cast<size_t>(e)]);
  const uint64_t pick = mix_seed(run_seed_, static_cast<uint64_t>(e), i) % levels_.size();
  auto env = envs::ProcGridEnv::generate(levels_[pick], cfg_);
  if (static_cast<size_t>(e) < envs_.size())
    envs_[static_cast<size_t>(e)] = std::move(env);
  else
    envs_.push_back(std::move(env));
}

uint64_t VecEnv::episode_tag(int e) const {
  return (static_cast<uint64_t>(e) << 40) |
         static_cast<uint64_t>(episode_idx_[static_cast<size_t>(e)]);
}

VecEnv::StepOut VecEnv::step(const std::vector<int>& actions) {
  if (actions.size() != static_cast<size_t>(k_))
    throw std::invalid_argument("vecenv: need one action per env");
  StepOut out;
  out.rewards.resize(static_cast<size_t>(k_));
  out.dones.resize(static_cast<size_t>(k_));
  for (int e = 0; e < k_; ++e) {
    auto& env = envs_[static_cast<size_t>(e)];
    auto res = env.step(actions[static_cast<size_t>(e)]);
    out.rewards[static_cast<size_t>(e)] = res.reward;
    out.dones[static_cast<size_t>(e)] = res.done ? 1 : 0;
    if (res.done) {
      completed_.push_back(env.episode_return());
      ++episode_idx_[static_cast<size_t>(e)];
      load_level(e);
    }
    auto o = envs_[static_cast<size_t>(e)].observation();
    std::copy(o.begin(), o.end(), obs_.begin() + static_cast<size_t>(e) * obs_dim_);
  }
  return out;
}

std::vector<double> VecEnv::take_completed() {
  std::vector<double> out;
  out.swap(completed_);
  return out;
}

// ---------------------------------------------------------------------------
// PPO trainer

TrainResult train_ppo(const TrainConfig& cfg, MetricsWriter& metrics) {
  validate_common(cfg);
  if (cfg.ppo.epochs < 1) throw std::invalid_argument("train: ppo epochs must be >= 1");
  if (cfg.ppo.minibatch < 1) throw std::invalid_argument("train: ppo minibatch must be >= 1");

  const int k = cfg.n_envs;
  const int T = cfg.rollout_len;
  const int B = T * k;
  const int A = envs::ProcGridEnv::n_actions();

  nn::Net net(make_net_config(cfg, A + 1));
  const int obs_dim = net.config().obs_dim;

  VecEnv vec(k, train_level_seeds(cfg), mix_seed(cfg.seed, kTagLevels), cfg.grid);
  if (vec.obs_dim() != obs_dim) throw std::logic_error("train: obs_dim mismatch");

  optim::AdamConfig adam;
  adam.lr = cfg.lr;
  DualOptimizer opt(adam, net.config().ball, cfg.grad_clip);
  Rng act_rng(mix_seed(cfg.seed, kTagActions));
  Rng shuffle_rng(mix_seed(cfg.seed, kTagShuffle));

  RolloutBatch roll;
  roll.T = T;
  roll.k = k;
  roll.obs_dim = obs_dim;
  roll.obs.resize(static_cast<size_t>(B) * obs_dim);
  roll.actions.resize(static_cast<size_t>(B));
  roll.rewards.resize(static_cast<size_t>(B));
  roll.dones.resize(static_cast<size_t>(B));
  roll.logp.resize(static_cast<size_t>(B));
  roll.values.resize(static_cast<size_t>(B));
  roll.bootstrap.resize(static_cast<size_t>(k));

  const auto t0 = std::chrono::steady_clock::now();
  long env_steps = 0;
  double last_train_return = 0.0;
  double last_delta = 0.0;
  GradStats stats{};
  std::vector<int> acts(static_cast<size_t>(k));

  for (long u = 1; u <= cfg.updates; ++u) {
    // -- collect one rollout
    for (int t = 0; t < T; ++t) {
      std::copy(vec.obs().begin(), vec.obs().end(),
                roll.obs.begin() + static_cast<size_t>(t) * k * obs_dim);
      ad::Tape tape;
      auto fwd = net.forward(tape, vec.obs(), k, /*train=*/false);
      const auto& out = fwd.outputs.data();
      for (int e = 0; e < k; ++e) {
        const double* row = out.data() + static_cast<size_t>(e) * (A + 1);
        double lp;
        const int a = sample_categorical(row, A, act_rng, lp);
        const size_t i = static_cast<size_t>(t) * k + e;
        acts[static_cast<size_t>(e)] = a;
        roll.actions[i] = a;
        roll.logp[i] = lp;
        roll.values[i] = row[A];
      }
      auto so = vec.step(acts);
      for (int e = 0; e < k; ++e) {
        const size_t i = static_cast<size_t>(t) * k + e;
        roll.rewards[i] = so.rewards[static_cast<size_t>(e)];
        roll.dones[i] = so.dones[static_cast<size_t>(e)];
      }
    }
    env_steps += static_cast<long>(B);
    {
      ad::Tape tape;
      auto fwd = net.forward(tape, vec.obs(), k, /*train=*/false);
      for (int e = 0; e < k; ++e)
        roll.bootstrap[static_cast<size_t>(e)] = fwd.outputs.at(static_cast<size_t>(e) * (A + 1) + A);
    }

    // -- GAE per env column, then batch-normalize
    std::vector<double> adv(static_cast<size_t>(B)), ret(static_cast<size_t>(B));
    {
      std::vector<double> r(static_cast<size_t>(T)), v(static_cast<size_t>(T));
      std::vector<uint8_t> d(static_cast<size_t>(T));
      std::vector<double> ea, er;
      for (int e = 0; e < k; ++e) {
        for (int t = 0; t < T; ++t) {
          const size_t i = static_cast<size_t>(t) * k + e;
          r[static_cast<size_t>(t)] = roll.rewards[i];
          v[static_cast<size_t>(t)] = roll.values[i];
          d[static_cast<size_t>(t)] = roll.dones[i];
        }
        gae(r, v, d, roll.bootstrap[static_cast<size_t>(e)], cfg.gamma, cfg.ppo.gae_lambda, ea,
            er);
        for (int t = 0; t < T; ++t) {
          const size_t i = static_cast<size_t>(t) * k + e;
          adv[i] = ea[static_cast<size_t>(t)];
          ret[i] = er[static_cast<size_t>(t)];
        }
      }
    }
    const std::vector<double> adv_n = normalize_advantages(adv);

    // -- instrumentation on the fresh rollout, before this update's steps
    if (cfg.probe_samples > 0) {
      const int np = std::min(cfg.probe_samples, B);
      stats = grad_probe(net, roll.obs, obs_dim, np,
                         [&](ad::Tape&, nn::Net::Fwd& fwd, int i) {
                           return ppo_loss(fwd.outputs, {roll.actions[static_cast<size_t>(i)]},
                                           {roll.logp[static_cast<size_t>(i)]},
                                           {adv_n[static_cast<size_t>(i)]},
                                           {ret[static_cast<size_t>(i)]}, cfg.ppo)
                               .total;
                         });
    }
    if (cfg.delta_every > 0 && (u - 1) % cfg.delta_every == 0)
      last_delta = latent_delta_rel(net, roll.obs, B, cfg.delta_samples,
                                    mix_seed(cfg.seed, kTagDelta, static_cast<uint64_t>(u)));

    // -- optimize
    double ent_sum = 0.0;
    int ent_n = 0;
    std::vector<int> perm(static_cast<size_t>(B));
    for (int i = 0; i < B; ++i) perm[static_cast<size_t>(i)] = i;
    std::vector<double> mb_obs;
    std::vector<int> mb_act;
    std::vector<double> mb_lp, mb_adv, mb_ret;
    for (int ep = 0; ep < cfg.ppo.epochs; ++ep) {
      for (int i = B - 1; i > 0; --i)
        std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(shuffle_rng.uniform_int(i + 1))]);
      for (int s = 0; s < B; s += cfg.ppo.minibatch) {
        const int m = std::min(cfg.ppo.minibatch, B - s);
        mb_obs.assign(static_cast<size_t>(m) * obs_dim, 0.0);
        mb_act.assign(static_cast<size_t>(m), 0);
        mb_lp.assign(static_cast<size_t>(m), 0.0);
        mb_adv.assign(static_cast<size_t>(m), 0.0);
        mb_ret.assign(static_cast<size_t>(m), 0.0);
        for (int j = 0; j < m; ++j) {
          const size_t src = static_cast<size_t>(perm[static_cast<size_t>(s + j)]);
          std::copy_n(roll.obs.begin() + src * obs_dim, obs_dim,
                      mb_obs.begin() + static_cast<size_t>(j) * obs_dim);
          mb_act[static_cast<size_t>(j)] = roll.actions[src];
          mb_lp[static_cast<size_t>(j)] = roll.logp[src];
          mb_adv[static_cast<size_t>(j)] = adv_n[src];
          mb_ret[static_cast<size_t>(j)] = ret[src];
        }
        ad::Tape tape;
        auto fwd = net.forward(tape, mb_obs, m, /*train=*/true);
        auto lo = ppo_loss(fwd.outputs, mb_act, mb_lp, mb_adv, mb_ret, cfg.ppo);
        tape.backward(lo.total);
        opt.step(net, tape, fwd);
        ent_sum += lo.mean_entropy;
        ++ent_n;
      }
    }

    // -- metrics
    auto finished = vec.take_completed();
    if (!finished.empty()) last_train_return = mean_of(finished);
    MetricsRecord rec;
    rec.update = u;
    rec.env_steps = env_steps;
    rec.split = "train";
    rec.mean_return = last_train_return;
    rec.entropy = ent_sum / static_cast<double>(std::max(1, ent_n));
    rec.grad_latent_mag = stats.latent_mag;
    rec.grad_latent_var = stats.latent_var;
    rec.grad_encoder_mag = stats.encoder_mag;
    rec.grad_encoder_var = stats.encoder_var;
    rec.delta_rel = last_delta;
    rec.wall_ms = wall_ms_since(t0, cfg.record_timing);
    metrics.write(rec);

    if (cfg.eval_every > 0 && u % cfg.eval_every == 0 && u != cfg.updates) {
      const auto test = test_level_seeds(cfg);
      Rng pick(mix_seed(cfg.seed, kTagEval, static_cast<uint64_t>(u)));
      std::vector<uint64_t> subset(static_cast<size_t>(cfg.eval_episodes));
      for (auto& L : subset) L = test[static_cast<size_t>(pick.uniform_int(static_cast<int>(test.size())))];
      MetricsRecord te = rec;
      te.split = "test";
      te.mean_return = eval_mean_return(net, subset, cfg.grid, A, /*greedy=*/false,
                                        mix_seed(cfg.seed, kTagEval, static_cast<uint64_t>(u) + 1),
                                        k);
      te.wall_ms = wall_ms_since(t0, cfg.record_timing);
      metrics.write(te);
    }
  }

  // -- final matched-protocol evals: every train level once, every test level once
  TrainResult res;
  res.env_steps = env_steps;
  res.final_train_return =
      eval_mean_return(net, train_level_seeds(cfg), cfg.grid, A, /*greedy=*/false,
                       mix_seed(cfg.seed, kTagEval, 0xf17a11ULL), k);
  res.final_test_return =
      eval_mean_return(net, test_level_seeds(cfg), cfg.grid, A, /*greedy=*/false,
                       mix_seed(cfg.seed, kTagEval, 0xf17a12ULL), k);
  MetricsRecord fin;
  fin.update = cfg.updates;
  fin.env_steps = env_steps;
  fin.split = "test";
  fin.mean_return = res.final_test_return;
  fin.entropy = 0.0;
  fin.delta_rel = last_delta;
  fin.wall_ms = wall_ms_since(t0, cfg.record_timing);
  metrics.write(fin);
  return res;
}

// ---------------------------------------------------------------------------
// DQN-lite trainer

namespace {

double eps_at(long steps, long total_steps, const DQNConfig& d) {
  const double horizon = d.eps_anneal_frac * static_cast<double>(total_steps);
  if (horizon <= 0.0) return d.eps_end;
  const double f = std::min(1.0, static_cast<double>(steps) / horizon);
  return d.eps_start + f * (d.eps_end - d.eps_start);
}

}  // namespace

TrainResult train_dqn(const TrainConfig& cfg, MetricsWriter& metrics) {
  validate_common(cfg);
  if (cfg.dqn.batch < 1) throw std::invalid_argument("train: dqn batch must be >= 1");
  if (cfg.dqn.grad_steps < 1) throw std::invalid_argument("train: dqn grad_steps must be >= 1");

  const int k = cfg.n_envs;
  const int T = cfg.rollout_len;
  const int B = T * k;
  const int A = envs::ProcGridEnv::n_actions();
  const long total_steps = static_cast<long>(cfg.updates) * B;

  nn::Net net(make_net_config(cfg, A));
  nn::Net target(make_net_config(cfg, A));
  target.copy_values_from(net);
  const int obs_dim = net.config().obs_dim;

  VecEnv vec(k, train_level_seeds(cfg), mix_seed(cfg.seed, kTagLevels), cfg.grid);

  optim::AdamConfig adam;
  adam.lr = cfg.lr;
  DualOptimizer opt(adam, net.config().ball, cfg.grad_clip);
  Rng act_rng(mix_seed(cfg.seed, kTagActions));
  Rng replay_rng(mix_seed(cfg.seed, kTagReplay));
  Rng probe_rng(mix_seed(cfg.seed, kTagProbe));
  ReplayBuffer buffer(cfg.dqn.capacity, cfg.dqn.n_step, cfg.gamma);

  // per-update transition staging, pushed env-contiguously so n-step windows
  // stay within a single env's stream
  std::vector<double> st_obs(static_cast<size_t>(B) * obs_dim);
  std::vector<double> st_next(static_cast<size_t>(B) * obs_dim);
  std::vector<int> st_act(static_cast<size_t>(B));
  std::vector<double> st_rew(static_cast<size_t>(B));
  std::vector<uint8_t> st_done(static_cast<size_t>(B));
  std::vector<uint64_t> st_tag(static_cast<size_t>(B));

  const auto t0 = std::chrono::steady_clock::now();
  long env_steps = 0;
  double last_train_return = 0.0;
  double last_delta = 0.0;
  double eps = cfg.dqn.eps_start;
  GradStats stats{};
  std::vector<int> acts(static_cast<size_t>(k));
  std::vector<double> row_obs(static_cast<size_t>(obs_dim)), row_next(static_cast<size_t>(obs_dim));

  for (long u = 1; u <= cfg.updates; ++u) {
    // -- collect
    for (int t = 0; t < T; ++t) {
      std::copy(vec.obs().begin(), vec.obs().end(),
                st_obs.begin() + static_cast<size_t>(t) * k * obs_dim);
      eps = eps_at(env_steps, total_steps, cfg.dqn);
      ad::Tape tape;
      auto fwd = net.forward(tape, vec.obs(), k, /*train=*/false);
      const auto& q = fwd.outputs.data();
      for (int e = 0; e < k; ++e) {
        std::vector<double> qrow(q.begin() + static_cast<size_t>(e) * A,
                                 q.begin() + static_cast<size_t>(e + 1) * A);
        acts[static_cast<size_t>(e)] = epsilon_greedy(qrow, eps, act_rng);
        st_tag[static_cast<size_t>(t) * k + e] = vec.episode_tag(e);
      }
      auto so = vec.step(acts);
      std::copy(vec.obs().begin(), vec.obs().end(),
                st_next.begin() + static_cast<size_t>(t) * k * obs_dim);
      for (int e = 0; e < k; ++e) {
        const size_t i = static_cast<size_t>(t) * k + e;
        st_act[i] = acts[static_cast<size_t>(e)];
        st_rew[i] = so.rewards[static_cast<size_t>(e)];
        st_done[i] = so.dones[static_cast<size_t>(e)];
      }
      env_steps += k;
    }
    for (int e = 0; e < k; ++e) {
      for (int t = 0; t < T; ++t) {
        const size_t i = static_cast<size_t>(t) * k + e;
        std::copy_n(st_obs.begin() + i * obs_dim, obs_dim, row_obs.begin());
        std::copy_n(st_next.begin() + i * obs_dim, obs_dim, row_next.begin());
        buffer.push(row_obs, st_act[i], st_rew[i], row_next, st_done[i] != 0, st_tag[i]);
      }
    }

    const bool warm = buffer.size() >= cfg.dqn.batch && buffer.size() >= cfg.dqn.n_step;

    // -- instrumentation before this update's gradient steps
    if (warm && cfg.probe_samples > 0) {
      auto ps = buffer.sample(cfg.probe_samples, probe_rng);
      auto py = dqn_targets(ps, target, cfg.gamma);
      stats = grad_probe(net, ps.s, obs_dim, cfg.probe_samples,
                         [&](ad::Tape&, nn::Net::Fwd& fwd, int i) {
                           ad::Tensor qsa =
                               ad::take_per_row(fwd.outputs, {ps.a[static_cast<size_t>(i)]});
                           ad::Tensor diff = ad::add_scalar(qsa, -py[static_cast<size_t>(i)]);
                           return ad::mean(ad::mul(diff, diff));
                         });
    }
    if (cfg.delta_every > 0 && (u - 1) % cfg.delta_every == 0)
      last_delta = latent_delta_rel(net, st_obs, B, cfg.delta_samples,
                                    mix_seed(cfg.seed, kTagDelta, static_cast<uint64_t>(u)));

    // -- gradient steps (skipped until the buffer can fill a batch)
    if (warm) {
      for (int g = 0; g < cfg.dqn.grad_steps; ++g) {
        auto smp = buffer.sample(cfg.dqn.batch, replay_rng);
        auto y = dqn_targets(smp, target, cfg.gamma);
        ad::Tape tape;
        auto fwd = net.forward(tape, smp.s, cfg.dqn.batch, /*train=*/true);
        ad::Tensor qsa = ad::take_per_row(fwd.outputs, smp.a);
        ad::Tensor diff = ad::sub(qsa, ad::Tensor({cfg.dqn.batch}, y));
        ad::Tensor loss = ad::mean(ad::mul(diff, diff));
        if (!std::isfinite(loss.item()))
          throw DivergenceError("dqn loss non-finite at update " + std::to_string(u));
        tape.backward(loss);
        opt.step(net, tape, fwd);
      }
    }
    if (cfg.dqn.target_sync_every > 0 && u % cfg.dqn.target_sync_every == 0)
      target.copy_values_from(net);

    // -- metrics
    auto finished = vec.take_completed();
    if (!finished.empty()) last_train_return = mean_of(finished);
    MetricsRecord rec;
    rec.update = u;
    rec.env_steps = env_steps;
    rec.split = "train";
    rec.mean_return = last_train_return;
    rec.entropy = epsilon_greedy_entropy(eps, A);
    rec.grad_latent_mag = stats.latent_mag;
    rec.grad_latent_var = stats.latent_var;
    rec.grad_encoder_mag = stats.encoder_mag;
    rec.grad_encoder_var = stats.encoder_var;
    rec.delta_rel = last_delta;
    rec.wall_ms = wall_ms_since(t0, cfg.record_timing);
    metrics.write(rec);

    if (cfg.eval_every > 0 && u % cfg.eval_every == 0 && u != cfg.updates) {
      const auto test = test_level_seeds(cfg);
      Rng pick(mix_seed(cfg.seed, kTagEval, static_cast<uint64_t>(u)));
      std::vector<uint64_t> subset(static_cast<size_t>(cfg.eval_episodes));
      for (auto& L : subset)
        L = test[static_cast<size_t>(pick.uniform_int(static_cast<int>(test.size())))];
      MetricsRecord te = rec;
      te.split = "test";
      te.mean_return = eval_mean_return(net, subset, cfg.grid, A, /*greedy=*/true,
                                        mix_seed(cfg.seed, kTagEval, static_cast<uint64_t>(u) + 1),
                                        k);
      te.wall_ms = wall_ms_since(t0, cfg.record_timing);
      metrics.write(te);
    }
  }

  TrainResult res;
  res.env_steps = env_steps;
  res.final_train_return = eval_mean_return(net, train_level_seeds(cfg), cfg.grid, A,
                                            /*greedy=*/true, mix_seed(cfg.seed, kTagEval, 0xf17a11ULL), k);
  res.final_test_return = eval_mean_return(net, test_level_seeds(cfg), cfg.grid, A,
                                           /*greedy=*/true, mix_seed(cfg.seed, kTagEval, 0xf17a12ULL), k);
  MetricsRecord fin;
  fin.update = cfg.updates;
  fin.env_steps = env_steps;
  fin.split = "test";
  fin.mean_return = res.final_test_return;
  fin.delta_rel = last_delta;
  fin.wall_ms = wall_ms_since(t0, cfg.record_timing);
  metrics.write(fin);
  return res;
}

}  // namespace hyprl::rl
