#include "hyprl/rl.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace hyprl::rl {

// ---------------------------------------------------------------------------
// Advantage estimation

void gae(const std::vector<double>& rewards, const std::vector<double>& values,
         const std::vector<uint8_t>& dones, double bootstrap, double gamma, double lambda,
         std::vector<double>& advantages, std::vector<double>& returns) {
  const size_t T = rewards.size();
  if (values.size() != T || dones.size() != T)
    throw std::invalid_argument("gae: rewards, values and dones must have equal length");
  advantages.assign(T, 0.0);
  returns.assign(T, 0.0);
  double next_adv = 0.0;
  double next_value = bootstrap;
  for (size_t t = T; t-- > 0;) {
    const double mask = dones[t] ? 0.0 : 1.0;
    const double delta = rewards[t] + gamma * next_value * mask - values[t];
    next_adv = delta + gamma * lambda * mask * next_adv;
    advantages[t] = next_adv;
    returns[t] = next_adv + values[t];
    next_value = values[t];
  }
}

std::vector<double> normalize_advantages(std::vector<double> adv) {
  const size_t n = adv.size();
  if (n == 0) return adv;
  double mu = 0.0;
  for (double a : adv) mu += a;
  mu /= static_cast<double>(n);
  double var = 0.0;
  for (double a : adv) var += (a - mu) * (a - mu);
  const double sd = std::sqrt(var / static_cast<double>(n));
  if (sd <= 1e-12) {
    std::fill(adv.begin(), adv.end(), 0.0);
    return adv;
  }
  for (double& a : adv) a = (a - mu) / sd;
  return adv;
}

// ---------------------------------------------------------------------------
// PPO

PPOLossOut ppo_loss(const ad::Tensor& outputs, const std::vector<int>& actions,
                    const std::vector<double>& old_logp, const std::vector<double>& advantages,
                    const std::vector<double>& returns, const PPOConfig& cfg) {
  const auto& sh = outputs.shape();
  if (sh.size() != 2 || sh[1] < 2)
    throw std::invalid_argument("ppo_loss: outputs must be [B, n_actions + 1]");
  const int B = sh[0];
  const int A = sh[1] - 1;
  const auto nB = static_cast<size_t>(B);
  if (actions.size() != nB || old_logp.size() != nB || advantages.size() != nB ||
      returns.size() != nB)
    throw std::invalid_argument("ppo_loss: batch arrays must all have length B");

  ad::Tensor logits = ad::slice_cols(outputs, 0, A);
  ad::Tensor values = ad::reshape(ad::slice_cols(outputs, A, A + 1), {B});
  ad::Tensor logp_all = ad::log_softmax(logits);
  ad::Tensor logp_act = ad::take_per_row(logp_all, actions);

  const ad::Tensor old_lp({B}, old_logp);
  const ad::Tensor adv({B}, advantages);
  const ad::Tensor ret({B}, returns);

  ad::Tensor ratio = ad::exp(ad::sub(logp_act, old_lp));
  ad::Tensor surr = ad::mul(ratio, adv);
  ad::Tensor surr_clip = ad::mul(ad::clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps), adv);
  ad::Tensor policy = ad::neg(ad::mean(ad::minimum(surr, surr_clip)));

  ad::Tensor verr = ad::sub(values, ret);
  ad::Tensor value = ad::scale(ad::mean(ad::mul(verr, verr)), cfg.value_coef);

  ad::Tensor ent_rows = ad::neg(ad::sum_rows(ad::mul(ad::exp(logp_all), logp_all)));
  ad::Tensor mean_ent = ad::mean(ent_rows);
  ad::Tensor entropy = ad::scale(mean_ent, -cfg.entropy_coef);

  PPOLossOut out;
  out.total = ad::add(ad::add(policy, value), entropy);
  out.policy_term = policy.item();
  out.value_term = value.item();
  out.entropy_term = entropy.item();
  out.mean_entropy = mean_ent.item();
  if (!std::isfinite(out.policy_term)) throw DivergenceError("ppo loss: policy term non-finite");
  if (!std::isfinite(out.value_term)) throw DivergenceError("ppo loss: value term non-finite");
  if (!std::isfinite(out.entropy_term))
    throw DivergenceError("ppo loss: entropy term non-finite");
  return out;
}

// ---------------------------------------------------------------------------
// Replay buffer

ReplayBuffer::ReplayBuffer(int capacity, int n_step, double gamma)
    : capacity_(capacity), n_step_(n_step), gamma_(gamma) {
  if (capacity < 1) throw std::invalid_argument("replay: capacity must be >= 1");
  if (n_step < 1) throw std::invalid_argument("replay: n_step must be >= 1");
  if (n_step > capacity) throw std::invalid_argument("replay: n_step exceeds capacity");
  ring_.resize(static_cast<size_t>(capacity));
}

void ReplayBuffer::push(const std::vector<double>& obs, int action, double reward,
                        const std::vector<double>& next_obs, bool done, uint64_t episode) {
  Slot& s = ring_[static_cast<size_t>(head_)];
  s.s = obs;
  s.a = action;
  s.r = reward;
  s.s2 = next_obs;
  s.done = done;
  s.episode = episode;
  head_ = (head_ + 1) % capacity_;
  if (size_ < capacity_) ++size_;
}

const ReplayBuffer::Slot& ReplayBuffer::slot(int i) const {
  const int base = (size_ == capacity_) ? head_ : 0;
  return ring_[static_cast<size_t>((base + i) % capacity_)];
}

ReplayBuffer::Raw ReplayBuffer::raw(int i) const {
  if (i < 0 || i >= size_) throw std::out_of_range("replay: raw index out of range");
  const Slot& s = slot(i);
  return Raw{&s.s, s.a, s.r, &s.s2, s.done, s.episode};
}

void ReplayBuffer::window(int i, Sample& out) const {
  if (i < 0 || i > size_ - n_step_) throw std::out_of_range("replay: window start out of range");
  const Slot& first = slot(i);
  double r_acc = first.r;
  double disc = gamma_;
  int steps = 1;
  bool term = first.done;
  const Slot* last = &first;
  for (int j = 1; j < n_step_ && !term; ++j) {
    const Slot& next = slot(i + j);
    if (next.episode != first.episode) break;  // never read across episodes
    r_acc += disc * next.r;
    disc *= gamma_;
    ++steps;
    term = next.done;
    last = &next;
  }
  out.obs_dim = static_cast<int>(first.s.size());
  out.s.insert(out.s.end(), first.s.begin(), first.s.end());
  out.a.push_back(first.a);
  out.r_acc.push_back(r_acc);
  out.s_boot.insert(out.s_boot.end(), last->s2.begin(), last->s2.end());
  out.term.push_back(term ? 1 : 0);
  out.steps.push_back(steps);
  out.start.push_back(i);
}

ReplayBuffer::Sample ReplayBuffer::sample(int batch, Rng& rng) const {
  if (batch < 1) throw std::invalid_argument("replay: sample batch must be >= 1");
  if (size_ < batch) throw std::runtime_error("replay: buffer smaller than batch");
  if (size_ < n_step_) throw std::runtime_error("replay: buffer smaller than n_step window");
  Sample out;
  const int n_starts = size_ - n_step_ + 1;
  for (int b = 0; b < batch; ++b) window(rng.uniform_int(n_starts), out);
  return out;
}

// ---------------------------------------------------------------------------
// DQN targets and exploration

std::vector<double> dqn_targets(const ReplayBuffer::Sample& sample,
                                const std::vector<double>& q_boot, int n_actions, double gamma) {
  const size_t B = sample.a.size();
  if (n_actions < 1) throw std::invalid_argument("dqn_targets: n_actions must be >= 1");
  if (q_boot.size() != B * static_cast<size_t>(n_actions))
    throw std::invalid_argument("dqn_targets: q_boot must be [B, n_actions]");
  std::vector<double> y(B, 0.0);
  for (size_t b = 0; b < B; ++b) {
    y[b] = sample.r_acc[b];
    if (!sample.term[b]) {
      double best = q_boot[b * n_actions];
      for (int a = 1; a < n_actions; ++a) best = std::max(best, q_boot[b * n_actions + a]);
      y[b] += std::pow(gamma, sample.steps[b]) * best;
    }
  }
  return y;
}

std::vector<double> dqn_targets(const ReplayBuffer::Sample& sample, nn::Net& target,
                                double gamma) {
  const int B = static_cast<int>(sample.a.size());
  const int A = target.config().n_outputs;
  ad::Tape tape;
  auto fwd = target.forward(tape, sample.s_boot, B, /*train=*/false);
  return dqn_targets(sample, fwd.outputs.data(), A, gamma);
}

int epsilon_greedy(const std::vector<double>& q, double eps, Rng& rng) {
  if (q.empty()) throw std::invalid_argument("epsilon_greedy: empty action-value vector");
  const int n = static_cast<int>(q.size());
  if (rng.uniform() < eps) return rng.uniform_int(n);
  int best = 0;
  for (int a = 1; a < n; ++a)
    if (q[a] > q[best]) best = a;
  return best;
}

double epsilon_greedy_entropy(double eps, int n_actions) {
  if (n_actions < 1) throw std::invalid_argument("epsilon_greedy_entropy: need >= 1 action");
  if (n_actions == 1) return 0.0;
  const double p_greedy = 1.0 - eps + eps / n_actions;
  const double p_other = eps / n_actions;
  double h = 0.0;
  if (p_greedy > 0.0) h -= p_greedy * std::log(p_greedy);
  if (p_other > 0.0) h -= (n_actions - 1) * p_other * std::log(p_other);
  return h;
}

// ---------------------------------------------------------------------------
// Gradient instrumentation

namespace {

void mean_var(const std::vector<double>& xs, double& mean, double& var) {
  mean = 0.0;
  var = 0.0;
  if (xs.empty()) return;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= static_cast<double>(xs.size());
}

}  // namespace

GradStats grad_probe(nn::Net& net, const std::vector<double>& obs, int obs_dim, int n_samples,
                     const std::function<ad::Tensor(ad::Tape&, nn::Net::Fwd&, int)>& sample_loss) {
  if (n_samples < 1) throw std::invalid_argument("grad_probe: need >= 1 sample");
  if (obs.size() < static_cast<size_t>(n_samples) * obs_dim)
    throw std::invalid_argument("grad_probe: obs shorter than n_samples rows");
  std::vector<double> latent_norms, encoder_norms;
  latent_norms.reserve(static_cast<size_t>(n_samples));
  encoder_norms.reserve(static_cast<size_t>(n_samples));
  std::vector<double> row(static_cast<size_t>(obs_dim));
  for (int i = 0; i < n_samples; ++i) {
    std::copy_n(obs.begin() + static_cast<size_t>(i) * obs_dim, obs_dim, row.begin());
    ad::Tape tape;
    auto fwd = net.forward(tape, row, 1, /*train=*/false);
    ad::Tensor loss = sample_loss(tape, fwd, i);
    tape.backward(loss);
    if (!tape.has_grad(fwd.latent))
      throw std::runtime_error("grad_probe: backward pass never reached the latent cut");
    double lat = 0.0;
    for (double g : tape.grad(fwd.latent)) lat += g * g;
    latent_norms.push_back(std::sqrt(lat));
    double enc = 0.0;
    const auto& params = net.params().params;
    for (size_t p = 0; p < params.size(); ++p) {
      if (!params[p].encoder || !tape.has_grad(fwd.leaves[p])) continue;
      for (double g : tape.grad(fwd.leaves[p])) enc += g * g;
    }
    encoder_norms.push_back(std::sqrt(enc));
  }
  GradStats out;
  mean_var(latent_norms, out.latent_mag, out.latent_var);
  mean_var(encoder_norms, out.encoder_mag, out.encoder_var);
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

struct MetricsWriter::Impl {
  std::ofstream out;
};

MetricsWriter::MetricsWriter(const std::string& path) : impl_(new Impl) {
  if (!path.empty()) {
    impl_->out.open(path, std::ios::out | std::ios::trunc);
    if (!impl_->out) throw std::runtime_error("metrics: cannot open " + path);
  }
}

MetricsWriter::~MetricsWriter() = default;

std::string MetricsWriter::to_json_line(const MetricsRecord& rec) {
  nlohmann::ordered_json j;
  j["update"] = rec.update;
  j["env_steps"] = rec.env_steps;
  j["split"] = rec.split;
  j["mean_return"] = rec.mean_return;
  j["entropy"] = rec.entropy;
  j["grad_latent_mag"] = rec.grad_latent_mag;
  j["grad_latent_var"] = rec.grad_latent_var;
  j["grad_encoder_mag"] = rec.grad_encoder_mag;
  j["grad_encoder_var"] = rec.grad_encoder_var;
  j["delta_rel"] = rec.delta_rel;
  j["wall_ms"] = rec.wall_ms;
  return j.dump();
}

void MetricsWriter::write(const MetricsRecord& rec) {
  records_.push_back(rec);
  if (impl_->out.is_open()) {
    impl_->out << to_json_line(rec) << '\n';
    impl_->out.flush();
  }
}

}  // namespace hyprl::rl
