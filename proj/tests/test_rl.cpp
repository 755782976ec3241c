#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "doctest.h"
#include "hyprl/envs.hpp"
#include "hyprl/nn.hpp"
#include "hyprl/rl.hpp"
#include "hyprl/rng.hpp"
#include "test_util.hpp"

using namespace hyprl;

namespace {

double logp_of_action(const double* logits, int n, int a) {
  double m = logits[0];
  for (int i = 1; i < n; ++i) m = std::max(m, logits[i]);
  double z = 0.0;
  for (int i = 0; i < n; ++i) z += std::exp(logits[i] - m);
  return (logits[a] - m) - std::log(z);
}

}  // namespace

TEST_CASE("gae reproduces the four-step worked example") {
  const std::vector<double> r{0.0, 0.0, 1.0, 0.0};
  const std::vector<double> v{0.5, 0.5, 0.5, 0.5};
  const std::vector<uint8_t> d{0, 0, 0, 1};
  std::vector<double> adv, ret;
  rl::gae(r, v, d, 0.25, 0.99, 0.95, adv, ret);
  REQUIRE(adv.size() == 4);
  CHECK(adv[0] == doctest::Approx(0.4544599961875).epsilon(1e-13));
  CHECK(adv[1] == doctest::Approx(0.488527375).epsilon(1e-13));
  CHECK(adv[2] == doctest::Approx(0.52475).epsilon(1e-13));
  CHECK(adv[3] == doctest::Approx(-0.5).epsilon(1e-13));
  CHECK(ret[0] == doctest::Approx(0.9544599961875).epsilon(1e-13));
  CHECK(ret[1] == doctest::Approx(0.988527375).epsilon(1e-13));
  CHECK(ret[2] == doctest::Approx(1.02475).epsilon(1e-13));
  CHECK(std::abs(ret[3]) < 1e-15);
}

TEST_CASE("gae reductions: lambda=0 is the TD error, lambda=1 is discounted MC") {
  Rng rng(7);
  const int T = 12;
  const double gamma = 0.97;
  std::vector<double> r(T), v(T);
  std::vector<uint8_t> d(T, 0);  // no terminals, so both closed forms are global
  for (int t = 0; t < T; ++t) {
    r[static_cast<size_t>(t)] = rng.uniform(-1.0, 1.0);
    v[static_cast<size_t>(t)] = rng.uniform(-1.0, 1.0);
  }
  const double boot = rng.uniform(-1.0, 1.0);

  std::vector<double> adv, ret;
  rl::gae(r, v, d, boot, gamma, 0.0, adv, ret);
  for (int t = 0; t < T; ++t) {
    const double nxt = (t + 1 < T) ? v[static_cast<size_t>(t) + 1] : boot;
    const double delta = r[static_cast<size_t>(t)] + gamma * nxt - v[static_cast<size_t>(t)];
    CHECK(std::abs(adv[static_cast<size_t>(t)] - delta) < 1e-12);
  }

  rl::gae(r, v, d, boot, gamma, 1.0, adv, ret);
  for (int t = 0; t < T; ++t) {
    double g = 0.0, disc = 1.0;
    for (int j = t; j < T; ++j) {
      g += disc * r[static_cast<size_t>(j)];
      disc *= gamma;
    }
    g += disc * boot;
    CHECK(std::abs(ret[static_cast<size_t>(t)] - g) < 1e-12);
  }
}

TEST_CASE("gae rejects mismatched array lengths") {
  std::vector<double> adv, ret;
  CHECK_THROWS_AS(rl::gae({1.0, 2.0}, {0.0, 0.0, 0.0}, {0, 0}, 0.0, 0.99, 0.95, adv, ret),
                  std::invalid_argument);
  CHECK_THROWS_AS(rl::gae({1.0, 2.0}, {0.0, 0.0}, {0}, 0.0, 0.99, 0.95, adv, ret),
                  std::invalid_argument);
}

TEST_CASE("advantage normalization is exactly mean-zero unit-variance") {
  Rng rng(31);
  std::vector<double> a(64);
  for (auto& x : a) x = rng.uniform(-3.0, 5.0);
  auto n = rl::normalize_advantages(a);
  double mu = 0.0;
  for (double x : n) mu += x;
  mu /= static_cast<double>(n.size());
  double var = 0.0;
  for (double x : n) var += (x - mu) * (x - mu);
  var /= static_cast<double>(n.size());
  CHECK(std::abs(mu) < 1e-12);
  CHECK(std::abs(var - 1.0) < 1e-12);
}

TEST_CASE("advantage normalization maps a constant batch to zeros") {
  auto n = rl::normalize_advantages({0.7, 0.7, 0.7, 0.7});
  for (double x : n) CHECK(x == 0.0);
  CHECK(rl::normalize_advantages({}).empty());
}

TEST_CASE("ppo loss matches the eight-sample hand-evaluated golden") {
  const double L[8][4] = {
      {0.20, -0.10, 0.05, 0.30}, {-0.40, 0.10, 0.00, 0.20}, {0.15, 0.25, -0.30, 0.10},
      {0.00, -0.20, 0.40, -0.10}, {0.50, 0.10, -0.20, 0.00}, {-0.15, 0.05, 0.25, -0.35},
      {0.30, -0.30, 0.10, 0.20}, {-0.05, 0.45, -0.10, 0.15}};
  const std::vector<int> actions{3, 1, 0, 2, 0, 2, 3, 1};
  const std::vector<double> old_logp{-1.30, -1.45, -1.20, -1.10, -1.00, -1.35, -1.25, -1.05};
  const std::vector<double> adv_raw{0.80, -0.50, 1.20, 0.30, -1.00, 0.60, -0.20, 0.90};
  const std::vector<double> returns{0.50, 0.10, 0.90, 0.40, -0.30, 0.70, 0.00, 0.60};
  const std::vector<double> values{0.30, 0.20, 0.60, 0.50, -0.10, 0.40, 0.10, 0.30};

  std::vector<double> data;
  for (int i = 0; i < 8; ++i) {
    for (int j = 0; j < 4; ++j) data.push_back(L[i][j]);
    data.push_back(values[static_cast<size_t>(i)]);
  }
  const ad::Tensor outputs({8, 5}, data);
  const auto adv = rl::normalize_advantages(adv_raw);

  rl::PPOConfig pc;  // defaults: clip 0.2, entropy 0.01, value 0.5
  auto out = rl::ppo_loss(outputs, actions, old_logp, adv, returns, pc);
  CHECK(out.policy_term == doctest::Approx(0.014721919426939054).epsilon(1e-12));
  CHECK(out.value_term == doctest::Approx(0.02375).epsilon(1e-12));
  CHECK(out.entropy_term == doctest::Approx(-0.013627566795693746).epsilon(1e-12));
  CHECK(out.mean_entropy == doctest::Approx(1.3627566795693746).epsilon(1e-12));
  CHECK(out.total.item() == doctest::Approx(0.024844352631245308).epsilon(1e-12));
}

TEST_CASE("ppo loss with ratio 1 reduces to minus the mean advantage") {
  const std::vector<double> data{0.3, -0.2, 0.1, 0.05,   // logits row 0 + value
                                 -0.1, 0.4, 0.2, -0.03,  //
                                 0.0, 0.0, 0.6, 0.2,     //
                                 0.25, -0.5, -0.1, 0.0};
  const ad::Tensor outputs({4, 4}, data);
  const std::vector<int> actions{0, 2, 1, 0};
  std::vector<double> old_logp(4);
  for (int i = 0; i < 4; ++i)
    old_logp[static_cast<size_t>(i)] =
        logp_of_action(data.data() + static_cast<size_t>(i) * 4, 3, actions[static_cast<size_t>(i)]);
  // normalized advantages sum to zero, so the surrogate mean vanishes
  const auto adv = rl::normalize_advantages({1.0, -1.0, 0.5, -0.5});
  const std::vector<double> returns{0.0, 0.0, 0.0, 0.0};
  rl::PPOConfig pc;
  auto out = rl::ppo_loss(outputs, actions, old_logp, adv, returns, pc);
  CHECK(std::abs(out.policy_term) < 1e-12);
}

TEST_CASE("ppo loss clips a ratio of 1.5 at 1.2 for positive advantage") {
  const std::vector<double> data{0.4, -0.1, 0.2, 0.7};  // [1,4]: 3 logits + value
  const ad::Tensor outputs({1, 4}, data);
  const std::vector<int> actions{1};
  const double lp = logp_of_action(data.data(), 3, 1);
  const std::vector<double> old_logp{lp - std::log(1.5)};  // ratio = exactly 1.5
  rl::PPOConfig pc;
  auto out = rl::ppo_loss(outputs, actions, old_logp, {1.0}, {0.7}, pc);
  CHECK(out.policy_term == doctest::Approx(-1.2).epsilon(1e-12));
  CHECK(std::abs(out.value_term) < 1e-12);  // value exactly matches the return
}

TEST_CASE("ppo loss throws DivergenceError naming the non-finite term") {
  const double inf = std::numeric_limits<double>::infinity();
  const std::vector<double> data{0.4, -0.1, 0.2, 0.7};
  const ad::Tensor outputs({1, 4}, data);

  try {
    rl::ppo_loss(outputs, {1}, {-inf}, {-1.0}, {0.0}, rl::PPOConfig{});
    CHECK(false);
  } catch (const rl::DivergenceError& e) {
    CHECK(std::string(e.what()).find("policy") != std::string::npos);
  }
  try {
    rl::ppo_loss(outputs, {1}, {-1.0}, {0.5}, {inf}, rl::PPOConfig{});
    CHECK(false);
  } catch (const rl::DivergenceError& e) {
    CHECK(std::string(e.what()).find("value") != std::string::npos);
  }
}

TEST_CASE("ppo loss gradients through a full network match finite differences") {
  nn::NetConfig nc;
  nc.obs_dim = 6;
  nc.n_outputs = 4;  // 3 actions + value column
  nc.latent_dim = 4;
  nc.hidden = {8};
  nc.head = nn::HeadKind::Srym;
  nc.seed = 11;
  nn::Net net(nc);

  Rng rng(5);
  const int B = 5;
  std::vector<double> obs(static_cast<size_t>(B) * 6);
  for (auto& x : obs) x = rng.uniform(-1.0, 1.0);
  const std::vector<int> actions{0, 2, 1, 0, 2};

  // behavior log-probs chosen so every ratio sits strictly inside the clip band
  std::vector<double> old_logp(static_cast<size_t>(B));
  {
    ad::Tape tape;
    auto fwd = net.forward(tape, obs, B, false);
    for (int i = 0; i < B; ++i) {
      const double* row = fwd.outputs.data().data() + static_cast<size_t>(i) * 4;
      const double shift = (i % 2 == 0) ? std::log(1.05) : -std::log(1.05);
      old_logp[static_cast<size_t>(i)] =
          logp_of_action(row, 3, actions[static_cast<size_t>(i)]) - shift;
    }
  }
  const auto adv = rl::normalize_advantages({0.8, -0.5, 1.2, 0.3, -1.0});
  const std::vector<double> ret{0.5, 0.1, 0.9, 0.4, -0.3};
  rl::PPOConfig pc;
  const double err = fd_params_max_rel_err(net, obs, B, [&](nn::Net::Fwd& f) {
    return rl::ppo_loss(f.outputs, actions, old_logp, adv, ret, pc).total;
  });
  CHECK(err < 1e-5);
}

TEST_CASE("dqn loss gradients through a full network match finite differences") {
  nn::NetConfig nc;
  nc.obs_dim = 6;
  nc.n_outputs = 4;
  nc.latent_dim = 4;
  nc.hidden = {8};
  nc.head = nn::HeadKind::Srym;
  nc.seed = 13;
  nn::Net net(nc);

  Rng rng(9);
  const int B = 6;
  std::vector<double> obs(static_cast<size_t>(B) * 6);
  for (auto& x : obs) x = rng.uniform(-1.0, 1.0);
  const std::vector<int> actions{0, 3, 1, 2, 0, 1};
  const std::vector<double> y{0.3, -0.2, 0.5, 0.0, 1.1, -0.7};

  const double err = fd_params_max_rel_err(net, obs, B, [&](nn::Net::Fwd& f) {
    ad::Tensor qsa = ad::take_per_row(f.outputs, actions);
    ad::Tensor diff = ad::sub(qsa, ad::Tensor({B}, y));
    return ad::mean(ad::mul(diff, diff));
  });
  CHECK(err < 1e-5);
}

TEST_CASE("dqn targets reproduce the three-step golden") {
  rl::ReplayBuffer buf(8, 3, 0.99);
  buf.push({0.0}, 0, 1.0, {1.0}, false, 42);
  buf.push({1.0}, 1, 0.0, {2.0}, false, 42);
  buf.push({2.0}, 0, 1.0, {3.0}, false, 42);
  rl::ReplayBuffer::Sample smp;
  buf.window(0, smp);
  CHECK(smp.steps[0] == 3);
  CHECK(smp.term[0] == 0);
  CHECK(smp.r_acc[0] == doctest::Approx(1.9801).epsilon(1e-15));
  CHECK(smp.s_boot[0] == 3.0);
  auto y = rl::dqn_targets(smp, {2.0, 1.0}, 2, 0.99);
  CHECK(y[0] == doctest::Approx(3.920698).epsilon(1e-12));
  // zero bootstrap values leave just the reward sum
  auto y0 = rl::dqn_targets(smp, {0.0, 0.0}, 2, 0.99);
  CHECK(y0[0] == doctest::Approx(1.9801).epsilon(1e-15));
}

TEST_CASE("dqn target of a one-step terminal window is the raw reward") {
  rl::ReplayBuffer buf(4, 1, 0.9);
  buf.push({5.0}, 2, 0.7, {6.0}, true, 1);
  rl::ReplayBuffer::Sample smp;
  buf.window(0, smp);
  CHECK(smp.steps[0] == 1);
  CHECK(smp.term[0] == 1);
  auto y = rl::dqn_targets(smp, {100.0, 100.0, 100.0}, 3, 0.9);
  CHECK(y[0] == doctest::Approx(0.7).epsilon(1e-15));
}

TEST_CASE("n-step windows truncate at terminals and at episode boundaries") {
  rl::ReplayBuffer buf(8, 3, 0.5);
  buf.push({10.0}, 0, 1.0, {11.0}, false, 1);
  buf.push({11.0}, 1, 2.0, {12.0}, true, 1);
  buf.push({20.0}, 0, 4.0, {21.0}, false, 2);
  buf.push({21.0}, 1, 8.0, {22.0}, false, 2);
  buf.push({22.0}, 2, 16.0, {23.0}, false, 2);

  rl::ReplayBuffer::Sample w0;
  buf.window(0, w0);  // stops on the terminal at index 1
  CHECK(w0.steps[0] == 2);
  CHECK(w0.term[0] == 1);
  CHECK(w0.r_acc[0] == doctest::Approx(1.0 + 0.5 * 2.0).epsilon(1e-15));
  CHECK(w0.s_boot[0] == 12.0);

  rl::ReplayBuffer::Sample w1;
  buf.window(1, w1);  // starts on a terminal
  CHECK(w1.steps[0] == 1);
  CHECK(w1.term[0] == 1);
  CHECK(w1.s_boot[0] == 12.0);

  rl::ReplayBuffer::Sample w2;
  buf.window(2, w2);  // full window inside episode 2
  CHECK(w2.steps[0] == 3);
  CHECK(w2.term[0] == 0);
  CHECK(w2.r_acc[0] == doctest::Approx(4.0 + 0.5 * 8.0 + 0.25 * 16.0).epsilon(1e-15));
  CHECK(w2.s_boot[0] == 23.0);

  // episode change without a terminal also stops the window
  rl::ReplayBuffer buf2(8, 3, 0.5);
  buf2.push({1.0}, 0, 1.0, {2.0}, false, 7);
  buf2.push({2.0}, 0, 2.0, {3.0}, false, 7);
  buf2.push({9.0}, 0, 4.0, {10.0}, false, 8);
  rl::ReplayBuffer::Sample v0;
  buf2.window(0, v0);
  CHECK(v0.steps[0] == 2);
  CHECK(v0.term[0] == 0);
  CHECK(v0.r_acc[0] == doctest::Approx(1.0 + 0.5 * 2.0).epsilon(1e-15));
  CHECK(v0.s_boot[0] == 3.0);  // bootstraps from its own episode, not the next one
}

TEST_CASE("windows agree with a raw-transition oracle on a wrapped buffer") {
  rl::ReplayBuffer buf(16, 3, 0.9);
  Rng rng(123);
  uint64_t ep = 0;
  for (int i = 0; i < 40; ++i) {
    const bool done = rng.uniform() < 0.25;
    buf.push({static_cast<double>(i)}, i % 4, rng.uniform(-1.0, 1.0),
             {static_cast<double>(i) + 0.5}, done, ep);
    if (done) ++ep;
  }
  REQUIRE(buf.size() == 16);

  for (int start = 0; start <= buf.size() - buf.n_step(); ++start) {
    rl::ReplayBuffer::Sample w;
    buf.window(start, w);
    auto first = buf.raw(start);
    double acc = first.r, disc = 0.9;
    int steps = 1;
    bool term = first.done;
    std::vector<double> boot = *first.s2;
    for (int j = 1; j < 3 && !term; ++j) {
      auto nx = buf.raw(start + j);
      if (nx.episode != first.episode) break;
      acc += disc * nx.r;
      disc *= 0.9;
      ++steps;
      term = nx.done;
      boot = *nx.s2;
    }
    CHECK(w.steps[0] == steps);
    CHECK(w.term[0] == (term ? 1 : 0));
    CHECK(std::abs(w.r_acc[0] - acc) < 1e-12);
    CHECK(w.s_boot == boot);
    CHECK(w.s[0] == (*first.s)[0]);
    CHECK(w.a[0] == first.a);
  }

  Rng srng(7);
  auto smp = buf.sample(10, srng);
  for (int b = 0; b < 10; ++b) {
    const int start = smp.start[static_cast<size_t>(b)];
    CHECK(start >= 0);
    CHECK(start <= buf.size() - buf.n_step());
    rl::ReplayBuffer::Sample w;
    buf.window(start, w);
    CHECK(smp.a[static_cast<size_t>(b)] == w.a[0]);
    CHECK(smp.r_acc[static_cast<size_t>(b)] == w.r_acc[0]);
    CHECK(smp.steps[static_cast<size_t>(b)] == w.steps[0]);
  }
}

TEST_CASE("replay buffer rejects bad construction and stale sampling") {
  CHECK_THROWS_AS(rl::ReplayBuffer(0, 1, 0.9), std::invalid_argument);
  CHECK_THROWS_AS(rl::ReplayBuffer(8, 0, 0.9), std::invalid_argument);
  CHECK_THROWS_AS(rl::ReplayBuffer(2, 3, 0.9), std::invalid_argument);

  rl::ReplayBuffer buf(8, 3, 0.9);
  Rng rng(1);
  buf.push({0.0}, 0, 0.0, {1.0}, false, 0);
  buf.push({1.0}, 0, 0.0, {2.0}, false, 0);
  CHECK_THROWS_AS(buf.sample(1, rng), std::runtime_error);  // size < n_step
  buf.push({2.0}, 0, 0.0, {3.0}, false, 0);
  CHECK_THROWS_AS(buf.sample(4, rng), std::runtime_error);  // size < batch
  auto smp = buf.sample(3, rng);
  CHECK(smp.a.size() == 3);
  for (int b = 0; b < 3; ++b) CHECK(smp.start[static_cast<size_t>(b)] == 0);
}

TEST_CASE("epsilon-greedy picks the first argmax when greedy and is uniform when random") {
  Rng rng(11);
  CHECK(rl::epsilon_greedy({1.0, 3.0, 3.0, -2.0}, 0.0, rng) == 1);
  CHECK(rl::epsilon_greedy({-5.0, -1.0}, 0.0, rng) == 1);
  CHECK_THROWS_AS(rl::epsilon_greedy({}, 0.0, rng), std::invalid_argument);

  const int N = 100000;
  std::vector<int> counts(4, 0);
  for (int i = 0; i < N; ++i) ++counts[static_cast<size_t>(rl::epsilon_greedy({9.0, 1.0, 1.0, 1.0}, 1.0, rng))];
  const double expect = N / 4.0;
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - expect) * (c - expect) / expect;
  CHECK(chi2 < 16.27);  // chi-square 99.9% critical value, 3 dof
}

TEST_CASE("epsilon-greedy entropy endpoints and a midpoint value") {
  CHECK(rl::epsilon_greedy_entropy(1.0, 4) == doctest::Approx(std::log(4.0)).epsilon(1e-14));
  CHECK(rl::epsilon_greedy_entropy(0.0, 4) == 0.0);
  const double pg = 1.0 - 0.5 + 0.5 / 4.0, po = 0.5 / 4.0;
  const double want = -pg * std::log(pg) - 3.0 * po * std::log(po);
  CHECK(rl::epsilon_greedy_entropy(0.5, 4) == doctest::Approx(want).epsilon(1e-14));
}

TEST_CASE("grad probe reports zero variance on duplicated samples") {
  nn::NetConfig nc;
  nc.obs_dim = 5;
  nc.n_outputs = 3;
  nc.latent_dim = 4;
  nc.hidden = {6};
  nc.head = nn::HeadKind::Euclid;
  nc.seed = 3;
  nn::Net net(nc);

  Rng rng(2);
  std::vector<double> row(5);
  for (auto& x : row) x = rng.uniform(-1.0, 1.0);
  std::vector<double> obs;
  for (int i = 0; i < 4; ++i) obs.insert(obs.end(), row.begin(), row.end());

  auto stats = rl::grad_probe(net, obs, 5, 4, [](ad::Tape&, nn::Net::Fwd& f, int) {
    return ad::sum(f.outputs);
  });
  CHECK(stats.latent_mag > 0.0);
  CHECK(stats.encoder_mag > 0.0);
  CHECK(stats.latent_var <= 1e-28);
  CHECK(stats.encoder_var <= 1e-28);
}

TEST_CASE("grad probe matches the closed form for a linear model") {
  nn::NetConfig nc;
  nc.obs_dim = 3;
  nc.n_outputs = 2;
  nc.latent_dim = 4;
  nc.hidden = {};  // encoder is the single obs->latent affine layer
  nc.head = nn::HeadKind::Euclid;
  nc.seed = 9;
  nn::Net net(nc);

  Rng rng(21);
  const int n = 6;
  std::vector<double> obs(static_cast<size_t>(n) * 3);
  for (auto& x : obs) x = rng.uniform(-2.0, 2.0);

  auto stats = rl::grad_probe(net, obs, 3, n, [](ad::Tape&, nn::Net::Fwd& f, int) {
    return ad::sum(f.outputs);
  });

  // dL/dlatent_j = sum_o headW[o][j], identical for every sample
  const auto& W = net.params().by_name("head.W").value;
  std::vector<double> v(4, 0.0);
  for (int o = 0; o < 2; ++o)
    for (int j = 0; j < 4; ++j) v[static_cast<size_t>(j)] += W[static_cast<size_t>(o) * 4 + j];
  double vn = 0.0;
  for (double x : v) vn += x * x;
  vn = std::sqrt(vn);
  CHECK(stats.latent_mag == doctest::Approx(vn).epsilon(1e-12));
  CHECK(stats.latent_var <= 1e-24);

  // encoder grads are outer(v, x) plus v for the bias: norm = |v|*sqrt(1+|x|^2)
  std::vector<double> norms(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    double xs = 0.0;
    for (int j = 0; j < 3; ++j) {
      const double x = obs[static_cast<size_t>(i) * 3 + j];
      xs += x * x;
    }
    norms[static_cast<size_t>(i)] = vn * std::sqrt(1.0 + xs);
  }
  double mu = 0.0;
  for (double x : norms) mu += x;
  mu /= n;
  double var = 0.0;
  for (double x : norms) var += (x - mu) * (x - mu);
  var /= n;
  CHECK(stats.encoder_mag == doctest::Approx(mu).epsilon(1e-10));
  CHECK(stats.encoder_var == doctest::Approx(var).epsilon(1e-8));
}

TEST_CASE("grad probe throws when the loss never reaches the latent cut") {
  nn::NetConfig nc;
  nc.obs_dim = 4;
  nc.n_outputs = 2;
  nc.latent_dim = 3;
  nc.hidden = {5};
  nc.head = nn::HeadKind::Euclid;
  nc.seed = 1;
  nn::Net net(nc);
  std::vector<double> obs(4, 0.5);
  try {
    rl::grad_probe(net, obs, 4, 1, [](ad::Tape&, nn::Net::Fwd& f, int) {
      return ad::sum(ad::mul(f.leaves[0], f.leaves[0]));
    });
    CHECK(false);
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("latent") != std::string::npos);
  }
}

TEST_CASE("metrics writer emits schema-ordered JSONL and keeps records in memory") {
  rl::MetricsRecord r;
  r.update = 3;
  r.env_steps = 768;
  r.split = "train";
  r.mean_return = 0.5;
  r.entropy = 1.25;
  r.grad_latent_mag = 0.125;
  r.grad_latent_var = 0.0625;
  r.grad_encoder_mag = 0.03125;
  r.grad_encoder_var = 0.015625;
  r.delta_rel = 0.75;
  r.wall_ms = 12;
  CHECK(rl::MetricsWriter::to_json_line(r) ==
        "{\"update\":3,\"env_steps\":768,\"split\":\"train\",\"mean_return\":0.5,"
        "\"entropy\":1.25,\"grad_latent_mag\":0.125,\"grad_latent_var\":0.0625,"
        "\"grad_encoder_mag\":0.03125,\"grad_encoder_var\":0.015625,"
        "\"delta_rel\":0.75,\"wall_ms\":12}");

  const std::string path = "test_rl_metrics.jsonl";
  {
    rl::MetricsWriter w(path);
    w.write(r);
    r.update = 4;
    r.split = "test";
    w.write(r);
    CHECK(w.records().size() == 2);
    CHECK(w.records()[0].update == 3);
    CHECK(w.records()[1].split == "test");
  }
  std::ifstream in(path);
  REQUIRE(in.good());
  std::string l1, l2, extra;
  std::getline(in, l1);
  std::getline(in, l2);
  CHECK(!std::getline(in, extra));
  r.update = 3;
  r.split = "train";
  CHECK(l1 == rl::MetricsWriter::to_json_line(r));
  r.update = 4;
  r.split = "test";
  CHECK(l2 == rl::MetricsWriter::to_json_line(r));
  std::remove(path.c_str());
}

TEST_CASE("vecenv schedules levels deterministically and tags episodes") {
  envs::GridConfig g;
  g.size = 5;
  g.n_hazards = 2;
  g.n_collectibles = 1;
  g.max_steps = 8;
  rl::VecEnv a(3, {0, 1, 2, 3, 4}, 99, g);
  rl::VecEnv b(3, {0, 1, 2, 3, 4}, 99, g);
  CHECK(a.obs() == b.obs());
  CHECK(a.obs_dim() == 5 * 25);

  Rng rng(4);
  uint64_t tag0 = a.episode_tag(0);
  bool saw_reset = false;
  for (int s = 0; s < 60; ++s) {
    std::vector<int> acts(3);
    for (auto& x : acts) x = rng.uniform_int(4);
    auto ra = a.step(acts);
    auto rb = b.step(acts);
    CHECK(ra.rewards == rb.rewards);
    CHECK(ra.dones == rb.dones);
    CHECK(a.obs() == b.obs());
    if (ra.dones[0]) {
      CHECK(a.episode_tag(0) != tag0);
      tag0 = a.episode_tag(0);
      saw_reset = true;
    }
  }
  CHECK(saw_reset);  // 8-step cap guarantees episode turnover
  auto ca = a.take_completed();
  auto cb = b.take_completed();
  CHECK(ca == cb);
  CHECK(!ca.empty());
  CHECK(a.take_completed().empty());
  // distinct envs never share a tag
  CHECK(a.episode_tag(0) != a.episode_tag(1));
  CHECK(a.episode_tag(1) != a.episode_tag(2));
}

TEST_CASE("dqn target wrapper matches the explicit q_boot form and freezes with the target") {
  nn::NetConfig nc;
  nc.obs_dim = 4;
  nc.n_outputs = 3;
  nc.latent_dim = 4;
  nc.hidden = {6};
  nc.head = nn::HeadKind::Euclid;
  nc.seed = 17;
  nn::Net target(nc);

  rl::ReplayBuffer buf(16, 3, 0.97);
  Rng rng(33);
  uint64_t ep = 0;
  for (int i = 0; i < 12; ++i) {
    std::vector<double> s(4), s2(4);
    for (auto& x : s) x = rng.uniform(-1.0, 1.0);
    for (auto& x : s2) x = rng.uniform(-1.0, 1.0);
    const bool done = rng.uniform() < 0.2;
    buf.push(s, rng.uniform_int(3), rng.uniform(-1.0, 1.0), s2, done, ep);
    if (done) ++ep;
  }
  Rng srng(8);
  auto smp = buf.sample(6, srng);

  auto y1 = rl::dqn_targets(smp, target, 0.97);
  {
    ad::Tape tape;
    auto fwd = target.forward(tape, smp.s_boot, 6, false);
    auto y2 = rl::dqn_targets(smp, fwd.outputs.data(), 3, 0.97);
    CHECK(y1 == y2);
  }
  auto y_again = rl::dqn_targets(smp, target, 0.97);
  CHECK(y1 == y_again);  // frozen target => frozen targets

  bool any_nonterminal = false;
  for (auto t : smp.term) any_nonterminal = any_nonterminal || (t == 0);
  REQUIRE(any_nonterminal);
  for (auto& x : target.params().by_name("head.b").value) x += 0.5;
  auto y3 = rl::dqn_targets(smp, target, 0.97);
  bool changed = false;
  for (size_t i = 0; i < y1.size(); ++i) changed = changed || (y1[i] != y3[i]);
  CHECK(changed);
}

namespace {

rl::TrainConfig tiny_ppo_config() {
  rl::TrainConfig tc;
  tc.head = nn::HeadKind::Srym;
  tc.latent_dim = 8;
  tc.hidden = {16};
  tc.n_envs = 2;
  tc.rollout_len = 8;
  tc.updates = 6;
  tc.train_levels = 4;
  tc.test_levels = 4;
  tc.eval_every = 3;
  tc.eval_episodes = 2;
  tc.delta_every = 2;
  tc.delta_samples = 8;
  tc.probe_samples = 3;
  tc.seed = 17;
  tc.grid.size = 5;
  tc.grid.n_hazards = 2;
  tc.grid.n_collectibles = 1;
  tc.grid.max_steps = 16;
  tc.ppo.minibatch = 8;
  return tc;
}

bool records_equal_ignoring_wall(const std::vector<rl::MetricsRecord>& a,
                                 const std::vector<rl::MetricsRecord>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    rl::MetricsRecord x = a[i], y = b[i];
    x.wall_ms = 0;
    y.wall_ms = 0;
    if (rl::MetricsWriter::to_json_line(x) != rl::MetricsWriter::to_json_line(y)) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("ppo training is bit-deterministic across repeated runs") {
  const auto tc = tiny_ppo_config();
  rl::MetricsWriter m1(""), m2("");
  auto r1 = rl::train_ppo(tc, m1);
  auto r2 = rl::train_ppo(tc, m2);
  CHECK(r1.final_train_return == r2.final_train_return);
  CHECK(r1.final_test_return == r2.final_test_return);
  CHECK(r1.env_steps == 6 * 8 * 2);
  CHECK(!m1.records().empty());
  CHECK(records_equal_ignoring_wall(m1.records(), m2.records()));
  // schema spot checks
  const auto& first = m1.records().front();
  CHECK(first.update == 1);
  CHECK(first.split == "train");
  CHECK(first.env_steps == 16);
  bool saw_test = false;
  for (const auto& rec : m1.records()) saw_test = saw_test || rec.split == "test";
  CHECK(saw_test);
}

TEST_CASE("dqn training is bit-deterministic across repeated runs") {
  auto tc = tiny_ppo_config();
  tc.dqn.batch = 8;
  tc.dqn.capacity = 256;
  tc.dqn.n_step = 3;
  tc.dqn.grad_steps = 1;
  tc.dqn.target_sync_every = 2;
  rl::MetricsWriter m1(""), m2("");
  auto r1 = rl::train_dqn(tc, m1);
  auto r2 = rl::train_dqn(tc, m2);
  CHECK(r1.final_train_return == r2.final_train_return);
  CHECK(r1.final_test_return == r2.final_test_return);
  CHECK(records_equal_ignoring_wall(m1.records(), m2.records()));
}

TEST_CASE("zero learning rate means extra updates change nothing the net does") {
  auto tc = tiny_ppo_config();
  tc.head = nn::HeadKind::Euclid;  // no normalization state, so equality is exact
  tc.lr = 0.0;
  tc.eval_every = 0;
  tc.updates = 2;
  rl::MetricsWriter m1("");
  auto short_run = rl::train_ppo(tc, m1);
  tc.updates = 5;
  rl::MetricsWriter m2("");
  auto long_run = rl::train_ppo(tc, m2);
  CHECK(short_run.final_train_return == long_run.final_train_return);
  CHECK(short_run.final_test_return == long_run.final_test_return);
}

TEST_CASE("an absurd learning rate raises DivergenceError in both trainers") {
  auto tc = tiny_ppo_config();
  tc.head = nn::HeadKind::Euclid;
  tc.lr = 1e150;
  tc.updates = 4;
  tc.eval_every = 0;
  tc.delta_every = 0;
  tc.probe_samples = 0;
  {
    rl::MetricsWriter m("");
    CHECK_THROWS_AS(rl::train_ppo(tc, m), rl::DivergenceError);
  }
  tc.dqn.batch = 8;
  tc.dqn.capacity = 256;
  tc.dqn.grad_steps = 1;
  {
    rl::MetricsWriter m("");
    CHECK_THROWS_AS(rl::train_dqn(tc, m), rl::DivergenceError);
  }
}

TEST_CASE("ppo learns the empty 3x3 grid") {
  rl::TrainConfig tc;
  tc.head = nn::HeadKind::Euclid;
  tc.latent_dim = 16;
  tc.hidden = {32};
  tc.lr = 2e-3;
  tc.n_envs = 4;
  tc.rollout_len = 16;
  tc.updates = 150;
  tc.train_levels = 4;
  tc.test_levels = 4;
  tc.eval_every = 0;
  tc.delta_every = 0;
  tc.probe_samples = 0;
  tc.seed = 1;
  tc.grid.size = 3;
  tc.grid.wall_prob = 0.0;
  tc.grid.n_hazards = 0;
  tc.grid.n_collectibles = 0;
  tc.grid.max_steps = 12;
  rl::MetricsWriter m("");
  auto res = rl::train_ppo(tc, m);
  CHECK(res.final_train_return >= 0.9);
}

TEST_CASE("dqn learns the empty 3x3 grid") {
  rl::TrainConfig tc;
  tc.head = nn::HeadKind::Euclid;
  tc.latent_dim = 16;
  tc.hidden = {32};
  tc.lr = 1e-3;
  tc.n_envs = 4;
  tc.rollout_len = 16;
  tc.updates = 150;
  tc.train_levels = 4;
  tc.test_levels = 4;
  tc.eval_every = 0;
  tc.delta_every = 0;
  tc.probe_samples = 0;
  tc.seed = 2;
  tc.grid.size = 3;
  tc.grid.wall_prob = 0.0;
  tc.grid.n_hazards = 0;
  tc.grid.n_collectibles = 0;
  tc.grid.max_steps = 12;
  tc.dqn.batch = 64;
  tc.dqn.capacity = 4000;
  tc.dqn.grad_steps = 2;
  tc.dqn.target_sync_every = 5;
  tc.dqn.eps_anneal_frac = 0.4;
  rl::MetricsWriter m("");
  auto res = rl::train_dqn(tc, m);
  CHECK(res.final_train_return >= 0.9);
}
