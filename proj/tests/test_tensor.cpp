#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "hyprl/rng.hpp"
#include "hyprl/tensor.hpp"

using namespace hyprl;
using namespace hyprl::ad;

namespace {

std::vector<double> random_vec(Rng& rng, size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace

TEST_CASE("construction and basic accessors") {
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.size() == 6);
  CHECK(t.at(4) == 5.0);
  CHECK(Tensor::scalar(2.5).item() == 2.5);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor({0}, {}), std::invalid_argument);
  CHECK_THROWS_AS(t.item(), std::invalid_argument);
}

TEST_CASE("matmul against identity leaves input unchanged") {
  Tensor a({2, 3}, {1, -2, 3, 0.5, 4, -1});
  Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor r = matmul(a, eye);
  for (int i = 0; i < 6; ++i) CHECK(r.at(i) == a.at(i));
}

TEST_CASE("shape mismatch errors name the op and both shapes") {
  Tensor a({2, 3}, std::vector<double>(6, 1.0));
  Tensor b({3, 2}, std::vector<double>(6, 1.0));
  try {
    add(a, b);
    FAIL("expected throw");
  } catch (const std::invalid_argument& e) {
    std::string msg = e.what();
    CHECK(msg.find("add") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[3,2]") != std::string::npos);
  }
  CHECK_THROWS_AS(matmul(a, a), std::invalid_argument);
}

TEST_CASE("relu zeroes gradient for negative inputs") {
  Tape tape;
  Tensor x = tape.leaf({4}, {-1.0, 2.0, -0.5, 3.0});
  tape.backward(sum(relu(x)));
  auto g = tape.grad(x);
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 1.0);
  CHECK(g[2] == 0.0);
  CHECK(g[3] == 1.0);
}

TEST_CASE("l2_norm value and gradient at the 3-4-5 point") {
  Tape tape;
  Tensor x = tape.leaf({2}, {3.0, 4.0});
  Tensor n = l2_norm(x);
  CHECK(n.item() == doctest::Approx(5.0).epsilon(1e-15));
  tape.backward(n);
  auto g = tape.grad(x);
  CHECK(g[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(g[1] == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("sum backward broadcasts ones; tanh'(0) = 1") {
  Tape tape;
  Tensor x = tape.leaf({3}, {0.0, 1.0, -2.0});
  tape.backward(sum(x));
  for (double g : tape.grad(x)) CHECK(g == 1.0);

  Tape t2;
  Tensor z = t2.leaf({}, {0.0});
  t2.backward(tanh(z));
  CHECK(t2.grad(z)[0] == 1.0);
}

TEST_CASE("backward rejects non-scalar roots and double invocation") {
  Tape tape;
  Tensor x = tape.leaf({2}, {1.0, 2.0});
  Tensor y = mul(x, x);
  CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
  Tensor s = sum(y);
  tape.backward(s);
  CHECK_THROWS_AS(tape.backward(s), std::runtime_error);
}

TEST_CASE("mixing tensors from two tapes is an error") {
  Tape t1, t2;
  Tensor a = t1.leaf({2}, {1.0, 2.0});
  Tensor b = t2.leaf({2}, {3.0, 4.0});
  CHECK_THROWS_AS(add(a, b), std::invalid_argument);
}

TEST_CASE("scalar broadcast in binary ops, gradient sums over the big side") {
  Tape tape;
  Tensor s = tape.leaf({}, {2.0});
  Tensor v = tape.leaf({3}, {1.0, 2.0, 3.0});
  Tensor r = mul(v, s);
  CHECK(r.at(2) == 6.0);
  tape.backward(sum(r));
  CHECK(tape.grad(s)[0] == doctest::Approx(6.0));
  auto gv = tape.grad(v);
  for (double g : gv) CHECK(g == 2.0);
}

TEST_CASE("minimum ties route gradient to the first argument") {
  Tape tape;
  Tensor a = tape.leaf({2}, {1.0, 5.0});
  Tensor b = tape.leaf({2}, {1.0, 2.0});
  tape.backward(sum(minimum(a, b)));
  auto ga = tape.grad(a);
  auto gb = tape.grad(b);
  CHECK(ga[0] == 1.0);
  CHECK(gb[0] == 0.0);
  CHECK(ga[1] == 0.0);
  CHECK(gb[1] == 1.0);
}

TEST_CASE("log_softmax rows exponentiate to probability vectors") {
  Tensor x({2, 3}, {1.0, 2.0, 3.0, -1.0, 0.0, 1.0});
  Tensor lp = log_softmax(x);
  for (int i = 0; i < 2; ++i) {
    double s = 0.0;
    for (int j = 0; j < 3; ++j) s += std::exp(lp.at(i * 3 + j));
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("gradient accumulation when one tensor feeds two ops") {
  Tape tape;
  Tensor x = tape.leaf({2}, {1.5, -0.5});
  Tensor y = add(mul(x, x), scale(x, 3.0));  // x^2 + 3x, d/dx = 2x + 3
  tape.backward(sum(y));
  auto g = tape.grad(x);
  CHECK(g[0] == doctest::Approx(6.0).epsilon(1e-15));
  CHECK(g[1] == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("backward is linear: grad(f+g) = grad(f) + grad(g)") {
  Rng rng(42);
  auto x = random_vec(rng, 5, -1.0, 1.0);
  auto run = [&](int which) {
    Tape tape;
    Tensor in = tape.leaf({5}, x);
    Tensor f = sum(mul(tanh(in), in));
    Tensor g = mean(exp(scale(in, 0.5)));
    Tensor root = which == 0 ? f : (which == 1 ? g : add(f, g));
    tape.backward(root);
    return tape.grad(in);
  };
  auto gf = run(0), gg = run(1), gfg = run(2);
  for (int i = 0; i < 5; ++i) CHECK(gfg[i] == doctest::Approx(gf[i] + gg[i]).epsilon(1e-12));
}

TEST_CASE("repeated forward+backward is bit-identical") {
  Rng rng(7);
  auto xv = random_vec(rng, 12, -2.0, 2.0);
  auto wv = random_vec(rng, 12, -1.0, 1.0);
  auto run = [&]() {
    Tape tape;
    Tensor x = tape.leaf({3, 4}, xv);
    Tensor w = tape.leaf({4, 3}, wv);
    Tensor h = tanh(matmul(x, w));
    tape.backward(mean(mul(h, h)));
    auto gx = tape.grad(x);
    auto gw = tape.grad(w);
    gx.insert(gx.end(), gw.begin(), gw.end());
    return gx;
  };
  auto a = run(), b = run();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("grad_check passes on composite elementwise graphs") {
  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    auto x = random_vec(rng, 6, -1.5, 1.5);
    auto res = grad_check(
        [](Tape& t, const Tensor& in) {
          Tensor a = tanh(in);
          Tensor b = exp(scale(in, 0.3));
          Tensor c = div(mul(a, b), add_scalar(mul(in, in), 1.0));
          return sum(c);
        },
        {6}, x);
    CHECK(res.max_rel_err < 1e-6);
  }
}

TEST_CASE("grad_check passes on matmul / reduction / row-op graphs") {
  Rng rng(29);
  auto wv = random_vec(rng, 12, -0.8, 0.8);
  auto vv = random_vec(rng, 4, -0.5, 0.5);
  auto sv = random_vec(rng, 3, 0.5, 1.5);
  Tensor W({4, 3}, wv);
  Tensor v({4}, vv);
  Tensor s({3}, sv);
  for (int trial = 0; trial < 50; ++trial) {
    auto x = random_vec(rng, 12, -1.0, 1.0);
    auto res = grad_check(
        [&](Tape& t, const Tensor& in) {
          Tensor m = add_rowvec(in, v);          // [3,4]
          Tensor h = matmul(m, W);               // [3,3]
          Tensor r = mul_rows(h, s);             // [3,3]
          Tensor q = sum_rows(mul(r, r));        // [3]
          return add(l2_norm(in), mean(sqrt(add_scalar(q, 1.0))));
        },
        {3, 4}, x);
    CHECK(res.max_rel_err < 1e-6);
  }
}

TEST_CASE("grad_check passes on log_softmax / take / stack / slice graphs") {
  Rng rng(31);
  std::vector<int> idx = {2, 0, 3};
  for (int trial = 0; trial < 50; ++trial) {
    auto x = random_vec(rng, 12, -1.0, 1.0);
    auto res = grad_check(
        [&](Tape& t, const Tensor& in) {
          Tensor lp = log_softmax(in);           // [3,4]
          Tensor taken = take_per_row(lp, idx);  // [3]
          Tensor sl = slice_cols(in, 1, 3);      // [3,2]
          Tensor st = stack_cols({taken, sum_rows(sl)});  // [3,2]
          Tensor nr = narrow(reshape(st, {6}), 1, 5);
          return mean(mul(nr, nr));
        },
        {3, 4}, x);
    CHECK(res.max_rel_err < 1e-6);
  }
}

TEST_CASE("gather_rows copies rows and scatter-adds gradients for repeats") {
  Tape tape;
  Tensor a = tape.leaf({3, 2}, {1.0, 2.0, 3.0, 4.0, 5.0, 6.0});
  Tensor g = gather_rows(a, {2, 0, 2, 1});
  CHECK(g.shape() == std::vector<int>{4, 2});
  CHECK(g.data() == std::vector<double>{5.0, 6.0, 1.0, 2.0, 5.0, 6.0, 3.0, 4.0});
  // weight row p by (p+1): grad of row 2 collects weights 1 and 3, row 0 gets 2, row 1 gets 4
  Tensor w({4}, {1.0, 2.0, 3.0, 4.0});
  tape.backward(sum(mul_rows(g, w)));
  CHECK(tape.grad(a) == std::vector<double>{2.0, 2.0, 4.0, 4.0, 4.0, 4.0});

  CHECK_THROWS_AS((void)gather_rows(a, {3}), std::invalid_argument);
  CHECK_THROWS_AS((void)gather_rows(a, {-1}), std::invalid_argument);
}

TEST_CASE("grad_check passes on gather_rows graphs") {
  Rng rng(41);
  std::vector<int> idx = {1, 3, 1, 0, 2, 2};
  for (int trial = 0; trial < 50; ++trial) {
    auto x = random_vec(rng, 8, -1.0, 1.0);
    auto res = grad_check(
        [&](Tape& t, const Tensor& in) {
          Tensor g = gather_rows(in, idx);  // [6,2]
          return mean(mul(g, g));
        },
        {4, 2}, x);
    CHECK(res.max_rel_err < 1e-6);
  }
}

TEST_CASE("grad_check covers inverse-trig and guarded unaries") {
  Rng rng(37);
  for (int trial = 0; trial < 50; ++trial) {
    auto x = random_vec(rng, 5, -2.0, 2.0);
    auto res = grad_check(
        [](Tape& t, const Tensor& in) {
          Tensor inside = scale(tanh(in), 0.9);  // safely in (-0.9, 0.9)
          Tensor a = atanh(inside);
          Tensor b = asinh(in);
          Tensor c = acosh(add_scalar(mul(in, in), 1.5));
          Tensor d = tanhc(in);
          Tensor e = atanhc(inside);
          return sum(add(add(mul(a, d), mul(b, e)), c));
        },
        {5}, x);
    CHECK(res.max_rel_err < 1e-6);
  }
}

TEST_CASE("tanhc and atanhc are exact through the series guard") {
  Tape tape;
  Tensor x = tape.leaf({3}, {1e-9, -5e-10, 1e-12});
  Tensor y = tanhc(x);
  for (int i = 0; i < 3; ++i) CHECK(y.at(i) == doctest::Approx(1.0).epsilon(1e-15));
  tape.backward(sum(y));
  auto g = tape.grad(x);
  CHECK(g[0] == doctest::Approx(-2.0 * 1e-9 / 3.0).epsilon(1e-9));

  Tape t2;
  Tensor z = t2.leaf({2}, {1e-9, -1e-10});
  Tensor w = atanhc(z);
  CHECK(w.at(0) == doctest::Approx(1.0).epsilon(1e-15));
  t2.backward(sum(w));
  CHECK(t2.grad(z)[0] == doctest::Approx(2.0 * 1e-9 / 3.0).epsilon(1e-9));
}

TEST_CASE("clamp blocks gradient outside the active range") {
  Tape tape;
  Tensor x = tape.leaf({3}, {-2.0, 0.5, 3.0});
  tape.backward(sum(clamp(x, -1.0, 1.0)));
  auto g = tape.grad(x);
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 1.0);
  CHECK(g[2] == 0.0);
}

TEST_CASE("tile_rows and transpose round-trip gradients") {
  Rng rng(41);
  for (int trial = 0; trial < 30; ++trial) {
    auto x = random_vec(rng, 4, -1.0, 1.0);
    auto res = grad_check(
        [](Tape& t, const Tensor& in) {
          Tensor tiled = tile_rows(in, 3);        // [3,4]
          Tensor tt = transpose(tiled);           // [4,3]
          return sum(mul(tt, tt));
        },
        {4}, x);
    CHECK(res.max_rel_err < 1e-6);
  }
}

TEST_CASE("grads flow to every leaf of a two-leaf graph") {
  Tape tape;
  Tensor a = tape.leaf({2}, {1.0, 2.0});
  Tensor b = tape.leaf({2}, {3.0, 4.0});
  tape.backward(sum(mul(a, b)));
  CHECK(tape.grad(a) == std::vector<double>{3.0, 4.0});
  CHECK(tape.grad(b) == std::vector<double>{1.0, 2.0});
}

TEST_CASE("constants do not get gradients, tensors off-tape stay constant") {
  Tape tape;
  Tensor x = tape.leaf({2}, {1.0, 2.0});
  Tensor c({2}, {5.0, 6.0});
  Tensor y = mul(x, c);
  tape.backward(sum(y));
  CHECK(tape.grad(x) == std::vector<double>{5.0, 6.0});
  CHECK(!c.on_tape());
  CHECK(!tape.has_grad(c));
}
