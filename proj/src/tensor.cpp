#include "hyprl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace hyprl::ad {

namespace {

int64_t shape_size(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor shape has non-positive extent " + shape_str(shape));
    n *= d;
  }
  return n;
}

Tape* tape_of(std::initializer_list<const Tensor*> ts) {
  Tape* tp = nullptr;
  for (const Tensor* t : ts) {
    if (!t->on_tape()) continue;
    if (tp != nullptr && tp != t->tape())
      throw std::invalid_argument("op mixes tensors recorded on different tapes");
    tp = t->tape();
  }
  return tp;
}

Tensor finish(Tape* tp, Tensor out, std::function<void(Tape&, int)> backprop) {
  if (tp == nullptr) return out;
  int id = tp->record(out.size(), std::move(backprop));
  return tp->attach(std::move(out), id);
}

void require_2d(const char* op, const Tensor& t) {
  if (t.shape().size() != 2)
    throw std::invalid_argument(std::string(op) + ": expected 2-D tensor, got " + shape_str(t.shape()));
}

// Shared elementwise-binary plumbing. dfa/dfb give local derivatives from
// (a_i, b_i); a size-1 operand broadcasts and its gradient contributions sum.
template <class F, class DA, class DB>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, F f, DA dfa, DB dfb) {
  bool as = a.is_scalar(), bs = b.is_scalar();
  if (!as && !bs && a.shape() != b.shape())
    throw std::invalid_argument(std::string(name) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  const Tensor& big = as ? b : a;
  int64_t n = big.size();
  std::vector<double> out(static_cast<size_t>(n));
  const auto& av = a.data();
  const auto& bv = b.data();
  for (int64_t i = 0; i < n; ++i) out[i] = f(av[as ? 0 : i], bv[bs ? 0 : i]);

  Tape* tp = tape_of({&a, &b});
  Tensor r(big.shape(), std::move(out));
  if (tp == nullptr) return r;
  auto ad = a.storage();
  auto bd = b.storage();
  int an = a.on_tape() ? a.node() : -1;
  int bn = b.on_tape() ? b.node() : -1;
  int64_t asz = a.size(), bsz = b.size();
  return finish(tp, std::move(r), [=](Tape& t, int self) {
    const auto* g = t.grad_if_any(self);
    if (g == nullptr) return;
    if (an >= 0) {
      auto& ga = t.grad_buf(an, asz);
      for (int64_t i = 0; i < n; ++i)
        ga[as ? 0 : i] += (*g)[i] * dfa((*ad)[as ? 0 : i], (*bd)[bs ? 0 : i]);
    }
    if (bn >= 0) {
      auto& gb = t.grad_buf(bn, bsz);
      for (int64_t i = 0; i < n; ++i)
        gb[bs ? 0 : i] += (*g)[i] * dfb((*ad)[as ? 0 : i], (*bd)[bs ? 0 : i]);
    }
  });
}

// Elementwise unary; derivative receives (x_i, y_i).
template <class F, class D>
Tensor unary_op(const Tensor& a, F f, D df) {
  int64_t n = a.size();
  std::vector<double> out(static_cast<size_t>(n));
  const auto& av = a.data();
  for (int64_t i = 0; i < n; ++i) out[i] = f(av[i]);

  Tensor r(a.shape(), std::move(out));
  if (!a.on_tape()) return r;
  auto ad = a.storage();
  auto rd = r.storage();
  int an = a.node();
  return finish(a.tape(), std::move(r), [=](Tape& t, int self) {
    const auto* g = t.grad_if_any(self);
    if (g == nullptr) return;
    auto& ga = t.grad_buf(an, n);
    for (int64_t i = 0; i < n; ++i) ga[i] += (*g)[i] * df((*ad)[i], (*rd)[i]);
  });
}

}  // namespace

std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data) {
  int64_t n = shape_size(shape);
  if (n != static_cast<int64_t>(data.size()))
    throw std::invalid_argument("tensor data size " + std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape));
  shape_ = std::move(shape);
  data_ = std::make_shared<const std::vector<double>>(std::move(data));
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

Tensor Tensor::zeros(std::vector<int> shape) {
  auto n = static_cast<size_t>(shape_size(shape));
  return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(std::vector<int> shape, double v) {
  auto n = static_cast<size_t>(shape_size(shape));
  return Tensor(std::move(shape), std::vector<double>(n, v));
}

double Tensor::item() const {
  if (size() != 1) throw std::invalid_argument("item() on non-scalar tensor " + shape_str(shape_));
  return (*data_)[0];
}

Tensor Tape::leaf(std::vector<int> shape, std::vector<double> data) {
  Tensor t(std::move(shape), std::move(data));
  int id = record(t.size(), nullptr);
  return attach(std::move(t), id);
}

Tensor Tape::leaf(const Tensor& constant) {
  return leaf(constant.shape(), constant.data());
}

int Tape::record(int64_t size, std::function<void(Tape&, int)> backprop) {
  nodes_.push_back(Node{size, {}, std::move(backprop)});
  return static_cast<int>(nodes_.size()) - 1;
}

Tensor Tape::attach(Tensor t, int node) const {
  t.tape_ = const_cast<Tape*>(this);
  t.node_ = node;
  return t;
}

std::vector<double>& Tape::grad_buf(int node, int64_t size) {
  auto& n = nodes_.at(static_cast<size_t>(node));
  if (n.grad.empty()) n.grad.assign(static_cast<size_t>(size), 0.0);
  return n.grad;
}

const std::vector<double>* Tape::grad_if_any(int node) const {
  const auto& n = nodes_.at(static_cast<size_t>(node));
  return n.grad.empty() ? nullptr : &n.grad;
}

void Tape::backward(const Tensor& root) {
  if (!root.on_tape() || root.tape() != this)
    throw std::invalid_argument("backward: root tensor is not on this tape");
  if (root.size() != 1)
    throw std::invalid_argument("backward: root must be scalar, got " + shape_str(root.shape()));
  if (ran_backward_) throw std::runtime_error("backward already ran on this tape");
  ran_backward_ = true;
  grad_buf(root.node(), 1)[0] += 1.0;
  for (int i = root.node(); i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.grad.empty() || !n.backprop) continue;
    n.backprop(*this, i);
  }
}

bool Tape::has_grad(const Tensor& t) const {
  return t.on_tape() && t.tape() == this && grad_if_any(t.node()) != nullptr;
}

std::vector<double> Tape::grad(const Tensor& t) const {
  if (!t.on_tape() || t.tape() != this)
    throw std::invalid_argument("grad: tensor is not on this tape");
  const auto* g = grad_if_any(t.node());
  if (g == nullptr)
    throw std::runtime_error("grad: no gradient reached this tensor (run backward first)");
  return *g;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op("add", a, b, [](double x, double y) { return x + y; },
                   [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op("sub", a, b, [](double x, double y) { return x - y; },
                   [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op("mul", a, b, [](double x, double y) { return x * y; },
                   [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op("div", a, b, [](double x, double y) { return x / y; },
                   [](double, double y) { return 1.0 / y; },
                   [](double x, double y) { return -x / (y * y); });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  // Ties route the gradient to the first argument.
  return binary_op("minimum", a, b, [](double x, double y) { return x <= y ? x : y; },
                   [](double x, double y) { return x <= y ? 1.0 : 0.0; },
                   [](double x, double y) { return x <= y ? 0.0 : 1.0; });
}

Tensor scale(const Tensor& a, double k) {
  return unary_op(a, [k](double x) { return k * x; }, [k](double, double) { return k; });
}

Tensor add_scalar(const Tensor& a, double k) {
  return unary_op(a, [k](double x) { return x + k; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) {
  return unary_op(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor relu(const Tensor& a) {
  return unary_op(a, [](double x) { return x > 0.0 ? x : 0.0; },
                  [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& a) {
  return unary_op(a, [](double x) { return std::tanh(x); },
                  [](double, double y) { return 1.0 - y * y; });
}

Tensor exp(const Tensor& a) {
  return unary_op(a, [](double x) { return std::exp(x); },
                  [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary_op(a, [](double x) { return std::log(x); },
                  [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
  return unary_op(a, [](double x) { return std::sqrt(x); },
                  [](double, double y) { return 0.5 / y; });
}

Tensor atanh(const Tensor& a) {
  return unary_op(a, [](double x) { return std::atanh(x); },
                  [](double x, double) { return 1.0 / (1.0 - x * x); });
}

Tensor asinh(const Tensor& a) {
  return unary_op(a, [](double x) { return std::asinh(x); },
                  [](double x, double) { return 1.0 / std::sqrt(1.0 + x * x); });
}

Tensor acosh(const Tensor& a) {
  return unary_op(a, [](double x) { return std::acosh(x); },
                  [](double x, double) { return 1.0 / std::sqrt(x * x - 1.0); });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  return unary_op(a, [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
                  [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Tensor tanhc(const Tensor& a) {
  return unary_op(a,
                  [](double x) { return std::abs(x) < 1e-8 ? 1.0 - x * x / 3.0 : std::tanh(x) / x; },
                  [](double x, double) {
                    if (std::abs(x) < 1e-8) return -2.0 * x / 3.0;
                    double t = std::tanh(x);
                    return ((1.0 - t * t) * x - t) / (x * x);
                  });
}

Tensor atanhc(const Tensor& a) {
  return unary_op(a,
                  [](double x) { return std::abs(x) < 1e-8 ? 1.0 + x * x / 3.0 : std::atanh(x) / x; },
                  [](double x, double) {
                    if (std::abs(x) < 1e-8) return 2.0 * x / 3.0;
                    return (x / (1.0 - x * x) - std::atanh(x)) / (x * x);
                  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  Tensor r = Tensor::scalar(s);
  if (!a.on_tape()) return r;
  int an = a.node();
  int64_t n = a.size();
  return finish(a.tape(), std::move(r), [=](Tape& t, int self) {
    const auto* g = t.grad_if_any(self);
    if (g == nullptr) return;
    auto& ga = t.grad_buf(an, n);
    for (int64_t i = 0; i < n; ++i) ga[i] += (*g)[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor l2_norm(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  double nrm = std::sqrt(s);
  Tensor r = Tensor::scalar(nrm);
  if (!a.on_tape()) return r;
  auto ad = a.storage();
  int an = a.node();
  int64_t n = a.size();
  return finish(a.tape(), std::move(r), [=](Tape& t, int self) {
    const auto* g = t.grad_if_any(self);
    if (g == nullptr || nrm < 1e-300) return;
    auto& ga = t.grad_buf(an, n);
    for (int64_t i = 0; i < n; ++i) ga[i] += (*g)[0] * (*ad)[i] / nrm;
  });
}

Tensor sum_rows(const Tensor& a) {
  require_2d("sum_rows", a);
  int B = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(static_cast<size_t>(B), 0.0);
  const auto& av = a.data();
  for (int i = 0; i < B; ++i)
    for (int j = 0; j < n; ++j) out[i] += av[static_cast<size_t>(i) * n + j];
  Tensor r({B}, std::move(out));
  if (!a.on_tape()) return r;
  int an = a.node();
  return finish(a.tape(), std::move(r), [=](Tape& t, int self) {
    const auto* g = t.grad_if_any(self);
    if (g == nullptr) return;
    auto& ga = t.grad_buf(an, static_cast<int64_t>(B) * n);
    for (int i = 0; i < B; ++i)
      for (int j = 0; j < n; ++j) ga[static_cast<size_t>(i) * n + j] += (*g)[i];
  });
}

namespace {

// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(int m, int k, int n, const double* A, const double* B, double* C) {
  for (int i = 0; i < m; ++i) {
    const double* a = A + static_cast<size_t>(i) * k;
    double* c = C + static_cast<size_t>(i) * n;
    for (int l = 0; l < k; ++l) {
      double ail = a[l];
      if (ail == 0.0) continue;
      const double* b = B + static_cast<size_t>(l) * n;
      for (int j = 0; j < n; ++j) c[j] += ail * b[j];
    }
  }
}

// C[m,k] += G[m,n] * B[k,n]^T
void gemm_nt(int m, int n, int k, const double* G, const double* B, double* C) {
  for (int i = 0; i < m; ++i) {
    const double* g = G + static_cast<size_t>(i) * n;
    double* c = C + static_cast<size_t>(i) * k;
    for (int l = 0; l < k; ++l) {
      const double* b = B + static_cast<size_t>(l) * n;
      double s = 0.0;
      for (int j = 0; j < n; ++j) s += g[j] * b[j];
      c[l] += s;
    }
  }
}

// C[k,n] += A[m,k]^T * G[m,n]
void gemm_tn(int m, int k, int n, const double* A, const double* G, double* C) {
  for (int i = 0; i < m; ++i) {
    const double* a = A + static_cast<size_t>(i) * k;
    const double* g = G + static_cast<size_t>(i) * n;
    for (int l = 0; l < k; ++l) {
      double ail = a[l];
      if (ail == 0.0) continue;
      double* c = C + static_cast<size_t>(l) * n;
      for (int j = 0; j < n; ++j) c[j] += ail * g[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d("matmul", a);
  require_2d("matmul", b);
  int m = a.shape()[0], k = a.shape()[1], k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2)
    throw std::invalid_argument("matmul: inner dims differ, " + shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  gemm_nn(m, k, n, a.data().data(), b.data().data(), out.data());
  Tensor r({m, n}, std::move(out));
  Tape* tp = tape_of({&a, &b});
  if (tp == nullptr) return r;
  auto ad = a.storage();
  auto bd = b.storage();
  int an = a.on_tape() ? a.node() : -1;
  int bn = b.on_tape() ? b.node() : -1;
  return finish(tp, std::move(r), [=](Tape& t, int self) {
    const auto* g = t.grad_if_any(self);
    if (g == nullptr) return;
    if (an >= 0) {
      auto& ga = t.grad_buf(an, static_cast<int64_t>(m) * k);
      gemm_nt(m, n, k, g->data(), bd->data(), ga.data());
    }
    if (bn >= 0) {
      auto& gb = t.grad_buf(bn, static_cast<int64_t>(k) * n);
      gemm_tn(m, k, n, ad->data(), g->data(), gb.data());
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_2d("transpose", a);
  int m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(static_cast<size_t>(m) * n);
  const auto& av = a.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<size_t>(j) * m + i] = av[static_cast<size_t>(i) * n + j];
  Tensor r({n, m}, std::move(out));
  if (!a.on_tape()) return r;
  int an = a.node();
  return finish(a.tape(), std::move(r), [=](Tape& t, int self) {
    const auto* g = t.grad_if_any(self);
    if (g == nullptr) return;
    auto& ga = t.grad_buf(an, static_cast<int64_t>(m) * n);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) ga[static_cast<size_t>(i) * n + j] += (*g)[static_cast<size_t>(j) * m + i];
  });
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  if (n != a.size())
    throw std::invalid_argument("reshape: size mismatch, " + shape_str(a.shape()) + " -> " +
                                shape_str(shape));
  Tensor r(std::move(shape), a.data());
  if (!a.on_tape()) return r;
  int an = a.node();
  int64_t sz = a.size();
  return finish(a.tape(), std::move(r), [=](Tape& t, int self) {
    const auto* g = t.grad_if_any(self);
    if (g == nullptr) return;
    auto& ga = t.grad_buf(an, sz);
    for (int64_t i = 0; i < sz; ++i) ga[i] += (*g)[i];
  });
}

Tensor narrow(const Tensor& a, int64_t i0, int64_t i1) {
  if (i0 < 0 || i1 > a.size() || i0 >= i1)
    throw std::invalid_argument("narrow: bad range [" + std::to_string(i0) + "," +
                                std::to_string(i1) + ") for size " + std::to_string(a.size()));
  std::vector<double> out(a.data().begin() + i0, a.data().begin() + i1);
  Tensor r({static_cast<int>(i1 - i0)}, std::move(out));
  if (!a.on_tape()) return r;
  int an = a.node();
  int64_t sz = a.size();
  return finish(a.tape(), std::move(r), [=](Tape& t, int self) {
    const auto* g = t.grad_if_any(self);
    if (g == nullptr) return;
    auto& ga = t.grad_buf(an, sz);
    for (int64_t i = i0; i < i1; ++i) ga[i] += (*g)[i - i0];
  });
}

Tensor slice_cols(const Tensor& a, int c0, int c1) {
  require_2d("slice_cols", a);
  int B = a.shape()[0], n = a.shape()[1];
  if (c0 < 0 || c1 > n || c0 >= c1)
    throw std::invalid_argument("slice_cols: bad range [" + std::to_string(c0) + "," +
                                std::to_string(c1) + ") for " + shape_str(a.shape()));
  int w = c1 - c0;
  std::vector<double> out(static_cast<size_t>(B) * w);
  const auto& av = a.data();
  for (int i = 0; i < B; ++i)
    for (int j = 0; j < w; ++j) out[static_cast<size_t>(i) * w + j] = av[static_cast<size_t>(i) * n + c0 + j];
  Tensor r({B, w}, std::move(out));
  if (!a.on_tape()) return r;
  int an = a.node();
  return finish(a.tape(), std::move(r), [=](Tape& t, int self) {
    const auto* g = t.grad_if_any(self);
    if (g == nullptr) return;
    auto& ga = t.grad_buf(an, static_cast<int64_t>(B) * n);
    for (int i = 0; i < B; ++i)
      for (int j = 0; j < w; ++j)
        ga[static_cast<size_t>(i) * n + c0 + j] += (*g)[static_cast<size_t>(i) * w + j];
  });
}

Tensor stack_cols(const std::vector<Tensor>& cols) {
  if (cols.empty()) throw std::invalid_argument("stack_cols: empty input");
  int k = static_cast<int>(cols.size());
  if (cols[0].shape().size() != 1)
    throw std::invalid_argument("stack_cols: expected 1-D columns, got " + shape_str(cols[0].shape()));
  int B = cols[0].shape()[0];
  Tape* tp = nullptr;
  for (const auto& c : cols) {
    if (c.shape() != cols[0].shape())
      throw std::invalid_argument("stack_cols: column shape mismatch " + shape_str(c.shape()) +
                                  " vs " + shape_str(cols[0].shape()));
    if (c.on_tape()) {
      if (tp != nullptr && tp != c.tape())
        throw std::invalid_argument("stack_cols: columns from different tapes");
      tp = c.tape();
    }
  }
  std::vector<double> out(static_cast<size_t>(B) * k);
  for (int j = 0; j < k; ++j) {
    const auto& cv = cols[j].data();
    for (int i = 0; i < B; ++i) out[static_cast<size_t>(i) * k + j] = cv[i];
  }
  Tensor r({B, k}, std::move(out));
  if (tp == nullptr) return r;
  std::vector<int> ids(cols.size());
  for (int j = 0; j < k; ++j) ids[j] = cols[j].on_tape() ? cols[j].node() : -1;
  return finish(tp, std::move(r), [=](Tape& t, int self) {
    const auto* g = t.grad_if_any(self);
    if (g == nullptr) return;
    for (int j = 0; j < k; ++j) {
      if (ids[j] < 0) continue;
      auto& gc = t.grad_buf(ids[j], B);
      for (int i = 0; i < B; ++i) gc[i] += (*g)[static_cast<size_t>(i) * k + j];
    }
  });
}

Tensor take_per_row(const Tensor& a, const std::vector<int>& idx) {
  require_2d("take_per_row", a);
  int B = a.shape()[0], n = a.shape()[1];
  if (static_cast<int>(idx.size()) != B)
    throw std::invalid_argument("take_per_row: index count " + std::to_string(idx.size()) +
                                " does not match rows of " + shape_str(a.shape()));
  std::vector<double> out(static_cast<size_t>(B));
  const auto& av = a.data();
  for (int i = 0; i < B; ++i) {
    if (idx[i] < 0 || idx[i] >= n)
      throw std::invalid_argument("take_per_row: index " + std::to_string(idx[i]) +
                                  " out of range for " + shape_str(a.shape()));
    out[i] = av[static_cast<size_t>(i) * n + idx[i]];
  }
  Tensor r({B}, std::move(out));
  if (!a.on_tape()) return r;
  int an = a.node();
  auto ids = idx;
  return finish(a.tape(), std::move(r), [=](Tape& t, int self) {
    const auto* g = t.grad_if_any(self);
    if (g == nullptr) return;
    auto& ga = t.grad_buf(an, static_cast<int64_t>(B) * n);
    for (int i = 0; i < B; ++i) ga[static_cast<size_t>(i) * n + ids[i]] += (*g)[i];
  });
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& idx) {
  require_2d("gather_rows", a);
  int n = a.shape()[0], w = a.shape()[1];
  int P = static_cast<int>(idx.size());
  std::vector<double> out(static_cast<size_t>(P) * w);
  const auto& av = a.data();
  for (int p = 0; p < P; ++p) {
    if (idx[p] < 0 || idx[p] >= n)
      throw std::invalid_argument("gather_rows: index " + std::to_string(idx[p]) +
                                  " out of range for " + shape_str(a.shape()));
    std::copy(av.begin() + static_cast<size_t>(idx[p]) * w,
              av.begin() + static_cast<size_t>(idx[p] + 1) * w,
              out.begin() + static_cast<size_t>(p) * w);
  }
  Tensor r({P, w}, std::move(out));
  if (!a.on_tape()) return r;
  int an = a.node();
  auto ids = idx;
  return finish(a.tape(), std::move(r), [=](Tape& t, int self) {
    const auto* g = t.grad_if_any(self);
    if (g == nullptr) return;
    auto& ga = t.grad_buf(an, static_cast<int64_t>(n) * w);
    for (int p = 0; p < P; ++p)
      for (int j = 0; j < w; ++j)
        ga[static_cast<size_t>(ids[p]) * w + j] += (*g)[static_cast<size_t>(p) * w + j];
  });
}

Tensor tile_rows(const Tensor& v, int rows) {
  if (v.shape().size() != 1)
    throw std::invalid_argument("tile_rows: expected 1-D tensor, got " + shape_str(v.shape()));
  if (rows <= 0) throw std::invalid_argument("tile_rows: rows must be positive");
  int n = v.shape()[0];
  std::vector<double> out(static_cast<size_t>(rows) * n);
  for (int i = 0; i < rows; ++i)
    std::copy(v.data().begin(), v.data().end(), out.begin() + static_cast<size_t>(i) * n);
  Tensor r({rows, n}, std::move(out));
  if (!v.on_tape()) return r;
  int vn = v.node();
  return finish(v.tape(), std::move(r), [=](Tape& t, int self) {
    const auto* g = t.grad_if_any(self);
    if (g == nullptr) return;
    auto& gv = t.grad_buf(vn, n);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < n; ++j) gv[j] += (*g)[static_cast<size_t>(i) * n + j];
  });
}

Tensor mul_rows(const Tensor& a, const Tensor& s) {
  require_2d("mul_rows", a);
  int B = a.shape()[0], n = a.shape()[1];
  if (s.shape().size() != 1 || s.shape()[0] != B)
    throw std::invalid_argument("mul_rows: scale shape " + shape_str(s.shape()) +
                                " does not match rows of " + shape_str(a.shape()));
  std::vector<double> out(static_cast<size_t>(B) * n);
  const auto& av = a.data();
  const auto& sv = s.data();
  for (int i = 0; i < B; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<size_t>(i) * n + j] = av[static_cast<size_t>(i) * n + j] * sv[i];
  Tensor r({B, n}, std::move(out));
  Tape* tp = tape_of({&a, &s});
  if (tp == nullptr) return r;
  auto ad = a.storage();
  auto sd = s.storage();
  int an = a.on_tape() ? a.node() : -1;
  int sn = s.on_tape() ? s.node() : -1;
  return finish(tp, std::move(r), [=](Tape& t, int self) {
    const auto* g = t.grad_if_any(self);
    if (g == nullptr) return;
    if (an >= 0) {
      auto& ga = t.grad_buf(an, static_cast<int64_t>(B) * n);
      for (int i = 0; i < B; ++i)
        for (int j = 0; j < n; ++j)
          ga[static_cast<size_t>(i) * n + j] += (*g)[static_cast<size_t>(i) * n + j] * (*sd)[i];
    }
    if (sn >= 0) {
      auto& gs = t.grad_buf(sn, B);
      for (int i = 0; i < B; ++i) {
        double acc = 0.0;
        for (int j = 0; j < n; ++j)
          acc += (*g)[static_cast<size_t>(i) * n + j] * (*ad)[static_cast<size_t>(i) * n + j];
        gs[i] += acc;
      }
    }
  });
}

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
  require_2d("add_rowvec", a);
  int B = a.shape()[0], n = a.shape()[1];
  if (v.shape().size() != 1 || v.shape()[0] != n)
    throw std::invalid_argument("add_rowvec: vector shape " + shape_str(v.shape()) +
                                " does not match cols of " + shape_str(a.shape()));
  std::vector<double> out(static_cast<size_t>(B) * n);
  const auto& av = a.data();
  const auto& vv = v.data();
  for (int i = 0; i < B; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<size_t>(i) * n + j] = av[static_cast<size_t>(i) * n + j] + vv[j];
  Tensor r({B, n}, std::move(out));
  Tape* tp = tape_of({&a, &v});
  if (tp == nullptr) return r;
  int an = a.on_tape() ? a.node() : -1;
  int vn = v.on_tape() ? v.node() : -1;
  return finish(tp, std::move(r), [=](Tape& t, int self) {
    const auto* g = t.grad_if_any(self);
    if (g == nullptr) return;
    if (an >= 0) {
      auto& ga = t.grad_buf(an, static_cast<int64_t>(B) * n);
      for (size_t i = 0; i < g->size(); ++i) ga[i] += (*g)[i];
    }
    if (vn >= 0) {
      auto& gv = t.grad_buf(vn, n);
      for (int i = 0; i < B; ++i)
        for (int j = 0; j < n; ++j) gv[j] += (*g)[static_cast<size_t>(i) * n + j];
    }
  });
}

Tensor log_softmax(const Tensor& a) {
  require_2d("log_softmax", a);
  int B = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(static_cast<size_t>(B) * n);
  const auto& av = a.data();
  for (int i = 0; i < B; ++i) {
    const double* row = av.data() + static_cast<size_t>(i) * n;
    double m = row[0];
    for (int j = 1; j < n; ++j) m = std::max(m, row[j]);
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += std::exp(row[j] - m);
    double lse = m + std::log(s);
    for (int j = 0; j < n; ++j) out[static_cast<size_t>(i) * n + j] = row[j] - lse;
  }
  Tensor r({B, n}, std::move(out));
  if (!a.on_tape()) return r;
  auto rd = r.storage();
  int an = a.node();
  return finish(a.tape(), std::move(r), [=](Tape& t, int self) {
    const auto* g = t.grad_if_any(self);
    if (g == nullptr) return;
    auto& ga = t.grad_buf(an, static_cast<int64_t>(B) * n);
    for (int i = 0; i < B; ++i) {
      double gsum = 0.0;
      for (int j = 0; j < n; ++j) gsum += (*g)[static_cast<size_t>(i) * n + j];
      for (int j = 0; j < n; ++j) {
        size_t q = static_cast<size_t>(i) * n + j;
        ga[q] += (*g)[q] - std::exp((*rd)[q]) * gsum;
      }
    }
  });
}

GradCheckResult grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f,
                           std::vector<int> shape, const std::vector<double>& x, double step) {
  std::vector<double> analytic;
  {
    Tape tape;
    Tensor in = tape.leaf(shape, x);
    Tensor out = f(tape, in);
    tape.backward(out);
    analytic = tape.has_grad(in) ? tape.grad(in) : std::vector<double>(x.size(), 0.0);
  }
  auto eval = [&](const std::vector<double>& pt) {
    Tape tape;
    Tensor in = tape.leaf(shape, pt);
    return f(tape, in).item();
  };
  GradCheckResult res;
  std::vector<double> pt = x;
  for (size_t i = 0; i < x.size(); ++i) {
    pt[i] = x[i] + step;
    double fp = eval(pt);
    pt[i] = x[i] - step;
    double fm = eval(pt);
    pt[i] = x[i];
    double central = (fp - fm) / (2.0 * step);
    if (!std::isfinite(central) || !std::isfinite(analytic[i]))
      throw std::runtime_error("grad_check: non-finite derivative at index " + std::to_string(i));
    double rel = std::abs(analytic[i] - central) / std::max(1.0, std::abs(central));
    if (rel > res.max_rel_err) {
      res.max_rel_err = rel;
      res.worst_index = static_cast<int64_t>(i);
    }
  }
  return res;
}

}  // namespace hyprl::ad
