#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace hyprl::ad {

class Tape;

// Immutable f64 tensor. A tensor is either a plain constant or attached to a
// tape node; ops never mutate their inputs.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<int> shape, std::vector<double> data);
  static Tensor scalar(double v);
  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, double v);

  const std::vector<int>& shape() const { return shape_; }
  int64_t size() const { return data_ ? static_cast<int64_t>(data_->size()) : 0; }
  bool is_scalar() const { return size() == 1; }
  const std::vector<double>& data() const { return *data_; }
  double item() const;
  double at(int64_t i) const { return (*data_)[i]; }

  bool on_tape() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int node() const { return node_; }
  std::shared_ptr<const std::vector<double>> storage() const { return data_; }

 private:
  friend class Tape;
  std::vector<int> shape_;
  std::shared_ptr<const std::vector<double>> data_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

// Define-by-run reverse-mode tape. Nodes are appended in forward order, so
// walking them backwards is already a topological order. One backward pass per
// tape; rebuild the tape for the next forward pass.
class Tape {
 public:
  Tensor leaf(std::vector<int> shape, std::vector<double> data);
  Tensor leaf(const Tensor& constant);

  void backward(const Tensor& root);
  bool has_grad(const Tensor& t) const;
  std::vector<double> grad(const Tensor& t) const;
  size_t num_nodes() const { return nodes_.size(); }

  // Recording interface used by ops. `backprop` receives the tape and the
  // node's own id; it reads its output gradient and accumulates into parents.
  int record(int64_t size, std::function<void(Tape&, int)> backprop);
  Tensor attach(Tensor t, int node) const;
  std::vector<double>& grad_buf(int node, int64_t size);
  const std::vector<double>* grad_if_any(int node) const;

 private:
  struct Node {
    int64_t size = 0;
    std::vector<double> grad;
    std::function<void(Tape&, int)> backprop;
  };
  std::vector<Node> nodes_;
  bool ran_backward_ = false;
};

// Elementwise binary ops; operands must have identical shapes except that a
// size-1 tensor broadcasts against anything (the only broadcast supported).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);

// Scalar-constant ops.
Tensor scale(const Tensor& a, double k);
Tensor add_scalar(const Tensor& a, double k);

// Elementwise unaries.
Tensor neg(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor atanh(const Tensor& a);
Tensor asinh(const Tensor& a);
Tensor acosh(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);
// tanh(x)/x and atanh(x)/x with series guards near 0 (removable singularities).
Tensor tanhc(const Tensor& a);
Tensor atanhc(const Tensor& a);

// Reductions.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor l2_norm(const Tensor& a);
Tensor sum_rows(const Tensor& a);  // [B,n] -> [B]

// Matrix / shape ops.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, std::vector<int> shape);
Tensor narrow(const Tensor& a, int64_t i0, int64_t i1);  // flat range view
Tensor slice_cols(const Tensor& a, int c0, int c1);
Tensor stack_cols(const std::vector<Tensor>& cols);      // k x [B] -> [B,k]
Tensor take_per_row(const Tensor& a, const std::vector<int>& idx);  // [B,n],B -> [B]
Tensor gather_rows(const Tensor& a, const std::vector<int>& idx);   // [n,w],P -> [P,w]
Tensor tile_rows(const Tensor& v, int rows);             // [n] -> [rows,n]
Tensor mul_rows(const Tensor& a, const Tensor& s);       // [B,n] * [B] rowwise
Tensor add_rowvec(const Tensor& a, const Tensor& v);     // [B,n] + [n] rowwise
Tensor log_softmax(const Tensor& a);                     // rowwise on [B,n]

std::string shape_str(const std::vector<int>& shape);

// Central-difference gradient check for a scalar-valued graph built by `f`
// from a single leaf. Error metric: |analytic - central| / max(1, |central|).
struct GradCheckResult {
  double max_rel_err = 0.0;
  int64_t worst_index = -1;
};
GradCheckResult grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f,
                           std::vector<int> shape, const std::vector<double>& x,
                           double step = 1e-6);

}  // namespace hyprl::ad
