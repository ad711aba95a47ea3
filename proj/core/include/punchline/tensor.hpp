#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// double matrices. Every value in the network is a 2-D matrix; vectors are
// 1 x n rows. A Var is a handle to a node in the dynamically built graph;
// calling backward() on a 1 x 1 result propagates gradients to every leaf
// created with requires_grad.

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace punchline {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor>;

namespace ag {

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  // Allocates a zero gradient on first use.
  Matrix& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(Matrix value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  Matrix& mutable_grad() { return node_->grad_buffer(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double item() const { return node_->value(0, 0); }

  const std::shared_ptr<Node>& node() const { return node_; }
  void zero_grad();

 private:
  std::shared_ptr<Node> node_;
};

// While a NoGradGuard is alive on this thread, operations compute values
// only and record no graph.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

Var constant(Matrix value);

Var matmul(const Var& a, const Var& b);
// a * b^T
Var matmul_nt(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
// Adds a 1 x n row to every row of a.
Var add_row(const Var& a, const Var& row);
Var scale(const Var& a, double factor);
// 1 - a, elementwise.
Var one_minus(const Var& a);

Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope);

// Row-wise softmax. A non-empty mask has the same shape as `a`; entries
// that are false are excluded from the normalization and get probability 0.
using Mask = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
Var softmax_rows(const Var& a, const Mask* mask = nullptr);

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

// Rows of `table` selected by `ids`.
Var embedding(const Var& table, std::span<const int> ids);
Var gather_rows(const Var& a, std::span<const int> rows);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);

Var sum(const Var& a);
// Dropout with inverted scaling; identity when p == 0.
Var dropout(const Var& a, double p, std::mt19937_64& rng);

// Summed token cross-entropy of row-wise logits against target ids. Targets
// equal to `ignore_id` contribute nothing. Returns a 1 x 1 sum; callers
// divide by the token count they want to average over.
Var cross_entropy_sum(const Var& logits, std::span<const int> targets, int ignore_id);

// Row-wise log-softmax values, no graph.
Matrix log_softmax_rows(const Matrix& logits);

// Runs reverse-mode accumulation from a 1 x 1 output.
void backward(const Var& root);

// Builds a node from a forward value and a backward closure; used by the
// handful of fused operations that live outside this file.
Var make_result(Matrix value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn);

}  // namespace ag

using ag::Var;

}  // namespace punchline
