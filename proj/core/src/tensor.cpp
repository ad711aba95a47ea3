#include "punchline/tensor.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_set>

#include "punchline/random.hpp"

namespace punchline::ag {
namespace {

thread_local bool g_grad_enabled = true;

void require(bool condition, const char* what) {
  if (!condition) throw std::invalid_argument(what);
}

}  // namespace

Matrix& Node::grad_buffer() {
  if (grad.rows() != value.rows() || grad.cols() != value.cols()) {
    grad = Matrix::Zero(value.rows(), value.cols());
  }
  return grad;
}

Var::Var(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

void Var::zero_grad() {
  if (node_) node_->grad = Matrix::Zero(node_->value.rows(), node_->value.cols());
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Var make_result(Matrix value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (g_grad_enabled) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (const auto& in : inputs) node->inputs.push_back(in.node());
      node->backward_fn = std::move(backward_fn);
    }
  }
  return Var(std::move(node));
}

Var constant(Matrix value) { return Var(std::move(value), false); }

#define PL_INPUT(k) (*self.inputs[k])
#define PL_WANTS(k) (self.inputs[k]->requires_grad)

Var matmul(const Var& a, const Var& b) {
  require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Matrix out = a.value() * b.value();
  return make_result(std::move(out), {a, b}, [](Node& self) {
    if (PL_WANTS(0)) PL_INPUT(0).grad_buffer().noalias() += self.grad * PL_INPUT(1).value.transpose();
    if (PL_WANTS(1)) PL_INPUT(1).grad_buffer().noalias() += PL_INPUT(0).value.transpose() * self.grad;
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  require(a.cols() == b.cols(), "matmul_nt: inner dimensions differ");
  Matrix out = a.value() * b.value().transpose();
  return make_result(std::move(out), {a, b}, [](Node& self) {
    if (PL_WANTS(0)) PL_INPUT(0).grad_buffer().noalias() += self.grad * PL_INPUT(1).value;
    if (PL_WANTS(1)) PL_INPUT(1).grad_buffer().noalias() += self.grad.transpose() * PL_INPUT(0).value;
  });
}

Var add(const Var& a, const Var& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  Matrix out = a.value() + b.value();
  return make_result(std::move(out), {a, b}, [](Node& self) {
    if (PL_WANTS(0)) PL_INPUT(0).grad_buffer() += self.grad;
    if (PL_WANTS(1)) PL_INPUT(1).grad_buffer() += self.grad;
  });
}

Var sub(const Var& a, const Var& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  Matrix out = a.value() - b.value();
  return make_result(std::move(out), {a, b}, [](Node& self) {
    if (PL_WANTS(0)) PL_INPUT(0).grad_buffer() += self.grad;
    if (PL_WANTS(1)) PL_INPUT(1).grad_buffer() -= self.grad;
  });
}

Var mul(const Var& a, const Var& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
  Matrix out = a.value().cwiseProduct(b.value());
  return make_result(std::move(out), {a, b}, [](Node& self) {
    if (PL_WANTS(0)) PL_INPUT(0).grad_buffer() += self.grad.cwiseProduct(PL_INPUT(1).value);
    if (PL_WANTS(1)) PL_INPUT(1).grad_buffer() += self.grad.cwiseProduct(PL_INPUT(0).value);
  });
}

Var add_row(const Var& a, const Var& row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row: bias shape mismatch");
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  return make_result(std::move(out), {a, row}, [](Node& self) {
    if (PL_WANTS(0)) PL_INPUT(0).grad_buffer() += self.grad;
    if (PL_WANTS(1)) PL_INPUT(1).grad_buffer() += self.grad.colwise().sum();
  });
}

Var scale(const Var& a, double factor) {
  Matrix out = a.value() * factor;
  return make_result(std::move(out), {a}, [factor](Node& self) {
    if (PL_WANTS(0)) PL_INPUT(0).grad_buffer() += self.grad * factor;
  });
}

Var one_minus(const Var& a) {
  Matrix out = (1.0 - a.value().array()).matrix();
  return make_result(std::move(out), {a}, [](Node& self) {
    if (PL_WANTS(0)) PL_INPUT(0).grad_buffer() -= self.grad;
  });
}

Var sigmoid(const Var& a) {
  Matrix out = a.value().unaryExpr([](double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  return make_result(std::move(out), {a}, [](Node& self) {
    if (!PL_WANTS(0)) return;
    const auto& y = self.value.array();
    PL_INPUT(0).grad_buffer().array() += self.grad.array() * y * (1.0 - y);
  });
}

Var tanh(const Var& a) {
  Matrix out = a.value().array().tanh().matrix();
  return make_result(std::move(out), {a}, [](Node& self) {
    if (!PL_WANTS(0)) return;
    const auto& y = self.value.array();
    PL_INPUT(0).grad_buffer().array() += self.grad.array() * (1.0 - y * y);
  });
}

Var relu(const Var& a) { return leaky_relu(a, 0.0); }

Var leaky_relu(const Var& a, double slope) {
  Matrix out = a.value().unaryExpr([slope](double x) { return x > 0 ? x : slope * x; });
  return make_result(std::move(out), {a}, [slope](Node& self) {
    if (!PL_WANTS(0)) return;
    const Matrix& x = PL_INPUT(0).value;
    Matrix& g = PL_INPUT(0).grad_buffer();
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      g.data()[i] += self.grad.data()[i] * (x.data()[i] > 0 ? 1.0 : slope);
    }
  });
}

Var softmax_rows(const Var& a, const Mask* mask) {
  const Matrix& x = a.value();
  if (mask) require(mask->rows() == x.rows() && mask->cols() == x.cols(), "softmax_rows: mask shape");
  Matrix out = Matrix::Zero(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double best = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (!mask || (*mask)(r, c)) best = std::max(best, x(r, c));
    }
    if (!std::isfinite(best)) continue;
    double total = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (!mask || (*mask)(r, c)) {
        out(r, c) = std::exp(x(r, c) - best);
        total += out(r, c);
      }
    }
    out.row(r) /= total;
  }
  return make_result(std::move(out), {a}, [](Node& self) {
    if (!PL_WANTS(0)) return;
    const Matrix& y = self.value;
    Matrix& g = PL_INPUT(0).grad_buffer();
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double dot = y.row(r).dot(self.grad.row(r));
      g.row(r).array() += y.row(r).array() * (self.grad.row(r).array() - dot);
    }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  require(gamma.rows() == 1 && gamma.cols() == x.cols(), "layer_norm: gamma shape");
  require(beta.rows() == 1 && beta.cols() == x.cols(), "layer_norm: beta shape");
  const Matrix& in = x.value();
  const auto n = static_cast<double>(in.cols());
  Matrix normalized(in.rows(), in.cols());
  RowVector inv_std(in.rows());
  for (Eigen::Index r = 0; r < in.rows(); ++r) {
    const double mean = in.row(r).mean();
    const double var = (in.row(r).array() - mean).square().sum() / n;
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    normalized.row(r) = (in.row(r).array() - mean) * inv_std(r);
  }
  Matrix out = normalized;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    out.row(r) = out.row(r).cwiseProduct(gamma.value().row(0)) + beta.value().row(0);
  }
  return make_result(std::move(out), {x, gamma, beta},
                     [normalized = std::move(normalized), inv_std = std::move(inv_std), n](Node& self) {
    const Matrix& dy = self.grad;
    if (PL_WANTS(1)) PL_INPUT(1).grad_buffer() += dy.cwiseProduct(normalized).colwise().sum();
    if (PL_WANTS(2)) PL_INPUT(2).grad_buffer() += dy.colwise().sum();
    if (!PL_WANTS(0)) return;
    const RowVector& g = PL_INPUT(1).value.row(0);
    Matrix& dx = PL_INPUT(0).grad_buffer();
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
      RowVector dxhat = dy.row(r).cwiseProduct(g);
      const double s1 = dxhat.sum();
      const double s2 = dxhat.dot(normalized.row(r));
      dx.row(r).array() += (inv_std(r) / n) * (n * dxhat.array() - s1 - normalized.row(r).array() * s2);
    }
  });
}

Var embedding(const Var& table, std::span<const int> ids) { return gather_rows(table, ids); }

Var gather_rows(const Var& a, std::span<const int> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] >= 0 && rows[i] < a.rows(), "gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(rows[i]);
  }
  std::vector<int> index(rows.begin(), rows.end());
  return make_result(std::move(out), {a}, [index = std::move(index)](Node& self) {
    if (!PL_WANTS(0)) return;
    Matrix& g = PL_INPUT(0).grad_buffer();
    for (std::size_t i = 0; i < index.size(); ++i) g.row(index[i]) += self.grad.row(static_cast<Eigen::Index>(i));
  });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  Eigen::Index total = 0;
  for (const auto& p : parts) {
    require(p.rows() == parts[0].rows(), "concat_cols: row mismatch");
    total += p.cols();
  }
  Matrix out(parts[0].rows(), total);
  std::vector<Eigen::Index> offsets;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    offsets.push_back(at);
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return make_result(std::move(out), std::vector<Var>(parts.begin(), parts.end()),
                     [offsets = std::move(offsets)](Node& self) {
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      if (!self.inputs[k]->requires_grad) continue;
      auto& in = *self.inputs[k];
      in.grad_buffer() += self.grad.middleCols(offsets[k], in.value.cols());
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  Eigen::Index total = 0;
  for (const auto& p : parts) {
    require(p.cols() == parts[0].cols(), "concat_rows: column mismatch");
    total += p.rows();
  }
  Matrix out(total, parts[0].cols());
  std::vector<Eigen::Index> offsets;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    offsets.push_back(at);
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return make_result(std::move(out), std::vector<Var>(parts.begin(), parts.end()),
                     [offsets = std::move(offsets)](Node& self) {
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      if (!self.inputs[k]->requires_grad) continue;
      auto& in = *self.inputs[k];
      in.grad_buffer() += self.grad.middleRows(offsets[k], in.value.rows());
    }
  });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols: out of range");
  Matrix out = a.value().middleCols(start, count);
  return make_result(std::move(out), {a}, [start, count](Node& self) {
    if (PL_WANTS(0)) PL_INPUT(0).grad_buffer().middleCols(start, count) += self.grad;
  });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows: out of range");
  Matrix out = a.value().middleRows(start, count);
  return make_result(std::move(out), {a}, [start, count](Node& self) {
    if (PL_WANTS(0)) PL_INPUT(0).grad_buffer().middleRows(start, count) += self.grad;
  });
}

Var sum(const Var& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return make_result(std::move(out), {a}, [](Node& self) {
    if (PL_WANTS(0)) PL_INPUT(0).grad_buffer().array() += self.grad(0, 0);
  });
}

Var dropout(const Var& a, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return a;
  require(p < 1.0, "dropout: p must be < 1");
  Matrix keep(a.rows(), a.cols());
  const double factor = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < keep.size(); ++i) keep.data()[i] = uniform01(rng) >= p ? factor : 0.0;
  Matrix out = a.value().cwiseProduct(keep);
  return make_result(std::move(out), {a}, [keep = std::move(keep)](Node& self) {
    if (PL_WANTS(0)) PL_INPUT(0).grad_buffer() += self.grad.cwiseProduct(keep);
  });
}

Matrix log_softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double best = logits.row(r).maxCoeff();
    const double lse = best + std::log((logits.row(r).array() - best).exp().sum());
    out.row(r) = logits.row(r).array() - lse;
  }
  return out;
}

Var cross_entropy_sum(const Var& logits, std::span<const int> targets, int ignore_id) {
  require(static_cast<Eigen::Index>(targets.size()) == logits.rows(), "cross_entropy: target count");
  Matrix logp = log_softmax_rows(logits.value());
  double total = 0.0;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    if (targets[t] == ignore_id) continue;
    require(targets[t] >= 0 && targets[t] < logits.cols(), "cross_entropy: target out of range");
    total -= logp(static_cast<Eigen::Index>(t), targets[t]);
  }
  Matrix out(1, 1);
  out(0, 0) = total;
  std::vector<int> tgt(targets.begin(), targets.end());
  return make_result(std::move(out), {logits},
                     [logp = std::move(logp), tgt = std::move(tgt), ignore_id](Node& self) {
    if (!PL_WANTS(0)) return;
    Matrix& g = PL_INPUT(0).grad_buffer();
    const double upstream = self.grad(0, 0);
    for (std::size_t t = 0; t < tgt.size(); ++t) {
      if (tgt[t] == ignore_id) continue;
      const auto r = static_cast<Eigen::Index>(t);
      g.row(r).array() += upstream * logp.row(r).array().exp();
      g(r, tgt[t]) -= upstream;
    }
  });
}

#undef PL_INPUT
#undef PL_WANTS

void backward(const Var& root) {
  require(root.defined() && root.rows() == 1 && root.cols() == 1, "backward: root must be 1 x 1");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && !seen.count(child)) {
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()(0, 0) += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn) node->backward_fn(*node);
  }
  // Interior gradients are no longer needed; leaves keep theirs.
  for (Node* node : order) {
    if (node->backward_fn) node->grad = Matrix();
  }
}

}  // namespace punchline::ag
