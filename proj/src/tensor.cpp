#include "lda/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "lda/error.hpp"

namespace lda {

namespace {

thread_local Tape* g_active_tape = nullptr;
thread_local std::uint64_t g_op_count = 0;

void check(bool ok, const std::string& message) {
  if (!ok) throw ShapeError(message);
}

bool is_scalar(const Tensor& t) { return t.numel() == 1; }

// Row-vector-with-matrix broadcast: b has shape [n] or [1,n], a is [m,n].
bool row_broadcastable(const Tensor& mat, const Tensor& vec) {
  if (mat.rank() != 2) return false;
  if (vec.rank() == 1) return vec.shape()[0] == mat.shape()[1];
  if (vec.rank() == 2) return vec.shape()[0] == 1 && vec.shape()[1] == mat.shape()[1];
  return false;
}

}  // namespace

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << "x";
    out << shape[i];
  }
  out << "]";
  return out.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

// --- Tensor ------------------------------------------------------------------

Tensor Tensor::scalar(double value) {
  return constant({}, {value});
}

Tensor Tensor::constant(Shape shape, std::vector<double> data) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor: shape " + shape_to_string(shape) + " wants " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(data.size()));
  }
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape) {
  std::vector<double> data(shape_numel(shape), 0.0);
  return constant(std::move(shape), std::move(data));
}

Tensor Tensor::full(Shape shape, double value) {
  std::vector<double> data(shape_numel(shape), value);
  return constant(std::move(shape), std::move(data));
}

Tensor Tensor::param(Shape shape, std::vector<double> data) {
  Tensor t = constant(std::move(shape), std::move(data));
  t.node_->requires_grad = true;
  return t;
}

std::size_t Tensor::rows() const {
  check(rank() == 2, "rows(): tensor is not a matrix: " + shape_to_string(shape()));
  return node_->shape[0];
}

std::size_t Tensor::cols() const {
  check(rank() == 2, "cols(): tensor is not a matrix: " + shape_to_string(shape()));
  return node_->shape[1];
}

double Tensor::value() const {
  check(numel() == 1, "value(): tensor is not a scalar: " + shape_to_string(shape()));
  return node_->data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return node_->data[r * cols() + c];
}

// --- Tape --------------------------------------------------------------------

Tape::Tape() {
  previous_ = g_active_tape;
  g_active_tape = this;
}

Tape::~Tape() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

namespace {

std::vector<double>& grad_buffer(detail::TensorNode& node) {
  if (node.grad.empty()) node.grad.assign(node.data.size(), 0.0);
  return node.grad;
}

}  // namespace

void Tape::backward(const Tensor& root) {
  if (consumed_) throw Error("tape: backward already ran on this tape");
  if (root.numel() != 1) {
    throw ShapeError("backward: root must be a scalar, got " +
                     shape_to_string(root.shape()));
  }
  consumed_ = true;
  grad_buffer(*root.node())[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    detail::TensorNode& node = **it;
    // Nodes outside the root's ancestry never receive a gradient; skipping
    // them keeps unrelated subgraphs out of the accumulation entirely.
    if (node.grad.empty() || !node.backward) continue;
    node.backward(node);
  }
  // Contract: after the pass every participating grad-requiring tensor has a
  // defined gradient, including ones the root does not depend on.
  for (const auto& node : nodes_) {
    if (node->requires_grad) grad_buffer(*node);
    for (const auto& parent : node->parents) {
      if (parent->requires_grad) grad_buffer(*parent);
    }
  }
}

Tensor make_op_result(Shape shape, std::vector<double> data,
                      std::vector<Tensor> parents,
                      std::function<void(const detail::TensorNode&)> backward) {
  ++g_op_count;
  Tensor out = Tensor::constant(std::move(shape), std::move(data));
  bool needs_grad = false;
  for (const Tensor& p : parents) needs_grad = needs_grad || p.requires_grad();
  if (needs_grad && g_active_tape != nullptr) {
    out.node_->requires_grad = true;
    out.node_->parents.reserve(parents.size());
    for (const Tensor& p : parents) out.node_->parents.push_back(p.node());
    out.node_->backward = std::move(backward);
    g_active_tape->nodes_.push_back(out.node_);
  }
  return out;
}

std::uint64_t op_count() { return g_op_count; }
void reset_op_count() { g_op_count = 0; }

// --- operations ---------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check(a.rank() == 2 && b.rank() == 2,
        "matmul: expects matrices, got " + shape_to_string(a.shape()) + " and " +
            shape_to_string(b.shape()));
  check(a.cols() == b.rows(),
        "matmul: inner dimensions disagree: " + shape_to_string(a.shape()) +
            " vs " + shape_to_string(b.shape()));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n, 0.0);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      for (std::size_t j = 0; j < n; ++j) {
        out[i * n + j] += aip * bv[p * n + j];
      }
    }
  }
  auto an = a.node();
  auto bn = b.node();
  return make_op_result(
      {m, n}, std::move(out), {a, b}, [an, bn, m, k, n](const detail::TensorNode& node) {
        const auto& g = node.grad;
        if (an->requires_grad) {
          auto& ga = grad_buffer(*an);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              for (std::size_t j = 0; j < n; ++j)
                acc += g[i * n + j] * bn->data[p * n + j];
              ga[i * k + p] += acc;
            }
        }
        if (bn->requires_grad) {
          auto& gb = grad_buffer(*bn);
          for (std::size_t p = 0; p < k; ++p)
            for (std::size_t j = 0; j < n; ++j) {
              double acc = 0.0;
              for (std::size_t i = 0; i < m; ++i)
                acc += an->data[i * k + p] * g[i * n + j];
              gb[p * n + j] += acc;
            }
        }
      });
}

namespace {

enum class Broadcast { none, a_scalar, b_scalar, b_row };

Broadcast classify_broadcast(const Tensor& a, const Tensor& b,
                             const char* op_name) {
  if (a.shape() == b.shape()) return Broadcast::none;
  if (is_scalar(b)) return Broadcast::b_scalar;
  if (is_scalar(a)) return Broadcast::a_scalar;
  if (row_broadcastable(a, b)) return Broadcast::b_row;
  throw ShapeError(std::string(op_name) + ": incompatible shapes " +
                   shape_to_string(a.shape()) + " and " +
                   shape_to_string(b.shape()));
}

// Shared elementwise binary op with the two allowed broadcasts. combine gives
// the value, d_a/d_b the partials with respect to each operand.
template <class Combine, class DA, class DB>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* op_name,
                 Combine combine, DA d_a, DB d_b) {
  const Broadcast mode = classify_broadcast(a, b, op_name);
  const auto& av = a.values();
  const auto& bv = b.values();
  const std::size_t n = mode == Broadcast::a_scalar ? bv.size() : av.size();
  const std::size_t row_len = mode == Broadcast::b_row ? a.cols() : 0;
  auto b_index = [mode, row_len](std::size_t i) -> std::size_t {
    switch (mode) {
      case Broadcast::b_scalar: return 0;
      case Broadcast::b_row: return i % row_len;
      default: return i;
    }
  };
  auto a_index = [mode](std::size_t i) -> std::size_t {
    return mode == Broadcast::a_scalar ? 0 : i;
  };
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = combine(av[a_index(i)], bv[b_index(i)]);
  Shape out_shape = mode == Broadcast::a_scalar ? b.shape() : a.shape();
  auto an = a.node();
  auto bn = b.node();
  return make_op_result(
      std::move(out_shape), std::move(out), {a, b},
      [an, bn, n, a_index, b_index, d_a, d_b](const detail::TensorNode& node) {
        const auto& g = node.grad;
        if (an->requires_grad) {
          auto& ga = grad_buffer(*an);
          for (std::size_t i = 0; i < n; ++i)
            ga[a_index(i)] += g[i] * d_a(an->data[a_index(i)], bn->data[b_index(i)]);
        }
        if (bn->requires_grad) {
          auto& gb = grad_buffer(*bn);
          for (std::size_t i = 0; i < n; ++i)
            gb[b_index(i)] += g[i] * d_b(an->data[a_index(i)], bn->data[b_index(i)]);
        }
      });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

namespace {

template <class Eval, class Deriv>
Tensor unary_op(const Tensor& a, Eval eval, Deriv deriv) {
  const auto& av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = eval(av[i]);
  auto an = a.node();
  return make_op_result(a.shape(), std::move(out), {a},
                        [an, deriv](const detail::TensorNode& node) {
                          if (!an->requires_grad) return;
                          auto& ga = grad_buffer(*an);
                          for (std::size_t i = 0; i < node.grad.size(); ++i)
                            ga[i] += node.grad[i] * deriv(an->data[i]);
                        });
}

}  // namespace

Tensor scale(const Tensor& a, double factor) {
  return unary_op(
      a, [factor](double x) { return x * factor; },
      [factor](double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double constant) {
  return unary_op(
      a, [constant](double x) { return x + constant; },
      [](double) { return 1.0; });
}

Tensor relu(const Tensor& a) {
  return unary_op(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::exp(x); },
      [](double x) { return std::exp(x); });
}

Tensor log(const Tensor& a) {
  for (double x : a.values()) {
    if (x < 0.0) {
      throw NumericDomainError("log: negative input " + std::to_string(x));
    }
  }
  return unary_op(
      a, [](double x) { return std::log(std::max(x, kEpsLog)); },
      [](double x) { return x > kEpsLog ? 1.0 / x : 0.0; });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double x : a.values()) total += x;
  auto an = a.node();
  return make_op_result({}, {total}, {a}, [an](const detail::TensorNode& node) {
    if (!an->requires_grad) return;
    auto& ga = grad_buffer(*an);
    for (double& g : ga) g += node.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a.numel());
  double total = 0.0;
  for (double x : a.values()) total += x;
  auto an = a.node();
  return make_op_result({}, {total * inv}, {a},
                        [an, inv](const detail::TensorNode& node) {
                          if (!an->requires_grad) return;
                          auto& ga = grad_buffer(*an);
                          for (double& g : ga) g += node.grad[0] * inv;
                        });
}

Tensor log_softmax(const Tensor& logits) {
  check(logits.rank() == 2, "log_softmax: expects a matrix, got " +
                                shape_to_string(logits.shape()));
  const std::size_t n = logits.rows(), c = logits.cols();
  check(c >= 2, "log_softmax: needs at least 2 classes, got " +
                    shape_to_string(logits.shape()));
  const auto& lv = logits.values();
  std::vector<double> out(n * c);
  for (std::size_t i = 0; i < n; ++i) {
    double row_max = lv[i * c];
    for (std::size_t j = 1; j < c; ++j) row_max = std::max(row_max, lv[i * c + j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < c; ++j) denom += std::exp(lv[i * c + j] - row_max);
    const double log_denom = std::log(denom);
    for (std::size_t j = 0; j < c; ++j)
      out[i * c + j] = lv[i * c + j] - row_max - log_denom;
  }
  auto ln = logits.node();
  return make_op_result(
      logits.shape(), std::move(out), {logits},
      [ln, n, c](const detail::TensorNode& node) {
        if (!ln->requires_grad) return;
        auto& gl = grad_buffer(*ln);
        for (std::size_t i = 0; i < n; ++i) {
          double row_sum = 0.0;
          for (std::size_t j = 0; j < c; ++j) row_sum += node.grad[i * c + j];
          for (std::size_t j = 0; j < c; ++j) {
            const double softmax = std::exp(node.data[i * c + j]);
            gl[i * c + j] += node.grad[i * c + j] - softmax * row_sum;
          }
        }
      });
}

Tensor cosine(const Tensor& u, const Tensor& v) {
  check(u.rank() == 1 && v.rank() == 1 && u.numel() == v.numel(),
        "cosine: expects equal-length vectors, got " +
            shape_to_string(u.shape()) + " and " + shape_to_string(v.shape()));
  const auto& uv = u.values();
  const auto& vv = v.values();
  double dot = 0.0, uu = 0.0, vs = 0.0;
  for (std::size_t i = 0; i < uv.size(); ++i) {
    dot += uv[i] * vv[i];
    uu += uv[i] * uv[i];
    vs += vv[i] * vv[i];
  }
  const double nu = std::sqrt(uu), nv = std::sqrt(vs);
  const bool degenerate = nu < kEpsNorm || nv < kEpsNorm;
  const double value = degenerate ? 0.0 : dot / (nu * nv);
  auto un = u.node();
  auto vn = v.node();
  return make_op_result(
      {}, {value}, {u, v},
      [un, vn, nu, nv, value, degenerate](const detail::TensorNode& node) {
        if (degenerate) return;  // zero gradient by contract
        const double g = node.grad[0];
        if (un->requires_grad) {
          auto& gu = grad_buffer(*un);
          for (std::size_t i = 0; i < gu.size(); ++i)
            gu[i] += g * (vn->data[i] / (nu * nv) - value * un->data[i] / (nu * nu));
        }
        if (vn->requires_grad) {
          auto& gv = grad_buffer(*vn);
          for (std::size_t i = 0; i < gv.size(); ++i)
            gv[i] += g * (un->data[i] / (nu * nv) - value * vn->data[i] / (nv * nv));
        }
      });
}

Tensor row(const Tensor& m, std::size_t index) {
  check(m.rank() == 2, "row: expects a matrix, got " + shape_to_string(m.shape()));
  check(index < m.rows(), "row: index " + std::to_string(index) +
                              " out of range for " + shape_to_string(m.shape()));
  const std::size_t c = m.cols();
  std::vector<double> out(m.values().begin() + index * c,
                          m.values().begin() + (index + 1) * c);
  auto mn = m.node();
  return make_op_result({c}, std::move(out), {m},
                        [mn, index, c](const detail::TensorNode& node) {
                          if (!mn->requires_grad) return;
                          auto& gm = grad_buffer(*mn);
                          for (std::size_t j = 0; j < c; ++j)
                            gm[index * c + j] += node.grad[j];
                        });
}

Tensor mean_rows(const Tensor& m, std::span<const std::size_t> indices) {
  check(m.rank() == 2, "mean_rows: expects a matrix, got " + shape_to_string(m.shape()));
  check(!indices.empty(), "mean_rows: empty index set");
  const std::size_t c = m.cols();
  const double inv = 1.0 / static_cast<double>(indices.size());
  std::vector<double> out(c, 0.0);
  for (std::size_t i : indices) {
    check(i < m.rows(), "mean_rows: index " + std::to_string(i) +
                            " out of range for " + shape_to_string(m.shape()));
    for (std::size_t j = 0; j < c; ++j) out[j] += m.values()[i * c + j];
  }
  for (std::size_t j = 0; j < c; ++j) out[j] *= inv;
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  auto mn = m.node();
  return make_op_result({c}, std::move(out), {m},
                        [mn, idx = std::move(idx), c, inv](const detail::TensorNode& node) {
                          if (!mn->requires_grad) return;
                          auto& gm = grad_buffer(*mn);
                          for (std::size_t i : idx)
                            for (std::size_t j = 0; j < c; ++j)
                              gm[i * c + j] += node.grad[j] * inv;
                        });
}

Tensor gather(const Tensor& m, std::span<const int> labels) {
  check(m.rank() == 2, "gather: expects a matrix, got " + shape_to_string(m.shape()));
  check(labels.size() == m.rows(),
        "gather: label count " + std::to_string(labels.size()) +
            " does not match rows of " + shape_to_string(m.shape()));
  const std::size_t c = m.cols();
  std::vector<double> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw LabelError("gather: label " + std::to_string(labels[i]) +
                       " outside [0, " + std::to_string(c) + ") at row " +
                       std::to_string(i));
    }
    out[i] = m.values()[i * c + static_cast<std::size_t>(labels[i])];
  }
  std::vector<int> labs(labels.begin(), labels.end());
  auto mn = m.node();
  return make_op_result({labels.size()}, std::move(out), {m},
                        [mn, labs = std::move(labs), c](const detail::TensorNode& node) {
                          if (!mn->requires_grad) return;
                          auto& gm = grad_buffer(*mn);
                          for (std::size_t i = 0; i < labs.size(); ++i)
                            gm[i * c + static_cast<std::size_t>(labs[i])] += node.grad[i];
                        });
}

std::size_t argmax_row(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

}  // namespace lda
