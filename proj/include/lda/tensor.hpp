#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace lda {

// Probability clamp applied inside log().
inline constexpr double kEpsLog = 1e-12;
// Below this norm, cosine() degenerates to 0 with zero gradient.
inline constexpr double kEpsNorm = 1e-12;

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until the node participates in a backward
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Reads this node's grad and accumulates contributions into the parents.
  std::function<void(const TensorNode&)> backward;
};

}  // namespace detail

class Tensor;
// Internal op constructor: wraps a computed value, recording it on the active
// tape when any parent requires a gradient.
Tensor make_op_result(Shape shape, std::vector<double> data,
                      std::vector<Tensor> parents,
                      std::function<void(const detail::TensorNode&)> backward);

// Dense row-major tensor of 64-bit reals. Value-semantic handle onto a shared
// node; copying a Tensor aliases the same storage. Values are immutable while
// a tape is recording; the optimizer mutates leaf parameters between tapes.
class Tensor {
 public:
  Tensor() = default;

  static Tensor scalar(double value);
  static Tensor constant(Shape shape, std::vector<double> data);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  // Leaf with requires_grad set; gradients accumulate until clear_grad().
  static Tensor param(Shape shape, std::vector<double> data);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  const std::vector<double>& values() const { return node_->data; }
  double value() const;                   // scalar tensors only
  double at(std::size_t i) const { return node_->data[i]; }
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<double>& grad() const { return node_->grad; }
  void clear_grad() { node_->grad.clear(); }

  // Parameter mutation for the optimizer / checkpoint loader. Must not be
  // called while a tape holds ops recorded against this tensor.
  std::vector<double>& values_mut() { return node_->data; }

  std::shared_ptr<detail::TensorNode> node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> node)
      : node_(std::move(node)) {}
  std::shared_ptr<detail::TensorNode> node_;

  friend class Tape;
  friend Tensor make_op_result(Shape shape, std::vector<double> data,
                               std::vector<Tensor> parents,
                               std::function<void(const detail::TensorNode&)> backward);
};

// Records the operations of one forward pass in creation order (which is a
// topological order). One backward() per tape; leaf gradients accumulate
// additively across tapes until cleared.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Seeds d(root)/d(root) = 1 and walks the tape in reverse. root must be a
  // scalar. After the walk, every recorded node and every grad-requiring leaf
  // feeding the tape has a defined (possibly zero) gradient.
  void backward(const Tensor& root);

  std::size_t size() const { return nodes_.size(); }
  static Tape* active();

 private:
  std::vector<std::shared_ptr<detail::TensorNode>> nodes_;
  Tape* previous_ = nullptr;
  bool consumed_ = false;

  friend Tensor make_op_result(Shape shape, std::vector<double> data,
                               std::vector<Tensor> parents,
                               std::function<void(const detail::TensorNode&)> backward);
};

// Number of tensor ops executed on this thread since the last reset. Used to
// compare inference cost between model variants.
std::uint64_t op_count();
void reset_op_count();

// --- operations -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);

// add/sub/mul broadcast a scalar against any tensor and a length-n vector
// against the rows of an m-by-n matrix.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double constant);

Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
// log(max(x, kEpsLog)); a strictly negative input raises NumericDomainError.
Tensor log(const Tensor& a);

Tensor sum(const Tensor& a);   // scalar
Tensor mean(const Tensor& a);  // scalar

// Row-wise log-softmax with max subtraction; input is n-by-C, C >= 2.
Tensor log_softmax(const Tensor& logits);

// u.v / (|u||v|) for vectors; 0 with zero gradient if either norm < kEpsNorm.
Tensor cosine(const Tensor& u, const Tensor& v);

// One row of a matrix as a vector.
Tensor row(const Tensor& m, std::size_t index);
// Mean of the given rows of a matrix, as a vector. Indices must be distinct.
Tensor mean_rows(const Tensor& m, std::span<const std::size_t> indices);
// out[i] = m[i, labels[i]]; labels outside [0, C) raise LabelError.
Tensor gather(const Tensor& m, std::span<const int> labels);

// Index of the row maximum; ties resolve to the lowest index.
std::size_t argmax_row(std::span<const double> row);

}  // namespace lda
