#pragma once

// Minimal dense reverse-mode automatic differentiation.
//
// Every tensor is a row-major rank-2 array (scalars are 1x1). A Tensor is a
// cheap handle onto a shared graph node; applying a primitive allocates a new
// node that records its inputs and a backward rule. Inputs are never mutated.
// Leaves created with `parameter()` own a persistent gradient buffer that
// backward() accumulates into; intermediate gradients live only for the
// duration of one backward() call.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace unigrf::ad {

using Shape = std::vector<std::size_t>;

enum class Primitive {
  leaf,
  matmul,
  add,
  elementwise_mul,
  row_sum,
  sigmoid,
  exp,
  log,
  log_sum_exp_row,
  gather_rows,
  scatter_add_rows,
  layer_norm,
  silu,
  scale,
  transpose,
  masked_fill,
  softmax_row,
  concat_rows,
};

std::string_view primitive_name(Primitive kind);

/// Every differentiable primitive (excludes `leaf`).
std::span<const Primitive> all_primitives();

std::string shape_string(const Shape& shape);

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  Primitive op = Primitive::leaf;
  std::vector<std::shared_ptr<Node>> inputs;
  bool requires_grad = false;
  std::function<void(Node&)> backward;
  std::string name;

  std::size_t rows() const { return shape[0]; }
  std::size_t cols() const { return shape[1]; }
  std::size_t size() const { return value.size(); }
  bool is_leaf() const { return op == Primitive::leaf; }
  /// Allocates a zero gradient buffer if none exists yet.
  std::vector<T>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  /// Non-differentiable leaf.
  static Tensor constant(Shape shape, std::vector<T> values);
  static Tensor constant(std::size_t rows, std::size_t cols, std::vector<T> values) {
    return constant(Shape{rows, cols}, std::move(values));
  }
  static Tensor zeros(std::size_t rows, std::size_t cols);
  static Tensor scalar(T value) { return constant(1, 1, {value}); }
  /// Differentiable leaf with a persistent, zero-initialised gradient.
  static Tensor parameter(std::string name, Shape shape, std::vector<T> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rows() const { return node_->rows(); }
  std::size_t cols() const { return node_->cols(); }
  std::size_t size() const { return node_->size(); }
  Primitive op() const { return node_->op; }
  bool requires_grad() const { return node_->requires_grad; }
  const std::string& name() const { return node_->name; }

  std::span<const T> values() const { return node_->value; }
  /// Writable values. Only meaningful on leaves (optimizer, finite differences).
  std::span<T> mutable_values() { return node_->value; }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  T at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }
  T item() const;

  void zero_grad();

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& handle() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Extra non-tensor operands for primitives that need them.
template <typename T>
struct PrimitiveArgs {
  std::vector<std::size_t> indices;  // gather_rows / scatter_add_rows
  std::size_t out_rows = 0;          // scatter_add_rows
  T scalar = T(1);                   // scale factor, masked_fill value
  std::vector<std::uint8_t> mask;    // masked_fill: 1 = replace
  T eps = T(1e-5);                   // layer_norm
};

// --- primitives -------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// Same shape, or `b` broadcast as a 1xC row or a 1x1 scalar.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> elementwise_mul(const Tensor<T>& a, const Tensor<T>& b);
/// RxC -> Rx1.
template <typename T>
Tensor<T> row_sum(const Tensor<T>& a);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a);
template <typename T>
Tensor<T> exp(const Tensor<T>& a);
template <typename T>
Tensor<T> log(const Tensor<T>& a);
/// RxC -> Rx1, max-shifted.
template <typename T>
Tensor<T> log_sum_exp_row(const Tensor<T>& a);
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::vector<std::size_t> indices);
template <typename T>
Tensor<T> scatter_add_rows(const Tensor<T>& src, std::vector<std::size_t> indices,
                           std::size_t out_rows);
/// Row-wise normalisation followed by a 1xC gain and 1xC bias.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps = T(1e-5));
template <typename T>
Tensor<T> silu(const Tensor<T>& a);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T>
Tensor<T> transpose(const Tensor<T>& a);
/// Entries whose mask byte is non-zero are replaced by `fill` and receive no gradient.
template <typename T>
Tensor<T> masked_fill(const Tensor<T>& a, std::vector<std::uint8_t> mask, T fill);
/// Row-wise softmax, max-shifted.
template <typename T>
Tensor<T> softmax_row(const Tensor<T>& a);
template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);

/// Uniform dispatch by tag. Throws ShapeError on arity mismatch.
template <typename T>
Tensor<T> apply_primitive(Primitive kind, std::span<const Tensor<T>> inputs,
                          const PrimitiveArgs<T>& args = {});

// --- composites -------------------------------------------------------------

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return add(a, scale(b, T(-1)));
}

/// Sum of every element as a 1x1 tensor.
template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  return row_sum(transpose(row_sum(a)));
}

/// Column concatenation, built from transpose and concat_rows.
template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  std::vector<Tensor<T>> transposed;
  transposed.reserve(parts.size());
  for (const auto& p : parts) transposed.push_back(transpose(p));
  return transpose(concat_rows(transposed));
}

// --- differentiation --------------------------------------------------------

/// Back-propagates from a scalar. Leaf gradients accumulate across calls;
/// use zero_grads() between steps. Returns the requires_grad leaves reached.
template <typename T>
std::vector<Tensor<T>> backward(const Tensor<T>& loss, T seed = T(1));

template <typename T>
void zero_grads(std::span<Tensor<T>> params);

}  // namespace unigrf::ad
