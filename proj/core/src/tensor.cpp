#include "unigrf/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "unigrf/errors.hpp"

namespace unigrf::ad {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMatrix = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMapMatrix = Eigen::Map<const RowMatrix<T>>;

template <typename T>
ConstMapMatrix<T> as_matrix(const Node<T>& n) {
  return ConstMapMatrix<T>(n.value.data(), static_cast<Eigen::Index>(n.rows()),
                           static_cast<Eigen::Index>(n.cols()));
}

template <typename T>
MapMatrix<T> grad_matrix(Node<T>& n) {
  return MapMatrix<T>(n.ensure_grad().data(), static_cast<Eigen::Index>(n.rows()),
                      static_cast<Eigen::Index>(n.cols()));
}

template <typename T>
ConstMapMatrix<T> upstream(const Node<T>& n) {
  return ConstMapMatrix<T>(n.grad.data(), static_cast<Eigen::Index>(n.rows()),
                           static_cast<Eigen::Index>(n.cols()));
}

[[noreturn]] void shape_error(Primitive kind, const std::string& detail) {
  throw ShapeError(std::string(primitive_name(kind)) + ": " + detail);
}

template <typename T>
void require_rank2(Primitive kind, const Tensor<T>& t) {
  if (!t.defined()) shape_error(kind, "undefined operand");
  if (t.shape().size() != 2) shape_error(kind, "expected rank-2 operand, got " + shape_string(t.shape()));
}

template <typename T>
std::shared_ptr<Node<T>> make_node(Primitive kind, Shape shape,
                                   std::vector<std::shared_ptr<Node<T>>> inputs) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value.resize(node->shape[0] * node->shape[1]);
  node->op = kind;
  node->requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                    [](const auto& in) { return in->requires_grad; });
  node->inputs = std::move(inputs);
  return node;
}

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= T(0)) {
    const T z = std::exp(-x);
    return T(1) / (T(1) + z);
  }
  const T z = std::exp(x);
  return z / (T(1) + z);
}

}  // namespace

std::string_view primitive_name(Primitive kind) {
  switch (kind) {
    case Primitive::leaf: return "leaf";
    case Primitive::matmul: return "matmul";
    case Primitive::add: return "add";
    case Primitive::elementwise_mul: return "elementwise_mul";
    case Primitive::row_sum: return "row_sum";
    case Primitive::sigmoid: return "sigmoid";
    case Primitive::exp: return "exp";
    case Primitive::log: return "log";
    case Primitive::log_sum_exp_row: return "log_sum_exp_row";
    case Primitive::gather_rows: return "gather_rows";
    case Primitive::scatter_add_rows: return "scatter_add_rows";
    case Primitive::layer_norm: return "layer_norm";
    case Primitive::silu: return "silu";
    case Primitive::scale: return "scale";
    case Primitive::transpose: return "transpose";
    case Primitive::masked_fill: return "masked_fill";
    case Primitive::softmax_row: return "softmax_row";
    case Primitive::concat_rows: return "concat_rows";
  }
  return "unknown";
}

std::span<const Primitive> all_primitives() {
  static constexpr std::array kAll = {
      Primitive::matmul,         Primitive::add,          Primitive::elementwise_mul,
      Primitive::row_sum,        Primitive::sigmoid,      Primitive::exp,
      Primitive::log,            Primitive::log_sum_exp_row, Primitive::gather_rows,
      Primitive::scatter_add_rows, Primitive::layer_norm, Primitive::silu,
      Primitive::scale,          Primitive::transpose,    Primitive::masked_fill,
      Primitive::softmax_row,    Primitive::concat_rows,
  };
  return kAll;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "x" : "") << shape[i];
  out << ']';
  return out.str();
}

// --- Tensor -----------------------------------------------------------------

template <typename T>
Tensor<T> Tensor<T>::constant(Shape shape, std::vector<T> values) {
  if (shape.size() != 2 || shape[0] == 0 || shape[1] == 0)
    throw ShapeError("constant: extents must be two positive values, got " + shape_string(shape));
  if (values.size() != shape[0] * shape[1])
    throw ShapeError("constant: " + std::to_string(values.size()) + " values for shape " +
                     shape_string(shape));
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::zeros(std::size_t rows, std::size_t cols) {
  return constant(Shape{rows, cols}, std::vector<T>(rows * cols, T(0)));
}

template <typename T>
Tensor<T> Tensor<T>::parameter(std::string name, Shape shape, std::vector<T> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  t.node_->name = std::move(name);
  t.node_->grad.assign(t.node_->value.size(), T(0));
  return t;
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1) throw ContractError("item(): tensor of shape " + shape_string(shape()) + " is not scalar");
  return node_->value[0];
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

// --- primitives -------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank2(Primitive::matmul, a);
  require_rank2(Primitive::matmul, b);
  if (a.cols() != b.rows())
    shape_error(Primitive::matmul, shape_string(a.shape()) + " x " + shape_string(b.shape()));
  auto node = make_node<T>(Primitive::matmul, {a.rows(), b.cols()}, {a.handle(), b.handle()});
  MapMatrix<T>(node->value.data(), a.rows(), b.cols()).noalias() =
      as_matrix(*a.node()) * as_matrix(*b.node());
  node->backward = [](Node<T>& self) {
    auto& lhs = *self.inputs[0];
    auto& rhs = *self.inputs[1];
    const auto g = upstream(self);
    if (lhs.requires_grad) grad_matrix(lhs).noalias() += g * as_matrix(rhs).transpose();
    if (rhs.requires_grad) grad_matrix(rhs).noalias() += as_matrix(lhs).transpose() * g;
  };
  return Tensor<T>(node);
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank2(Primitive::add, a);
  require_rank2(Primitive::add, b);
  const bool same = a.shape() == b.shape();
  const bool row_bcast = b.rows() == 1 && b.cols() == a.cols();
  const bool scalar_bcast = b.rows() == 1 && b.cols() == 1;
  if (!same && !row_bcast && !scalar_bcast)
    shape_error(Primitive::add, shape_string(a.shape()) + " + " + shape_string(b.shape()));
  auto node = make_node<T>(Primitive::add, a.shape(), {a.handle(), b.handle()});
  const std::size_t rows = a.rows(), cols = a.cols();
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  auto& out = node->value;
  if (same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  } else if (scalar_bcast) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[0];
  } else {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = av[r * cols + c] + bv[c];
  }
  node->backward = [same, scalar_bcast](Node<T>& self) {
    auto& lhs = *self.inputs[0];
    auto& rhs = *self.inputs[1];
    const auto& g = self.grad;
    if (lhs.requires_grad) {
      auto& ga = lhs.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (rhs.requires_grad) {
      auto& gb = rhs.ensure_grad();
      if (same) {
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      } else if (scalar_bcast) {
        T s = T(0);
        for (T v : g) s += v;
        gb[0] += s;
      } else {
        const std::size_t cols = self.cols();
        for (std::size_t r = 0; r < self.rows(); ++r)
          for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
      }
    }
  };
  return Tensor<T>(node);
}

template <typename T>
Tensor<T> elementwise_mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank2(Primitive::elementwise_mul, a);
  require_rank2(Primitive::elementwise_mul, b);
  if (a.shape() != b.shape())
    shape_error(Primitive::elementwise_mul, shape_string(a.shape()) + " * " + shape_string(b.shape()));
  auto node = make_node<T>(Primitive::elementwise_mul, a.shape(), {a.handle(), b.handle()});
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  for (std::size_t i = 0; i < av.size(); ++i) node->value[i] = av[i] * bv[i];
  node->backward = [](Node<T>& self) {
    auto& lhs = *self.inputs[0];
    auto& rhs = *self.inputs[1];
    const auto& g = self.grad;
    if (lhs.requires_grad) {
      auto& ga = lhs.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * rhs.value[i];
    }
    if (rhs.requires_grad) {
      auto& gb = rhs.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * lhs.value[i];
    }
  };
  return Tensor<T>(node);
}

template <typename T>
Tensor<T> row_sum(const Tensor<T>& a) {
  require_rank2(Primitive::row_sum, a);
  auto node = make_node<T>(Primitive::row_sum, {a.rows(), 1}, {a.handle()});
  const std::size_t cols = a.cols();
  const auto& av = a.node()->value;
  for (std::size_t r = 0; r < a.rows(); ++r) {
    T s = T(0);
    for (std::size_t c = 0; c < cols; ++c) s += av[r * cols + c];
    node->value[r] = s;
  }
  node->backward = [](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& gi = in.ensure_grad();
    const std::size_t cols = in.cols();
    for (std::size_t r = 0; r < in.rows(); ++r)
      for (std::size_t c = 0; c < cols; ++c) gi[r * cols + c] += self.grad[r];
  };
  return Tensor<T>(node);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  require_rank2(Primitive::sigmoid, a);
  auto node = make_node<T>(Primitive::sigmoid, a.shape(), {a.handle()});
  const auto& av = a.node()->value;
  for (std::size_t i = 0; i < av.size(); ++i) node->value[i] = sigmoid_scalar(av[i]);
  node->backward = [](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& gi = in.ensure_grad();
    for (std::size_t i = 0; i < gi.size(); ++i) {
      const T y = self.value[i];
      gi[i] += self.grad[i] * y * (T(1) - y);
    }
  };
  return Tensor<T>(node);
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  require_rank2(Primitive::exp, a);
  auto node = make_node<T>(Primitive::exp, a.shape(), {a.handle()});
  const auto& av = a.node()->value;
  for (std::size_t i = 0; i < av.size(); ++i) node->value[i] = std::exp(av[i]);
  node->backward = [](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& gi = in.ensure_grad();
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += self.grad[i] * self.value[i];
  };
  return Tensor<T>(node);
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  require_rank2(Primitive::log, a);
  const auto& av = a.node()->value;
  for (std::size_t i = 0; i < av.size(); ++i) {
    if (!(av[i] > T(0)))
      throw DomainError("log: non-positive value " + std::to_string(static_cast<double>(av[i])) +
                        " at flat index " + std::to_string(i));
  }
  auto node = make_node<T>(Primitive::log, a.shape(), {a.handle()});
  for (std::size_t i = 0; i < av.size(); ++i) node->value[i] = std::log(av[i]);
  node->backward = [](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& gi = in.ensure_grad();
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += self.grad[i] / in.value[i];
  };
  return Tensor<T>(node);
}

namespace {

// Row-wise softmax of `in` into `out` (both rows x cols), max-shifted.
// Returns the log-sum-exp of each row when `lse` is non-null.
template <typename T>
void softmax_rows(const std::vector<T>& in, std::size_t rows, std::size_t cols, std::vector<T>& out,
                  std::vector<T>* lse) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = in.data() + r * cols;
    T* y = out.data() + r * cols;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t c = 0; c < cols; ++c) mx = std::max(mx, x[c]);
    T s = T(0);
    for (std::size_t c = 0; c < cols; ++c) {
      y[c] = std::exp(x[c] - mx);
      s += y[c];
    }
    for (std::size_t c = 0; c < cols; ++c) y[c] /= s;
    if (lse) (*lse)[r] = mx + std::log(s);
  }
}

}  // namespace

template <typename T>
Tensor<T> log_sum_exp_row(const Tensor<T>& a) {
  require_rank2(Primitive::log_sum_exp_row, a);
  auto node = make_node<T>(Primitive::log_sum_exp_row, {a.rows(), 1}, {a.handle()});
  std::vector<T> probs(a.size());
  softmax_rows(a.node()->value, a.rows(), a.cols(), probs, &node->value);
  node->backward = [probs = std::move(probs)](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& gi = in.ensure_grad();
    const std::size_t cols = in.cols();
    for (std::size_t r = 0; r < in.rows(); ++r)
      for (std::size_t c = 0; c < cols; ++c) gi[r * cols + c] += self.grad[r] * probs[r * cols + c];
  };
  return Tensor<T>(node);
}

template <typename T>
Tensor<T> softmax_row(const Tensor<T>& a) {
  require_rank2(Primitive::softmax_row, a);
  auto node = make_node<T>(Primitive::softmax_row, a.shape(), {a.handle()});
  softmax_rows<T>(a.node()->value, a.rows(), a.cols(), node->value, nullptr);
  node->backward = [](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& gi = in.ensure_grad();
    const std::size_t cols = in.cols();
    for (std::size_t r = 0; r < in.rows(); ++r) {
      const T* y = self.value.data() + r * cols;
      const T* g = self.grad.data() + r * cols;
      T dot = T(0);
      for (std::size_t c = 0; c < cols; ++c) dot += y[c] * g[c];
      for (std::size_t c = 0; c < cols; ++c) gi[r * cols + c] += y[c] * (g[c] - dot);
    }
  };
  return Tensor<T>(node);
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::vector<std::size_t> indices) {
  require_rank2(Primitive::gather_rows, table);
  if (indices.empty()) shape_error(Primitive::gather_rows, "empty index list");
  for (std::size_t idx : indices) {
    if (idx >= table.rows())
      shape_error(Primitive::gather_rows, "row " + std::to_string(idx) + " out of range for " +
                                              shape_string(table.shape()));
  }
  const std::size_t cols = table.cols();
  auto node = make_node<T>(Primitive::gather_rows, {indices.size(), cols}, {table.handle()});
  const auto& tv = table.node()->value;
  for (std::size_t r = 0; r < indices.size(); ++r)
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(indices[r] * cols), cols,
                node->value.begin() + static_cast<std::ptrdiff_t>(r * cols));
  node->backward = [indices = std::move(indices)](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& gi = in.ensure_grad();
    const std::size_t cols = in.cols();
    for (std::size_t r = 0; r < indices.size(); ++r) {
      T* dst = gi.data() + indices[r] * cols;
      const T* src = self.grad.data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
    }
  };
  return Tensor<T>(node);
}

template <typename T>
Tensor<T> scatter_add_rows(const Tensor<T>& src, std::vector<std::size_t> indices,
                           std::size_t out_rows) {
  require_rank2(Primitive::scatter_add_rows, src);
  if (indices.size() != src.rows())
    shape_error(Primitive::scatter_add_rows, std::to_string(indices.size()) + " indices for " +
                                                 shape_string(src.shape()));
  if (out_rows == 0) shape_error(Primitive::scatter_add_rows, "zero output rows");
  for (std::size_t idx : indices) {
    if (idx >= out_rows)
      shape_error(Primitive::scatter_add_rows,
                  "target row " + std::to_string(idx) + " >= " + std::to_string(out_rows));
  }
  const std::size_t cols = src.cols();
  auto node = make_node<T>(Primitive::scatter_add_rows, {out_rows, cols}, {src.handle()});
  const auto& sv = src.node()->value;
  for (std::size_t r = 0; r < indices.size(); ++r)
    for (std::size_t c = 0; c < cols; ++c) node->value[indices[r] * cols + c] += sv[r * cols + c];
  node->backward = [indices = std::move(indices)](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& gi = in.ensure_grad();
    const std::size_t cols = in.cols();
    for (std::size_t r = 0; r < indices.size(); ++r)
      for (std::size_t c = 0; c < cols; ++c) gi[r * cols + c] += self.grad[indices[r] * cols + c];
  };
  return Tensor<T>(node);
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  require_rank2(Primitive::layer_norm, x);
  require_rank2(Primitive::layer_norm, gain);
  require_rank2(Primitive::layer_norm, bias);
  const std::size_t rows = x.rows(), cols = x.cols();
  if (gain.rows() != 1 || gain.cols() != cols || bias.rows() != 1 || bias.cols() != cols)
    shape_error(Primitive::layer_norm, "x " + shape_string(x.shape()) + ", gain " +
                                           shape_string(gain.shape()) + ", bias " +
                                           shape_string(bias.shape()));
  auto node = make_node<T>(Primitive::layer_norm, x.shape(), {x.handle(), gain.handle(), bias.handle()});
  std::vector<T> normed(x.size());
  std::vector<T> inv_std(rows);
  const auto& xv = x.node()->value;
  const auto& gv = gain.node()->value;
  const auto& bv = bias.node()->value;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.data() + r * cols;
    T mean = T(0);
    for (std::size_t c = 0; c < cols; ++c) mean += xr[c];
    mean /= T(cols);
    T var = T(0);
    for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= T(cols);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) {
      const T xh = (xr[c] - mean) * inv_std[r];
      normed[r * cols + c] = xh;
      node->value[r * cols + c] = xh * gv[c] + bv[c];
    }
  }
  node->backward = [normed = std::move(normed), inv_std = std::move(inv_std)](Node<T>& self) {
    auto& xin = *self.inputs[0];
    auto& gin = *self.inputs[1];
    auto& bin = *self.inputs[2];
    const std::size_t rows = self.rows(), cols = self.cols();
    const auto& g = self.grad;
    if (gin.requires_grad) {
      auto& gg = gin.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) gg[c] += g[r * cols + c] * normed[r * cols + c];
    }
    if (bin.requires_grad) {
      auto& gb = bin.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
    }
    if (xin.requires_grad) {
      auto& gx = xin.ensure_grad();
      const auto& gain_v = gin.value;
      for (std::size_t r = 0; r < rows; ++r) {
        // dx = inv_std * (dxh - mean(dxh) - xh * mean(dxh * xh))
        T mean_d = T(0), mean_dx = T(0);
        for (std::size_t c = 0; c < cols; ++c) {
          const T dxh = g[r * cols + c] * gain_v[c];
          mean_d += dxh;
          mean_dx += dxh * normed[r * cols + c];
        }
        mean_d /= T(cols);
        mean_dx /= T(cols);
        for (std::size_t c = 0; c < cols; ++c) {
          const T dxh = g[r * cols + c] * gain_v[c];
          gx[r * cols + c] += inv_std[r] * (dxh - mean_d - normed[r * cols + c] * mean_dx);
        }
      }
    }
  };
  return Tensor<T>(node);
}

template <typename T>
Tensor<T> silu(const Tensor<T>& a) {
  require_rank2(Primitive::silu, a);
  auto node = make_node<T>(Primitive::silu, a.shape(), {a.handle()});
  const auto& av = a.node()->value;
  for (std::size_t i = 0; i < av.size(); ++i) node->value[i] = av[i] * sigmoid_scalar(av[i]);
  node->backward = [](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& gi = in.ensure_grad();
    for (std::size_t i = 0; i < gi.size(); ++i) {
      const T x = in.value[i];
      const T s = sigmoid_scalar(x);
      gi[i] += self.grad[i] * s * (T(1) + x * (T(1) - s));
    }
  };
  return Tensor<T>(node);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  require_rank2(Primitive::scale, a);
  auto node = make_node<T>(Primitive::scale, a.shape(), {a.handle()});
  const auto& av = a.node()->value;
  for (std::size_t i = 0; i < av.size(); ++i) node->value[i] = av[i] * factor;
  node->backward = [factor](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& gi = in.ensure_grad();
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += self.grad[i] * factor;
  };
  return Tensor<T>(node);
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_rank2(Primitive::transpose, a);
  auto node = make_node<T>(Primitive::transpose, {a.cols(), a.rows()}, {a.handle()});
  MapMatrix<T>(node->value.data(), a.cols(), a.rows()) = as_matrix(*a.node()).transpose();
  node->backward = [](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    grad_matrix(in) += upstream(self).transpose();
  };
  return Tensor<T>(node);
}

template <typename T>
Tensor<T> masked_fill(const Tensor<T>& a, std::vector<std::uint8_t> mask, T fill) {
  require_rank2(Primitive::masked_fill, a);
  if (mask.size() != a.size())
    shape_error(Primitive::masked_fill, "mask of " + std::to_string(mask.size()) + " entries for " +
                                            shape_string(a.shape()));
  auto node = make_node<T>(Primitive::masked_fill, a.shape(), {a.handle()});
  const auto& av = a.node()->value;
  for (std::size_t i = 0; i < av.size(); ++i) node->value[i] = mask[i] ? fill : av[i];
  node->backward = [mask = std::move(mask)](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& gi = in.ensure_grad();
    for (std::size_t i = 0; i < gi.size(); ++i)
      if (!mask[i]) gi[i] += self.grad[i];
  };
  return Tensor<T>(node);
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) shape_error(Primitive::concat_rows, "no operands");
  std::size_t rows = 0;
  const std::size_t cols = parts.front().defined() ? parts.front().cols() : 0;
  std::vector<std::shared_ptr<Node<T>>> inputs;
  for (const auto& p : parts) {
    require_rank2(Primitive::concat_rows, p);
    if (p.cols() != cols)
      shape_error(Primitive::concat_rows, shape_string(parts.front().shape()) + " vs " +
                                              shape_string(p.shape()));
    rows += p.rows();
    inputs.push_back(p.handle());
  }
  auto node = make_node<T>(Primitive::concat_rows, {rows, cols}, std::move(inputs));
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.node()->value.begin(), p.node()->value.end(),
              node->value.begin() + static_cast<std::ptrdiff_t>(offset));
    offset += p.size();
  }
  node->backward = [](Node<T>& self) {
    std::size_t offset = 0;
    for (auto& in : self.inputs) {
      if (in->requires_grad) {
        auto& gi = in->ensure_grad();
        for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += self.grad[offset + i];
      }
      offset += in->size();
    }
  };
  return Tensor<T>(node);
}

template <typename T>
Tensor<T> apply_primitive(Primitive kind, std::span<const Tensor<T>> inputs,
                          const PrimitiveArgs<T>& args) {
  auto arity = [&](std::size_t n) {
    if (inputs.size() != n)
      shape_error(kind, "expected " + std::to_string(n) + " operand(s), got " +
                            std::to_string(inputs.size()));
  };
  switch (kind) {
    case Primitive::matmul: arity(2); return matmul(inputs[0], inputs[1]);
    case Primitive::add: arity(2); return add(inputs[0], inputs[1]);
    case Primitive::elementwise_mul: arity(2); return elementwise_mul(inputs[0], inputs[1]);
    case Primitive::row_sum: arity(1); return row_sum(inputs[0]);
    case Primitive::sigmoid: arity(1); return sigmoid(inputs[0]);
    case Primitive::exp: arity(1); return exp(inputs[0]);
    case Primitive::log: arity(1); return log(inputs[0]);
    case Primitive::log_sum_exp_row: arity(1); return log_sum_exp_row(inputs[0]);
    case Primitive::gather_rows: arity(1); return gather_rows(inputs[0], args.indices);
    case Primitive::scatter_add_rows:
      arity(1);
      return scatter_add_rows(inputs[0], args.indices, args.out_rows);
    case Primitive::layer_norm: arity(3); return layer_norm(inputs[0], inputs[1], inputs[2], args.eps);
    case Primitive::silu: arity(1); return silu(inputs[0]);
    case Primitive::scale: arity(1); return scale(inputs[0], args.scalar);
    case Primitive::transpose: arity(1); return transpose(inputs[0]);
    case Primitive::masked_fill: arity(1); return masked_fill(inputs[0], args.mask, args.scalar);
    case Primitive::softmax_row: arity(1); return softmax_row(inputs[0]);
    case Primitive::concat_rows:
      return concat_rows(std::vector<Tensor<T>>(inputs.begin(), inputs.end()));
    case Primitive::leaf: break;
  }
  shape_error(kind, "not an applicable primitive");
}

// --- differentiation --------------------------------------------------------

template <typename T>
std::vector<Tensor<T>> backward(const Tensor<T>& loss, T seed) {
  if (!loss.defined() || loss.size() != 1)
    throw ContractError("backward: loss must be scalar, got shape " +
                        (loss.defined() ? shape_string(loss.shape()) : std::string("<undefined>")));
  std::vector<Tensor<T>> leaves;
  if (!loss.requires_grad()) return leaves;

  // Iterative post-order DFS restricted to nodes that carry gradient.
  std::vector<std::shared_ptr<Node<T>>> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<std::shared_ptr<Node<T>>, std::size_t>> stack;
  stack.emplace_back(loss.handle(), 0);
  visited.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      const auto& child = node->inputs[next++];
      if (child->requires_grad && visited.insert(child.get()).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(std::move(node));
      stack.pop_back();
    }
  }

  for (const auto& node : order) {
    if (node->is_leaf()) {
      node->ensure_grad();
      leaves.emplace_back(node);
    } else {
      node->grad.assign(node->value.size(), T(0));
    }
  }
  loss.node()->ensure_grad()[0] += seed;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = it->get();
    if (node->is_leaf()) continue;
    node->backward(*node);
    // Interior gradients are not needed once propagated.
    std::vector<T>().swap(node->grad);
  }
  return leaves;
}

template <typename T>
void zero_grads(std::span<Tensor<T>> params) {
  for (auto& p : params) p.zero_grad();
}

#define UNIGRF_INSTANTIATE_TENSOR(T)                                                            \
  template class Tensor<T>;                                                                     \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> elementwise_mul(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> row_sum(const Tensor<T>&);                                                 \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                 \
  template Tensor<T> exp(const Tensor<T>&);                                                     \
  template Tensor<T> log(const Tensor<T>&);                                                     \
  template Tensor<T> log_sum_exp_row(const Tensor<T>&);                                         \
  template Tensor<T> gather_rows(const Tensor<T>&, std::vector<std::size_t>);                   \
  template Tensor<T> scatter_add_rows(const Tensor<T>&, std::vector<std::size_t>, std::size_t); \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);       \
  template Tensor<T> silu(const Tensor<T>&);                                                    \
  template Tensor<T> scale(const Tensor<T>&, T);                                                \
  template Tensor<T> transpose(const Tensor<T>&);                                               \
  template Tensor<T> masked_fill(const Tensor<T>&, std::vector<std::uint8_t>, T);               \
  template Tensor<T> softmax_row(const Tensor<T>&);                                             \
  template Tensor<T> concat_rows(const std::vector<Tensor<T>>&);                                \
  template Tensor<T> apply_primitive(Primitive, std::span<const Tensor<T>>,                     \
                                     const PrimitiveArgs<T>&);                                  \
  template std::vector<Tensor<T>> backward(const Tensor<T>&, T);                                \
  template void zero_grads(std::span<Tensor<T>>);

UNIGRF_INSTANTIATE_TENSOR(float)
UNIGRF_INSTANTIATE_TENSOR(double)

#undef UNIGRF_INSTANTIATE_TENSOR

}  // namespace unigrf::ad
