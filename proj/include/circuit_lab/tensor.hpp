// Copyright 2026 The Circuit Lab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Dense tensors with reverse-mode differentiation.
//
// A Tensor is a shared handle onto a row-major Eigen matrix plus a logical
// shape; leading dimensions are collapsed into rows and the last dimension is
// the column count. Operations are free functions. When a Tape is active on
// the calling thread (see Tape::Scope) and any input requires a gradient, the
// operation records its backward closure on that tape; otherwise it runs as a
// plain evaluation and its result carries no gradient.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "circuit_lab/error.hpp"

namespace circuit_lab {

using Index = Eigen::Index;
using Shape = std::vector<Index>;
using TokenId = std::int32_t;

template <typename Scalar>
using Matrix =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

template <typename Scalar>
class Tensor {
 public:
  using MatrixType = Matrix<Scalar>;

  Tensor() = default;

  explicit Tensor(Shape shape, bool requires_grad = false)
      : impl_(std::make_shared<Impl>()) {
    const auto [r, c] = collapse(shape);
    impl_->shape = std::move(shape);
    impl_->value = MatrixType::Zero(r, c);
    impl_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, MatrixType value, bool requires_grad = false)
      : impl_(std::make_shared<Impl>()) {
    const auto [r, c] = collapse(shape);
    if (value.rows() != r || value.cols() != c) {
      throw ShapeError("value of size " + std::to_string(value.rows()) + "x" +
                       std::to_string(value.cols()) +
                       " does not fit shape " + shape_string(shape));
    }
    impl_->shape = std::move(shape);
    impl_->value = std::move(value);
    impl_->requires_grad = requires_grad;
  }

  explicit Tensor(MatrixType value, bool requires_grad = false)
      : Tensor(Shape{value.rows(), value.cols()}, std::move(value),
               requires_grad) {}

  static Tensor scalar(Scalar v, bool requires_grad = false) {
    Tensor t(Shape{1}, requires_grad);
    t.value()(0, 0) = v;
    return t;
  }

  static Tensor from_values(Shape shape, std::span<const Scalar> values,
                            bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    if (static_cast<Index>(values.size()) != t.size()) {
      throw ShapeError("expected " + std::to_string(t.size()) +
                       " values for shape " + shape_string(t.shape()) +
                       ", got " + std::to_string(values.size()));
    }
    std::copy(values.begin(), values.end(), t.data());
    return t;
  }

  static Tensor from_values(Shape shape, std::initializer_list<Scalar> values,
                            bool requires_grad = false) {
    return from_values(std::move(shape),
                       std::span<const Scalar>(values.begin(), values.size()),
                       requires_grad);
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  Index rank() const { return static_cast<Index>(impl_->shape.size()); }
  Index size() const { return impl_->value.size(); }
  Index rows() const { return impl_->value.rows(); }
  Index cols() const { return impl_->value.cols(); }

  MatrixType& value() { return impl_->value; }
  const MatrixType& value() const { return impl_->value; }
  Scalar* data() { return impl_->value.data(); }
  const Scalar* data() const { return impl_->value.data(); }

  Scalar item() const {
    if (size() != 1) {
      throw ContractError("item() on tensor of shape " + shape_string(shape()));
    }
    return impl_->value(0, 0);
  }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }

  bool has_grad() const { return impl_->grad.size() != 0; }

  // Gradient buffer, allocated as zeros on first access.
  // The buffer belongs to the shared state, so const handles may accumulate.
  MatrixType& grad() const {
    if (!has_grad()) impl_->grad = MatrixType::Zero(rows(), cols());
    return impl_->grad;
  }

  void zero_grad() {
    if (has_grad()) impl_->grad.setZero();
  }

  // Value copy with no gradient state and no tape attachment.
  Tensor detach() const { return Tensor(shape(), value(), false); }

  // Independent copy of the value that keeps the requires_grad flag.
  Tensor clone() const { return Tensor(shape(), value(), requires_grad()); }

  bool is(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    MatrixType value;
    MatrixType grad;
    bool requires_grad = false;
  };

  static std::pair<Index, Index> collapse(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must have rank >= 1");
    for (Index d : shape) {
      if (d < 1) {
        throw ShapeError("tensor dimensions must be >= 1, got " +
                         shape_string(shape));
      }
    }
    const Index cols = shape.back();
    const Index rows = std::accumulate(shape.begin(), shape.end() - 1,
                                       Index{1}, std::multiplies<>());
    return {rows, cols};
  }

  std::shared_ptr<Impl> impl_;
};

// Ordered record of backward closures. Operations append in evaluation order,
// so the record is topologically sorted; backward() replays it once in reverse
// and then clears it.
template <typename Scalar>
class Tape {
 public:
  using Backward = std::function<void()>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Makes `tape` the recording tape of the current thread for its lifetime.
  class Scope {
   public:
    explicit Scope(Tape& tape) : previous_(active_) { active_ = &tape; }
    ~Scope() { active_ = previous_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

  static Tape* active() { return active_; }

  void record(Backward fn) { ops_.push_back(std::move(fn)); }
  std::size_t size() const { return ops_.size(); }
  void clear() { ops_.clear(); }

  void backward(Tensor<Scalar> loss) {
    if (loss.size() != 1) {
      throw ContractError("backward() needs a scalar loss, got shape " +
                          shape_string(loss.shape()));
    }
    if (!loss.requires_grad()) {
      clear();
      return;
    }
    loss.grad()(0, 0) += Scalar(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    clear();
  }

 private:
  std::vector<Backward> ops_;
  static inline thread_local Tape* active_ = nullptr;
};

template <typename Scalar>
void backward(const Tensor<Scalar>& loss, Tape<Scalar>& tape) {
  tape.backward(loss);
}

namespace detail {

template <typename Scalar, typename... Ts>
Tape<Scalar>* recording_tape(const Ts&... inputs) {
  Tape<Scalar>* tape = Tape<Scalar>::active();
  if (tape == nullptr) return nullptr;
  return (inputs.requires_grad() || ...) ? tape : nullptr;
}

template <typename Scalar>
void require_matrix(const Tensor<Scalar>& t, const char* op) {
  if (t.rank() > 2) {
    throw ShapeError(std::string(op) + " expects rank <= 2, got " +
                     shape_string(t.shape()));
  }
}

template <typename Scalar>
void require_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b,
                        const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

}  // namespace detail

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ for " +
                     shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  auto* tape = detail::recording_tape<Scalar>(a, b);
  Tensor<Scalar> out(Shape{a.rows(), b.cols()}, tape != nullptr);
  out.value().noalias() = a.value() * b.value();
  if (tape) {
    tape->record([a, b, out]() {
      const auto& g = out.grad();
      if (a.requires_grad()) a.grad().noalias() += g * b.value().transpose();
      if (b.requires_grad()) b.grad().noalias() += a.value().transpose() * g;
    });
  }
  return out;
}

// a * b^T without materializing the transpose.
template <typename Scalar>
Tensor<Scalar> matmul_nt(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_matrix(a, "matmul_nt");
  detail::require_matrix(b, "matmul_nt");
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: inner dimensions differ for " +
                     shape_string(a.shape()) + " x " +
                     shape_string(b.shape()) + "^T");
  }
  auto* tape = detail::recording_tape<Scalar>(a, b);
  Tensor<Scalar> out(Shape{a.rows(), b.rows()}, tape != nullptr);
  out.value().noalias() = a.value() * b.value().transpose();
  if (tape) {
    tape->record([a, b, out]() {
      const auto& g = out.grad();
      if (a.requires_grad()) a.grad().noalias() += g * b.value();
      if (b.requires_grad()) b.grad().noalias() += g.transpose() * a.value();
    });
  }
  return out;
}

namespace detail {

// Views a parameter vector of any stored shape as a compile-time row vector.
template <typename Scalar>
Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>> as_row(
    const Matrix<Scalar>& m) {
  return {m.data(), m.size()};
}

}  // namespace detail

// x * W^T + bias with W stored as [out x in] and bias as [out].
template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias) {
  detail::require_matrix(x, "linear");
  if (x.cols() != weight.cols() || bias.size() != weight.rows()) {
    throw ShapeError("linear: input " + shape_string(x.shape()) +
                     " incompatible with weight " +
                     shape_string(weight.shape()) + " and bias " +
                     shape_string(bias.shape()));
  }
  auto* tape = detail::recording_tape<Scalar>(x, weight, bias);
  Tensor<Scalar> out(Shape{x.rows(), weight.rows()}, tape != nullptr);
  out.value().noalias() = x.value() * weight.value().transpose();
  out.value().rowwise() += detail::as_row(bias.value());
  if (tape) {
    tape->record([x, weight, bias, out]() {
      const auto& g = out.grad();
      if (x.requires_grad()) x.grad().noalias() += g * weight.value();
      if (weight.requires_grad()) {
        weight.grad().noalias() += g.transpose() * x.value();
      }
      if (bias.requires_grad()) {
        bias.grad().reshaped(1, bias.size()) += g.colwise().sum();
      }
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape(a, b, "add");
  auto* tape = detail::recording_tape<Scalar>(a, b);
  Tensor<Scalar> out(a.shape(), a.value() + b.value(), tape != nullptr);
  if (tape) {
    tape->record([a, b, out]() {
      if (a.requires_grad()) a.grad() += out.grad();
      if (b.requires_grad()) b.grad() += out.grad();
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape(a, b, "sub");
  auto* tape = detail::recording_tape<Scalar>(a, b);
  Tensor<Scalar> out(a.shape(), a.value() - b.value(), tape != nullptr);
  if (tape) {
    tape->record([a, b, out]() {
      if (a.requires_grad()) a.grad() += out.grad();
      if (b.requires_grad()) b.grad() -= out.grad();
    });
  }
  return out;
}

// Elementwise product.
template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape(a, b, "mul");
  auto* tape = detail::recording_tape<Scalar>(a, b);
  Tensor<Scalar> out(a.shape(), a.value().cwiseProduct(b.value()),
                     tape != nullptr);
  if (tape) {
    tape->record([a, b, out]() {
      if (a.requires_grad()) {
        a.grad() += out.grad().cwiseProduct(b.value());
      }
      if (b.requires_grad()) {
        b.grad() += out.grad().cwiseProduct(a.value());
      }
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar factor) {
  auto* tape = detail::recording_tape<Scalar>(a);
  Tensor<Scalar> out(a.shape(), a.value() * factor, tape != nullptr);
  if (tape) {
    tape->record([a, factor, out]() {
      a.grad() += out.grad() * factor;
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a) {
  auto* tape = detail::recording_tape<Scalar>(a);
  Tensor<Scalar> out = Tensor<Scalar>::scalar(a.value().sum(), tape != nullptr);
  if (tape) {
    tape->record([a, out]() {
      a.grad().array() += out.grad()(0, 0);
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return add(a, b);
}
template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return sub(a, b);
}
template <typename Scalar>
Tensor<Scalar> operator*(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return mul(a, b);
}

// Tanh-form GELU.
template <typename Scalar>
Tensor<Scalar> gelu(const Tensor<Scalar>& x) {
  static constexpr Scalar kAlpha = Scalar(0.7978845608028654);  // sqrt(2/pi)
  static constexpr Scalar kBeta = Scalar(0.044715);
  auto* tape = detail::recording_tape<Scalar>(x);
  const auto& v = x.value().array();
  Matrix<Scalar> t =
      (kAlpha * (v + kBeta * v.cube())).tanh().matrix();
  Tensor<Scalar> out(x.shape(),
                     (Scalar(0.5) * v * (Scalar(1) + t.array())).matrix(),
                     tape != nullptr);
  if (tape) {
    tape->record([x, t = std::move(t), out]() {
      const auto v = x.value().array();
      const auto ta = t.array();
      const auto dydx =
          Scalar(0.5) * (Scalar(1) + ta) +
          Scalar(0.5) * v * (Scalar(1) - ta.square()) * kAlpha *
              (Scalar(1) + Scalar(3) * kBeta * v.square());
      x.grad().array() += out.grad().array() * dydx;
    });
  }
  return out;
}

// Softmax along `axis` of the logical shape, stabilized by subtracting the
// maximum of each slice.
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x, Index axis) {
  if (axis < 0 || axis >= x.rank()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) +
                     " out of range for shape " + shape_string(x.shape()));
  }
  if (!x.value().allFinite()) {
    throw NumericError("softmax: non-finite input");
  }
  const Shape& shape = x.shape();
  const Index n = shape[static_cast<std::size_t>(axis)];
  Index inner = 1;
  for (std::size_t d = static_cast<std::size_t>(axis) + 1; d < shape.size();
       ++d) {
    inner *= shape[d];
  }
  const Index outer = x.size() / (n * inner);

  auto* tape = detail::recording_tape<Scalar>(x);
  Tensor<Scalar> out(shape, tape != nullptr);
  const Scalar* in = x.data();
  Scalar* y = out.data();
  for (Index o = 0; o < outer; ++o) {
    for (Index i = 0; i < inner; ++i) {
      const Index base = o * n * inner + i;
      Scalar m = in[base];
      for (Index k = 1; k < n; ++k) m = std::max(m, in[base + k * inner]);
      Scalar z = 0;
      for (Index k = 0; k < n; ++k) {
        const Scalar e = std::exp(in[base + k * inner] - m);
        y[base + k * inner] = e;
        z += e;
      }
      for (Index k = 0; k < n; ++k) y[base + k * inner] /= z;
    }
  }
  if (tape) {
    tape->record([x, out, n, inner, outer]() {
      const Scalar* y = out.data();
      const Scalar* g = out.grad().data();
      Scalar* dx = x.grad().data();
      for (Index o = 0; o < outer; ++o) {
        for (Index i = 0; i < inner; ++i) {
          const Index base = o * n * inner + i;
          Scalar dot = 0;
          for (Index k = 0; k < n; ++k) {
            dot += y[base + k * inner] * g[base + k * inner];
          }
          for (Index k = 0; k < n; ++k) {
            const Index at = base + k * inner;
            dx[at] += y[at] * (g[at] - dot);
          }
        }
      }
    });
  }
  return out;
}

// Normalizes each row to zero mean and unit (biased) variance, then applies
// gain and bias over the last dimension.
template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gain,
                          const Tensor<Scalar>& bias, Scalar eps = Scalar(1e-5)) {
  const Index d = x.cols();
  if (gain.size() != d || bias.size() != d) {
    throw ShapeError("layer_norm: gain " + shape_string(gain.shape()) +
                     " / bias " + shape_string(bias.shape()) +
                     " do not match last dimension of " +
                     shape_string(x.shape()));
  }
  auto* tape = detail::recording_tape<Scalar>(x, gain, bias);
  const auto& v = x.value();
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> mean = v.rowwise().mean();
  Matrix<Scalar> centered = v.colwise() - mean;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> rstd =
      ((centered.array().square().rowwise().sum() / Scalar(d)) + eps)
          .rsqrt()
          .matrix();
  Matrix<Scalar> xhat = centered.array().colwise() * rstd.array();
  const auto g_row = detail::as_row(gain.value());
  const auto b_row = detail::as_row(bias.value());
  Tensor<Scalar> out(x.shape(), tape != nullptr);
  out.value() = (xhat.array().rowwise() * g_row.array()).matrix();
  out.value().rowwise() += b_row;
  if (tape) {
    tape->record([x, gain, bias, out, xhat = std::move(xhat),
                  rstd = std::move(rstd), d]() {
      const auto& g = out.grad();
      if (gain.requires_grad()) {
        gain.grad().reshaped(1, d) +=
            g.cwiseProduct(xhat).colwise().sum();
      }
      if (bias.requires_grad()) {
        bias.grad().reshaped(1, d) += g.colwise().sum();
      }
      if (x.requires_grad()) {
        Matrix<Scalar> dxhat =
            g.array().rowwise() * detail::as_row(gain.value()).array();
        const auto mean_dxhat = dxhat.rowwise().mean();
        const auto mean_dxhat_xhat =
            dxhat.cwiseProduct(xhat).rowwise().mean();
        Matrix<Scalar> dx = dxhat;
        dx.colwise() -= mean_dxhat;
        dx -= (xhat.array().colwise() * mean_dxhat_xhat.array()).matrix();
        x.grad() += (dx.array().colwise() * rstd.array()).matrix();
      }
    });
  }
  return out;
}

// Row gather: out[i] = table[rows[i]]. Backward scatters additively, so
// repeated indices accumulate.
template <typename Scalar>
Tensor<Scalar> gather_rows(const Tensor<Scalar>& table,
                           std::span<const Index> rows) {
  detail::require_matrix(table, "gather_rows");
  if (rows.empty()) throw ShapeError("gather_rows: empty index list");
  for (Index r : rows) {
    if (r < 0 || r >= table.rows()) {
      throw ShapeError("gather_rows: index " + std::to_string(r) +
                       " out of range for " + shape_string(table.shape()));
    }
  }
  auto* tape = detail::recording_tape<Scalar>(table);
  Tensor<Scalar> out(Shape{static_cast<Index>(rows.size()), table.cols()},
                     tape != nullptr);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.value().row(static_cast<Index>(i)) = table.value().row(rows[i]);
  }
  if (tape) {
    tape->record([table, out,
                  idx = std::vector<Index>(rows.begin(), rows.end())]() {
      auto& dt = table.grad();
      const auto& g = out.grad();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        dt.row(idx[i]) += g.row(static_cast<Index>(i));
      }
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> embedding(const Tensor<Scalar>& table,
                         std::span<const TokenId> ids) {
  std::vector<Index> rows(ids.begin(), ids.end());
  return gather_rows(table, std::span<const Index>(rows));
}

// Mean over masked rows of -log softmax(logits)[target]. Uses log-sum-exp.
template <typename Scalar>
Tensor<Scalar> cross_entropy_masked(const Tensor<Scalar>& logits,
                                    std::span<const TokenId> targets,
                                    const std::vector<bool>& mask) {
  detail::require_matrix(logits, "cross_entropy_masked");
  const Index rows = logits.rows();
  const Index vocab = logits.cols();
  if (static_cast<Index>(targets.size()) != rows ||
      static_cast<Index>(mask.size()) != rows) {
    throw ShapeError("cross_entropy_masked: logits " +
                     shape_string(logits.shape()) + " vs " +
                     std::to_string(targets.size()) + " targets / " +
                     std::to_string(mask.size()) + " mask entries");
  }
  Index count = 0;
  for (Index t = 0; t < rows; ++t) {
    if (!mask[static_cast<std::size_t>(t)]) continue;
    ++count;
    const TokenId y = targets[static_cast<std::size_t>(t)];
    if (y < 0 || y >= vocab) {
      throw ShapeError("cross_entropy_masked: target " + std::to_string(y) +
                       " outside vocabulary of " + std::to_string(vocab));
    }
  }
  if (count == 0) {
    throw DegenerateInputError("cross_entropy_masked: mask selects no positions");
  }

  auto* tape = detail::recording_tape<Scalar>(logits);
  const auto& z = logits.value();
  Matrix<Scalar> probs;
  if (tape) probs = Matrix<Scalar>::Zero(rows, vocab);
  double total = 0.0;
  for (Index t = 0; t < rows; ++t) {
    if (!mask[static_cast<std::size_t>(t)]) continue;
    const Scalar m = z.row(t).maxCoeff();
    const Scalar lse = m + std::log((z.row(t).array() - m).exp().sum());
    total += static_cast<double>(lse - z(t, targets[static_cast<std::size_t>(t)]));
    if (tape) probs.row(t) = (z.row(t).array() - lse).exp().matrix();
  }
  Tensor<Scalar> out = Tensor<Scalar>::scalar(
      static_cast<Scalar>(total / static_cast<double>(count)), tape != nullptr);
  if (tape) {
    tape->record([logits, out, probs = std::move(probs),
                  tg = std::vector<TokenId>(targets.begin(), targets.end()),
                  mask, count]() {
      const Scalar g = out.grad()(0, 0) / static_cast<Scalar>(count);
      auto& dz = logits.grad();
      for (Index t = 0; t < dz.rows(); ++t) {
        if (!mask[static_cast<std::size_t>(t)]) continue;
        dz.row(t) += g * probs.row(t);
        dz(t, tg[static_cast<std::size_t>(t)]) -= g;
      }
    });
  }
  return out;
}

// Multi-head scaled dot-product attention on packed [T x d] projections.
// Head h uses columns [h*d/H, (h+1)*d/H). With `causal`, query i attends only
// to keys j <= i and the weights at j > i are exactly zero. When `weights` is
// non-null it receives one [T x T] row-stochastic matrix per head.
template <typename Scalar>
Tensor<Scalar> multi_head_attention(const Tensor<Scalar>& q,
                                    const Tensor<Scalar>& k,
                                    const Tensor<Scalar>& v, Index n_heads,
                                    bool causal,
                                    std::vector<Matrix<Scalar>>* weights = nullptr) {
  detail::require_same_shape(q, k, "attention");
  detail::require_same_shape(q, v, "attention");
  detail::require_matrix(q, "attention");
  const Index T = q.rows();
  const Index d = q.cols();
  if (n_heads < 1 || d % n_heads != 0) {
    throw ShapeError("attention: width " + std::to_string(d) +
                     " not divisible into " + std::to_string(n_heads) +
                     " heads");
  }
  const Index dk = d / n_heads;
  const Scalar inv_sqrt = Scalar(1) / std::sqrt(static_cast<Scalar>(dk));

  auto* tape = detail::recording_tape<Scalar>(q, k, v);
  Tensor<Scalar> out(Shape{T, d}, tape != nullptr);
  std::vector<Matrix<Scalar>> probs(static_cast<std::size_t>(n_heads));
  for (Index h = 0; h < n_heads; ++h) {
    const auto qh = q.value().middleCols(h * dk, dk);
    const auto kh = k.value().middleCols(h * dk, dk);
    const auto vh = v.value().middleCols(h * dk, dk);
    Matrix<Scalar>& p = probs[static_cast<std::size_t>(h)];
    p.noalias() = qh * kh.transpose();
    p *= inv_sqrt;
    for (Index i = 0; i < T; ++i) {
      const Index n_keys = causal ? i + 1 : T;
      auto row = p.row(i).head(n_keys);
      const Scalar m = row.maxCoeff();
      row = (row.array() - m).exp().matrix();
      row /= row.sum();
      if (n_keys < T) p.row(i).tail(T - n_keys).setZero();
    }
    out.value().middleCols(h * dk, dk).noalias() = p * vh;
  }
  if (weights) *weights = probs;
  if (tape) {
    tape->record([q, k, v, out, probs = std::move(probs), n_heads, dk,
                  inv_sqrt]() {
      const auto& g = out.grad();
      Matrix<Scalar> dp;
      for (Index h = 0; h < n_heads; ++h) {
        const Matrix<Scalar>& p = probs[static_cast<std::size_t>(h)];
        const auto gh = g.middleCols(h * dk, dk);
        if (v.requires_grad()) {
          v.grad().middleCols(h * dk, dk).noalias() += p.transpose() * gh;
        }
        if (!q.requires_grad() && !k.requires_grad()) continue;
        dp.noalias() = gh * v.value().middleCols(h * dk, dk).transpose();
        const auto row_dot = p.cwiseProduct(dp).rowwise().sum();
        Matrix<Scalar> ds = (p.array() * (dp.colwise() - row_dot).array()).matrix();
        ds *= inv_sqrt;
        if (q.requires_grad()) {
          q.grad().middleCols(h * dk, dk).noalias() +=
              ds * k.value().middleCols(h * dk, dk);
        }
        if (k.requires_grad()) {
          k.grad().middleCols(h * dk, dk).noalias() +=
              ds.transpose() * q.value().middleCols(h * dk, dk);
        }
      }
    });
  }
  return out;
}

template <typename Scalar>
struct AttentionResult {
  Tensor<Scalar> output;
  Matrix<Scalar> weights;
};

// Single-head softmax(Q K^T / sqrt(d_k)) V.
template <typename Scalar>
AttentionResult<Scalar> attention(const Tensor<Scalar>& q,
                                  const Tensor<Scalar>& k,
                                  const Tensor<Scalar>& v, bool causal) {
  std::vector<Matrix<Scalar>> w;
  Tensor<Scalar> out = multi_head_attention(q, k, v, Index{1}, causal, &w);
  return {std::move(out), std::move(w.front())};
}

}  // namespace circuit_lab
