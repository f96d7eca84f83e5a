#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "s2st/core/tensor.hpp"

// Differentiable primitives. Every op checks its shape contract and throws
// std::invalid_argument on violation; ops that can overflow throw
// std::overflow_error instead of producing Inf/NaN.
namespace s2st::ops {

// Elementwise binary ops. Shapes must match, or `b` may be a scalar.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

// x (m x n) + bias (n), broadcast over rows.
Tensor add_row(const Tensor& x, const Tensor& bias);
// x (m x n) * v (n), broadcast over rows.
Tensor mul_row(const Tensor& x, const Tensor& v);
// x (m x n) * v (m x 1 or m), broadcast over columns.
Tensor mul_col(const Tensor& x, const Tensor& v);

Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);
Tensor neg(const Tensor& x);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor square(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor swish(const Tensor& x);

// Row-wise (last axis) softmax / log-softmax, max-subtracted.
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);

// Last-axis layer norm with per-column gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);
// Divides each row by its L2 norm (plus eps).
Tensor normalize_rows(const Tensor& x, double eps = 1e-12);

// Rows `ids` of `table`; also used for embedding lookup and duration upsampling.
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids);
// For each row r, picks columns idx[r*per_row .. r*per_row+per_row). Result rows x per_row.
Tensor gather_cols(const Tensor& x, std::span<const std::size_t> idx, std::size_t per_row);

Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// axis 0: column sums (n); axis 1: row sums (m).
Tensor sum_axis(const Tensor& x, std::size_t axis);
Tensor mean_axis(const Tensor& x, std::size_t axis);

// Entries with mask != 0 are replaced by `value` and receive no gradient.
Tensor masked_fill(const Tensor& x, std::span<const std::uint8_t> mask, double value);

// Same-padded depthwise convolution along time: x (T x D), kernel (K x D), K odd.
Tensor depthwise_conv1d(const Tensor& x, const Tensor& kernel);

// Forward value of `value`, gradient routed to `grad_path` (same shape).
Tensor straight_through(const Tensor& value, const Tensor& grad_path);

namespace detail {

using BackwardFn = std::function<void(s2st::detail::Node& self)>;

// Builds an op node. The backward closure is attached only when some parent
// requires grad.
Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::vector<Tensor> parents, BackwardFn backward);

void check_finite(const char* op, std::span<const double> values);

}  // namespace detail

}  // namespace s2st::ops
