#include "s2st/nn/layers.hpp"

#include <cmath>
#include <stdexcept>

#include "s2st/core/ops.hpp"

namespace s2st::nn {

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, bool zero_init) {
  if (zero_init) {
    weight = Tensor::zeros({in, out}, true);
  } else {
    weight = uniform_init({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  }
  bias = Tensor::zeros({out}, true);
}

Tensor Linear::operator()(const Tensor& x) const { return ops::add_row(ops::matmul(x, weight), bias); }

void Linear::collect(const std::string& prefix, ParameterSet& out) const {
  out.add(prefix + ".w", weight);
  out.add(prefix + ".b", bias);
}

LayerNorm::LayerNorm(std::size_t dim) : gain(Tensor::full({dim}, 1.0, true)), bias(Tensor::zeros({dim}, true)) {}

Tensor LayerNorm::operator()(const Tensor& x) const { return ops::layer_norm(x, gain, bias, eps); }

void LayerNorm::collect(const std::string& prefix, ParameterSet& out) const {
  out.add(prefix + ".g", gain);
  out.add(prefix + ".b", bias);
}

FeedForward::FeedForward(std::size_t dim, std::size_t expansion, Rng& rng, bool zero_output)
    : expand(dim, dim * expansion, rng), project(dim * expansion, dim, rng, zero_output) {}

Tensor FeedForward::forward(const Tensor& x, const ForwardContext& ctx) const {
  return project(dropout(ops::swish(expand(x)), ctx));
}

void FeedForward::collect(const std::string& prefix, ParameterSet& out) const {
  expand.collect(prefix + ".in", out);
  project.collect(prefix + ".out", out);
}

MultiHeadAttention::MultiHeadAttention(std::size_t query_dim, std::size_t memory_dim, std::size_t model_dim,
                                       std::size_t num_heads, Rng& rng, bool zero_output)
    : query(query_dim, model_dim, rng),
      key(memory_dim, model_dim, rng),
      value(memory_dim, model_dim, rng),
      output(model_dim, model_dim, rng, zero_output),
      heads(num_heads) {
  if (num_heads == 0 || model_dim % num_heads != 0) {
    throw std::invalid_argument("attention heads must divide the model dimension");
  }
}

MultiHeadAttention::Result MultiHeadAttention::forward(const Tensor& queries, const Tensor& memory, bool causal,
                                                       const ForwardContext& ctx) const {
  if (queries.cols() != query.in_dim() || memory.cols() != key.in_dim()) {
    throw std::invalid_argument("attention input width mismatch");
  }
  const std::size_t lq = queries.rows(), lk = memory.rows();
  if (causal && lq != lk) throw std::invalid_argument("causal attention needs equal query and key lengths");
  const std::size_t dim = model_dim(), head_dim = dim / heads;
  const Tensor q = query(queries);
  const Tensor k = key(memory);
  const Tensor v = value(memory);

  std::vector<std::uint8_t> mask;
  if (causal) {
    mask.assign(lq * lk, 0);
    for (std::size_t i = 0; i < lq; ++i)
      for (std::size_t j = i + 1; j < lk; ++j) mask[i * lk + j] = 1;
  }

  Result result;
  std::vector<Tensor> head_out;
  head_out.reserve(heads);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t lo = h * head_dim, hi = lo + head_dim;
    Tensor qh = heads == 1 ? q : ops::slice_cols(q, lo, hi);
    Tensor kh = heads == 1 ? k : ops::slice_cols(k, lo, hi);
    Tensor vh = heads == 1 ? v : ops::slice_cols(v, lo, hi);
    Tensor scores = ops::scale(ops::matmul(qh, ops::transpose(kh)), inv_sqrt);
    if (causal) scores = ops::masked_fill(scores, mask, -1e30);
    Tensor weights = ops::softmax(scores);
    result.weights.push_back(weights);
    head_out.push_back(ops::matmul(dropout(weights, ctx), vh));
  }
  Tensor merged = heads == 1 ? head_out[0] : ops::concat(head_out, 1);
  result.out = output(merged);
  return result;
}

void MultiHeadAttention::collect(const std::string& prefix, ParameterSet& out) const {
  query.collect(prefix + ".q", out);
  key.collect(prefix + ".k", out);
  value.collect(prefix + ".v", out);
  output.collect(prefix + ".o", out);
}

}  // namespace s2st::nn
