#pragma once

#include <string>
#include <vector>

#include "s2st/nn/parameters.hpp"

namespace s2st::nn {

struct Linear {
  Tensor weight;  // in x out
  Tensor bias;    // out

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, bool zero_init = false);

  Tensor operator()(const Tensor& x) const;
  std::size_t in_dim() const { return weight.rows(); }
  std::size_t out_dim() const { return weight.cols(); }
  void collect(const std::string& prefix, ParameterSet& out) const;
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;
  double eps = 1e-6;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t dim);

  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParameterSet& out) const;
};

// Position-wise feed-forward: Linear -> swish -> dropout -> Linear.
struct FeedForward {
  Linear expand;
  Linear project;

  FeedForward() = default;
  FeedForward(std::size_t dim, std::size_t expansion, Rng& rng, bool zero_output = false);

  Tensor forward(const Tensor& x, const ForwardContext& ctx) const;
  void collect(const std::string& prefix, ParameterSet& out) const;
};

// Scaled dot-product attention with `heads` heads over model_dim channels.
// Queries come from a query_dim stream, keys/values from a memory_dim stream.
struct MultiHeadAttention {
  Linear query;
  Linear key;
  Linear value;
  Linear output;
  std::size_t heads = 1;

  struct Result {
    Tensor out;                   // Lq x model_dim
    std::vector<Tensor> weights;  // per head, Lq x Lk, rows sum to 1
  };

  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t query_dim, std::size_t memory_dim, std::size_t model_dim, std::size_t heads,
                     Rng& rng, bool zero_output = false);

  std::size_t model_dim() const { return output.out_dim(); }
  Result forward(const Tensor& queries, const Tensor& memory, bool causal, const ForwardContext& ctx) const;
  void collect(const std::string& prefix, ParameterSet& out) const;
};

// The one attention module of the S2ST model: decoder states query the
// encoder memory, and its per-step context feeds the synthesizer as well.
using SharedAttention = MultiHeadAttention;

}  // namespace s2st::nn
