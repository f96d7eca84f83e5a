#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "s2st/nn/layers.hpp"

namespace s2st::nn {

struct ConformerBlockConfig {
  std::size_t model_dim = 32;
  std::size_t conv_kernel = 3;
  std::size_t num_heads = 2;
  std::size_t ff_expansion = 2;
  // Zero the last projection of every residual branch (block becomes LN(x)).
  bool zero_output_projections = false;
};

// FF/2 -> self-attention -> convolution module -> FF/2 -> LayerNorm, each
// branch pre-normed and residual.
struct ConformerBlock {
  ConformerBlockConfig config;
  LayerNorm ff1_norm;
  FeedForward ff1;
  LayerNorm attn_norm;
  MultiHeadAttention attn;
  LayerNorm conv_norm;
  Linear conv_pointwise1;  // D -> 2D, followed by GLU
  Tensor conv_depthwise;   // K x D
  LayerNorm conv_inner_norm;
  Linear conv_pointwise2;
  LayerNorm ff2_norm;
  FeedForward ff2;
  LayerNorm out_norm;

  ConformerBlock() = default;
  ConformerBlock(const ConformerBlockConfig& config, Rng& rng);

  Tensor forward(const Tensor& x, const ForwardContext& ctx) const;
  void collect(const std::string& prefix, ParameterSet& out) const;
};

Tensor conformer_encode(const Tensor& frames, std::span<const ConformerBlock> blocks, const ForwardContext& ctx);

// Gated linear unit over the last axis: first half * sigmoid(second half).
Tensor glu(const Tensor& x);

struct DecoderConfig {
  std::size_t vocab = 8;
  std::size_t model_dim = 32;
  std::size_t memory_dim = 32;
  std::size_t num_layers = 2;
  std::size_t num_heads = 2;
  std::size_t ff_expansion = 2;
  int bos = 0;
};

// Pre-norm causal self-attention + cross-attention + FF. The cross-attention
// module is owned by the decoder and shared by every layer.
struct TransformerDecoderBlock {
  LayerNorm self_norm;
  MultiHeadAttention self_attn;
  LayerNorm cross_norm;
  LayerNorm ff_norm;
  FeedForward ff;

  TransformerDecoderBlock() = default;
  TransformerDecoderBlock(const DecoderConfig& config, Rng& rng);

  void collect(const std::string& prefix, ParameterSet& out) const;
};

class TransformerDecoder {
 public:
  struct Output {
    Tensor logits;    // L x vocab
    Tensor contexts;  // L x model_dim, last layer's shared-attention output
    Tensor states;    // L x model_dim, final normed decoder states
  };

  TransformerDecoder() = default;
  TransformerDecoder(const DecoderConfig& config, Rng& rng);

  const DecoderConfig& config() const { return config_; }

  // Teacher-forced pass over `prev` (must start with BOS).
  Output decode_step(std::span<const int> prev, const Tensor& memory, const ForwardContext& ctx) const;

  // Registers embedding, layers, shared cross-attention, output norm and head
  // as `<prefix>.embed`, `<prefix>.layer{i}.*`, `<prefix>.cross_attn.*`, ...
  void collect(const std::string& prefix, ParameterSet& out) const;

  Tensor embedding;  // vocab x model_dim
  std::vector<TransformerDecoderBlock> layers;
  SharedAttention cross_attn;
  LayerNorm out_norm;
  Linear head;

 private:
  DecoderConfig config_;
};

struct SynthesizerConfig {
  std::size_t context_dim = 32;
  std::size_t state_dim = 32;
  std::size_t hidden = 32;
  std::size_t mel_bins = 8;
  int max_duration = 16;  // free-running clamp
};

class DurationSynthesizer {
 public:
  struct Output {
    Tensor spectrogram;           // sum(durations) x mel_bins
    Tensor log_durations;         // L x 1
    std::vector<int> durations;  // used for upsampling
  };

  DurationSynthesizer() = default;
  DurationSynthesizer(const SynthesizerConfig& config, Rng& rng);

  const SynthesizerConfig& config() const { return config_; }

  // Teacher durations (all >= 1) drive upsampling when given; otherwise
  // round(exp(predicted)) clamped to [1, max_duration].
  Output synthesize(const Tensor& contexts, const Tensor& states, std::optional<std::span<const int>> teacher,
                    const ForwardContext& ctx) const;

  void collect(const std::string& prefix, ParameterSet& out) const;

  Linear in_proj;
  Linear duration_head;
  Linear frame_hidden;
  Linear frame_out;

 private:
  SynthesizerConfig config_;
};

class VectorQuantizer {
 public:
  struct Result {
    std::vector<std::size_t> indices;
    Tensor codes;      // T x D, value codebook[indices[t]], gradient to latents and codebook
    double diversity;  // perplexity of code usage over the batch, in [1, C]
  };

  VectorQuantizer() = default;
  VectorQuantizer(std::size_t codes, std::size_t dim, Rng& rng, double temperature = 2.0);

  Result quantize(const Tensor& latents) const;
  // Differentiable (C - soft perplexity) / C over softmax(-dist / temperature).
  Tensor diversity_loss(const Tensor& latents) const;

  std::size_t num_codes() const { return codebook.rows(); }
  void collect(const std::string& prefix, ParameterSet& out) const;

  Tensor codebook;  // C x D
  double temperature = 2.0;
};

}  // namespace s2st::nn
