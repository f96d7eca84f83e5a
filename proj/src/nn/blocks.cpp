#include "s2st/nn/blocks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "s2st/core/ops.hpp"

namespace s2st::nn {

Tensor glu(const Tensor& x) {
  const std::size_t n = x.cols();
  if (n % 2 != 0) throw std::invalid_argument("glu needs an even width");
  return ops::mul(ops::slice_cols(x, 0, n / 2), ops::sigmoid(ops::slice_cols(x, n / 2, n)));
}

ConformerBlock::ConformerBlock(const ConformerBlockConfig& cfg, Rng& rng) : config(cfg) {
  const std::size_t d = cfg.model_dim;
  if (d == 0 || cfg.ff_expansion == 0) throw std::invalid_argument("conformer dims must be positive");
  if (cfg.conv_kernel % 2 == 0) throw std::invalid_argument("conformer conv kernel must be odd");
  const bool z = cfg.zero_output_projections;
  ff1_norm = LayerNorm(d);
  ff1 = FeedForward(d, cfg.ff_expansion, rng, z);
  attn_norm = LayerNorm(d);
  attn = MultiHeadAttention(d, d, d, cfg.num_heads, rng, z);
  conv_norm = LayerNorm(d);
  conv_pointwise1 = Linear(d, 2 * d, rng);
  conv_depthwise = uniform_init({cfg.conv_kernel, d}, 1.0 / std::sqrt(static_cast<double>(cfg.conv_kernel)), rng);
  conv_inner_norm = LayerNorm(d);
  conv_pointwise2 = Linear(d, d, rng, z);
  ff2_norm = LayerNorm(d);
  ff2 = FeedForward(d, cfg.ff_expansion, rng, z);
  out_norm = LayerNorm(d);
}

Tensor ConformerBlock::forward(const Tensor& x, const ForwardContext& ctx) const {
  if (x.cols() != config.model_dim) throw std::invalid_argument("conformer input width mismatch");
  Tensor h = ops::add(x, ops::scale(dropout(ff1.forward(ff1_norm(x), ctx), ctx), 0.5));

  const Tensor a = attn_norm(h);
  h = ops::add(h, dropout(attn.forward(a, a, false, ctx).out, ctx));

  Tensor c = glu(conv_pointwise1(conv_norm(h)));
  c = ops::depthwise_conv1d(c, conv_depthwise);
  c = conv_pointwise2(ops::swish(conv_inner_norm(c)));
  h = ops::add(h, dropout(c, ctx));

  h = ops::add(h, ops::scale(dropout(ff2.forward(ff2_norm(h), ctx), ctx), 0.5));
  return out_norm(h);
}

void ConformerBlock::collect(const std::string& prefix, ParameterSet& out) const {
  ff1_norm.collect(prefix + ".ff1_norm", out);
  ff1.collect(prefix + ".ff1", out);
  attn_norm.collect(prefix + ".attn_norm", out);
  attn.collect(prefix + ".attn", out);
  conv_norm.collect(prefix + ".conv_norm", out);
  conv_pointwise1.collect(prefix + ".conv_pw1", out);
  out.add(prefix + ".conv_dw", conv_depthwise);
  conv_inner_norm.collect(prefix + ".conv_inner_norm", out);
  conv_pointwise2.collect(prefix + ".conv_pw2", out);
  ff2_norm.collect(prefix + ".ff2_norm", out);
  ff2.collect(prefix + ".ff2", out);
  out_norm.collect(prefix + ".out_norm", out);
}

Tensor conformer_encode(const Tensor& frames, std::span<const ConformerBlock> blocks, const ForwardContext& ctx) {
  if (!frames.defined() || frames.size() == 0) throw std::invalid_argument("conformer_encode: empty input");
  if (frames.rank() != 2) throw std::invalid_argument("conformer_encode: frames must be T x D");
  Tensor h = frames;
  for (const auto& block : blocks) h = block.forward(h, ctx);
  return h;
}

// ---------------------------------------------------------------------------

TransformerDecoderBlock::TransformerDecoderBlock(const DecoderConfig& cfg, Rng& rng)
    : self_norm(cfg.model_dim),
      self_attn(cfg.model_dim, cfg.model_dim, cfg.model_dim, cfg.num_heads, rng),
      cross_norm(cfg.model_dim),
      ff_norm(cfg.model_dim),
      ff(cfg.model_dim, cfg.ff_expansion, rng) {}

void TransformerDecoderBlock::collect(const std::string& prefix, ParameterSet& out) const {
  self_norm.collect(prefix + ".self_norm", out);
  self_attn.collect(prefix + ".self_attn", out);
  cross_norm.collect(prefix + ".cross_norm", out);
  ff_norm.collect(prefix + ".ff_norm", out);
  ff.collect(prefix + ".ff", out);
}

TransformerDecoder::TransformerDecoder(const DecoderConfig& cfg, Rng& rng) : config_(cfg) {
  if (cfg.vocab == 0 || cfg.model_dim == 0 || cfg.num_layers == 0) {
    throw std::invalid_argument("decoder dims must be positive");
  }
  if (cfg.bos < 0 || static_cast<std::size_t>(cfg.bos) >= cfg.vocab) {
    throw std::invalid_argument("decoder BOS outside vocabulary");
  }
  embedding = normal_init({cfg.vocab, cfg.model_dim}, 1.0, rng);
  for (std::size_t i = 0; i < cfg.num_layers; ++i) layers.emplace_back(cfg, rng);
  cross_attn = SharedAttention(cfg.model_dim, cfg.memory_dim, cfg.model_dim, cfg.num_heads, rng);
  out_norm = LayerNorm(cfg.model_dim);
  head = Linear(cfg.model_dim, cfg.vocab, rng);
}

TransformerDecoder::Output TransformerDecoder::decode_step(std::span<const int> prev, const Tensor& memory,
                                                           const ForwardContext& ctx) const {
  if (prev.empty() || prev.front() != config_.bos) {
    throw std::invalid_argument("decode_step: input must begin with BOS");
  }
  if (memory.rank() != 2 || memory.cols() != config_.memory_dim) {
    throw std::invalid_argument("decode_step: memory width mismatch");
  }
  std::vector<std::size_t> ids(prev.size());
  for (std::size_t i = 0; i < prev.size(); ++i) {
    if (prev[i] < 0 || static_cast<std::size_t>(prev[i]) >= config_.vocab) {
      throw std::out_of_range("decode_step: token " + std::to_string(prev[i]) + " outside vocabulary of " +
                              std::to_string(config_.vocab));
    }
    ids[i] = static_cast<std::size_t>(prev[i]);
  }
  const std::size_t len = ids.size();
  Tensor h = ops::add(ops::gather_rows(embedding, ids), sinusoid_positions(len, config_.model_dim));
  h = dropout(h, ctx);

  Output result;
  for (const auto& layer : layers) {
    const Tensor s = layer.self_norm(h);
    h = ops::add(h, dropout(layer.self_attn.forward(s, s, true, ctx).out, ctx));
    result.contexts = cross_attn.forward(layer.cross_norm(h), memory, false, ctx).out;
    h = ops::add(h, dropout(result.contexts, ctx));
    h = ops::add(h, dropout(layer.ff.forward(layer.ff_norm(h), ctx), ctx));
  }
  result.states = out_norm(h);
  result.logits = head(result.states);
  return result;
}

void TransformerDecoder::collect(const std::string& prefix, ParameterSet& out) const {
  out.add(prefix + ".embed", embedding);
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(prefix + ".layer" + std::to_string(i), out);
  cross_attn.collect(prefix + ".cross_attn", out);
  out_norm.collect(prefix + ".out_norm", out);
  head.collect(prefix + ".head", out);
}

// ---------------------------------------------------------------------------

DurationSynthesizer::DurationSynthesizer(const SynthesizerConfig& cfg, Rng& rng)
    : in_proj(cfg.context_dim + cfg.state_dim, cfg.hidden, rng),
      duration_head(cfg.hidden, 1, rng),
      frame_hidden(cfg.hidden, cfg.hidden, rng),
      frame_out(cfg.hidden, cfg.mel_bins, rng),
      config_(cfg) {
  if (cfg.max_duration < 1) throw std::invalid_argument("synthesizer max_duration must be >= 1");
}

DurationSynthesizer::Output DurationSynthesizer::synthesize(const Tensor& contexts, const Tensor& states,
                                                            std::optional<std::span<const int>> teacher,
                                                            const ForwardContext& ctx) const {
  if (!contexts.defined() || !states.defined() || contexts.size() == 0 || states.size() == 0) {
    throw std::invalid_argument("synthesize: zero-length input");
  }
  if (contexts.rows() != states.rows()) throw std::invalid_argument("synthesize: context/state length mismatch");
  const std::size_t len = contexts.rows();

  const Tensor hidden = ops::swish(in_proj(ops::concat({contexts, states}, 1)));
  Output out;
  out.log_durations = duration_head(hidden);

  out.durations.resize(len);
  if (teacher) {
    if (teacher->size() != len) throw std::invalid_argument("synthesize: teacher durations length mismatch");
    for (std::size_t i = 0; i < len; ++i) {
      if ((*teacher)[i] < 1) throw std::invalid_argument("synthesize: teacher durations must be >= 1");
      out.durations[i] = (*teacher)[i];
    }
  } else {
    const auto pred = out.log_durations.data();
    for (std::size_t i = 0; i < len; ++i) {
      const double d = std::round(std::exp(std::min(pred[i], 30.0)));
      out.durations[i] = static_cast<int>(std::clamp(d, 1.0, static_cast<double>(config_.max_duration)));
    }
  }

  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < len; ++i) ids.insert(ids.end(), static_cast<std::size_t>(out.durations[i]), i);
  const Tensor frames = ops::gather_rows(hidden, ids);
  out.spectrogram = frame_out(dropout(ops::swish(frame_hidden(frames)), ctx));
  return out;
}

void DurationSynthesizer::collect(const std::string& prefix, ParameterSet& out) const {
  in_proj.collect(prefix + ".in_proj", out);
  duration_head.collect(prefix + ".dur_head", out);
  frame_hidden.collect(prefix + ".frame_hidden", out);
  frame_out.collect(prefix + ".frame_out", out);
}

// ---------------------------------------------------------------------------

VectorQuantizer::VectorQuantizer(std::size_t codes, std::size_t dim, Rng& rng, double temp)
    : codebook(normal_init({codes, dim}, 1.0, rng)), temperature(temp) {
  if (temp <= 0.0) throw std::invalid_argument("quantizer temperature must be positive");
}

VectorQuantizer::Result VectorQuantizer::quantize(const Tensor& latents) const {
  if (latents.rank() != 2 || latents.cols() != codebook.cols()) {
    throw std::invalid_argument("quantize: latent width must match codebook");
  }
  const std::size_t t_len = latents.rows(), c = codebook.rows(), d = codebook.cols();
  const auto z = latents.data();
  const auto e = codebook.data();
  Result r;
  r.indices.resize(t_len);
  std::vector<double> usage(c, 0.0);
  for (std::size_t t = 0; t < t_len; ++t) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t k = 0; k < c; ++k) {
      double dist = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = z[t * d + j] - e[k * d + j];
        dist += diff * diff;
      }
      if (dist < best) {
        best = dist;
        arg = k;
      }
    }
    r.indices[t] = arg;
    usage[arg] += 1.0;
  }
  double entropy = 0.0;
  for (double u : usage) {
    if (u > 0.0) {
      const double p = u / static_cast<double>(t_len);
      entropy -= p * std::log(p);
    }
  }
  r.diversity = std::exp(entropy);
  // latents - detach(latents) is exactly zero, so values are the code rows
  // while gradients reach both the codebook rows and the latents.
  r.codes = ops::add(ops::gather_rows(codebook, r.indices), ops::sub(latents, latents.detach()));
  return r;
}

Tensor VectorQuantizer::diversity_loss(const Tensor& latents) const {
  const double c = static_cast<double>(codebook.rows());
  // -|z - e|^2 up to a per-row constant: 2 z.e - |e|^2
  const Tensor cross = ops::scale(ops::matmul(latents, ops::transpose(codebook)), 2.0);
  const Tensor norms = ops::sum_axis(ops::square(codebook), 1);
  const Tensor logits = ops::scale(ops::add_row(cross, ops::neg(norms)), 1.0 / temperature);
  const Tensor avg = ops::mean_axis(ops::softmax(logits), 0);
  const Tensor entropy = ops::neg(ops::sum(ops::mul(avg, ops::log(ops::add_scalar(avg, 1e-12)))));
  return ops::scale(ops::add_scalar(ops::neg(ops::exp(entropy)), c), 1.0 / c);
}

void VectorQuantizer::collect(const std::string& prefix, ParameterSet& out) const {
  out.add(prefix + ".codebook", codebook);
}

}  // namespace s2st::nn
