#include "s2st/models/models.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>

#include "s2st/core/autodiff.hpp"
#include "s2st/core/ops.hpp"

namespace s2st::models {

using datagen::kBos;
using datagen::kEos;

ModelPreset preset(const std::string& name) {
  ModelPreset p;
  p.name = name;
  if (name == "base") return p;
  if (name == "large") {
    p.encoder_dim = 64;
    p.encoder_blocks = 4;
    p.decoder_dim = 48;
    p.decoder_layers = 3;
    p.synth_hidden = 48;
    return p;
  }
  throw std::invalid_argument("unknown model preset '" + name + "' (expected base or large)");
}

DataShape data_shape(const datagen::ToyWorld& world) {
  return {world.config.mel_bins, world.target_vocab(), world.text_vocab(), world.num_phonemes()};
}

namespace {

nn::ConformerBlockConfig block_config(const ModelPreset& p) {
  return {p.encoder_dim, p.conv_kernel, p.heads, p.ff_expansion, false};
}

std::vector<std::size_t> to_ids(std::span<const int> tokens, std::size_t vocab, const char* who) {
  std::vector<std::size_t> ids(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || static_cast<std::size_t>(tokens[i]) >= vocab) {
      throw std::out_of_range(std::string(who) + ": token " + std::to_string(tokens[i]) + " outside vocabulary of " +
                              std::to_string(vocab));
    }
    ids[i] = static_cast<std::size_t>(tokens[i]);
  }
  return ids;
}

Tensor embed_with_positions(const Tensor& table, std::span<const int> tokens, std::span<const std::uint8_t> mask,
                            const Tensor& mask_emb, const char* who) {
  if (tokens.empty()) throw std::invalid_argument(std::string(who) + ": empty token sequence");
  Tensor h = ops::gather_rows(table, to_ids(tokens, table.rows(), who));
  if (!mask.empty()) h = apply_row_mask(h, mask, mask_emb);
  return ops::add(h, nn::sinusoid_positions(tokens.size(), table.cols()));
}

// Accumulates same-named loss terms and averages them.
class BundleBuilder {
 public:
  void add(const std::string& name, const Tensor& loss, double weight = 1.0) {
    auto it = std::find_if(terms_.begin(), terms_.end(), [&](const Term& t) { return t.name == name; });
    if (it == terms_.end()) {
      terms_.push_back({name, loss, weight, 1});
    } else {
      it->sum = ops::add(it->sum, loss);
      ++it->count;
    }
  }
  LossBundle finish() const {
    LossBundle b;
    for (const auto& t : terms_) b.add(t.name, t.count == 1 ? t.sum : ops::scale(t.sum, 1.0 / t.count), t.weight);
    return b;
  }
  bool empty() const { return terms_.empty(); }

 private:
  struct Term {
    std::string name;
    Tensor sum;
    double weight;
    std::size_t count;
  };
  std::vector<Term> terms_;
};

std::size_t argmax_row(const Tensor& logits, std::size_t row, std::size_t skip) {
  std::size_t best = skip == 0 ? 1 : 0;
  for (std::size_t c = 0; c < logits.cols(); ++c) {
    if (c == skip) continue;
    if (logits.at(row, c) > logits.at(row, best)) best = c;
  }
  return best;
}

}  // namespace

Tensor apply_row_mask(const Tensor& x, std::span<const std::uint8_t> mask, const Tensor& emb) {
  if (mask.size() != x.rows()) throw std::invalid_argument("row mask length mismatch");
  if (emb.size() != x.cols()) throw std::invalid_argument("mask embedding width mismatch");
  std::vector<double> keep(mask.size()), hit(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    keep[i] = mask[i] ? 0.0 : 1.0;
    hit[i] = mask[i] ? 1.0 : 0.0;
  }
  const Tensor kept = ops::mul_col(x, Tensor::from({mask.size()}, std::move(keep)));
  const Tensor filled = ops::matmul(Tensor::matrix(mask.size(), 1, std::move(hit)), ops::reshape(emb, {1, x.cols()}));
  return ops::add(kept, filled);
}

// ---------------------------------------------------------------------------

SpeechEncoder::SpeechEncoder(const ModelConfig& config, Rng& rng)
    : feature(config.data.mel_bins, config.preset.encoder_dim, rng) {
  const auto cfg = block_config(config.preset);
  for (std::size_t i = 0; i < models::contrastive_blocks(config.preset); ++i) contrastive_blocks.emplace_back(cfg, rng);
  for (std::size_t i = 0; i < models::context_blocks(config.preset); ++i) context_blocks.emplace_back(cfg, rng);
}

Tensor SpeechEncoder::features(const Tensor& spec, const ForwardContext& ctx) const {
  if (!spec.defined() || spec.size() == 0) throw std::invalid_argument("speech encoder: empty spectrogram");
  if (spec.cols() != feature.in_dim()) throw std::invalid_argument("speech encoder: mel bin count mismatch");
  return nn::dropout(ops::swish(feature(spec)), ctx);
}

// Positions enter here, after masking, so quantizer inputs stay position-free.
Tensor SpeechEncoder::contrastive(const Tensor& h, const ForwardContext& ctx) const {
  return nn::conformer_encode(ops::add(h, nn::sinusoid_positions(h.rows(), h.cols())), contrastive_blocks, ctx);
}

Tensor SpeechEncoder::context(const Tensor& h, const ForwardContext& ctx) const {
  return nn::conformer_encode(h, context_blocks, ctx);
}

Tensor SpeechEncoder::encode(const Tensor& spec, const ForwardContext& ctx) const {
  return context(contrastive(features(spec, ctx), ctx), ctx);
}

void SpeechEncoder::collect(ParameterSet& out) const {
  feature.collect("encoder.feature", out);
  for (std::size_t i = 0; i < contrastive_blocks.size(); ++i)
    contrastive_blocks[i].collect("encoder.contrastive.block" + std::to_string(i), out);
  for (std::size_t i = 0; i < context_blocks.size(); ++i)
    context_blocks[i].collect("encoder.context.block" + std::to_string(i), out);
}

// ---------------------------------------------------------------------------

Translatotron2::Translatotron2(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  Rng rng(mix_seed(seed, 0x7432ULL));
  const auto& p = config.preset;
  encoder = SpeechEncoder(config, rng);
  nn::DecoderConfig dc;
  dc.vocab = config.data.target_vocab;
  dc.model_dim = p.decoder_dim;
  dc.memory_dim = p.encoder_dim;
  dc.num_layers = p.decoder_layers;
  dc.num_heads = p.heads;
  dc.ff_expansion = p.ff_expansion;
  dc.bos = kBos;
  decoder = nn::TransformerDecoder(dc, rng);
  nn::SynthesizerConfig sc;
  sc.context_dim = p.decoder_dim;
  sc.state_dim = p.decoder_dim;
  sc.hidden = p.synth_hidden;
  sc.mel_bins = config.data.mel_bins;
  sc.max_duration = config.max_duration;
  synthesizer = nn::DurationSynthesizer(sc, rng);
  encoder.collect(params_);
  decoder.collect("decoder", params_);
  synthesizer.collect("synth", params_);
}

objectives::S2stOutputs Translatotron2::forward(const datagen::S2stExample& ex, const ForwardContext& ctx) const {
  return forward_memory(encoder.encode(ex.source_spec, ctx), ex, ctx);
}

objectives::S2stOutputs Translatotron2::forward_memory(const Tensor& memory, const datagen::S2stExample& ex,
                                                       const ForwardContext& ctx) const {
  const std::size_t n = ex.target_phonemes.size();
  if (n == 0) throw std::invalid_argument("t2: empty target");
  if (ex.target_durations.size() != n) throw std::invalid_argument("t2: durations do not match target phonemes");
  std::vector<int> prev{kBos};
  prev.insert(prev.end(), ex.target_phonemes.begin(), ex.target_phonemes.end());
  const auto dec = decoder.decode_step(prev, memory, ctx.with_dropout(config_.decoder_dropout));
  // Position k consumed target token k, so rows 1..n describe the phonemes.
  const Tensor ctxs = ops::slice_rows(dec.contexts, 1, n + 1);
  const Tensor states = ops::slice_rows(dec.states, 1, n + 1);
  const auto syn = synthesizer.synthesize(ctxs, states, std::span<const int>(ex.target_durations), ctx);
  return {dec.logits, syn.spectrogram, syn.log_durations};
}

TranslationResult Translatotron2::translate(const Tensor& source_spec, std::size_t max_len) const {
  const auto ctx = nn::eval_context();
  const Tensor memory = encoder.encode(source_spec, ctx);
  std::vector<int> prev{kBos};
  nn::TransformerDecoder::Output dec;
  TranslationResult result;
  bool ended = false;
  while (prev.size() <= max_len) {
    dec = decoder.decode_step(prev, memory, ctx);
    const auto tok = static_cast<int>(argmax_row(dec.logits, dec.logits.rows() - 1, kBos));
    if (tok == kEos) {
      ended = true;
      break;
    }
    prev.push_back(tok);
  }
  if (!ended) {
    result.truncated = true;
    dec = decoder.decode_step(prev, memory, ctx);
  }
  const std::size_t n = prev.size() - 1;
  result.phonemes.assign(prev.begin() + 1, prev.end());
  if (n == 0) return result;
  const auto syn = synthesizer.synthesize(ops::slice_rows(dec.contexts, 1, n + 1),
                                          ops::slice_rows(dec.states, 1, n + 1), std::nullopt, ctx);
  result.spectrogram = syn.spectrogram;
  result.durations = syn.durations;
  return result;
}

LossBundle t2_forward(const Translatotron2& model, std::span<const datagen::S2stExample* const> batch,
                      const ForwardContext& ctx) {
  if (batch.empty()) throw std::invalid_argument("t2_forward: empty batch");
  BundleBuilder bb;
  for (const auto* ex : batch) {
    for (int p : ex->target_phonemes) {
      if (p < 0 || static_cast<std::size_t>(p) >= model.config().data.target_vocab) {
        throw std::out_of_range("t2_forward: target phoneme " + std::to_string(p) + " outside decoder vocabulary");
      }
    }
    objectives::S2stTargets tgt;
    tgt.phonemes = ex->target_phonemes;
    tgt.phonemes.push_back(kEos);
    tgt.durations = ex->target_durations;
    tgt.spectrogram = ex->target_spec;
    const auto b = objectives::s2st_loss(model.forward(*ex, ctx), tgt);
    for (const auto& e : b.entries()) bb.add(e.name, e.loss, e.weight);
  }
  return bb.finish();
}

// ---------------------------------------------------------------------------

W2vBert::W2vBert(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  Rng rng(mix_seed(seed, 0x7732ULL));
  const auto& p = config.preset;
  encoder = SpeechEncoder(config, rng);
  quantizer = nn::VectorQuantizer(p.codebook_size, p.encoder_dim, rng);
  mask_embedding = nn::normal_init({1, p.encoder_dim}, 1.0, rng);
  mlm_head = nn::Linear(p.encoder_dim, p.codebook_size, rng);
  register_params();
}

void W2vBert::register_params() {
  encoder.collect(params_);
  quantizer.collect("quantizer", params_);
  params_.add("mlm.mask_emb", mask_embedding);
  mlm_head.collect("mlm.head", params_);
}

std::optional<SpeechLossTerms> w2vbert_terms(const W2vBert& model, const Tensor& spec, const ForwardContext& ctx,
                                             double mask_prob, Rng& rng) {
  const std::size_t t_len = spec.rows();
  const auto plan = objectives::make_masking_plan(t_len, mask_prob, objectives::kSpeechSpan, rng.engine()());
  if (plan.masked_positions.size() < 2) return std::nullopt;
  const std::size_t k = std::min(objectives::kNumDistractors, plan.masked_positions.size() - 1);

  const Tensor feats = model.encoder.features(spec, ctx);
  // Targets: dropout-free feature-encoder output, held constant. The diversity
  // term then shapes only the codebook.
  const Tensor latent = model.encoder.features(spec, nn::eval_context()).detach();
  const auto q = model.quantizer.quantize(latent);

  const auto mask = plan.mask();
  const Tensor c = model.encoder.contrastive(apply_row_mask(feats, mask, model.mask_embedding), ctx);
  const Tensor logits = model.mlm_head(model.encoder.context(c, ctx));
  std::vector<int> targets(q.indices.begin(), q.indices.end());

  SpeechLossTerms out;
  // Targets are plain codebook rows: the latents learn through the masked path
  // and the diversity term, so the loss has an exact gradient.
  const Tensor codes = ops::gather_rows(model.quantizer.codebook, q.indices);
  out.contrastive = objectives::contrastive_loss(c, codes, plan, k, objectives::kContrastiveKappa, rng);
  out.chance = std::log(static_cast<double>(k + 1));
  out.mlm = objectives::mlm_loss(logits, targets, plan);
  out.diversity = model.quantizer.diversity_loss(latent);
  out.perplexity = q.diversity;
  return out;
}

LossBundle w2vbert_step(const W2vBert& model, std::span<const Tensor> specs, const ForwardContext& ctx, Rng& rng,
                        double mask_prob, PretrainStats* stats) {
  if (specs.empty()) throw std::invalid_argument("w2vbert_step: empty batch");
  BundleBuilder bb;
  std::size_t skipped = 0, used = 0;
  double ppl = 0.0, chance = 0.0;
  for (const auto& spec : specs) {
    auto terms = w2vbert_terms(model, spec, ctx, mask_prob, rng);
    if (!terms) {
      ++skipped;
      continue;
    }
    ++used;
    ppl += terms->perplexity;
    chance += terms->chance;
    bb.add("contrastive", terms->contrastive);
    bb.add("mlm", terms->mlm);
    bb.add("diversity", terms->diversity, objectives::kDiversityWeight);
  }
  if (bb.empty()) throw std::runtime_error("w2vbert_step: every utterance was too short to mask");
  if (stats) {
    stats->skipped += skipped;
    stats->perplexity = ppl / static_cast<double>(used);
    stats->chance_contrastive = chance / static_cast<double>(used);
  }
  return bb.finish();
}

// ---------------------------------------------------------------------------

MSlam::MSlam(const ModelConfig& config, std::uint64_t seed) : W2vBert(config, seed) {
  Rng rng(mix_seed(seed, 0x6d736c616dULL));
  const std::size_t d = config.preset.encoder_dim, v = config.data.text_vocab;
  text_embedding = nn::normal_init({v, d}, 1.0, rng);
  text_mask = nn::normal_init({1, d}, 1.0, rng);
  span_head = nn::Linear(d, v, rng);
  ctc_head = nn::Linear(d, v + 1, rng);
  tlm_head = nn::Linear(d, v, rng);
  params_.add("text_embed.table", text_embedding);
  params_.add("text_embed.mask", text_mask);
  span_head.collect("span.head", params_);
  ctc_head.collect("ctc.head", params_);
  tlm_head.collect("tlm.head", params_);
}

Tensor MSlam::encode_text(std::span<const int> tokens, std::span<const std::uint8_t> mask,
                          const ForwardContext& ctx) const {
  return encoder.context(embed_with_positions(text_embedding, tokens, mask, text_mask, "mslam text"), ctx);
}

MslamKind parse_mslam_kind(const std::string& s) {
  if (s == "speech") return MslamKind::speech;
  if (s == "text") return MslamKind::text;
  if (s == "paired") return MslamKind::paired;
  throw std::invalid_argument("unknown mSLAM batch kind '" + s + "'");
}

LossBundle mslam_step(const MSlam& model, std::span<const MslamItem> batch, const ForwardContext& ctx, Rng& rng,
                      PretrainStats* stats) {
  if (batch.empty()) throw std::invalid_argument("mslam_step: empty batch");
  BundleBuilder bb;
  std::size_t used = 0;
  double ppl = 0.0;
  auto speech_terms = [&](const Tensor& speech) {
    auto terms = w2vbert_terms(model, speech, ctx, objectives::kSpeechMaskProb, rng);
    if (!terms) {
      if (stats) ++stats->skipped;
      return;
    }
    ++used;
    ppl += terms->perplexity;
    bb.add("contrastive", terms->contrastive);
    bb.add("mlm", terms->mlm);
    bb.add("diversity", terms->diversity, objectives::kDiversityWeight);
  };
  for (const auto& item : batch) {
    switch (item.kind) {
      case MslamKind::speech:
        speech_terms(item.speech);
        break;
      case MslamKind::text: {
        const auto plan = objectives::make_masking_plan(item.text.size(), objectives::kSpeechMaskProb,
                                                        objectives::kTextSpan, rng.engine()());
        const Tensor h = model.encode_text(item.text, plan.mask(), ctx);
        bb.add("span_bert", objectives::span_bert_loss(model.span_head(h), item.text, plan));
        break;
      }
      case MslamKind::paired: {
        if (!item.speech.defined() || item.text.empty()) throw std::invalid_argument("mslam_step: unpaired item");
        speech_terms(item.speech);
        const Tensor lower = model.encoder.contrastive(model.encoder.features(item.speech, ctx), ctx);
        bb.add("ctc", objectives::ctc_loss(model.ctc_head(model.encoder.context(lower, ctx)), item.text));
        const auto plan = objectives::make_masking_plan(item.text.size(), objectives::kSpeechMaskProb,
                                                        objectives::kTextSpan, rng.engine()());
        const Tensor text =
            embed_with_positions(model.text_embedding, item.text, plan.mask(), model.text_mask, "mslam tlm");
        const Tensor joint = model.encoder.context(ops::concat({lower, text}, 0), ctx);
        bb.add("tlm", objectives::tlm_loss(model.tlm_head(joint), lower.rows(), item.text, plan));
        break;
      }
      default:
        throw std::invalid_argument("mslam_step: unknown batch kind");
    }
  }
  if (bb.empty()) throw std::runtime_error("mslam_step: nothing to train on in this batch");
  if (stats && used > 0) stats->perplexity = ppl / static_cast<double>(used);
  return bb.finish();
}

std::vector<int> mslam_ctc_decode(const MSlam& model, const Tensor& speech) {
  const auto ctx = nn::eval_context();
  return objectives::ctc_greedy_decode(model.ctc_head(model.encoder.encode(speech, ctx)));
}

// ---------------------------------------------------------------------------

const char* mt_variant_name(MtVariant v) {
  switch (v) {
    case MtVariant::text_to_text: return "text_to_text";
    case MtVariant::text_to_phoneme: return "text_to_phoneme";
    case MtVariant::phoneme_to_phoneme: return "phoneme_to_phoneme";
  }
  return "?";
}

MtVariant parse_mt_variant(const std::string& s) {
  if (s == "text_to_text") return MtVariant::text_to_text;
  if (s == "text_to_phoneme") return MtVariant::text_to_phoneme;
  if (s == "phoneme_to_phoneme") return MtVariant::phoneme_to_phoneme;
  throw std::invalid_argument("unknown MT variant '" + s + "'");
}

MtModel::MtModel(const ModelConfig& config, MtVariant variant, std::uint64_t seed)
    : variant_(variant), config_(config) {
  Rng rng(mix_seed(seed, 0x6d74ULL));
  const auto& p = config.preset;
  input_embedding = nn::normal_init({input_vocab(), p.encoder_dim}, 1.0, rng);
  const auto cfg = block_config(p);
  for (std::size_t i = 0; i < s2st::models::context_blocks(p); ++i) context_blocks.emplace_back(cfg, rng);
  nn::DecoderConfig dc;
  dc.vocab = output_vocab();
  dc.model_dim = p.decoder_dim;
  dc.memory_dim = p.encoder_dim;
  dc.num_layers = p.decoder_layers;
  dc.num_heads = p.heads;
  dc.ff_expansion = p.ff_expansion;
  dc.bos = kBos;
  decoder = nn::TransformerDecoder(dc, rng);

  params_.add(variant == MtVariant::phoneme_to_phoneme ? "phoneme_embed.table" : "text_embed.table",
              input_embedding);
  for (std::size_t i = 0; i < context_blocks.size(); ++i)
    context_blocks[i].collect("encoder.context.block" + std::to_string(i), params_);
  decoder.collect("decoder", params_);
}

std::size_t MtModel::input_vocab() const {
  return variant_ == MtVariant::phoneme_to_phoneme ? config_.data.num_phonemes : config_.data.text_vocab;
}

std::size_t MtModel::output_vocab() const {
  return variant_ == MtVariant::text_to_text ? config_.data.text_vocab : config_.data.target_vocab;
}

std::vector<int> MtModel::source_tokens(const datagen::MtExample& ex) const {
  return variant_ == MtVariant::phoneme_to_phoneme ? ex.source_phonemes : datagen::to_text(ex.source_phonemes);
}

std::vector<int> MtModel::target_tokens(const datagen::MtExample& ex) const {
  return variant_ == MtVariant::text_to_text ? datagen::to_text(ex.target_phonemes) : ex.target_phonemes;
}

Tensor MtModel::encode(std::span<const int> tokens, const ForwardContext& ctx) const {
  const Tensor h = embed_with_positions(input_embedding, tokens, {}, Tensor(), "mt encoder");
  return nn::conformer_encode(h, context_blocks, ctx);
}

Tensor MtModel::loss(const datagen::MtExample& ex, const ForwardContext& ctx) const {
  const auto tgt = target_tokens(ex);
  std::vector<int> prev{kBos};
  prev.insert(prev.end(), tgt.begin(), tgt.end());
  std::vector<int> next(tgt.begin(), tgt.end());
  next.push_back(kEos);
  const auto dec = decoder.decode_step(prev, encode(source_tokens(ex), ctx), ctx);
  return objectives::token_cross_entropy(dec.logits, next);
}

LossBundle mt_forward(const MtModel& model, std::span<const datagen::MtExample* const> batch,
                      const ForwardContext& ctx) {
  if (batch.empty()) throw std::invalid_argument("mt_forward: empty batch");
  BundleBuilder bb;
  const char* name = model.variant() == MtVariant::text_to_text ? "token_ce" : "phoneme_ce";
  for (const auto* ex : batch) bb.add(name, model.loss(*ex, ctx));
  return bb.finish();
}

// ---------------------------------------------------------------------------

namespace {

enum class OnMismatch { error, skip };

TransferReport copy_params(ParameterSet& target, const ParameterSet& source,
                           const std::function<bool(const std::string&)>& eligible,
                           const std::function<OnMismatch(const std::string&)>& on_mismatch) {
  TransferReport report;
  for (const auto& [name, src] : source.items()) {
    if (!eligible(name) || !target.contains(name)) {
      report.skipped.push_back(name);
      continue;
    }
    Tensor& dst = target.at(name);
    if (dst.shape() != src.shape()) {
      if (on_mismatch(name) == OnMismatch::skip) {
        report.skipped.push_back(name);
        continue;
      }
      throw std::runtime_error("transfer: shape mismatch for '" + name + "': " + shape_str(src.shape()) + " vs " +
                               shape_str(dst.shape()));
    }
    auto out = dst.mutable_data();
    std::copy(src.data().begin(), src.data().end(), out.begin());
    report.copied.push_back(name);
    report.copied_scalars += src.size();
  }
  return report;
}

bool starts_with(const std::string& s, const char* prefix) { return s.rfind(prefix, 0) == 0; }

}  // namespace

TransferReport transfer_encoder(Translatotron2& target, const W2vBert& source) {
  return copy_params(
      target.params(), source.params(), [](const std::string& n) { return starts_with(n, "encoder."); },
      [](const std::string&) { return OnMismatch::error; });
}

TransferReport transfer_encoder(MtModel& target, const MSlam& source) {
  return copy_params(
      target.params(), source.params(),
      [](const std::string& n) { return starts_with(n, "encoder.context.") || n == "text_embed.table"; },
      [](const std::string&) { return OnMismatch::error; });
}

TransferReport transfer_encoder(MultiTaskModel& target, const MSlam& source) {
  return copy_params(
      target.params(), source.params(),
      [](const std::string& n) { return starts_with(n, "encoder.") || n == "text_embed.table"; },
      [](const std::string&) { return OnMismatch::error; });
}

TransferReport transfer_decoder(Translatotron2& target, const MtModel& source) {
  return copy_params(
      target.params(), source.params(), [](const std::string& n) { return starts_with(n, "decoder."); },
      [](const std::string& n) {
        return (n == "decoder.embed" || starts_with(n, "decoder.head.")) ? OnMismatch::skip : OnMismatch::error;
      });
}

// ---------------------------------------------------------------------------

MultiTaskModel::MultiTaskModel(const ModelConfig& config, std::uint64_t seed, bool freeze)
    : t2(config, seed), freeze_lower_encoder(freeze) {
  Rng rng(mix_seed(seed, 0x74657874ULL));
  text_embedding = nn::normal_init({config.data.text_vocab, config.preset.encoder_dim}, 1.0, rng);
  for (const auto& [name, t] : t2.params().items()) params_.add(name, t);
  params_.add("text_embed.table", text_embedding);
}

ParameterSet MultiTaskModel::trainable() const {
  ParameterSet out;
  for (const auto& [name, t] : params_.items()) {
    if (freeze_lower_encoder && is_lower_encoder_param(name)) continue;
    out.add(name, t);
  }
  return out;
}

Tensor MultiTaskModel::encode_text(std::span<const int> tokens, const ForwardContext& ctx) const {
  return t2.encoder.context(embed_with_positions(text_embedding, tokens, {}, Tensor(), "multitask text"), ctx);
}

LossBundle multitask_forward(const MultiTaskModel& model, const datagen::TaskBatch& batch, const ForwardContext& ctx) {
  if (!batch.s2st.empty() && !batch.mt.empty()) throw std::invalid_argument("multitask: mixed-task batch");
  if (batch.task == datagen::Task::s2st) {
    if (!batch.mt.empty()) throw std::invalid_argument("multitask: MT examples in an S2ST batch");
    return t2_forward(model.t2, batch.s2st, ctx);
  }
  if (!batch.s2st.empty()) throw std::invalid_argument("multitask: S2ST examples in an MT batch");
  if (batch.mt.empty()) throw std::invalid_argument("multitask: empty batch");
  BundleBuilder bb;
  const auto dec_ctx = ctx.with_dropout(model.t2.config().decoder_dropout);
  for (const auto* ex : batch.mt) {
    const Tensor memory = model.encode_text(datagen::to_text(ex->source_phonemes), ctx);
    std::vector<int> prev{kBos};
    prev.insert(prev.end(), ex->target_phonemes.begin(), ex->target_phonemes.end());
    std::vector<int> next(ex->target_phonemes.begin(), ex->target_phonemes.end());
    next.push_back(kEos);
    const auto dec = model.t2.decoder.decode_step(prev, memory, dec_ctx);
    bb.add("phoneme_ce", objectives::token_cross_entropy(dec.logits, next));
  }
  return bb.finish();
}

MultitaskResult multitask_step(MultiTaskModel& model, const datagen::TaskBatch& batch, const ForwardContext& ctx) {
  MultitaskResult r;
  r.losses = multitask_forward(model, batch, ctx);
  backward(r.losses.total());
  for (const auto& [name, t] : model.params().items()) {
    if (!t.has_grad()) continue;
    const auto g = t.grad();
    if (std::any_of(g.begin(), g.end(), [](double v) { return v != 0.0; })) r.touched.insert(name);
  }
  return r;
}

bool is_synthesizer_param(const std::string& name) { return starts_with(name, "synth."); }
bool is_lower_encoder_param(const std::string& name) {
  return starts_with(name, "encoder.feature.") || starts_with(name, "encoder.contrastive.");
}
bool is_text_embedding_param(const std::string& name) { return starts_with(name, "text_embed."); }

}  // namespace s2st::models
