#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "s2st/datagen/corpus.hpp"
#include "s2st/models/config.hpp"
#include "s2st/nn/blocks.hpp"
#include "s2st/objectives/losses.hpp"

namespace s2st::models {

using nn::ForwardContext;
using nn::ParameterSet;
using objectives::LossBundle;

// Feature/vocabulary sizes of a generated world.
DataShape data_shape(const datagen::ToyWorld& world);

// Feature encoder (Linear + swish) -> contrastive Conformer blocks -> context
// Conformer blocks. Parameters: encoder.feature.*, encoder.contrastive.block{i}.*,
// encoder.context.block{i}.*
class SpeechEncoder {
 public:
  SpeechEncoder() = default;
  SpeechEncoder(const ModelConfig& config, Rng& rng);

  Tensor features(const Tensor& spec, const ForwardContext& ctx) const;
  Tensor contrastive(const Tensor& features, const ForwardContext& ctx) const;
  Tensor context(const Tensor& hidden, const ForwardContext& ctx) const;
  Tensor encode(const Tensor& spec, const ForwardContext& ctx) const;

  void collect(ParameterSet& out) const;

  nn::Linear feature;
  std::vector<nn::ConformerBlock> contrastive_blocks;
  std::vector<nn::ConformerBlock> context_blocks;
};

// x with masked rows replaced by `emb` (1 x D or D).
Tensor apply_row_mask(const Tensor& x, std::span<const std::uint8_t> mask, const Tensor& emb);

struct TranslationResult {
  std::vector<int> phonemes;  // without BOS/EOS
  Tensor spectrogram;         // undefined when nothing was decoded
  std::vector<int> durations;
  bool truncated = false;
};

class Translatotron2 {
 public:
  Translatotron2() = default;
  Translatotron2(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  // Teacher-forced outputs for one example.
  objectives::S2stOutputs forward(const datagen::S2stExample& ex, const ForwardContext& ctx) const;
  // Same path from an already-encoded memory (multi-task model reuses it).
  objectives::S2stOutputs forward_memory(const Tensor& memory, const datagen::S2stExample& ex,
                                         const ForwardContext& ctx) const;

  // Greedy phoneme decode, then free-running synthesis.
  TranslationResult translate(const Tensor& source_spec, std::size_t max_len) const;

  SpeechEncoder encoder;
  nn::TransformerDecoder decoder;
  nn::DurationSynthesizer synthesizer;

 private:
  ModelConfig config_;
  ParameterSet params_;
};

// Mean of per-example s2st_loss bundles.
LossBundle t2_forward(const Translatotron2& model, std::span<const datagen::S2stExample* const> batch,
                      const ForwardContext& ctx);

class W2vBert {
 public:
  W2vBert() = default;
  W2vBert(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  SpeechEncoder encoder;
  nn::VectorQuantizer quantizer;  // quantizer.codebook
  Tensor mask_embedding;           // mlm.mask_emb
  nn::Linear mlm_head;             // mlm.head.*

 protected:
  void register_params();
  ModelConfig config_;
  ParameterSet params_;
};

// Speech-side w2v-BERT losses for one utterance; nullopt when the utterance is
// too short to mask (fewer than two masked frames).
struct SpeechLossTerms {
  Tensor contrastive, mlm, diversity;
  double perplexity = 0.0;
  double chance = 0.0;  // log(K+1) for the distractor count actually used
};
std::optional<SpeechLossTerms> w2vbert_terms(const W2vBert& model, const Tensor& spec, const ForwardContext& ctx,
                                             double mask_prob, Rng& rng);

struct PretrainStats {
  std::size_t skipped = 0;
  double perplexity = 0.0;  // mean hard-code perplexity over used utterances
  double chance_contrastive = 0.0;  // contrastive loss of a uniform softmax, averaged the same way
};

// contrastive + mlm + 0.1 * diversity averaged over the batch.
LossBundle w2vbert_step(const W2vBert& model, std::span<const Tensor> specs, const ForwardContext& ctx, Rng& rng,
                        double mask_prob = objectives::kSpeechMaskProb, PretrainStats* stats = nullptr);

class MSlam : public W2vBert {
 public:
  MSlam() = default;
  MSlam(const ModelConfig& config, std::uint64_t seed);

  // Text path: text_embed.table + sinusoid positions, masked rows replaced by
  // text_embed.mask, then the shared context network.
  Tensor encode_text(std::span<const int> tokens, std::span<const std::uint8_t> mask, const ForwardContext& ctx) const;

  Tensor text_embedding;  // text_embed.table
  Tensor text_mask;       // text_embed.mask
  nn::Linear span_head;   // span.head.*
  nn::Linear ctc_head;    // ctc.head.*, blank = last column
  nn::Linear tlm_head;    // tlm.head.*
};

enum class MslamKind { speech, text, paired };

struct MslamItem {
  MslamKind kind = MslamKind::speech;
  Tensor speech;
  std::vector<int> text;
};

MslamKind parse_mslam_kind(const std::string& s);

LossBundle mslam_step(const MSlam& model, std::span<const MslamItem> batch, const ForwardContext& ctx, Rng& rng,
                      PretrainStats* stats = nullptr);

// Greedy CTC transcript (text tokens) of an utterance.
std::vector<int> mslam_ctc_decode(const MSlam& model, const Tensor& speech);

enum class MtVariant { text_to_text, text_to_phoneme, phoneme_to_phoneme };
const char* mt_variant_name(MtVariant v);
MtVariant parse_mt_variant(const std::string& s);

class MtModel {
 public:
  MtModel() = default;
  MtModel(const ModelConfig& config, MtVariant variant, std::uint64_t seed);

  MtVariant variant() const { return variant_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  std::size_t input_vocab() const;
  std::size_t output_vocab() const;

  // Source/target sequences in the variant's token spaces.
  std::vector<int> source_tokens(const datagen::MtExample& ex) const;
  std::vector<int> target_tokens(const datagen::MtExample& ex) const;

  Tensor encode(std::span<const int> tokens, const ForwardContext& ctx) const;
  Tensor loss(const datagen::MtExample& ex, const ForwardContext& ctx) const;

  Tensor input_embedding;  // text_embed.table or phoneme_embed.table
  std::vector<nn::ConformerBlock> context_blocks;  // encoder.context.block{i}
  nn::TransformerDecoder decoder;

 private:
  MtVariant variant_ = MtVariant::text_to_phoneme;
  ModelConfig config_;
  ParameterSet params_;
};

// Mean token cross-entropy over the batch, returned as {"phoneme_ce"} or {"token_ce"}.
LossBundle mt_forward(const MtModel& model, std::span<const datagen::MtExample* const> batch,
                      const ForwardContext& ctx);

struct TransferReport {
  std::vector<std::string> copied;
  std::vector<std::string> skipped;  // source names left behind
  std::size_t copied_scalars = 0;
};

// Copies same-named encoder parameters; everything else in the target is untouched.
TransferReport transfer_encoder(Translatotron2& target, const W2vBert& source);
TransferReport transfer_encoder(MtModel& target, const MSlam& source);
// Copies decoder.* parameters; embedding/head skipped on vocabulary mismatch.
TransferReport transfer_decoder(Translatotron2& target, const MtModel& source);

// Translatotron 2 plus a text embedding feeding the shared context network.
class MultiTaskModel {
 public:
  MultiTaskModel() = default;
  MultiTaskModel(const ModelConfig& config, std::uint64_t seed, bool freeze_lower_encoder = false);

  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  // Parameters the optimizer updates (lower encoder excluded when frozen).
  ParameterSet trainable() const;

  Translatotron2 t2;
  Tensor text_embedding;  // text_embed.table
  bool freeze_lower_encoder = false;

  Tensor encode_text(std::span<const int> tokens, const ForwardContext& ctx) const;

 private:
  ParameterSet params_;
};

TransferReport transfer_encoder(MultiTaskModel& target, const MSlam& source);

struct MultitaskResult {
  LossBundle losses;
  std::set<std::string> touched;  // parameters with a non-zero gradient
};

LossBundle multitask_forward(const MultiTaskModel& model, const datagen::TaskBatch& batch, const ForwardContext& ctx);
// Forward + backward; grads are left on the parameters for the optimizer.
MultitaskResult multitask_step(MultiTaskModel& model, const datagen::TaskBatch& batch, const ForwardContext& ctx);

// Names of parameters in a group, for routing checks.
bool is_synthesizer_param(const std::string& name);
bool is_lower_encoder_param(const std::string& name);
bool is_text_embedding_param(const std::string& name);

}  // namespace s2st::models
