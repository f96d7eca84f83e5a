#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "s2st/core/random.hpp"
#include "s2st/core/tensor.hpp"

namespace s2st::objectives {

// Union of non-overlapping spans over a length-T sequence.
struct MaskingPlan {
  std::size_t length = 0;
  std::vector<std::size_t> masked_positions;  // sorted, unique
  std::size_t span_length = 1;
  double mask_prob = 0.15;
  std::uint64_t seed = 0;

  bool empty() const { return masked_positions.empty(); }
  std::vector<std::uint8_t> mask() const;
  double masked_fraction() const;
};

inline constexpr double kSpeechMaskProb = 0.15;
inline constexpr std::size_t kSpeechSpan = 2;
inline constexpr std::size_t kTextSpan = 3;

// max(1, round(p*T/span)) spans (fewer if they cannot fit), placed without
// overlap uniformly over all arrangements. A sequence shorter than one span is
// masked entirely.
MaskingPlan make_masking_plan(std::size_t length, double mask_prob, std::size_t span, std::uint64_t seed);

// Plan from explicit positions (tests, degenerate cases).
MaskingPlan plan_from_positions(std::size_t length, std::vector<std::size_t> positions);

// Loss components with weights; total = sum weight * loss.
class LossBundle {
 public:
  struct Entry {
    std::string name;
    Tensor loss;
    double weight;
  };

  // Throws if the loss is not a finite scalar or the name repeats.
  void add(const std::string& name, const Tensor& loss, double weight = 1.0);
  bool has(const std::string& name) const;
  const Tensor& at(const std::string& name) const;
  double value(const std::string& name) const { return at(name).item(); }
  double weight(const std::string& name) const;
  std::vector<std::string> names() const;
  const std::vector<Entry>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }

  Tensor total() const;

 private:
  std::vector<Entry> entries_;
};

inline constexpr double kContrastiveKappa = 0.1;
inline constexpr std::size_t kNumDistractors = 4;
inline constexpr double kDiversityWeight = 0.1;

struct ContrastiveSample {
  std::size_t position;
  std::vector<std::size_t> distractors;
};

// For each masked position, K distinct distractors drawn uniformly from the
// other masked positions. Throws if fewer than K+1 positions are masked.
std::vector<ContrastiveSample> sample_distractors(const MaskingPlan& mask, std::size_t num_distractors, Rng& rng);

// Mean over samples of -log softmax_{q in {q_t} + distractors}(cos(c_t, q) / kappa)[q_t].
Tensor contrastive_loss(const Tensor& context, const Tensor& targets, std::span<const ContrastiveSample> samples,
                        double kappa);
Tensor contrastive_loss(const Tensor& context, const Tensor& targets, const MaskingPlan& mask,
                        std::size_t num_distractors, double kappa, Rng& rng);

// Cross-entropy of logits (T x C) against targets at masked positions only.
Tensor mlm_loss(const Tensor& logits, std::span<const int> targets, const MaskingPlan& mask);
// Span-masked text objective; same cross-entropy, spans of kTextSpan.
Tensor span_bert_loss(const Tensor& logits, std::span<const int> targets, const MaskingPlan& mask);

// Speech frames followed by transcript tokens in one sequence of logits
// ((S + L) x C); cross-entropy over masked transcript positions.
Tensor tlm_loss(const Tensor& logits, std::size_t speech_frames, std::span<const int> text_targets,
                const MaskingPlan& text_mask);

// -log sum over alignments collapsing to target; blank is the last column.
// Throws std::domain_error when no alignment exists (infinite loss).
Tensor ctc_loss(const Tensor& logits, std::span<const int> target);
// Frames needed for `target`: its length plus one per adjacent repeat.
std::size_t ctc_min_frames(std::span<const int> target);
// Argmax path with repeats merged and blanks removed.
std::vector<int> ctc_greedy_decode(const Tensor& logits);

struct S2stOutputs {
  Tensor phoneme_logits;  // (n + 1) x V
  Tensor spectrogram;     // F x M
  Tensor log_durations;   // n x 1
};

struct S2stTargets {
  std::vector<int> phonemes;   // n tokens followed by EOS
  std::vector<int> durations;  // n, all >= 1
  Tensor spectrogram;          // sum(durations) x M
};

// phoneme_ce + spec_l1 + duration_l2 (log-durations), weights 1.
LossBundle s2st_loss(const S2stOutputs& outputs, const S2stTargets& targets);

// Mean token cross-entropy of logits (L x V) against targets (L).
Tensor token_cross_entropy(const Tensor& logits, std::span<const int> targets);

}  // namespace s2st::objectives
