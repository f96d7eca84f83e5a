#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "s2st/core/random.hpp"
#include "s2st/core/tensor.hpp"

namespace s2st::datagen {

enum class ResourceGroup { high, mid, low };
const char* group_name(ResourceGroup g);
ResourceGroup parse_group(const std::string& s);

// Global phoneme id space shared by every language and the oracle:
// 0 = BOS, 1 = EOS, then target phonemes, then per-language source phonemes.
inline constexpr int kBos = 0;
inline constexpr int kEos = 1;

// Text tokens: 0 = BOS, 1 = EOS, and two spellings per phoneme. A phoneme
// repeating its predecessor flips spelling, so adjacent tokens never repeat.
int text_token(int phoneme, int variant);
int phoneme_of_text(int token);
std::size_t text_vocab_size(std::size_t num_phonemes);
std::vector<int> to_text(std::span<const int> phonemes);

struct LanguageSpec {
  std::string id;
  ResourceGroup group = ResourceGroup::high;
  std::size_t corpus_size = 100;  // S2ST examples
  std::size_t mt_size = 1000;     // MT examples
  std::size_t reorder_window = 1;
};

struct WorldConfig {
  std::size_t target_phonemes = 10;
  std::size_t mel_bins = 8;
  double source_noise = 0.1;
  std::size_t min_len = 3;
  std::size_t max_len = 8;
  std::size_t paired_per_language = 40;  // speech-transcript pairs for mSLAM
  // Test split topped up with extra unseen sentences to at least this many;
  // training data is unaffected.
  std::size_t min_test_size = 0;
  std::vector<LanguageSpec> languages;

  // 2 high / 2 mid / 2 low source languages, MT 10x the S2ST size.
  static WorldConfig standard();
};

// Deterministic bijection from a language's source phonemes onto the target
// phonemes, followed by reversal inside consecutive blocks of reorder_window.
struct ToyLanguage {
  std::string id;
  std::size_t index = 0;
  ResourceGroup group = ResourceGroup::high;
  std::size_t corpus_size = 0;
  std::size_t mt_size = 0;
  std::size_t reorder_window = 1;
  std::vector<int> inventory;  // global ids of this language's source phonemes
  std::vector<int> mapping;    // mapping[i] = target id for inventory[i]

  bool in_domain(int phoneme) const;
  std::vector<int> translate(std::span<const int> source) const;
  std::vector<int> invert(std::span<const int> target) const;
};

// Per-phoneme duration and spectral template. Frames of phoneme p are its
// template repeated durations[p] times (+ Gaussian noise when requested).
class TtsOracle {
 public:
  TtsOracle() = default;
  TtsOracle(std::size_t num_phonemes, std::size_t mel_bins, std::uint64_t seed, double noise_level = 0.0);

  bool has(int phoneme) const;
  int duration(int phoneme) const;
  std::span<const double> template_of(int phoneme) const;
  std::size_t mel_bins() const { return mel_bins_; }
  std::size_t num_phonemes() const { return durations_.size(); }
  double noise_level() const { return noise_; }
  std::uint64_t seed() const { return seed_; }
  double min_template_distance() const;

  std::vector<int> durations_for(std::span<const int> phonemes) const;
  // Noise is drawn from `rng` when noise_level > 0; throws on unknown phonemes.
  Tensor synthesize(std::span<const int> phonemes, Rng* rng = nullptr) const;
  Tensor synthesize(std::span<const int> phonemes, double noise_level, Rng* rng) const;

  // Nearest template per frame, runs collapsed by the duration table.
  std::vector<int> transcribe(const Tensor& spectrogram) const;

 private:
  std::size_t mel_bins_ = 0;
  std::vector<int> durations_;                  // 0 for BOS/EOS
  std::vector<std::vector<double>> templates_;  // empty for BOS/EOS
  double noise_ = 0.0;
  std::uint64_t seed_ = 0;
};

struct ToyWorld {
  WorldConfig config;
  std::vector<ToyLanguage> languages;
  TtsOracle oracle;  // noise 0; source noise applied at corpus generation
  std::uint64_t seed = 0;

  std::size_t num_phonemes() const { return oracle.num_phonemes(); }
  // Decoder vocabulary: BOS, EOS and the target phonemes.
  std::size_t target_vocab() const { return 2 + config.target_phonemes; }
  std::size_t text_vocab() const { return text_vocab_size(num_phonemes()); }
  std::size_t language_index(const std::string& id) const;

  // Random source sentence of this language (length in [min_len, max_len]).
  std::vector<int> random_sentence(const ToyLanguage& lang, Rng& rng) const;
};

ToyWorld make_world(const WorldConfig& config, std::uint64_t seed);

}  // namespace s2st::datagen
