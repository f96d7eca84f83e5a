#include "s2st/datagen/world.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace s2st::datagen {

const char* group_name(ResourceGroup g) {
  switch (g) {
    case ResourceGroup::high: return "high";
    case ResourceGroup::mid: return "mid";
    case ResourceGroup::low: return "low";
  }
  return "?";
}

ResourceGroup parse_group(const std::string& s) {
  if (s == "high") return ResourceGroup::high;
  if (s == "mid") return ResourceGroup::mid;
  if (s == "low") return ResourceGroup::low;
  throw std::invalid_argument("unknown resource group '" + s + "'");
}

int text_token(int phoneme, int variant) {
  if (phoneme == kBos || phoneme == kEos) return phoneme;
  if (phoneme < 2) throw std::out_of_range("negative phoneme id");
  if (variant != 0 && variant != 1) throw std::out_of_range("spelling variant must be 0 or 1");
  return 2 + 2 * (phoneme - 2) + variant;
}

int phoneme_of_text(int token) {
  if (token < 0) throw std::out_of_range("negative text token");
  if (token < 2) return token;
  return 2 + (token - 2) / 2;
}

std::size_t text_vocab_size(std::size_t num_phonemes) { return 2 + 2 * (num_phonemes - 2); }

std::vector<int> to_text(std::span<const int> phonemes) {
  std::vector<int> out(phonemes.size());
  int variant = 0;
  for (std::size_t i = 0; i < phonemes.size(); ++i) {
    variant = (i > 0 && phonemes[i] == phonemes[i - 1]) ? 1 - variant : 0;
    out[i] = text_token(phonemes[i], variant);
  }
  return out;
}

WorldConfig WorldConfig::standard() {
  WorldConfig c;
  c.languages = {
      {"h1", ResourceGroup::high, 400, 4000, 1}, {"h2", ResourceGroup::high, 400, 4000, 2},
      {"m1", ResourceGroup::mid, 150, 1500, 1},  {"m2", ResourceGroup::mid, 150, 1500, 2},
      {"l1", ResourceGroup::low, 60, 600, 1},    {"l2", ResourceGroup::low, 60, 600, 2},
  };
  c.min_test_size = 200;
  return c;
}

// ---------------------------------------------------------------------------

bool ToyLanguage::in_domain(int phoneme) const {
  return std::find(inventory.begin(), inventory.end(), phoneme) != inventory.end();
}

namespace {

// Reverse inside consecutive blocks of `w` (an involution).
std::vector<int> block_reverse(std::vector<int> seq, std::size_t w) {
  if (w <= 1) return seq;
  for (std::size_t b = 0; b < seq.size(); b += w) {
    std::reverse(seq.begin() + static_cast<std::ptrdiff_t>(b),
                 seq.begin() + static_cast<std::ptrdiff_t>(std::min(seq.size(), b + w)));
  }
  return seq;
}

}  // namespace

std::vector<int> ToyLanguage::translate(std::span<const int> source) const {
  std::vector<int> mapped;
  mapped.reserve(source.size());
  for (int p : source) {
    auto it = std::find(inventory.begin(), inventory.end(), p);
    if (it == inventory.end()) {
      throw std::out_of_range("phoneme " + std::to_string(p) + " not in language " + id);
    }
    mapped.push_back(mapping[static_cast<std::size_t>(it - inventory.begin())]);
  }
  return block_reverse(std::move(mapped), reorder_window);
}

std::vector<int> ToyLanguage::invert(std::span<const int> target) const {
  std::vector<int> seq = block_reverse(std::vector<int>(target.begin(), target.end()), reorder_window);
  for (int& p : seq) {
    auto it = std::find(mapping.begin(), mapping.end(), p);
    if (it == mapping.end()) throw std::out_of_range("target phoneme " + std::to_string(p) + " outside mapping");
    p = inventory[static_cast<std::size_t>(it - mapping.begin())];
  }
  return seq;
}

// ---------------------------------------------------------------------------

TtsOracle::TtsOracle(std::size_t num_phonemes, std::size_t mel_bins, std::uint64_t seed, double noise_level)
    : mel_bins_(mel_bins), noise_(noise_level), seed_(seed) {
  if (num_phonemes < 3 || mel_bins == 0) throw std::invalid_argument("oracle needs phonemes and mel bins");
  if (noise_level < 0.0) throw std::invalid_argument("oracle noise must be >= 0");
  Rng rng(mix_seed(seed, 0x747473ULL));
  durations_.assign(num_phonemes, 0);
  templates_.assign(num_phonemes, {});
  for (std::size_t p = 2; p < num_phonemes; ++p) {
    durations_[p] = rng.range(1, 4);
    // rejection sampling keeps every pair of templates at least 1.0 apart
    for (int attempt = 0;; ++attempt) {
      if (attempt > 100000) throw std::runtime_error("oracle: cannot place separated templates");
      std::vector<double> t(mel_bins);
      for (auto& v : t) v = rng.uniform(-1.5, 1.5);
      bool ok = true;
      for (std::size_t q = 2; q < p && ok; ++q) {
        double d = 0.0;
        for (std::size_t j = 0; j < mel_bins; ++j) d += (t[j] - templates_[q][j]) * (t[j] - templates_[q][j]);
        ok = std::sqrt(d) >= 1.0;
      }
      if (ok) {
        templates_[p] = std::move(t);
        break;
      }
    }
  }
}

bool TtsOracle::has(int p) const {
  return p >= 2 && static_cast<std::size_t>(p) < durations_.size();
}

int TtsOracle::duration(int p) const {
  if (!has(p)) throw std::out_of_range("phoneme " + std::to_string(p) + " outside oracle table");
  return durations_[static_cast<std::size_t>(p)];
}

std::span<const double> TtsOracle::template_of(int p) const {
  if (!has(p)) throw std::out_of_range("phoneme " + std::to_string(p) + " outside oracle table");
  return templates_[static_cast<std::size_t>(p)];
}

double TtsOracle::min_template_distance() const {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t a = 2; a < templates_.size(); ++a)
    for (std::size_t b = a + 1; b < templates_.size(); ++b) {
      double d = 0.0;
      for (std::size_t j = 0; j < mel_bins_; ++j) d += (templates_[a][j] - templates_[b][j]) * (templates_[a][j] - templates_[b][j]);
      best = std::min(best, std::sqrt(d));
    }
  return best;
}

std::vector<int> TtsOracle::durations_for(std::span<const int> phonemes) const {
  std::vector<int> d(phonemes.size());
  for (std::size_t i = 0; i < phonemes.size(); ++i) d[i] = duration(phonemes[i]);
  return d;
}

Tensor TtsOracle::synthesize(std::span<const int> phonemes, Rng* rng) const {
  return synthesize(phonemes, noise_, rng);
}

Tensor TtsOracle::synthesize(std::span<const int> phonemes, double noise_level, Rng* rng) const {
  if (phonemes.empty()) throw std::invalid_argument("oracle: empty phoneme sequence");
  if (noise_level > 0.0 && rng == nullptr) throw std::logic_error("oracle: noise requested without rng");
  std::vector<double> frames;
  std::size_t n = 0;
  for (int p : phonemes) {
    const auto t = template_of(p);
    for (int k = 0; k < duration(p); ++k) {
      for (double v : t) frames.push_back(noise_level > 0.0 ? v + rng->normal(0.0, noise_level) : v);
      ++n;
    }
  }
  return Tensor::matrix(n, mel_bins_, std::move(frames));
}

std::vector<int> TtsOracle::transcribe(const Tensor& spec) const {
  if (!spec.defined() || spec.size() == 0) throw std::invalid_argument("oracle_asr: empty spectrogram");
  if (spec.cols() != mel_bins_) throw std::invalid_argument("oracle_asr: frame width does not match templates");
  const auto x = spec.data();
  std::vector<int> frame_ids(spec.rows());
  for (std::size_t t = 0; t < spec.rows(); ++t) {
    double best = std::numeric_limits<double>::infinity();
    int arg = 2;
    for (std::size_t p = 2; p < templates_.size(); ++p) {
      double d = 0.0;
      for (std::size_t j = 0; j < mel_bins_; ++j) {
        const double diff = x[t * mel_bins_ + j] - templates_[p][j];
        d += diff * diff;
      }
      if (d < best) {
        best = d;
        arg = static_cast<int>(p);
      }
    }
    frame_ids[t] = arg;
  }
  std::vector<int> out;
  for (std::size_t t = 0; t < frame_ids.size();) {
    std::size_t r = t;
    while (r < frame_ids.size() && frame_ids[r] == frame_ids[t]) ++r;
    const double run = static_cast<double>(r - t);
    const int count = std::max(1, static_cast<int>(std::lround(run / duration(frame_ids[t]))));
    out.insert(out.end(), static_cast<std::size_t>(count), frame_ids[t]);
    t = r;
  }
  return out;
}

// ---------------------------------------------------------------------------

std::size_t ToyWorld::language_index(const std::string& id) const {
  for (const auto& l : languages)
    if (l.id == id) return l.index;
  throw std::out_of_range("unknown language '" + id + "'");
}

std::vector<int> ToyWorld::random_sentence(const ToyLanguage& lang, Rng& rng) const {
  const int len = rng.range(static_cast<int>(config.min_len), static_cast<int>(config.max_len));
  std::vector<int> s(static_cast<std::size_t>(len));
  for (auto& p : s) p = lang.inventory[rng.index(lang.inventory.size())];
  return s;
}

ToyWorld make_world(const WorldConfig& config, std::uint64_t seed) {
  if (config.languages.empty()) throw std::invalid_argument("world needs at least one language");
  if (config.target_phonemes < 2) throw std::invalid_argument("world needs at least 2 target phonemes");
  if (config.min_len < 1 || config.max_len < config.min_len) throw std::invalid_argument("bad sentence lengths");
  ToyWorld w;
  w.config = config;
  w.seed = seed;
  const std::size_t tp = config.target_phonemes;
  int next_id = static_cast<int>(2 + tp);
  for (std::size_t i = 0; i < config.languages.size(); ++i) {
    const auto& spec = config.languages[i];
    if (spec.corpus_size < 1) throw std::invalid_argument("language " + spec.id + " needs corpus_size >= 1");
    if (spec.reorder_window < 1) throw std::invalid_argument("reorder window must be >= 1");
    ToyLanguage lang;
    lang.id = spec.id;
    lang.index = i;
    lang.group = spec.group;
    lang.corpus_size = spec.corpus_size;
    lang.mt_size = spec.mt_size;
    lang.reorder_window = spec.reorder_window;
    for (std::size_t k = 0; k < tp; ++k) lang.inventory.push_back(next_id++);
    lang.mapping.resize(tp);
    std::iota(lang.mapping.begin(), lang.mapping.end(), 2);
    Rng rng(mix_seed(seed, 0x6c616e67ULL + i));
    for (std::size_t k = tp; k > 1; --k) std::swap(lang.mapping[k - 1], lang.mapping[rng.index(k)]);
    w.languages.push_back(std::move(lang));
  }
  w.oracle = TtsOracle(static_cast<std::size_t>(next_id), config.mel_bins, mix_seed(seed, 0x6f7261ULL), 0.0);
  return w;
}

}  // namespace s2st::datagen
