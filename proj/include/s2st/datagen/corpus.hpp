#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "s2st/datagen/world.hpp"

namespace s2st::datagen {

enum class Split { train, dev, test };
const char* split_name(Split s);

struct S2stExample {
  std::uint64_t id = 0;
  std::size_t language = 0;
  Split split = Split::train;
  bool synthetic = false;
  std::vector<int> source_phonemes;
  std::vector<int> target_phonemes;   // no BOS/EOS
  std::vector<int> target_durations;  // one per target phoneme
  Tensor source_spec;                 // noisy
  Tensor target_spec;                 // clean oracle output
};

struct MtExample {
  std::uint64_t id = 0;
  std::size_t language = 0;
  std::vector<int> source_phonemes;
  std::vector<int> target_phonemes;
};

// Speech-transcript pair for mSLAM's paired objectives.
struct PairedExample {
  std::size_t language = 0;
  std::vector<int> phonemes;
  std::vector<int> text;
  Tensor speech;
};

struct LanguageCorpus {
  std::size_t language = 0;
  std::vector<S2stExample> train, dev, test;
  std::vector<MtExample> mt;
  std::vector<PairedExample> paired;

  std::size_t size() const { return train.size() + dev.size() + test.size(); }
  const std::vector<S2stExample>& split(Split s) const;
};

struct Corpus {
  std::vector<LanguageCorpus> languages;
  std::uint64_t seed = 0;
};

// Builds S2ST data (80/10/10 split by seeded shuffle), MT data (distinct from
// every S2ST dev/test sentence) and paired speech-transcript data.
Corpus make_corpus(const ToyWorld& world, std::uint64_t seed);

// One synthetic S2ST example per MT example, spectrograms from the oracle.
std::vector<S2stExample> augment(std::span<const MtExample> mt, const TtsOracle& oracle, double source_noise,
                                 std::uint64_t seed);
std::vector<std::vector<S2stExample>> augment_corpus(const Corpus& corpus, const ToyWorld& world, std::uint64_t seed);

// p_l = (n_l/N)^(1/tau) / sum_k (n_k/N)^(1/tau)
std::vector<double> temperature_probs(std::span<const double> counts, double tau);
std::vector<double> temperature_probs(std::span<const std::size_t> counts, double tau);

enum class Task { s2st, mt };
const char* task_name(Task t);

// i.i.d. fair coin per step.
std::vector<Task> schedule_tasks(std::uint64_t seed, std::size_t num_steps);

struct SamplingConfig {
  double temperature = 1.0;
  std::vector<double> counts;  // empty: use dataset sizes
  std::uint64_t seed = 0;
};

struct ExampleRef {
  std::size_t source = 0;  // index of the dataset list the example came from
  std::size_t language = 0;
  std::size_t index = 0;
};

struct TaskBatch {
  Task task = Task::s2st;
  std::vector<const S2stExample*> s2st;
  std::vector<const MtExample*> mt;
  std::vector<ExampleRef> refs;

  std::size_t size() const { return task == Task::s2st ? s2st.size() : mt.size(); }
  std::vector<std::uint64_t> ids() const;
};

// Language by temperature over per-language counts, example uniform within
// the language.
TaskBatch draw_batch(std::span<const std::vector<S2stExample>* const> datasets, const SamplingConfig& config,
                     std::size_t batch_size, std::uint64_t seed);
TaskBatch draw_mt_batch(std::span<const std::vector<MtExample>* const> datasets, const SamplingConfig& config,
                        std::size_t batch_size, std::uint64_t seed);

// Each example is real with probability real_fraction, else synthetic; the
// temperature configs apply within each side.
TaskBatch draw_mixture(std::span<const std::vector<S2stExample>* const> real, const SamplingConfig& real_config,
                       std::span<const std::vector<S2stExample>* const> synthetic,
                       const SamplingConfig& synthetic_config, double real_fraction, std::size_t batch_size,
                       std::uint64_t seed);

// Directory of named-tensor files (one per language/split) plus index.jsonl.
void save_corpus(const Corpus& corpus, const ToyWorld& world, const std::filesystem::path& dir,
                 std::span<const std::vector<S2stExample>> synthetic = {});
Corpus load_corpus(const std::filesystem::path& dir, std::size_t num_languages);

}  // namespace s2st::datagen
