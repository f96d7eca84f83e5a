#include "s2st/datagen/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <unordered_map>
#include <numeric>
#include <set>
#include <stdexcept>

#include "json.hpp"
#include "s2st/core/serialize.hpp"

namespace s2st::datagen {

namespace {

constexpr std::uint64_t kKindS2st = 0, kKindMt = 1, kKindSynthetic = 2, kKindPaired = 3;

std::uint64_t make_id(std::size_t language, std::uint64_t kind, std::size_t n) {
  return (static_cast<std::uint64_t>(language) << 40) | (kind << 32) | static_cast<std::uint64_t>(n);
}

std::size_t categorical(std::span<const double> probs, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return i;
  }
  // u landed in the rounding slack above the last cumulative sum
  for (std::size_t i = probs.size(); i-- > 0;)
    if (probs[i] > 0.0) return i;
  return probs.size() - 1;
}

S2stExample make_s2st(const ToyWorld& world, const ToyLanguage& lang, std::vector<int> source, std::uint64_t id,
                      double noise, std::uint64_t seed, bool synthetic) {
  S2stExample ex;
  ex.id = id;
  ex.language = lang.index;
  ex.synthetic = synthetic;
  ex.target_phonemes = lang.translate(source);
  ex.target_durations = world.oracle.durations_for(ex.target_phonemes);
  Rng rng(mix_seed(seed, id));
  ex.source_spec = world.oracle.synthesize(source, noise, &rng);
  ex.target_spec = world.oracle.synthesize(ex.target_phonemes, 0.0, nullptr);
  ex.source_phonemes = std::move(source);
  return ex;
}

std::vector<double> resolve_counts(const SamplingConfig& config, std::span<const std::size_t> sizes) {
  if (!config.counts.empty()) {
    if (config.counts.size() != sizes.size()) throw std::invalid_argument("sampling counts do not match datasets");
    return config.counts;
  }
  return std::vector<double>(sizes.begin(), sizes.end());
}

}  // namespace

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "?";
}

const char* task_name(Task t) { return t == Task::s2st ? "s2st" : "mt"; }

const std::vector<S2stExample>& LanguageCorpus::split(Split s) const {
  switch (s) {
    case Split::train: return train;
    case Split::dev: return dev;
    case Split::test: return test;
  }
  return train;
}

Corpus make_corpus(const ToyWorld& world, std::uint64_t seed) {
  Corpus corpus;
  corpus.seed = seed;
  const double noise = world.config.source_noise;
  for (const auto& lang : world.languages) {
    LanguageCorpus lc;
    lc.language = lang.index;
    Rng rng(mix_seed(seed, 0x73327374ULL + lang.index));

    std::set<std::vector<int>> seen;
    std::vector<std::vector<int>> sentences;
    std::size_t guard = 0;
    while (sentences.size() < lang.corpus_size) {
      if (++guard > 1000 * lang.corpus_size + 1000) throw std::runtime_error("cannot draw enough unique sentences");
      auto s = world.random_sentence(lang, rng);
      if (seen.insert(s).second) sentences.push_back(std::move(s));
    }
    std::vector<std::size_t> order(sentences.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[rng.index(k)]);
    const std::size_t n = sentences.size(), n_train = n * 8 / 10, n_dev = n / 10;

    std::set<std::vector<int>> held_out;
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t i = order[k];
      const Split split = k < n_train ? Split::train : (k < n_train + n_dev ? Split::dev : Split::test);
      auto ex = make_s2st(world, lang, sentences[i], make_id(lang.index, kKindS2st, i), noise, seed, false);
      ex.split = split;
      if (split != Split::train) held_out.insert(sentences[i]);
      (split == Split::train ? lc.train : split == Split::dev ? lc.dev : lc.test).push_back(std::move(ex));
    }
    Rng extra_rng(mix_seed(seed, 0x74657374ULL + lang.index));
    guard = 0;
    while (lc.test.size() < world.config.min_test_size) {
      if (++guard > 1000 * world.config.min_test_size + 1000) throw std::runtime_error("cannot draw enough test sentences");
      auto s = world.random_sentence(lang, extra_rng);
      if (!seen.insert(s).second) continue;
      const std::size_t i = sentences.size();
      auto ex = make_s2st(world, lang, s, make_id(lang.index, kKindS2st, i), noise, seed, false);
      ex.split = Split::test;
      held_out.insert(s);
      sentences.push_back(std::move(s));
      lc.test.push_back(std::move(ex));
    }

    Rng mt_rng(mix_seed(seed, 0x6d74ULL + lang.index));
    guard = 0;
    while (lc.mt.size() < lang.mt_size) {
      if (++guard > 1000 * lang.mt_size + 1000) throw std::runtime_error("cannot draw enough MT sentences");
      auto s = world.random_sentence(lang, mt_rng);
      if (held_out.count(s)) continue;
      MtExample m;
      m.id = make_id(lang.index, kKindMt, lc.mt.size());
      m.language = lang.index;
      m.target_phonemes = lang.translate(s);
      m.source_phonemes = std::move(s);
      lc.mt.push_back(std::move(m));
    }

    Rng pr_rng(mix_seed(seed, 0x70616972ULL + lang.index));
    while (lc.paired.size() < world.config.paired_per_language) {
      auto s = world.random_sentence(lang, pr_rng);
      if (held_out.count(s)) continue;
      PairedExample p;
      p.language = lang.index;
      Rng noise_rng(mix_seed(seed, make_id(lang.index, kKindPaired, lc.paired.size())));
      p.speech = world.oracle.synthesize(s, noise, &noise_rng);
      p.text = to_text(s);
      p.phonemes = std::move(s);
      lc.paired.push_back(std::move(p));
    }
    corpus.languages.push_back(std::move(lc));
  }
  return corpus;
}

std::vector<S2stExample> augment(std::span<const MtExample> mt, const TtsOracle& oracle, double source_noise,
                                 std::uint64_t seed) {
  std::vector<S2stExample> out;
  out.reserve(mt.size());
  for (const auto& m : mt) {
    for (int p : m.source_phonemes)
      if (!oracle.has(p)) throw std::out_of_range("augment: source phoneme " + std::to_string(p) + " not in oracle table");
    for (int p : m.target_phonemes)
      if (!oracle.has(p)) throw std::out_of_range("augment: target phoneme " + std::to_string(p) + " not in oracle table");
    S2stExample ex;
    ex.id = make_id(m.language, kKindSynthetic, static_cast<std::size_t>(m.id & 0xffffffffULL));
    ex.language = m.language;
    ex.synthetic = true;
    ex.split = Split::train;
    ex.source_phonemes = m.source_phonemes;
    ex.target_phonemes = m.target_phonemes;
    ex.target_durations = oracle.durations_for(m.target_phonemes);
    Rng rng(mix_seed(seed, ex.id));
    ex.source_spec = oracle.synthesize(m.source_phonemes, source_noise, &rng);
    ex.target_spec = oracle.synthesize(m.target_phonemes, 0.0, nullptr);
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<std::vector<S2stExample>> augment_corpus(const Corpus& corpus, const ToyWorld& world, std::uint64_t seed) {
  std::vector<std::vector<S2stExample>> out;
  for (const auto& lc : corpus.languages) out.push_back(augment(lc.mt, world.oracle, world.config.source_noise, seed));
  return out;
}

// ---------------------------------------------------------------------------

std::vector<double> temperature_probs(std::span<const double> counts, double tau) {
  if (counts.empty()) throw std::invalid_argument("temperature_probs: no counts");
  if (!(tau >= 1.0)) throw std::invalid_argument("temperature_probs: tau must be >= 1");
  double total = 0.0;
  for (double n : counts) {
    if (!(n > 0.0)) throw std::invalid_argument("temperature_probs: counts must be positive");
    total += n;
  }
  std::vector<double> p(counts.size());
  double z = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i) z += p[i] = std::pow(counts[i] / total, 1.0 / tau);
  for (auto& v : p) v /= z;
  return p;
}

std::vector<double> temperature_probs(std::span<const std::size_t> counts, double tau) {
  std::vector<double> c(counts.begin(), counts.end());
  return temperature_probs(std::span<const double>(c), tau);
}

std::vector<Task> schedule_tasks(std::uint64_t seed, std::size_t num_steps) {
  if (num_steps < 1) throw std::invalid_argument("schedule_tasks: num_steps must be >= 1");
  Rng rng(mix_seed(seed, 0x7461736bULL));
  std::vector<Task> out(num_steps);
  for (auto& t : out) t = rng.bernoulli(0.5) ? Task::s2st : Task::mt;
  return out;
}

std::vector<std::uint64_t> TaskBatch::ids() const {
  std::vector<std::uint64_t> out;
  if (task == Task::s2st)
    for (auto* e : s2st) out.push_back(e->id);
  else
    for (auto* e : mt) out.push_back(e->id);
  return out;
}

namespace {

template <typename Example>
std::vector<ExampleRef> draw_refs(std::span<const std::vector<Example>* const> datasets, const SamplingConfig& config,
                                  std::size_t batch_size, Rng& rng, std::size_t source) {
  if (datasets.empty()) throw std::invalid_argument("draw_batch: no datasets");
  std::vector<std::size_t> sizes;
  for (auto* d : datasets) sizes.push_back(d->size());
  const auto probs = temperature_probs(std::span<const double>(resolve_counts(config, sizes)), config.temperature);
  std::vector<ExampleRef> refs;
  for (std::size_t b = 0; b < batch_size; ++b) {
    const std::size_t lang = categorical(probs, rng);
    if (sizes[lang] == 0) throw std::runtime_error("draw_batch: empty dataset for language " + std::to_string(lang));
    refs.push_back({source, lang, rng.index(sizes[lang])});
  }
  return refs;
}

}  // namespace

TaskBatch draw_batch(std::span<const std::vector<S2stExample>* const> datasets, const SamplingConfig& config,
                     std::size_t batch_size, std::uint64_t seed) {
  Rng rng(mix_seed(seed, config.seed));
  TaskBatch batch;
  batch.task = Task::s2st;
  batch.refs = draw_refs(datasets, config, batch_size, rng, 0);
  for (const auto& r : batch.refs) batch.s2st.push_back(&(*datasets[r.language])[r.index]);
  return batch;
}

TaskBatch draw_mt_batch(std::span<const std::vector<MtExample>* const> datasets, const SamplingConfig& config,
                        std::size_t batch_size, std::uint64_t seed) {
  Rng rng(mix_seed(seed, config.seed));
  TaskBatch batch;
  batch.task = Task::mt;
  batch.refs = draw_refs(datasets, config, batch_size, rng, 0);
  for (const auto& r : batch.refs) batch.mt.push_back(&(*datasets[r.language])[r.index]);
  return batch;
}

TaskBatch draw_mixture(std::span<const std::vector<S2stExample>* const> real, const SamplingConfig& real_config,
                       std::span<const std::vector<S2stExample>* const> synthetic,
                       const SamplingConfig& synthetic_config, double real_fraction, std::size_t batch_size,
                       std::uint64_t seed) {
  if (real_fraction < 0.0 || real_fraction > 1.0) throw std::invalid_argument("real_fraction must lie in [0, 1]");
  Rng rng(mix_seed(seed, real_config.seed ^ (synthetic_config.seed << 1)));
  TaskBatch batch;
  batch.task = Task::s2st;
  for (std::size_t b = 0; b < batch_size; ++b) {
    const bool is_real = rng.uniform() < real_fraction;
    auto ref = is_real ? draw_refs(real, real_config, 1, rng, 0)[0] : draw_refs(synthetic, synthetic_config, 1, rng, 1)[0];
    const auto& ds = is_real ? real : synthetic;
    batch.refs.push_back(ref);
    batch.s2st.push_back(&(*ds[ref.language])[ref.index]);
  }
  return batch;
}

// ---------------------------------------------------------------------------

namespace {

Tensor int_tensor(std::span<const int> v) {
  std::vector<double> d(v.begin(), v.end());
  if (d.empty()) d.push_back(-1.0);  // placeholder, dims must be positive
  const std::size_t n = d.size();
  return Tensor::from({n}, std::move(d));
}

std::vector<int> from_int_tensor(const Tensor& t) {
  std::vector<int> out;
  for (double v : t.data())
    if (v >= 0.0) out.push_back(static_cast<int>(v));
  return out;
}

void append_s2st(NamedTensors& nt, nlohmann::json& rec, const S2stExample& ex, const ToyWorld& world) {
  const std::string key = std::to_string(ex.id);
  nt.emplace_back(key + ".src_ph", int_tensor(ex.source_phonemes));
  nt.emplace_back(key + ".tgt_ph", int_tensor(ex.target_phonemes));
  nt.emplace_back(key + ".dur", int_tensor(ex.target_durations));
  nt.emplace_back(key + ".src_spec", ex.source_spec);
  nt.emplace_back(key + ".tgt_spec", ex.target_spec);
  rec = {{"id", ex.id},
         {"kind", "s2st"},
         {"language", world.languages[ex.language].id},
         {"split", split_name(ex.split)},
         {"source_len", ex.source_phonemes.size()},
         {"target_len", ex.target_phonemes.size()},
         {"source_frames", ex.source_spec.rows()},
         {"target_frames", ex.target_spec.rows()},
         {"synthetic", ex.synthetic}};
}

}  // namespace

void save_corpus(const Corpus& corpus, const ToyWorld& world, const std::filesystem::path& dir,
                 std::span<const std::vector<S2stExample>> synthetic) {
  std::filesystem::create_directories(dir);
  std::ofstream index(dir / "index.jsonl", std::ios::binary | std::ios::trunc);
  if (!index) throw std::runtime_error("cannot write " + (dir / "index.jsonl").string());
  for (const auto& lc : corpus.languages) {
    const std::string lid = world.languages[lc.language].id;
    for (Split s : {Split::train, Split::dev, Split::test}) {
      NamedTensors nt;
      for (const auto& ex : lc.split(s)) {
        nlohmann::json rec;
        append_s2st(nt, rec, ex, world);
        rec["file"] = lid + "." + split_name(s) + ".s2nt";
        index << rec.dump() << '\n';
      }
      if (!nt.empty()) save_named_tensors(dir / (lid + "." + split_name(s) + ".s2nt"), nt);
    }
    NamedTensors mt;
    for (const auto& m : lc.mt) {
      const std::string key = std::to_string(m.id);
      mt.emplace_back(key + ".src_ph", int_tensor(m.source_phonemes));
      mt.emplace_back(key + ".tgt_ph", int_tensor(m.target_phonemes));
      nlohmann::json rec = {{"id", m.id},
                            {"kind", "mt"},
                            {"language", lid},
                            {"split", "train"},
                            {"source_len", m.source_phonemes.size()},
                            {"target_len", m.target_phonemes.size()},
                            {"synthetic", false},
                            {"file", lid + ".mt.s2nt"}};
      index << rec.dump() << '\n';
    }
    if (!mt.empty()) save_named_tensors(dir / (lid + ".mt.s2nt"), mt);
    if (lc.language < synthetic.size()) {
      NamedTensors nt;
      for (const auto& ex : synthetic[lc.language]) {
        nlohmann::json rec;
        append_s2st(nt, rec, ex, world);
        rec["file"] = lid + ".aug.s2nt";
        index << rec.dump() << '\n';
      }
      if (!nt.empty()) save_named_tensors(dir / (lid + ".aug.s2nt"), nt);
    }
  }
}

Corpus load_corpus(const std::filesystem::path& dir, std::size_t num_languages) {
  std::ifstream index(dir / "index.jsonl");
  if (!index) throw std::runtime_error("cannot read " + (dir / "index.jsonl").string());
  Corpus corpus;
  corpus.languages.resize(num_languages);
  std::map<std::string, std::size_t> lang_ids;
  std::map<std::string, std::unordered_map<std::string, Tensor>> files;
  auto fetch = [&](const std::string& file, const std::string& key) -> const Tensor& {
    auto it = files.find(file);
    if (it == files.end()) {
      std::unordered_map<std::string, Tensor> m;
      for (auto& [name, t] : load_named_tensors(dir / file)) m.emplace(name, t);
      it = files.emplace(file, std::move(m)).first;
    }
    auto t = it->second.find(key);
    if (t == it->second.end()) throw std::runtime_error("corpus file " + file + " lacks " + key);
    return t->second;
  };
  std::string line;
  while (std::getline(index, line)) {
    if (line.empty()) continue;
    const auto rec = nlohmann::json::parse(line);
    const std::string lid = rec.at("language");
    if (!lang_ids.count(lid)) {
      const std::size_t next = lang_ids.size();
      if (next >= num_languages) throw std::runtime_error("corpus has more languages than expected");
      lang_ids[lid] = next;
    }
    const std::size_t lang = lang_ids[lid];
    auto& lc = corpus.languages[lang];
    lc.language = lang;
    const std::uint64_t id = rec.at("id");
    const std::string key = std::to_string(id), file = rec.at("file");
    if (rec.at("kind") == "mt") {
      MtExample m;
      m.id = id;
      m.language = lang;
      m.source_phonemes = from_int_tensor(fetch(file, key + ".src_ph"));
      m.target_phonemes = from_int_tensor(fetch(file, key + ".tgt_ph"));
      lc.mt.push_back(std::move(m));
      continue;
    }
    if (rec.at("synthetic").get<bool>()) continue;
    S2stExample ex;
    ex.id = id;
    ex.language = lang;
    const std::string split = rec.at("split");
    ex.split = split == "train" ? Split::train : split == "dev" ? Split::dev : Split::test;
    ex.source_phonemes = from_int_tensor(fetch(file, key + ".src_ph"));
    ex.target_phonemes = from_int_tensor(fetch(file, key + ".tgt_ph"));
    ex.target_durations = from_int_tensor(fetch(file, key + ".dur"));
    ex.source_spec = fetch(file, key + ".src_spec");
    ex.target_spec = fetch(file, key + ".tgt_spec");
    (ex.split == Split::train ? lc.train : ex.split == Split::dev ? lc.dev : lc.test).push_back(std::move(ex));
  }
  return corpus;
}

}  // namespace s2st::datagen
