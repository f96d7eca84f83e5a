#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "doctest.h"
#include "s2st/datagen/corpus.hpp"

using namespace s2st;
using namespace s2st::datagen;

namespace {

WorldConfig small_config() {
  WorldConfig c;
  c.languages = {{"a", ResourceGroup::high, 200, 400, 1},
                 {"b", ResourceGroup::mid, 50, 100, 2},
                 {"c", ResourceGroup::low, 10, 40, 3}};
  c.paired_per_language = 5;
  return c;
}

bool same_tensor(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a.data()[i] != b.data()[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("translation rules are deterministic bijections") {
  auto world = make_world(WorldConfig::standard(), 3);
  Rng rng(1);
  for (const auto& lang : world.languages) {
    std::set<int> image(lang.mapping.begin(), lang.mapping.end());
    CHECK(image.size() == lang.mapping.size());
    for (int i = 0; i < 50; ++i) {
      auto s = world.random_sentence(lang, rng);
      auto t = lang.translate(s);
      CHECK(t == lang.translate(s));
      CHECK(lang.invert(t) == s);
      for (int p : t) CHECK((p >= 2 && p < static_cast<int>(world.target_vocab())));
    }
  }
  auto again = make_world(WorldConfig::standard(), 3);
  for (std::size_t i = 0; i < world.languages.size(); ++i) CHECK(again.languages[i].mapping == world.languages[i].mapping);
}

TEST_CASE("oracle inverts exactly at noise 0 for 500 sequences up to length 40") {
  auto world = make_world(WorldConfig::standard(), 4);
  const auto& oracle = world.oracle;
  CHECK(oracle.min_template_distance() >= 1.0);
  Rng rng(2);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<int> p(1 + rng.index(40));
    for (auto& v : p) v = 2 + static_cast<int>(rng.index(oracle.num_phonemes() - 2));
    auto spec = oracle.synthesize(p);
    std::size_t frames = 0;
    for (int d : oracle.durations_for(p)) {
      CHECK((d >= 1 && d <= 4));
      frames += static_cast<std::size_t>(d);
    }
    REQUIRE(spec.rows() == frames);
    REQUIRE(oracle.transcribe(spec) == p);
  }
}

TEST_CASE("oracle recovers exactly under sigma 0.1 noise over 1000 trials") {
  auto world = make_world(WorldConfig::standard(), 5);
  Rng rng(3);
  int exact = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<int> p(1 + rng.index(10));
    for (auto& v : p) v = 2 + static_cast<int>(rng.index(world.num_phonemes() - 2));
    if (world.oracle.transcribe(world.oracle.synthesize(p, 0.1, &rng)) == p) ++exact;
  }
  CHECK(exact == 1000);
}

TEST_CASE("oracle error paths and total decoding") {
  auto world = make_world(small_config(), 6);
  std::vector<int> bad{kBos};
  CHECK_THROWS_AS(world.oracle.synthesize(bad), std::out_of_range);
  CHECK_THROWS_AS(world.oracle.transcribe(Tensor()), std::invalid_argument);
  CHECK_THROWS_AS(world.oracle.transcribe(Tensor::zeros({3, 5})), std::invalid_argument);
  auto zero = Tensor::zeros({2, world.oracle.mel_bins()});
  auto a = world.oracle.transcribe(zero);
  CHECK(a == world.oracle.transcribe(zero));
  CHECK(!a.empty());
}

TEST_CASE("text spellings alternate and map back to phonemes") {
  std::vector<int> p{5, 5, 5, 7, 2};
  auto t = to_text(p);
  for (std::size_t i = 1; i < t.size(); ++i) CHECK(t[i] != t[i - 1]);
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(phoneme_of_text(t[i]) == p[i]);
  CHECK(text_vocab_size(12) == 22);
  CHECK(t.back() < 22);
  // spelling depends only on the run of identical phonemes
  CHECK(t == std::vector<int>{8, 9, 8, 12, 2});
  CHECK(to_text(std::vector<int>{3, 5, 5}) == std::vector<int>{4, 8, 9});
}

TEST_CASE("test split is topped up without touching training data") {
  auto cfg = small_config();
  auto plain = make_corpus(make_world(cfg, 7), 11);
  cfg.min_test_size = 8;
  auto topped = make_corpus(make_world(cfg, 7), 11);
  for (std::size_t l = 0; l < 3; ++l) {
    const auto& a = plain.languages[l];
    const auto& b = topped.languages[l];
    CHECK(b.test.size() == std::max<std::size_t>(8, a.test.size()));
    REQUIRE(a.train.size() == b.train.size());
    for (std::size_t i = 0; i < a.train.size(); ++i) CHECK(a.train[i].source_phonemes == b.train[i].source_phonemes);
    std::set<std::vector<int>> train;
    for (const auto& ex : b.train) train.insert(ex.source_phonemes);
    for (const auto& ex : b.mt) CHECK(std::find_if(b.test.begin(), b.test.end(), [&](const auto& t) {
                                        return t.source_phonemes == ex.source_phonemes;
                                      }) == b.test.end());
    for (const auto& ex : b.test) CHECK(train.count(ex.source_phonemes) == 0);
  }
}

TEST_CASE("make_corpus: sizes, splits, determinism, clean targets") {
  auto world = make_world(small_config(), 7);
  auto corpus = make_corpus(world, 11);
  REQUIRE(corpus.languages.size() == 3);
  const std::size_t sizes[3] = {200, 50, 10};
  for (std::size_t l = 0; l < 3; ++l) {
    const auto& lc = corpus.languages[l];
    CHECK(lc.size() == sizes[l]);
    CHECK(lc.train.size() == sizes[l] * 8 / 10);
    CHECK(lc.dev.size() == sizes[l] / 10);
    CHECK(lc.mt.size() == world.languages[l].mt_size);
    for (const auto* split : {&lc.train, &lc.dev, &lc.test}) {
      for (const auto& ex : *split) {
        CHECK(same_tensor(ex.target_spec, world.oracle.synthesize(ex.target_phonemes)));
        CHECK(world.oracle.transcribe(ex.target_spec) == ex.target_phonemes);
        CHECK(ex.target_phonemes == world.languages[l].translate(ex.source_phonemes));
        CHECK(ex.target_durations == world.oracle.durations_for(ex.target_phonemes));
        CHECK(!same_tensor(ex.source_spec, world.oracle.synthesize(ex.source_phonemes)));
      }
    }
  }
  auto again = make_corpus(world, 11);
  for (std::size_t l = 0; l < 3; ++l) {
    const auto& a = corpus.languages[l].test;
    const auto& b = again.languages[l].test;
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].id == b[i].id);
      CHECK(same_tensor(a[i].source_spec, b[i].source_spec));
    }
  }
}

TEST_CASE("MT and augmented data stay out of evaluation splits") {
  auto world = make_world(small_config(), 8);
  auto corpus = make_corpus(world, 12);
  auto synthetic = augment_corpus(corpus, world, 13);
  for (std::size_t l = 0; l < 3; ++l) {
    const auto& lc = corpus.languages[l];
    std::set<std::vector<int>> held;
    for (const auto& ex : lc.dev) held.insert(ex.source_phonemes);
    for (const auto& ex : lc.test) held.insert(ex.source_phonemes);
    for (const auto& m : lc.mt) CHECK(held.count(m.source_phonemes) == 0);
    for (const auto& s : synthetic[l]) CHECK(held.count(s.source_phonemes) == 0);
    for (const auto& p : lc.paired) CHECK(held.count(p.phonemes) == 0);
  }
}

TEST_CASE("augment: one synthetic example per MT example, oracle round trip") {
  auto world = make_world(small_config(), 9);
  auto corpus = make_corpus(world, 14);
  const auto& mt = corpus.languages[1].mt;
  auto aug = augment(mt, world.oracle, 0.1, 1);
  REQUIRE(aug.size() == mt.size());
  for (std::size_t i = 0; i < mt.size(); ++i) {
    CHECK(aug[i].synthetic);
    CHECK(world.oracle.transcribe(aug[i].target_spec) == mt[i].target_phonemes);
    CHECK(world.oracle.transcribe(aug[i].source_spec) == mt[i].source_phonemes);
  }
  std::vector<MtExample> bad{mt[0]};
  bad[0].source_phonemes.push_back(static_cast<int>(world.num_phonemes()) + 3);
  CHECK_THROWS_AS(augment(bad, world.oracle, 0.0, 1), std::out_of_range);
}

TEST_CASE("temperature_probs closed forms") {
  std::vector<double> c{4, 1};
  auto p1 = temperature_probs(c, 1.0);
  CHECK(p1[0] == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(p1[1] == doctest::Approx(0.2).epsilon(1e-15));
  auto p2 = temperature_probs(c, 2.0);
  CHECK(p2[0] == doctest::Approx(std::sqrt(0.8) / (std::sqrt(0.8) + std::sqrt(0.2))).epsilon(1e-14));
  CHECK(p2[0] == doctest::Approx(0.6667).epsilon(1e-4));
  std::vector<double> c3{200, 50, 10};
  auto pinf = temperature_probs(c3, 1e9);
  for (double p : pinf) CHECK(std::abs(p - 1.0 / 3) <= 1e-6);

  // MT sentences (x1e3) per language, fr first.
  std::vector<double> mt{38288, 38363, 96,  13134, 205, 236, 33512, 22200, 61,    191, 210,
                         2152,  10,    216, 623,   22,  59,  1,     738,   17879, 89};
  double total = 0;
  for (double v : mt) total += v;
  CHECK(total == 168285);
  CHECK(temperature_probs(mt, 1.0)[0] == doctest::Approx(0.2275).epsilon(1e-3));

  CHECK_THROWS(temperature_probs(std::vector<double>{1, 0}, 1.0));
  CHECK_THROWS(temperature_probs(std::vector<double>{1, -2}, 1.0));
  CHECK_THROWS(temperature_probs(std::vector<double>{1, 2}, 0.5));
}

TEST_CASE("temperature_probs: normalized, monotone, max falls with tau") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> c(2 + rng.index(6));
    for (auto& v : c) v = 1 + static_cast<double>(rng.index(1000));
    bool all_equal = std::all_of(c.begin(), c.end(), [&](double v) { return v == c[0]; });
    double prev_max = 2.0;
    for (double tau : {1.0, 1.5, 2.0, 5.0, 20.0}) {
      auto p = temperature_probs(c, tau);
      double s = 0;
      for (double v : p) s += v;
      CHECK(std::abs(s - 1.0) <= 1e-12);
      for (std::size_t a = 0; a < c.size(); ++a)
        for (std::size_t b = 0; b < c.size(); ++b)
          if (c[a] >= c[b]) CHECK(p[a] >= p[b]);
      const double mx = *std::max_element(p.begin(), p.end());
      if (!all_equal) CHECK(mx < prev_max);
      prev_max = mx;
    }
  }
}

TEST_CASE("schedule_tasks is a fair seeded coin") {
  auto s = schedule_tasks(42, 10000);
  const double frac = static_cast<double>(std::count(s.begin(), s.end(), Task::s2st)) / 10000.0;
  CHECK(std::abs(frac - 0.5) <= 0.02);
  CHECK(schedule_tasks(42, 10000) == s);
  CHECK(schedule_tasks(42, 1).size() == 1);
  CHECK_THROWS(schedule_tasks(42, 0));
}

TEST_CASE("draw_batch: temperature frequencies over 100k draws") {
  std::vector<std::vector<S2stExample>> data(3);
  const std::size_t sizes[3] = {200, 50, 10};
  for (std::size_t l = 0; l < 3; ++l) {
    data[l].resize(sizes[l]);
    for (std::size_t i = 0; i < sizes[l]; ++i) data[l][i].id = l * 1000 + i;
  }
  std::vector<const std::vector<S2stExample>*> ptrs{&data[0], &data[1], &data[2]};
  SamplingConfig cfg{5.0, {}, 0};
  auto theory = temperature_probs(std::vector<double>{200, 50, 10}, 5.0);
  std::vector<double> freq(3, 0.0);
  for (int b = 0; b < 1000; ++b) {
    auto batch = draw_batch(ptrs, cfg, 100, static_cast<std::uint64_t>(b));
    for (const auto& r : batch.refs) freq[r.language] += 1.0;
  }
  for (std::size_t l = 0; l < 3; ++l) CHECK(std::abs(freq[l] / 100000.0 - theory[l]) <= 0.01);

  auto a = draw_batch(ptrs, cfg, 16, 77), b = draw_batch(ptrs, cfg, 16, 77);
  CHECK(a.ids() == b.ids());

  std::vector<const std::vector<S2stExample>*> single{&data[1]};
  for (const auto& r : draw_batch(single, cfg, 50, 3).refs) CHECK(r.language == 0);

  std::vector<S2stExample> empty;
  std::vector<const std::vector<S2stExample>*> with_empty{&data[0], &empty};
  SamplingConfig forced{1.0, {1.0, 1000.0}, 0};
  CHECK_THROWS_AS(draw_batch(with_empty, forced, 10, 1), std::runtime_error);
}

TEST_CASE("real/synthetic mixture is 50/50 over 10k draws") {
  std::vector<std::vector<S2stExample>> real(2), syn(2);
  for (std::size_t l = 0; l < 2; ++l) {
    real[l].resize(20);
    syn[l].resize(200);
    for (auto& e : syn[l]) e.synthetic = true;
  }
  std::vector<const std::vector<S2stExample>*> rp{&real[0], &real[1]}, sp{&syn[0], &syn[1]};
  std::size_t synthetic = 0;
  for (int b = 0; b < 1000; ++b) {
    auto batch = draw_mixture(rp, {1.0, {}, 0}, sp, {5.0, {}, 1}, 0.5, 10, static_cast<std::uint64_t>(b));
    for (auto* e : batch.s2st) synthetic += e->synthetic ? 1 : 0;
  }
  CHECK(std::abs(static_cast<double>(synthetic) / 10000.0 - 0.5) <= 0.02);
}

TEST_CASE("corpus persists to named-tensor files plus a JSONL index") {
  auto world = make_world(small_config(), 10);
  auto corpus = make_corpus(world, 15);
  auto synthetic = augment_corpus(corpus, world, 16);
  auto dir = std::filesystem::temp_directory_path() / "s2st_corpus_test";
  std::filesystem::remove_all(dir);
  save_corpus(corpus, world, dir, synthetic);
  CHECK(std::filesystem::exists(dir / "index.jsonl"));
  auto loaded = load_corpus(dir, 3);
  for (std::size_t l = 0; l < 3; ++l) {
    REQUIRE(loaded.languages[l].test.size() == corpus.languages[l].test.size());
    REQUIRE(loaded.languages[l].mt.size() == corpus.languages[l].mt.size());
    for (std::size_t i = 0; i < corpus.languages[l].test.size(); ++i) {
      const auto& a = corpus.languages[l].test[i];
      const auto& b = loaded.languages[l].test[i];
      CHECK(a.id == b.id);
      CHECK(a.target_phonemes == b.target_phonemes);
      CHECK(a.target_durations == b.target_durations);
      CHECK(same_tensor(a.source_spec, b.source_spec));
    }
  }
  std::filesystem::remove_all(dir);
}
