#include <cmath>
#include <functional>
#include <map>

#include "doctest.h"
#include "helpers.hpp"
#include "oracles.hpp"
#include "s2st/core/autodiff.hpp"
#include "s2st/objectives/losses.hpp"

using namespace s2st;
using namespace s2st::objectives;
using s2st::testing::random_tensor;
using s2st::testing::brute_force_ctc;
using s2st::testing::rows_of;

TEST_CASE("ctc: uniform T=2 V=2 target 'a' gives ln 3") {
  auto logits = Tensor::zeros({2, 3});
  std::vector<int> tgt{0};
  CHECK(ctc_loss(logits, tgt).item() == doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("ctc: confident exact alignment is nearly free") {
  std::vector<int> tgt{1, 0, 2};
  auto logits = Tensor::full({3, 4}, -1e3);
  auto d = logits.mutable_data();
  for (std::size_t t = 0; t < 3; ++t) d[t * 4 + static_cast<std::size_t>(tgt[t])] = 1e3;
  CHECK(ctc_loss(logits, tgt).item() <= 1e-6);
}

TEST_CASE("ctc equals brute-force alignment enumeration on 200 instances") {
  Rng rng(2024);
  double worst = 0.0;
  int done = 0;
  while (done < 200) {
    const std::size_t v = 1 + rng.index(3), t_len = 1 + rng.index(6), u = rng.index(4);
    std::vector<int> tgt(u);
    for (auto& x : tgt) x = static_cast<int>(rng.index(v));
    if (ctc_min_frames(tgt) > t_len) {
      CHECK_THROWS_AS(ctc_loss(Tensor::zeros({t_len, v + 1}), tgt), std::domain_error);
      continue;
    }
    auto logits = random_tensor({t_len, v + 1}, rng, false, 2.0);
    worst = std::max(worst, std::abs(ctc_loss(logits, tgt).item() - brute_force_ctc(rows_of(logits), tgt)));
    ++done;
  }
  CHECK(worst <= 1e-9);
}

TEST_CASE("ctc rejects infeasible targets and bad ids") {
  std::vector<int> rep{1, 1};
  CHECK_THROWS_AS(ctc_loss(Tensor::zeros({2, 3}), rep), std::domain_error);
  CHECK_NOTHROW(ctc_loss(Tensor::zeros({3, 3}), rep));
  std::vector<int> blank_id{2};
  CHECK_THROWS_AS(ctc_loss(Tensor::zeros({3, 3}), blank_id), std::out_of_range);
}

TEST_CASE("ctc gradient check and greedy decode") {
  Rng rng(5);
  auto logits = random_tensor({7, 4}, rng);
  std::vector<int> tgt{0, 2, 2};
  CHECK(grad_check([&] { return ctc_loss(logits, tgt); }, {logits}) <= 1e-7);
  std::vector<int> empty;
  CHECK(grad_check([&] { return ctc_loss(logits, empty); }, {logits}) <= 1e-7);

  auto l = Tensor::full({6, 4}, 0.0);
  auto d = l.mutable_data();
  const int path[6] = {0, 0, 3, 2, 3, 2};
  for (std::size_t t = 0; t < 6; ++t) d[t * 4 + path[t]] = 5.0;
  CHECK(ctc_greedy_decode(l) == std::vector<int>{0, 2, 2});
}

TEST_CASE("contrastive: identical positive, one orthogonal distractor") {
  auto c = Tensor::matrix(2, 2, {1, 0, 0, 1});
  auto q = Tensor::matrix(2, 2, {1, 0, 0, 1});
  std::vector<ContrastiveSample> s{{0, {1}}};
  const double expect = -std::log(std::exp(10.0) / (std::exp(10.0) + 1.0));
  CHECK(contrastive_loss(c, q, s, 0.1).item() == doctest::Approx(expect).epsilon(1e-12));
  CHECK(expect == doctest::Approx(4.54e-5).epsilon(1e-3));
}

TEST_CASE("contrastive: identical candidates give log(K+1)") {
  Rng rng(3);
  auto c = random_tensor({6, 4}, rng, false);
  std::vector<double> same;
  for (int i = 0; i < 6; ++i) same.insert(same.end(), {0.3, -1.0, 2.0, 0.5});
  auto q = Tensor::matrix(6, 4, same);
  auto plan = plan_from_positions(6, {0, 1, 2, 3, 4, 5});
  Rng drng(1);
  CHECK(contrastive_loss(c, q, plan, 4, 0.1, drng).item() == doctest::Approx(std::log(5.0)).epsilon(1e-12));
}

TEST_CASE("contrastive K=1 matches a brute-force two-way softmax, seed 5") {
  Rng rng(5);
  auto c = random_tensor({5, 3}, rng, false);
  auto q = random_tensor({5, 3}, rng, false);
  auto plan = plan_from_positions(5, {1, 2, 4});
  Rng drng(7);
  auto samples = sample_distractors(plan, 1, drng);
  auto cos = [&](std::size_t a, std::size_t b) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t j = 0; j < 3; ++j) {
      dot += c.at(a, j) * q.at(b, j);
      na += c.at(a, j) * c.at(a, j);
      nb += q.at(b, j) * q.at(b, j);
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
  };
  double expect = 0.0;
  for (const auto& s : samples) {
    REQUIRE(s.distractors.size() == 1);
    CHECK(s.distractors[0] != s.position);
    const double pos = std::exp(cos(s.position, s.position) / 0.1);
    const double neg = std::exp(cos(s.position, s.distractors[0]) / 0.1);
    expect += -std::log(pos / (pos + neg));
  }
  expect /= static_cast<double>(samples.size());
  CHECK(contrastive_loss(c, q, samples, 0.1).item() == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("contrastive errors and gradient") {
  Rng rng(6);
  auto c = random_tensor({8, 4}, rng), q = random_tensor({8, 4}, rng);
  auto few = plan_from_positions(8, {1, 2, 3});
  Rng drng(1);
  CHECK_THROWS_AS(contrastive_loss(c, q, few, 4, 0.1, drng), std::invalid_argument);
  CHECK_THROWS_AS(contrastive_loss(c, q, few, 8, 0.1, drng), std::invalid_argument);
  auto plan = plan_from_positions(8, {0, 2, 3, 5, 6, 7});
  auto samples = sample_distractors(plan, 4, drng);
  CHECK_THROWS_AS(contrastive_loss(c, q, samples, 0.0), std::invalid_argument);
  auto loss = contrastive_loss(c, q, samples, 0.1);
  CHECK(loss.item() >= 0.0);
  CHECK(grad_check([&] { return contrastive_loss(c, q, samples, 0.1); }, {c, q}) <= 1e-5);
}

TEST_CASE("mlm loss contract") {
  const std::size_t t_len = 6, vocab = 8;
  std::vector<int> tgt{1, 7, 3, 3, 0, 5};
  auto plan = plan_from_positions(t_len, {1, 2, 4});

  auto perfect = Tensor::zeros({t_len, vocab});
  auto d = perfect.mutable_data();
  for (std::size_t t = 0; t < t_len; ++t) d[t * vocab + static_cast<std::size_t>(tgt[t])] = 1e3;
  CHECK(mlm_loss(perfect, tgt, plan).item() <= 1e-6);
  CHECK(mlm_loss(Tensor::zeros({t_len, vocab}), tgt, plan).item() == doctest::Approx(std::log(8.0)).epsilon(1e-12));

  Rng rng(4);
  auto logits = random_tensor({t_len, vocab}, rng);
  const double base = mlm_loss(logits, tgt, plan).item();
  auto other = tgt;
  other[0] = 4;
  other[5] = 2;
  CHECK(mlm_loss(logits, other, plan).item() == base);

  backward(mlm_loss(logits, tgt, plan));
  for (std::size_t t : {0u, 3u, 5u})
    for (std::size_t k = 0; k < vocab; ++k) CHECK(logits.grad()[t * vocab + k] == 0.0);

  CHECK_THROWS_AS(mlm_loss(logits, tgt, plan_from_positions(t_len, {})), std::invalid_argument);
  std::vector<int> bad{1, 8, 3, 3, 0, 5};
  CHECK_THROWS_AS(mlm_loss(logits, bad, plan), std::out_of_range);
}

TEST_CASE("tlm loss contract") {
  std::vector<int> text{2, 5, 1, 7};
  auto plan = plan_from_positions(4, {1, 2});
  CHECK(tlm_loss(Tensor::zeros({9, 8}), 5, text, plan).item() == doctest::Approx(std::log(8.0)).epsilon(1e-12));

  Rng rng(8);
  auto logits = random_tensor({9, 8}, rng, false);
  auto text_rows = ops::slice_rows(logits, 5, 9);
  CHECK(tlm_loss(logits, 5, text, plan).item() == mlm_loss(text_rows, text, plan).item());

  CHECK_THROWS_AS(tlm_loss(Tensor::zeros({4, 8}), 0, text, plan), std::invalid_argument);
  CHECK_THROWS_AS(tlm_loss(Tensor::zeros({5, 8}), 5, {}, plan), std::invalid_argument);
}

TEST_CASE("s2st loss bundle") {
  S2stTargets tgt;
  tgt.phonemes = {3, 4, 1};
  tgt.durations = {2, 1};
  Rng rng(9);
  tgt.spectrogram = random_tensor({3, 4}, rng, false);

  S2stOutputs out;
  out.phoneme_logits = Tensor::full({3, 6}, -1e3);
  auto d = out.phoneme_logits.mutable_data();
  for (std::size_t i = 0; i < 3; ++i) d[i * 6 + static_cast<std::size_t>(tgt.phonemes[i])] = 1e3;
  out.spectrogram = tgt.spectrogram.clone(false);
  out.log_durations = Tensor::matrix(2, 1, {std::log(2.0), 0.0});
  auto b = s2st_loss(out, tgt);
  CHECK(b.names() == std::vector<std::string>{"phoneme_ce", "spec_l1", "duration_l2"});
  CHECK(b.total().item() <= 1e-6);

  out.spectrogram = ops::add_scalar(tgt.spectrogram, 1.0);
  CHECK(s2st_loss(out, tgt).value("spec_l1") == doctest::Approx(1.0).epsilon(1e-12));

  auto bad = tgt;
  bad.durations = {2, 1, 1};
  CHECK_THROWS_AS(s2st_loss(out, bad), std::invalid_argument);
}

TEST_CASE("s2st loss gradient check") {
  Rng rng(10);
  S2stTargets tgt{{2, 0, 1}, {1, 3}, random_tensor({4, 3}, rng, false)};
  S2stOutputs out{random_tensor({3, 5}, rng), random_tensor({4, 3}, rng), random_tensor({2, 1}, rng)};
  auto fn = [&] { return s2st_loss(out, tgt).total(); };
  CHECK(grad_check(fn, {out.phoneme_logits, out.spectrogram, out.log_durations}) <= 1e-4);
}

TEST_CASE("loss bundle total and finiteness") {
  LossBundle b;
  b.add("a", Tensor::scalar(2.0));
  b.add("b", Tensor::scalar(3.0), 0.1);
  CHECK(b.total().item() == doctest::Approx(2.3).epsilon(1e-15));
  CHECK_THROWS(b.add("a", Tensor::scalar(1.0)));
  CHECK_THROWS_AS(b.add("c", Tensor::scalar(std::nan(""))), std::overflow_error);
  CHECK_THROWS_AS(b.add("d", Tensor::zeros({2})), std::invalid_argument);
}

TEST_CASE("span masking: realized fraction and span structure over 100 seeds") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const std::size_t t_len = 8 + rng.index(33);
    for (auto [p, span] : {std::pair{0.15, std::size_t{2}}, std::pair{0.3, std::size_t{3}}}) {
      auto plan = make_masking_plan(t_len, p, span, seed);
      CHECK(std::abs(plan.masked_fraction() - p) <= static_cast<double>(span) / static_cast<double>(t_len));
      // maximal runs are unions of whole spans
      auto m = plan.mask();
      std::size_t run = 0;
      for (std::size_t t = 0; t <= t_len; ++t) {
        if (t < t_len && m[t]) {
          ++run;
        } else {
          CHECK(run % span == 0);
          run = 0;
        }
      }
      CHECK(std::is_sorted(plan.masked_positions.begin(), plan.masked_positions.end()));
      auto again = make_masking_plan(t_len, p, span, seed);
      CHECK(again.masked_positions == plan.masked_positions);
    }
  }
  CHECK(make_masking_plan(1, 0.15, 2, 0).masked_positions == std::vector<std::size_t>{0});
  CHECK_THROWS(make_masking_plan(10, 0.0, 2, 0));
}

TEST_CASE("span placement covers every arrangement") {
  // T=6, span 2, one span: 5 possible starts, all should appear.
  std::map<std::size_t, int> starts;
  for (std::uint64_t seed = 0; seed < 400; ++seed) starts[make_masking_plan(6, 0.2, 2, seed).masked_positions[0]]++;
  CHECK(starts.size() == 5);
  for (auto& [s, n] : starts) CHECK(n > 40);
}
