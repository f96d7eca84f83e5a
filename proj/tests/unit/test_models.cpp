#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "doctest.h"
#include "helpers.hpp"
#include "s2st/core/autodiff.hpp"
#include "s2st/models/models.hpp"
#include "s2st/nn/optim.hpp"

using namespace s2st;
using namespace s2st::models;
using datagen::S2stExample;

namespace {

struct Fixture {
  datagen::ToyWorld world = datagen::make_world(datagen::WorldConfig::standard(), 11);
  datagen::Corpus corpus = datagen::make_corpus(world, 12);
  ModelConfig config;

  Fixture() { config.data = data_shape(world); }

  std::vector<const S2stExample*> train_examples(std::size_t n) const {
    std::vector<const S2stExample*> out;
    for (const auto& lc : corpus.languages)
      for (const auto& ex : lc.train) {
        if (out.size() == n) return out;
        out.push_back(&ex);
      }
    return out;
  }
  std::vector<const datagen::MtExample*> mt_examples(std::size_t n) const {
    std::vector<const datagen::MtExample*> out;
    for (const auto& ex : corpus.languages[0].mt) {
      if (out.size() == n) break;
      out.push_back(&ex);
    }
    return out;
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

nn::AdamConfig fast_adam() {
  nn::AdamConfig ac;
  ac.peak_lr = 5e-3;
  ac.warmup_steps = 50;
  return ac;
}

std::set<std::string> names_of(const LossBundle& b) {
  auto n = b.names();
  return {n.begin(), n.end()};
}

std::set<std::string> names_with_prefix(const nn::ParameterSet& ps, const std::string& prefix) {
  std::set<std::string> out;
  for (const auto& n : ps.names())
    if (n.rfind(prefix, 0) == 0) out.insert(n);
  return out;
}

}  // namespace

TEST_CASE("t2 loss bundle is finite and has the three terms") {
  const auto& f = fixture();
  Translatotron2 model(f.config, 1);
  auto batch = f.train_examples(4);
  auto b = t2_forward(model, batch, nn::eval_context());
  CHECK(names_of(b) == std::set<std::string>{"phoneme_ce", "spec_l1", "duration_l2"});
  CHECK(std::isfinite(b.total().item()));
  // untrained CE is near log(vocab)
  CHECK(b.value("phoneme_ce") == doctest::Approx(std::log(double(f.config.data.target_vocab))).epsilon(0.5));
}

TEST_CASE("t2 rejects targets outside the decoder vocabulary") {
  const auto& f = fixture();
  Translatotron2 model(f.config, 1);
  S2stExample ex = *f.train_examples(1)[0];
  ex.target_phonemes[0] = 999;
  std::vector<const S2stExample*> batch{&ex};
  CHECK_THROWS_AS(t2_forward(model, batch, nn::eval_context()), std::out_of_range);
  CHECK_THROWS_AS(t2_forward(model, {}, nn::eval_context()), std::invalid_argument);
}

TEST_CASE("t2 full loss passes a gradient check on one example") {
  const auto& f = fixture();
  auto cfg = f.config;
  cfg.preset.encoder_dim = 8;
  cfg.preset.decoder_dim = 8;
  cfg.preset.synth_hidden = 8;
  Translatotron2 model(cfg, 3);
  auto batch = f.train_examples(1);
  auto fn = [&] { return t2_forward(model, batch, nn::eval_context()).total(); };
  GradCheckOptions opt;
  opt.max_entries = 200;
  opt.seed = 5;
  CHECK(grad_check(fn, model.params().tensors(), opt) <= 1e-4);
}

TEST_CASE("t2 overfits 50 pairs and predicts durations") {
  const auto& f = fixture();
  Translatotron2 model(f.config, 2);
  auto data = f.train_examples(50);
  REQUIRE(data.size() == 50);
  nn::Adam adam(model.params(), fast_adam());
  Rng rng(3);
  nn::ForwardContext ctx{true, 0.0, &rng};
  double first = 0.0;
  for (int step = 0; step < 500; ++step) {
    std::vector<const S2stExample*> batch;
    for (int i = 0; i < 8; ++i) batch.push_back(data[rng.index(data.size())]);
    auto b = t2_forward(model, batch, ctx);
    if (step == 0) first = b.value("phoneme_ce");
    backward(b.total());
    adam.step(model.params());
  }
  auto all = t2_forward(model, data, nn::eval_context());
  MESSAGE("phoneme_ce " << first << " -> " << all.value("phoneme_ce"));
  CHECK(all.value("phoneme_ce") < 0.1);

  std::size_t exact = 0, dur_total = 0, dur_ok = 0;
  for (const auto* ex : data) {
    auto r = model.translate(ex->source_spec, 20);
    if (r.phonemes == ex->target_phonemes) {
      ++exact;
      for (std::size_t i = 0; i < r.durations.size(); ++i) {
        ++dur_total;
        if (std::abs(r.durations[i] - ex->target_durations[i]) <= 1) ++dur_ok;
      }
    }
  }
  MESSAGE("exact " << exact << "/50, durations within 1: " << dur_ok << "/" << dur_total);
  CHECK(exact >= 40);
  CHECK(dur_ok == dur_total);
}

TEST_CASE("translate stops at max_len and flags truncation") {
  const auto& f = fixture();
  Translatotron2 model(f.config, 4);
  auto r = model.translate(f.train_examples(1)[0]->source_spec, 2);
  CHECK(r.phonemes.size() <= 2);
  if (r.phonemes.size() == 2) CHECK(r.truncated);
  for (int p : r.phonemes) CHECK(p >= 2);
  if (!r.phonemes.empty()) {
    CHECK(r.durations.size() == r.phonemes.size());
    int frames = 0;
    for (int d : r.durations) frames += d;
    CHECK(r.spectrogram.rows() == std::size_t(frames));
  }
}

TEST_CASE("w2v-BERT untrained contrastive is near log(K+1) and training lowers it") {
  const auto& f = fixture();
  W2vBert model(f.config, 6);
  std::vector<Tensor> specs;
  for (const auto* ex : f.train_examples(60)) specs.push_back(ex->source_spec);

  Rng eval_rng(7);
  PretrainStats s0;
  auto b0 = w2vbert_step(model, specs, nn::eval_context(), eval_rng, objectives::kSpeechMaskProb, &s0);
  CHECK(names_of(b0) == std::set<std::string>{"contrastive", "mlm", "diversity"});
  CHECK(b0.weight("diversity") == doctest::Approx(0.1));
  const double c0 = b0.value("contrastive");
  // short utterances cap K below 4; chance level uses the K actually drawn
  MESSAGE("untrained contrastive " << c0 << ", chance " << s0.chance_contrastive);
  CHECK(std::abs(c0 - s0.chance_contrastive) < 0.5);

  nn::Adam adam(model.params(), fast_adam());
  Rng rng(8);
  nn::ForwardContext ctx{true, 0.0, &rng};
  for (int step = 0; step < 500; ++step) {
    std::vector<Tensor> batch;
    for (int i = 0; i < 8; ++i) batch.push_back(specs[rng.index(specs.size())]);
    backward(w2vbert_step(model, batch, ctx, rng).total());
    adam.step(model.params());
  }
  Rng eval_rng2(7);
  PretrainStats stats;
  auto b1 = w2vbert_step(model, specs, nn::eval_context(), eval_rng2, objectives::kSpeechMaskProb, &stats);
  MESSAGE("contrastive " << c0 << " -> " << b1.value("contrastive") << ", perplexity " << stats.perplexity);
  CHECK(b1.value("contrastive") <= 0.5 * c0);
  CHECK(stats.perplexity >= 2.0);
}

TEST_CASE("w2v-BERT masking errors and short utterances") {
  const auto& f = fixture();
  W2vBert model(f.config, 6);
  std::vector<Tensor> specs{f.train_examples(1)[0]->source_spec};
  Rng rng(1);
  CHECK_THROWS_AS(w2vbert_step(model, specs, nn::eval_context(), rng, 0.0), std::invalid_argument);
  std::vector<Tensor> tiny{Tensor::zeros({1, f.config.data.mel_bins})};
  CHECK_THROWS_AS(w2vbert_step(model, tiny, nn::eval_context(), rng), std::runtime_error);
  tiny.push_back(specs[0]);
  PretrainStats stats;
  CHECK_NOTHROW(w2vbert_step(model, tiny, nn::eval_context(), rng, objectives::kSpeechMaskProb, &stats));
  CHECK(stats.skipped == 1);
}

TEST_CASE("mSLAM routes each batch kind to its objectives") {
  const auto& f = fixture();
  MSlam model(f.config, 9);
  const auto& p = f.corpus.languages[0].paired[0];
  Rng rng(2);
  auto ctx = nn::eval_context();
  MslamItem speech{MslamKind::speech, p.speech, {}};
  MslamItem text{MslamKind::text, {}, p.text};
  MslamItem paired{MslamKind::paired, p.speech, p.text};
  CHECK(names_of(mslam_step(model, std::span(&speech, 1), ctx, rng)) ==
        std::set<std::string>{"contrastive", "mlm", "diversity"});
  CHECK(names_of(mslam_step(model, std::span(&text, 1), ctx, rng)) == std::set<std::string>{"span_bert"});
  CHECK(names_of(mslam_step(model, std::span(&paired, 1), ctx, rng)) ==
        std::set<std::string>{"contrastive", "mlm", "diversity", "ctc", "tlm"});
  CHECK(parse_mslam_kind("paired") == MslamKind::paired);
  CHECK_THROWS_AS(parse_mslam_kind("video"), std::invalid_argument);
  MslamItem broken{MslamKind::paired, p.speech, {}};
  CHECK_THROWS_AS(mslam_step(model, std::span(&broken, 1), ctx, rng), std::invalid_argument);
}

TEST_CASE("mSLAM full loss passes a gradient check on one paired example") {
  const auto& f = fixture();
  auto cfg = f.config;
  cfg.preset.encoder_dim = 8;
  MSlam model(cfg, 10);
  const auto& p = f.corpus.languages[0].paired[1];
  std::vector<MslamItem> batch{{MslamKind::paired, p.speech, p.text}};
  auto fn = [&] {
    Rng rng(4);
    return mslam_step(model, batch, nn::eval_context(), rng).total();
  };
  GradCheckOptions opt;
  opt.max_entries = 200;
  opt.seed = 6;
  CHECK(grad_check(fn, model.params().tensors(), opt) <= 1e-4);
}

TEST_CASE("mSLAM learns CTC transcripts and TLM uses the speech") {
  const auto& f = fixture();
  MSlam model(f.config, 11);
  // first 6 utterances of each language are held out
  std::vector<const datagen::PairedExample*> paired, held;
  for (const auto& lc : f.corpus.languages)
    for (std::size_t i = 0; i < lc.paired.size(); ++i) (i < 6 ? held : paired).push_back(&lc.paired[i]);
  nn::Adam adam(model.params(), fast_adam());
  Rng rng(12);
  nn::ForwardContext ctx{true, 0.1, &rng};
  for (int step = 0; step < 400; ++step) {
    std::vector<MslamItem> batch;
    for (int i = 0; i < 8; ++i) {
      const auto* p = paired[rng.index(paired.size())];
      batch.push_back({MslamKind::paired, p->speech, p->text});
    }
    backward(mslam_step(model, batch, ctx, rng).total());
    adam.step(model.params());
  }
  // token error rate via edit distance
  std::size_t errors = 0, tokens = 0;
  for (const auto* p : held) {
    auto hyp = mslam_ctc_decode(model, p->speech);
    const auto& ref = p->text;
    std::vector<std::size_t> row(hyp.size() + 1), next(hyp.size() + 1);
    for (std::size_t j = 0; j <= hyp.size(); ++j) row[j] = j;
    for (std::size_t a = 1; a <= ref.size(); ++a) {
      next[0] = a;
      for (std::size_t b = 1; b <= hyp.size(); ++b)
        next[b] = std::min({row[b] + 1, next[b - 1] + 1, row[b - 1] + (ref[a - 1] == hyp[b - 1] ? 0 : 1)});
      std::swap(row, next);
    }
    errors += row[hyp.size()];
    tokens += ref.size();
  }
  const double ter = double(errors) / double(tokens);
  MESSAGE("ctc token error rate " << ter);
  CHECK(ter < 0.5);

  double with_speech = 0.0, with_noise = 0.0;
  Rng noise_rng(13);
  for (std::size_t i = 0; i < held.size(); ++i) {
    const auto* p = held[i];
    auto noise = testing::random_tensor(p->speech.shape(), noise_rng, false);
    Rng r1(100 + i), r2(100 + i);
    MslamItem a{MslamKind::paired, p->speech, p->text}, b{MslamKind::paired, noise, p->text};
    with_speech += mslam_step(model, std::span(&a, 1), nn::eval_context(), r1).value("tlm");
    with_noise += mslam_step(model, std::span(&b, 1), nn::eval_context(), r2).value("tlm");
  }
  MESSAGE("tlm with speech " << with_speech / held.size() << ", with noise " << with_noise / held.size());
  CHECK(with_speech < with_noise);
}

TEST_CASE("encoder transfer copies exactly the encoder parameters") {
  const auto& f = fixture();
  W2vBert src(f.config, 20);
  Translatotron2 dst(f.config, 21);
  auto before = dst.params().at("decoder.embed").data();
  std::vector<double> dec_before(before.begin(), before.end());
  auto src_codebook = std::vector<double>(src.params().at("quantizer.codebook").data().begin(),
                                          src.params().at("quantizer.codebook").data().end());

  auto r = transfer_encoder(dst, src);
  const auto enc = names_with_prefix(src.params(), "encoder.");
  CHECK(std::set<std::string>(r.copied.begin(), r.copied.end()) == enc);
  CHECK(std::set<std::string>(r.skipped.begin(), r.skipped.end()) ==
        std::set<std::string>{"quantizer.codebook", "mlm.mask_emb", "mlm.head.w", "mlm.head.b"});
  std::size_t scalars = 0;
  for (const auto& n : enc) scalars += src.params().at(n).size();
  CHECK(r.copied_scalars == scalars);
  for (const auto& n : enc) {
    auto a = src.params().at(n).data(), b = dst.params().at(n).data();
    CHECK(std::equal(a.begin(), a.end(), b.begin(), b.end()));
    CHECK_FALSE(src.params().at(n).same_storage(dst.params().at(n)));
  }
  auto after = dst.params().at("decoder.embed").data();
  CHECK(std::equal(after.begin(), after.end(), dec_before.begin(), dec_before.end()));
  auto cb = src.params().at("quantizer.codebook").data();
  CHECK(std::equal(cb.begin(), cb.end(), src_codebook.begin(), src_codebook.end()));

  auto again = transfer_encoder(dst, src);
  CHECK(again.copied == r.copied);
}

TEST_CASE("encoder transfer changes the step-0 loss") {
  const auto& f = fixture();
  W2vBert src(f.config, 22);
  Translatotron2 dst(f.config, 23);
  auto batch = f.train_examples(2);
  const double before = t2_forward(dst, batch, nn::eval_context()).total().item();
  transfer_encoder(dst, src);
  const double after = t2_forward(dst, batch, nn::eval_context()).total().item();
  CHECK(before != after);
}

TEST_CASE("mSLAM to MT transfer takes the text embedding and context network") {
  const auto& f = fixture();
  MSlam src(f.config, 24);
  MtModel mt(f.config, MtVariant::text_to_phoneme, 25);
  auto r = transfer_encoder(mt, src);
  auto expect = names_with_prefix(src.params(), "encoder.context.");
  expect.insert("text_embed.table");
  CHECK(std::set<std::string>(r.copied.begin(), r.copied.end()) == expect);

  MtModel p2p(f.config, MtVariant::phoneme_to_phoneme, 25);
  auto r2 = transfer_encoder(p2p, src);
  CHECK(std::find(r2.copied.begin(), r2.copied.end(), "text_embed.table") == r2.copied.end());
  CHECK(p2p.params().contains("phoneme_embed.table"));
}

TEST_CASE("decoder transfer skips embedding and head only on vocabulary mismatch") {
  const auto& f = fixture();
  const auto dec_names = [&](const Translatotron2& t) { return names_with_prefix(t.params(), "decoder."); };
  for (auto v : {MtVariant::text_to_phoneme, MtVariant::phoneme_to_phoneme, MtVariant::text_to_text}) {
    CAPTURE(mt_variant_name(v));
    MtModel mt(f.config, v, 30);
    Translatotron2 t2(f.config, 31);
    auto r = transfer_decoder(t2, mt);
    auto copied = std::set<std::string>(r.copied.begin(), r.copied.end());
    auto all = dec_names(t2);
    if (v == MtVariant::text_to_text) {
      for (const char* n : {"decoder.embed", "decoder.head.w", "decoder.head.b"}) {
        CHECK(copied.count(n) == 0);
        all.erase(n);
      }
    }
    CHECK(copied == all);
    CHECK(parse_mt_variant(mt_variant_name(v)) == v);
  }
  CHECK_THROWS_AS(parse_mt_variant("speech_to_text"), std::invalid_argument);
}

TEST_CASE("MT variants train on their own token spaces") {
  const auto& f = fixture();
  auto batch = f.mt_examples(4);
  for (auto v : {MtVariant::text_to_phoneme, MtVariant::phoneme_to_phoneme, MtVariant::text_to_text}) {
    MtModel mt(f.config, v, 32);
    auto b = mt_forward(mt, batch, nn::eval_context());
    CHECK(std::isfinite(b.total().item()));
    CHECK(b.names()[0] == (v == MtVariant::text_to_text ? "token_ce" : "phoneme_ce"));
  }
}

TEST_CASE("multi-task routing touches the right parameter groups") {
  const auto& f = fixture();
  MultiTaskModel model(f.config, 40);
  CHECK(model.params().at("decoder.embed").same_storage(model.t2.params().at("decoder.embed")));
  CHECK(model.params().size() == model.t2.params().size() + 1);

  datagen::TaskBatch s2st;
  s2st.task = datagen::Task::s2st;
  s2st.s2st = f.train_examples(2);
  auto rs = multitask_step(model, s2st, nn::eval_context());
  for (const auto& n : rs.touched) CHECK_FALSE(is_text_embedding_param(n));
  CHECK(rs.touched.count("synth.frame_out.w"));
  CHECK(rs.touched.count("encoder.feature.w"));
  model.params().zero_grad();

  datagen::TaskBatch mt;
  mt.task = datagen::Task::mt;
  mt.mt = f.mt_examples(2);
  auto rm = multitask_step(model, mt, nn::eval_context());
  for (const auto& n : rm.touched) {
    CHECK_FALSE(is_synthesizer_param(n));
    CHECK_FALSE(is_lower_encoder_param(n));
  }
  CHECK(rm.touched.count("text_embed.table"));
  CHECK(rm.touched.count("decoder.cross_attn.q.w"));
  CHECK(rm.touched.count("encoder.context.block0.ff1.in.w"));

  datagen::TaskBatch mixed = s2st;
  mixed.mt = mt.mt;
  CHECK_THROWS_AS(multitask_forward(model, mixed, nn::eval_context()), std::invalid_argument);
}

TEST_CASE("frozen lower encoder is excluded from the trainable set") {
  const auto& f = fixture();
  MultiTaskModel model(f.config, 41, true);
  auto tr = model.trainable();
  for (const auto& n : tr.names()) CHECK_FALSE(is_lower_encoder_param(n));
  CHECK(tr.size() < model.params().size());
  CHECK(tr.contains("encoder.context.block0.out_norm.g"));
}

TEST_CASE("alternating multi-task training reduces both losses") {
  const auto& f = fixture();
  MultiTaskModel model(f.config, 42);
  auto s2st_data = f.train_examples(40);
  auto mt_data = f.mt_examples(40);
  nn::Adam adam(model.params(), fast_adam());
  Rng rng(43);
  nn::ForwardContext ctx{true, 0.0, &rng};
  auto eval = [&] {
    datagen::TaskBatch a, b;
    a.task = datagen::Task::s2st;
    a.s2st = s2st_data;
    b.task = datagen::Task::mt;
    b.mt = mt_data;
    return std::pair{multitask_forward(model, a, nn::eval_context()).value("phoneme_ce"),
                     multitask_forward(model, b, nn::eval_context()).value("phoneme_ce")};
  };
  const auto [s0, m0] = eval();
  for (int step = 0; step < 400; ++step) {
    datagen::TaskBatch batch;
    batch.task = step % 2 == 0 ? datagen::Task::s2st : datagen::Task::mt;
    for (int i = 0; i < 8; ++i) {
      if (batch.task == datagen::Task::s2st) batch.s2st.push_back(s2st_data[rng.index(s2st_data.size())]);
      else batch.mt.push_back(mt_data[rng.index(mt_data.size())]);
    }
    multitask_step(model, batch, ctx);
    adam.step(model.params());
  }
  const auto [s1, m1] = eval();
  MESSAGE("s2st ce " << s0 << " -> " << s1 << ", mt ce " << m0 << " -> " << m1);
  CHECK(s1 <= 0.5 * s0);
  CHECK(m1 <= 0.5 * m0);
}
