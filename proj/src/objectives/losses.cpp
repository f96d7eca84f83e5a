#include "s2st/objectives/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "s2st/core/ops.hpp"

namespace s2st::objectives {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

void check_targets(std::span<const int> targets, std::size_t vocab, const char* who) {
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw std::out_of_range(std::string(who) + ": target " + std::to_string(t) + " outside [0, " +
                              std::to_string(vocab) + ")");
    }
  }
}

// Cross-entropy of the selected logit rows against their targets.
Tensor masked_ce(const Tensor& logits, std::span<const int> targets, std::span<const std::size_t> rows) {
  std::vector<std::size_t> cols(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) cols[i] = static_cast<std::size_t>(targets[rows[i]]);
  const Tensor picked = ops::gather_rows(logits, rows);
  return ops::neg(ops::mean(ops::gather_cols(ops::log_softmax(picked), cols, 1)));
}

}  // namespace

std::vector<std::uint8_t> MaskingPlan::mask() const {
  std::vector<std::uint8_t> m(length, 0);
  for (auto p : masked_positions) m[p] = 1;
  return m;
}

double MaskingPlan::masked_fraction() const {
  return length == 0 ? 0.0 : static_cast<double>(masked_positions.size()) / static_cast<double>(length);
}

MaskingPlan make_masking_plan(std::size_t length, double mask_prob, std::size_t span, std::uint64_t seed) {
  if (!(mask_prob > 0.0 && mask_prob < 1.0)) throw std::invalid_argument("mask_prob must lie in (0, 1)");
  if (span == 0) throw std::invalid_argument("span length must be positive");
  MaskingPlan plan;
  plan.length = length;
  plan.span_length = span;
  plan.mask_prob = mask_prob;
  plan.seed = seed;
  if (length == 0) return plan;
  if (length < span) {
    for (std::size_t i = 0; i < length; ++i) plan.masked_positions.push_back(i);
    return plan;
  }
  const double want = std::round(mask_prob * static_cast<double>(length) / static_cast<double>(span));
  const std::size_t n = std::min(std::max<std::size_t>(1, static_cast<std::size_t>(want)), length / span);
  const std::size_t free = length - n * span;

  // Stars and bars: choose n of free + n slots, slot c_i starts span i at c_i + i*(span-1).
  Rng rng(mix_seed(seed, 0x6d61736bULL));
  std::vector<std::size_t> slots(free + n);
  for (std::size_t i = 0; i < slots.size(); ++i) slots[i] = i;
  for (std::size_t i = 0; i < n; ++i) std::swap(slots[i], slots[i + rng.index(slots.size() - i)]);
  std::vector<std::size_t> chosen(slots.begin(), slots.begin() + static_cast<std::ptrdiff_t>(n));
  std::sort(chosen.begin(), chosen.end());
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t start = chosen[i] + i * (span - 1);
    for (std::size_t j = 0; j < span; ++j) plan.masked_positions.push_back(start + j);
  }
  return plan;
}

MaskingPlan plan_from_positions(std::size_t length, std::vector<std::size_t> positions) {
  std::sort(positions.begin(), positions.end());
  positions.erase(std::unique(positions.begin(), positions.end()), positions.end());
  if (!positions.empty() && positions.back() >= length) throw std::out_of_range("masked position past end");
  MaskingPlan plan;
  plan.length = length;
  plan.masked_positions = std::move(positions);
  plan.span_length = 1;
  plan.mask_prob = plan.masked_fraction();
  return plan;
}

// ---------------------------------------------------------------------------

void LossBundle::add(const std::string& name, const Tensor& loss, double weight) {
  if (has(name)) throw std::invalid_argument("loss '" + name + "' already in bundle");
  if (!loss.defined() || loss.rank() != 0) throw std::invalid_argument("loss '" + name + "' is not a scalar");
  if (!std::isfinite(loss.item())) throw std::overflow_error("loss '" + name + "' is not finite");
  entries_.push_back({name, loss, weight});
}

bool LossBundle::has(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.name == name; });
}

const Tensor& LossBundle::at(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.loss;
  throw std::out_of_range("no loss named '" + name + "'");
}

double LossBundle::weight(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.weight;
  throw std::out_of_range("no loss named '" + name + "'");
}

std::vector<std::string> LossBundle::names() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) out.push_back(e.name);
  return out;
}

Tensor LossBundle::total() const {
  if (entries_.empty()) throw std::logic_error("empty loss bundle");
  Tensor t;
  for (const auto& e : entries_) {
    Tensor term = e.weight == 1.0 ? e.loss : ops::scale(e.loss, e.weight);
    t = t.defined() ? ops::add(t, term) : term;
  }
  return t;
}

// ---------------------------------------------------------------------------

std::vector<ContrastiveSample> sample_distractors(const MaskingPlan& mask, std::size_t k, Rng& rng) {
  const auto& pos = mask.masked_positions;
  if (pos.size() < k + 1) {
    throw std::invalid_argument("contrastive loss needs at least K+1 = " + std::to_string(k + 1) +
                                " masked positions, got " + std::to_string(pos.size()));
  }
  std::vector<ContrastiveSample> out;
  out.reserve(pos.size());
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < pos.size(); ++i) {
    pool.clear();
    for (std::size_t j = 0; j < pos.size(); ++j)
      if (j != i) pool.push_back(pos[j]);
    for (std::size_t j = 0; j < k; ++j) std::swap(pool[j], pool[j + rng.index(pool.size() - j)]);
    out.push_back({pos[i], std::vector<std::size_t>(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k))});
  }
  return out;
}

Tensor contrastive_loss(const Tensor& context, const Tensor& targets, std::span<const ContrastiveSample> samples,
                        double kappa) {
  if (kappa <= 0.0) throw std::invalid_argument("kappa must be positive");
  if (context.shape() != targets.shape() || context.rank() != 2) {
    throw std::invalid_argument("contrastive: context and targets must both be T x D");
  }
  if (samples.empty()) throw std::invalid_argument("contrastive: no masked positions");
  const std::size_t k1 = samples.front().distractors.size() + 1;
  std::vector<std::size_t> rows, cols;
  for (const auto& s : samples) {
    if (s.distractors.size() + 1 != k1) throw std::invalid_argument("contrastive: ragged distractor sets");
    rows.push_back(s.position);
    cols.push_back(s.position);
    cols.insert(cols.end(), s.distractors.begin(), s.distractors.end());
  }
  for (auto c : cols)
    if (c >= context.rows()) throw std::out_of_range("contrastive: position past end");
  const Tensor c = ops::normalize_rows(ops::gather_rows(context, rows));
  const Tensor q = ops::normalize_rows(targets);
  const Tensor sims = ops::scale(ops::matmul(c, ops::transpose(q)), 1.0 / kappa);
  const Tensor cand = ops::gather_cols(sims, cols, k1);
  std::vector<std::size_t> zero(rows.size(), 0);
  return ops::neg(ops::mean(ops::gather_cols(ops::log_softmax(cand), zero, 1)));
}

Tensor contrastive_loss(const Tensor& context, const Tensor& targets, const MaskingPlan& mask, std::size_t k,
                        double kappa, Rng& rng) {
  if (k >= context.rows()) throw std::invalid_argument("contrastive: K must be < T");
  const auto samples = sample_distractors(mask, k, rng);
  return contrastive_loss(context, targets, samples, kappa);
}

Tensor mlm_loss(const Tensor& logits, std::span<const int> targets, const MaskingPlan& mask) {
  if (mask.empty()) throw std::invalid_argument("mlm: empty mask");
  if (logits.rank() != 2 || logits.rows() != targets.size() || mask.length != targets.size()) {
    throw std::invalid_argument("mlm: logits, targets and mask lengths differ");
  }
  check_targets(targets, logits.cols(), "mlm");
  return masked_ce(logits, targets, mask.masked_positions);
}

Tensor span_bert_loss(const Tensor& logits, std::span<const int> targets, const MaskingPlan& mask) {
  return mlm_loss(logits, targets, mask);
}

Tensor tlm_loss(const Tensor& logits, std::size_t speech_frames, std::span<const int> text_targets,
                const MaskingPlan& text_mask) {
  if (speech_frames == 0 || text_targets.empty()) throw std::invalid_argument("tlm: unpaired input");
  if (logits.rank() != 2 || logits.rows() != speech_frames + text_targets.size()) {
    throw std::invalid_argument("tlm: logits must cover speech frames plus transcript");
  }
  if (text_mask.empty()) throw std::invalid_argument("tlm: empty mask");
  if (text_mask.length != text_targets.size()) throw std::invalid_argument("tlm: mask length mismatch");
  check_targets(text_targets, logits.cols(), "tlm");
  std::vector<std::size_t> rows;
  std::vector<std::size_t> cols;
  for (auto p : text_mask.masked_positions) {
    rows.push_back(speech_frames + p);
    cols.push_back(static_cast<std::size_t>(text_targets[p]));
  }
  const Tensor picked = ops::gather_rows(logits, rows);
  return ops::neg(ops::mean(ops::gather_cols(ops::log_softmax(picked), cols, 1)));
}

// ---------------------------------------------------------------------------

std::size_t ctc_min_frames(std::span<const int> target) {
  std::size_t n = target.size();
  for (std::size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++n;
  return n;
}

Tensor ctc_loss(const Tensor& logits, std::span<const int> target) {
  if (logits.rank() != 2 || logits.cols() < 2) throw std::invalid_argument("ctc: logits must be T x (V+1), V >= 1");
  const std::size_t t_len = logits.rows(), c = logits.cols(), blank = c - 1;
  check_targets(target, blank, "ctc");
  if (ctc_min_frames(target) > t_len) {
    throw std::domain_error("ctc: target of length " + std::to_string(target.size()) + " needs " +
                            std::to_string(ctc_min_frames(target)) + " frames, have " + std::to_string(t_len) +
                            " (infinite loss)");
  }
  const std::size_t s_len = 2 * target.size() + 1;
  std::vector<std::size_t> ext(s_len, blank);
  for (std::size_t i = 0; i < target.size(); ++i) ext[2 * i + 1] = static_cast<std::size_t>(target[i]);

  // Row-wise log-softmax and softmax.
  const auto x = logits.data();
  std::vector<double> lp(t_len * c), prob(t_len * c);
  for (std::size_t t = 0; t < t_len; ++t) {
    double m = kNegInf;
    for (std::size_t k = 0; k < c; ++k) m = std::max(m, x[t * c + k]);
    double z = 0.0;
    for (std::size_t k = 0; k < c; ++k) z += std::exp(x[t * c + k] - m);
    const double lz = m + std::log(z);
    for (std::size_t k = 0; k < c; ++k) {
      lp[t * c + k] = x[t * c + k] - lz;
      prob[t * c + k] = std::exp(lp[t * c + k]);
    }
  }
  auto skip_ok = [&](std::size_t s) { return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]; };

  std::vector<double> alpha(t_len * s_len, kNegInf), beta(t_len * s_len, kNegInf);
  alpha[0] = lp[blank];
  if (s_len > 1) alpha[1] = lp[ext[1]];
  for (std::size_t t = 1; t < t_len; ++t) {
    for (std::size_t s = 0; s < s_len; ++s) {
      double a = alpha[(t - 1) * s_len + s];
      if (s >= 1) a = log_add(a, alpha[(t - 1) * s_len + s - 1]);
      if (skip_ok(s)) a = log_add(a, alpha[(t - 1) * s_len + s - 2]);
      alpha[t * s_len + s] = a == kNegInf ? kNegInf : a + lp[t * c + ext[s]];
    }
  }
  // beta excludes the emission at t.
  const std::size_t last = (t_len - 1) * s_len;
  beta[last + s_len - 1] = 0.0;
  if (s_len > 1) beta[last + s_len - 2] = 0.0;
  for (std::size_t t = t_len - 1; t-- > 0;) {
    for (std::size_t s = 0; s < s_len; ++s) {
      const std::size_t nx = (t + 1) * s_len;
      double b = beta[nx + s] + lp[(t + 1) * c + ext[s]];
      if (s + 1 < s_len) b = log_add(b, beta[nx + s + 1] + lp[(t + 1) * c + ext[s + 1]]);
      if (s + 2 < s_len && skip_ok(s + 2)) b = log_add(b, beta[nx + s + 2] + lp[(t + 1) * c + ext[s + 2]]);
      beta[t * s_len + s] = b;
    }
  }
  double log_p = alpha[last + s_len - 1];
  if (s_len > 1) log_p = log_add(log_p, alpha[last + s_len - 2]);
  if (log_p == kNegInf) throw std::domain_error("ctc: no feasible alignment (infinite loss)");

  // d(-log P)/d logit[t,k] = softmax[t,k] - occupancy[t,k]
  std::vector<double> local(t_len * c);
  for (std::size_t t = 0; t < t_len; ++t) {
    std::vector<double> occ(c, kNegInf);
    for (std::size_t s = 0; s < s_len; ++s)
      occ[ext[s]] = log_add(occ[ext[s]], alpha[t * s_len + s] + beta[t * s_len + s]);
    for (std::size_t k = 0; k < c; ++k)
      local[t * c + k] = prob[t * c + k] - (occ[k] == kNegInf ? 0.0 : std::exp(occ[k] - log_p));
  }
  return ops::detail::make_result("ctc", {}, {-log_p}, {logits},
                                  [local = std::move(local)](detail::Node& self) {
                                    auto& parent = self.parents[0];
                                    if (!parent->requires_grad) return;
                                    auto& g = parent->ensure_grad();
                                    const double up = self.grad[0];
                                    for (std::size_t i = 0; i < local.size(); ++i) g[i] += up * local[i];
                                  });
}

std::vector<int> ctc_greedy_decode(const Tensor& logits) {
  const std::size_t c = logits.cols(), blank = c - 1;
  std::vector<int> out;
  std::size_t prev = blank;
  for (std::size_t t = 0; t < logits.rows(); ++t) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k)
      if (logits.at(t, k) > logits.at(t, best)) best = k;
    if (best != blank && best != prev) out.push_back(static_cast<int>(best));
    prev = best;
  }
  return out;
}

// ---------------------------------------------------------------------------

Tensor token_cross_entropy(const Tensor& logits, std::span<const int> targets) {
  if (logits.rank() != 2 || logits.rows() != targets.size() || targets.empty()) {
    throw std::invalid_argument("cross-entropy: logits rows must match targets");
  }
  check_targets(targets, logits.cols(), "cross-entropy");
  std::vector<std::size_t> cols(targets.begin(), targets.end());
  return ops::neg(ops::mean(ops::gather_cols(ops::log_softmax(logits), cols, 1)));
}

LossBundle s2st_loss(const S2stOutputs& out, const S2stTargets& tgt) {
  if (tgt.phonemes.empty() || tgt.durations.size() + 1 != tgt.phonemes.size()) {
    throw std::invalid_argument("s2st_loss: need one duration per phoneme (targets end with EOS)");
  }
  if (out.log_durations.rows() != tgt.durations.size()) {
    throw std::invalid_argument("s2st_loss: predicted durations length mismatch");
  }
  if (out.spectrogram.shape() != tgt.spectrogram.shape()) {
    throw std::invalid_argument("s2st_loss: spectrogram shape " + shape_str(out.spectrogram.shape()) + " vs " +
                                shape_str(tgt.spectrogram.shape()));
  }
  std::vector<double> log_d(tgt.durations.size());
  for (std::size_t i = 0; i < log_d.size(); ++i) {
    if (tgt.durations[i] < 1) throw std::invalid_argument("s2st_loss: durations must be >= 1");
    log_d[i] = std::log(static_cast<double>(tgt.durations[i]));
  }
  LossBundle b;
  b.add("phoneme_ce", token_cross_entropy(out.phoneme_logits, tgt.phonemes));
  b.add("spec_l1", ops::mean(ops::abs(ops::sub(out.spectrogram, tgt.spectrogram))));
  const Tensor target_d = Tensor::from(out.log_durations.shape(), std::move(log_d));
  b.add("duration_l2", ops::mean(ops::square(ops::sub(out.log_durations, target_d))));
  return b;
}

}  // namespace s2st::objectives
