#include "s2st/evalkit/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace s2st::evalkit {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fmt(double v, int digits = 1) {
  if (std::isnan(v)) return "";
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << round_to(v, digits);
  return os.str();
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open fixture " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    rows.push_back(split_csv_line(line));
  }
  if (rows.empty()) throw std::runtime_error("empty fixture " + path.string());
  return rows;
}

double parse_number(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("bad number '" + s + "' in " + where);
  }
}

double mean_or_nan(const std::vector<double>& v) {
  if (v.empty()) return kNaN;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

double round_to(double value, int digits) {
  const double scale = std::pow(10.0, digits);
  // nudge absorbs binary representation error at exact half-way values
  return std::round(value * scale + (value >= 0 ? 1e-9 : -1e-9)) / scale;
}

Sequence oracle_asr(const Tensor& spec, const datagen::TtsOracle& oracle) { return oracle.transcribe(spec); }

// ---------------------------------------------------------------------------

BleuStats bleu_stats(const std::vector<Sequence>& hyps, const std::vector<Sequence>& refs, std::size_t max_n) {
  if (max_n == 0) throw std::invalid_argument("bleu: max_n must be positive");
  if (hyps.empty()) throw std::invalid_argument("bleu: empty hypothesis list");
  if (hyps.size() != refs.size()) throw std::invalid_argument("bleu: hypothesis/reference count mismatch");
  BleuStats st;
  st.matches.assign(max_n, 0);
  st.totals.assign(max_n, 0);
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const auto& h = hyps[i];
    const auto& r = refs[i];
    if (r.empty()) throw std::invalid_argument("bleu: empty reference at index " + std::to_string(i));
    st.hyp_length += h.size();
    st.ref_length += r.size();
    for (std::size_t n = 1; n <= max_n; ++n) {
      if (h.size() < n) continue;
      std::map<Sequence, std::size_t> ref_counts;
      if (r.size() >= n)
        for (std::size_t k = 0; k + n <= r.size(); ++k) ++ref_counts[Sequence(r.begin() + k, r.begin() + k + n)];
      std::map<Sequence, std::size_t> hyp_counts;
      for (std::size_t k = 0; k + n <= h.size(); ++k) ++hyp_counts[Sequence(h.begin() + k, h.begin() + k + n)];
      for (const auto& [gram, c] : hyp_counts) {
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) st.matches[n - 1] += std::min(c, it->second);
      }
      st.totals[n - 1] += h.size() - n + 1;
    }
  }
  return st;
}

double bleu_from_stats(const BleuStats& st) {
  if (st.hyp_length == 0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < st.matches.size(); ++n) {
    if (st.totals[n] == 0 || st.matches[n] == 0) return 0.0;
    log_sum += std::log(static_cast<double>(st.matches[n]) / static_cast<double>(st.totals[n]));
  }
  const double c = static_cast<double>(st.hyp_length), r = static_cast<double>(st.ref_length);
  const double bp = c < r ? std::exp(1.0 - r / c) : 1.0;
  return 100.0 * bp * std::exp(log_sum / static_cast<double>(st.matches.size()));
}

double bleu(const std::vector<Sequence>& hyps, const std::vector<Sequence>& refs, std::size_t max_n) {
  return bleu_from_stats(bleu_stats(hyps, refs, max_n));
}

// ---------------------------------------------------------------------------

const GroupAssignment& published_groups() {
  static const GroupAssignment groups = [] {
    GroupAssignment g;
    for (const char* l : {"fr", "de", "ca", "es"}) g.emplace_back(l, ResourceGroup::high);
    for (const char* l : {"fa", "it", "ru", "zh", "pt"}) g.emplace_back(l, ResourceGroup::mid);
    for (const char* l : {"nl", "tr", "et", "mn", "ar", "lv", "sl", "sv", "cy", "ta", "ja", "id"})
      g.emplace_back(l, ResourceGroup::low);
    return g;
  }();
  return groups;
}

GroupAssignment world_groups(const datagen::ToyWorld& world) {
  GroupAssignment g;
  for (const auto& lang : world.languages) g.emplace_back(lang.id, lang.group);
  return g;
}

double EvalReport::language(const std::string& id) const {
  for (const auto& [l, v] : per_language)
    if (l == id) return v;
  throw std::out_of_range("report has no language '" + id + "'");
}

double EvalReport::group(ResourceGroup g) const {
  switch (g) {
    case ResourceGroup::high: return high;
    case ResourceGroup::mid: return mid;
    case ResourceGroup::low: return low;
  }
  return kNaN;
}

EvalReport aggregate(const std::vector<std::pair<std::string, double>>& per_language, const GroupAssignment& groups) {
  if (per_language.empty()) throw std::invalid_argument("aggregate: no languages");
  std::vector<double> all, by_group[3];
  for (const auto& [lang, value] : per_language) {
    auto it = std::find_if(groups.begin(), groups.end(), [&](const auto& g) { return g.first == lang; });
    if (it == groups.end()) throw std::invalid_argument("aggregate: language '" + lang + "' has no group");
    all.push_back(value);
    by_group[static_cast<int>(it->second)].push_back(value);
  }
  EvalReport r;
  r.per_language = per_language;
  r.all = mean_or_nan(all);
  r.high = mean_or_nan(by_group[0]);
  r.mid = mean_or_nan(by_group[1]);
  r.low = mean_or_nan(by_group[2]);
  return r;
}

RelativeChange relative_change(double updated, double baseline) {
  if (!(baseline > 0.0)) throw std::invalid_argument("relative_change: baseline must be positive");
  return {updated - baseline, 100.0 * (updated - baseline) / baseline};
}

std::vector<DiffRow> compare(const EvalReport& updated, const EvalReport& baseline) {
  std::vector<std::string> a, b;
  for (const auto& p : updated.per_language) a.push_back(p.first);
  for (const auto& p : baseline.per_language) b.push_back(p.first);
  auto sa = a, sb = b;
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  if (sa != sb) throw std::invalid_argument("compare: reports cover different languages");
  std::vector<DiffRow> rows;
  auto add = [&](const std::string& key, double u, double base) {
    DiffRow row{key, u, base, u - base, std::nullopt};
    if (base > 0.0) row.percent = relative_change(u, base).percent;
    rows.push_back(row);
  };
  add("All", updated.all, baseline.all);
  add("High", updated.high, baseline.high);
  add("Mid", updated.mid, baseline.mid);
  add("Low", updated.low, baseline.low);
  for (const auto& [lang, v] : updated.per_language) add(lang, v, baseline.language(lang));
  return rows;
}

// ---------------------------------------------------------------------------

std::string report_csv_header(const EvalReport& report) {
  std::string s = "model,Avg";
  for (const auto& [lang, v] : report.per_language) s += "," + lang;
  return s + ",High,Mid,Low";
}

std::string report_csv_row(const EvalReport& report) {
  std::string s = report.model_id + "," + fmt(report.all);
  for (const auto& [lang, v] : report.per_language) s += "," + fmt(v);
  return s + "," + fmt(report.high) + "," + fmt(report.mid) + "," + fmt(report.low);
}

std::string report_json(const EvalReport& report) {
  using nlohmann::ordered_json;
  auto num = [](double v) { return std::isnan(v) ? ordered_json(nullptr) : ordered_json(v); };
  ordered_json j;
  j["model"] = report.model_id;
  j["step"] = report.step;
  j["aggregates"] = {{"all", num(report.all)}, {"high", num(report.high)}, {"mid", num(report.mid)},
                     {"low", num(report.low)}};
  ordered_json langs = ordered_json::array();
  for (const auto& [lang, v] : report.per_language) langs.push_back({{"language", lang}, {"bleu", num(v)}});
  j["per_language"] = langs;
  j["utterances"] = report.utterances;
  j["truncated"] = report.truncated;
  return j.dump(2);
}

EvalReport report_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  auto num = [](const nlohmann::json& v) { return v.is_null() ? kNaN : v.get<double>(); };
  EvalReport r;
  r.model_id = j.at("model").get<std::string>();
  r.step = j.at("step").get<std::uint64_t>();
  const auto& a = j.at("aggregates");
  r.all = num(a.at("all"));
  r.high = num(a.at("high"));
  r.mid = num(a.at("mid"));
  r.low = num(a.at("low"));
  for (const auto& e : j.at("per_language")) r.per_language.emplace_back(e.at("language"), num(e.at("bleu")));
  r.utterances = j.value("utterances", std::size_t{0});
  r.truncated = j.value("truncated", std::size_t{0});
  return r;
}

std::string diff_csv(const std::vector<DiffRow>& rows) {
  std::string s = "key,updated,baseline,delta,percent\n";
  for (const auto& r : rows) {
    s += r.key + "," + fmt(r.updated) + "," + fmt(r.baseline) + "," + fmt(r.delta) + "," +
         (r.percent ? fmt(*r.percent, 0) : std::string()) + "\n";
  }
  return s;
}

// ---------------------------------------------------------------------------

EvalReport evaluate_model(const models::Translatotron2& model, const datagen::Corpus& corpus,
                          const datagen::ToyWorld& world, const EvalOptions& options) {
  std::vector<std::pair<std::string, double>> per_language;
  std::size_t utterances = 0, truncated = 0;
  for (const auto& lc : corpus.languages) {
    const auto& lang = world.languages.at(lc.language);
    const auto& data = lc.split(options.split);
    if (data.empty()) throw std::invalid_argument("evaluate_model: empty split for language " + lang.id);
    std::vector<const datagen::S2stExample*> ordered;
    for (const auto& ex : data) ordered.push_back(&ex);
    std::sort(ordered.begin(), ordered.end(), [](auto* a, auto* b) { return a->id < b->id; });

    std::vector<std::size_t> lengths;
    for (const auto* ex : ordered) lengths.push_back(ex->target_phonemes.size());
    std::nth_element(lengths.begin(), lengths.begin() + lengths.size() / 2, lengths.end());
    const auto max_len = static_cast<std::size_t>(
        std::max(1.0, std::floor(options.max_len_factor * static_cast<double>(lengths[lengths.size() / 2]))));

    std::vector<Sequence> hyps, refs;
    for (const auto* ex : ordered) {
      const auto out = model.translate(ex->source_spec, max_len);
      if (out.truncated) ++truncated;
      hyps.push_back(out.spectrogram.defined() ? oracle_asr(out.spectrogram, world.oracle) : Sequence{});
      refs.push_back(ex->target_phonemes);
    }
    utterances += ordered.size();
    per_language.emplace_back(lang.id, bleu(hyps, refs));
  }
  auto report = aggregate(per_language, world_groups(world));
  report.model_id = options.model_id;
  report.step = options.step;
  report.utterances = utterances;
  report.truncated = truncated;
  return report;
}

// ---------------------------------------------------------------------------

const Table3Row& Fixtures::find(const std::string& row, const std::string& encoder, const std::string& decoder) const {
  for (const auto& r : table3)
    if (r.row == row && r.encoder == encoder && r.decoder == decoder) return r;
  throw std::out_of_range("no per-language fixture row '" + row + "' (" + encoder + "/" + decoder + ")");
}

EvalReport Fixtures::report(const Table3Row& row) const {
  auto r = aggregate(row.bleu, published_groups());
  r.model_id = row.key();
  return r;
}

EvalReport Fixtures::published_report(const Table3Row& row) const {
  auto r = report(row);
  r.all = row.avg;
  for (const auto& s : summaries) {
    if (s.source_row != row.row || s.source_encoder != row.encoder || s.source_decoder != row.decoder) continue;
    r.high = s.high;
    r.mid = s.mid;
    r.low = s.low;
    break;
  }
  return r;
}

Fixtures load_fixtures(const std::filesystem::path& dir) {
  Fixtures f;
  const auto t3 = read_csv(dir / "table3.csv");
  const auto& header = t3[0];
  if (header.size() != 4 + published_groups().size() || header[3] != "Avg")
    throw std::runtime_error("table3.csv: unexpected header");
  for (std::size_t i = 0; i < published_groups().size(); ++i) {
    if (header[4 + i] != published_groups()[i].first) throw std::runtime_error("table3.csv: column order differs");
  }
  for (std::size_t i = 1; i < t3.size(); ++i) {
    const auto& c = t3[i];
    const std::string where = "table3.csv line " + std::to_string(i + 1);
    if (c.size() != header.size()) throw std::runtime_error(where + ": wrong cell count");
    Table3Row r{c[0], c[1], c[2], parse_number(c[3], where), {}};
    for (std::size_t k = 0; k < published_groups().size(); ++k)
      r.bleu.emplace_back(header[4 + k], parse_number(c[4 + k], where));
    f.table3.push_back(std::move(r));
  }
  for (const char* name : {"table1", "table2"}) {
    const auto rows = read_csv(dir / (std::string(name) + ".csv"));
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const auto& c = rows[i];
      const std::string where = std::string(name) + ".csv line " + std::to_string(i + 1);
      if (c.size() != 9) throw std::runtime_error(where + ": wrong cell count");
      f.summaries.push_back({name == std::string("table1") ? "Table 1" : "Table 2", c[0], c[1], c[2], c[3], c[4],
                             parse_number(c[5], where), parse_number(c[6], where), parse_number(c[7], where),
                             parse_number(c[8], where)});
    }
  }
  return f;
}

std::vector<FixtureCheck> check_fixtures(const Fixtures& f) {
  std::vector<FixtureCheck> out;
  auto check = [&](const std::string& table, const std::string& row, const std::string& col, double published,
                   double computed) {
    out.push_back({table, row, col, published, computed,
                   std::abs(computed - published) <= kFixtureTolerance + 1e-9});
  };
  for (const auto& r : f.table3) check("Table 3", r.key(), "Avg", r.avg, f.report(r).all);
  for (const auto& s : f.summaries) {
    const auto rep = f.report(f.find(s.source_row, s.source_encoder, s.source_decoder));
    const std::string label = s.section + " / " + s.row;
    check(s.table, label, "All", s.all, rep.all);
    check(s.table, label, "High", s.high, rep.high);
    check(s.table, label, "Mid", s.mid, rep.mid);
    check(s.table, label, "Low", s.low, rep.low);
  }
  return out;
}

}  // namespace s2st::evalkit
