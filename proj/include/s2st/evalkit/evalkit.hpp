#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "s2st/datagen/corpus.hpp"
#include "s2st/datagen/world.hpp"
#include "s2st/models/models.hpp"

namespace s2st::evalkit {

using datagen::ResourceGroup;
using Sequence = std::vector<int>;

// Nearest template per frame, runs collapsed by the duration table.
Sequence oracle_asr(const Tensor& spec, const datagen::TtsOracle& oracle);

// Corpus-level n-gram statistics; counts are summed before any ratio.
struct BleuStats {
  std::vector<std::size_t> matches;  // clipped, per order 1..max_n
  std::vector<std::size_t> totals;   // hypothesis n-grams, per order
  std::size_t hyp_length = 0;
  std::size_t ref_length = 0;
};

BleuStats bleu_stats(const std::vector<Sequence>& hypotheses, const std::vector<Sequence>& references,
                     std::size_t max_n = 4);
double bleu_from_stats(const BleuStats& stats);
// Corpus BLEU in [0, 100], no smoothing.
double bleu(const std::vector<Sequence>& hypotheses, const std::vector<Sequence>& references,
            std::size_t max_n = 4);

// Ordered language -> group map (order is the report column order).
using GroupAssignment = std::vector<std::pair<std::string, ResourceGroup>>;

// High = fr de ca es, mid = fa it ru zh pt, low = the remaining twelve.
const GroupAssignment& published_groups();
GroupAssignment world_groups(const datagen::ToyWorld& world);

struct EvalReport {
  std::string model_id;
  std::uint64_t step = 0;
  std::vector<std::pair<std::string, double>> per_language;  // column order
  double all = 0.0, high = 0.0, mid = 0.0, low = 0.0;         // NaN when a group is empty
  std::size_t utterances = 0;
  std::size_t truncated = 0;

  double language(const std::string& id) const;
  double group(ResourceGroup g) const;
};

// Unweighted means per group and over every language.
EvalReport aggregate(const std::vector<std::pair<std::string, double>>& per_language, const GroupAssignment& groups);

struct RelativeChange {
  double delta = 0.0;
  double percent = 0.0;
};
RelativeChange relative_change(double updated, double baseline);

struct DiffRow {
  std::string key;  // "All", "High", "Mid", "Low" or a language id
  double updated = 0.0, baseline = 0.0;
  double delta = 0.0;
  std::optional<double> percent;  // absent when the baseline is not positive
};
// Per-group then per-language rows of `updated` relative to `baseline`.
std::vector<DiffRow> compare(const EvalReport& updated, const EvalReport& baseline);

// Published column order: model, Avg, languages..., then High, Mid, Low.
std::string report_csv_header(const EvalReport& report);
std::string report_csv_row(const EvalReport& report);
std::string report_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);
std::string diff_csv(const std::vector<DiffRow>& rows);

struct EvalOptions {
  datagen::Split split = datagen::Split::test;
  // Decode cap = factor x median reference length of the language's split.
  double max_len_factor = 4.0;
  std::string model_id;
  std::uint64_t step = 0;
};

// Decode -> synthesize -> oracle ASR -> BLEU, per language, then aggregate.
EvalReport evaluate_model(const models::Translatotron2& model, const datagen::Corpus& corpus,
                          const datagen::ToyWorld& world, const EvalOptions& options = {});

// ---------------------------------------------------------------------------
// Published-table fixtures.

struct Table3Row {
  std::string row, encoder, decoder;
  double avg = 0.0;
  std::vector<std::pair<std::string, double>> bleu;  // published column order
  std::string key() const { return row + " (" + encoder + "/" + decoder + ")"; }
};

struct SummaryRow {
  std::string table, section, row;
  std::string source_row, source_encoder, source_decoder;
  double all = 0.0, high = 0.0, mid = 0.0, low = 0.0;
};

struct Fixtures {
  std::vector<Table3Row> table3;
  std::vector<SummaryRow> summaries;  // Tables 1 and 2

  const Table3Row& find(const std::string& row, const std::string& encoder, const std::string& decoder) const;
  // Aggregates recomputed from the per-language values.
  EvalReport report(const Table3Row& row) const;
  // Aggregates as printed: the Avg column, and group averages from the summary
  // tables when the row appears there (recomputed otherwise).
  EvalReport published_report(const Table3Row& row) const;
};

Fixtures load_fixtures(const std::filesystem::path& dir);

struct FixtureCheck {
  std::string table, row, column;
  double published = 0.0;
  double computed = 0.0;
  bool ok = false;
};

// |computed - published| must be within this (plus 1e-9 for binary rounding).
inline constexpr double kFixtureTolerance = 0.05;

// Every summary aggregate and every Table 3 Avg cell recomputed from the
// per-language values.
std::vector<FixtureCheck> check_fixtures(const Fixtures& fixtures);

// Round half away from zero to `digits` decimals, for display.
double round_to(double value, int digits);

}  // namespace s2st::evalkit
