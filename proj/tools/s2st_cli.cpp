#include <CLI11.hpp>

#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "s2st/evalkit/evalkit.hpp"
#include "s2st/expcli/experiment.hpp"

#ifndef S2ST_FIXTURE_DIR
#define S2ST_FIXTURE_DIR "fixtures"
#endif

namespace {

using namespace s2st;
namespace fs = std::filesystem;

constexpr int kOk = 0, kConfigError = 1, kRuntimeError = 2, kFixtureMismatch = 3;

// Flags shared by the training verbs; each maps onto a config key.
struct ConfigFlags {
  std::string config_file;
  std::vector<std::string> sets;
  std::vector<std::pair<std::string, std::string>> flag_values;  // (key, raw)
  std::optional<std::size_t> stop_after;
  bool quiet = false;

  void add_to(CLI::App* app) {
    app->add_option("-c,--config", config_file, "TOML config file");
    app->add_option("--set", sets, "override, key=value (repeatable)");
    for (const char* key : {"recipe", "mt_variant", "tau", "preset", "seed", "data_seed", "pretrain_steps",
                            "finetune_steps", "batch_size", "output_dir", "pretrain_cache"}) {
      std::string flag = std::string("--") + key;
      for (auto& ch : flag)
        if (ch == '_') ch = '-';
      app->add_option_function<std::string>(
          flag, [this, k = std::string(key)](const std::string& v) { flag_values.emplace_back(k, v); },
          std::string("config key ") + key);
    }
    app->add_option("--stop-after", stop_after, "stop with a checkpoint after this global step");
    app->add_flag("-q,--quiet", quiet, "no progress output");
  }

  expcli::ExperimentConfig build() const {
    expcli::ExperimentConfig c;
    if (!config_file.empty()) c = expcli::load_config(config_file);
    for (const auto& [k, v] : flag_values) expcli::set_field(c, k, v);
    for (const auto& s : sets) expcli::apply_override(c, s);
    expcli::validate(c);
    return c;
  }

  expcli::RunOptions options() const {
    expcli::RunOptions o;
    o.stop_after = stop_after;
    o.log = quiet ? nullptr : &std::cerr;
    return o;
  }
};

void print_result(const expcli::RunResult& r) {
  if (!r.completed) {
    std::cout << "stopped at step " << r.global_step << " (checkpoint written)\n";
    return;
  }
  if (r.report) {
    std::cout << evalkit::report_csv_header(*r.report) << "\n" << evalkit::report_csv_row(*r.report) << "\n";
  } else {
    std::cout << "completed step " << r.global_step << "\n";
  }
}

// "path.json" or "fixture:Row|encoder|decoder".
evalkit::EvalReport load_report(const std::string& spec, const std::string& fixture_dir) {
  const std::string prefix = "fixture:";
  if (spec.rfind(prefix, 0) == 0) {
    std::vector<std::string> parts;
    std::stringstream ss(spec.substr(prefix.size()));
    std::string part;
    while (std::getline(ss, part, '|')) parts.push_back(part);
    if (parts.size() != 3) throw expcli::ConfigError("fixture reference must be fixture:Row|encoder|decoder");
    const auto fixtures = evalkit::load_fixtures(fixture_dir);
    return fixtures.published_report(fixtures.find(parts[0], parts[1], parts[2]));
  }
  std::ifstream in(spec);
  if (!in) throw std::runtime_error("cannot read report " + spec);
  std::stringstream text;
  text << in.rdbuf();
  return evalkit::report_from_json(text.str());
}

int run_fixtures(const std::string& dir, bool verbose) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto checks = evalkit::check_fixtures(evalkit::load_fixtures(dir));
  std::size_t failed = 0;
  std::cout << std::fixed << std::setprecision(3);
  for (const auto& c : checks) {
    if (!c.ok) ++failed;
    if (verbose || !c.ok)
      std::cout << (c.ok ? "ok   " : "FAIL ") << c.table << " | " << c.row << " | " << c.column << ": published "
                << c.published << ", computed " << c.computed << "\n";
  }
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  std::cout << checks.size() - failed << "/" << checks.size() << " aggregates within " << evalkit::kFixtureTolerance
            << " (" << ms << " ms)\n";
  return failed == 0 ? kOk : kFixtureMismatch;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Toy multilingual speech-to-speech translation experiments"};
  app.require_subcommand(1);

  ConfigFlags run_flags, pre_flags, ft_flags;
  auto* run_cmd = app.add_subcommand("run", "full recipe: pre-train, transfer, fine-tune, evaluate");
  run_flags.add_to(run_cmd);
  auto* pre_cmd = app.add_subcommand("pretrain", "pre-training stage only");
  pre_flags.add_to(pre_cmd);
  auto* ft_cmd = app.add_subcommand("finetune", "fine-tune and evaluate");
  ft_flags.add_to(ft_cmd);
  std::string ft_from;
  ft_cmd->add_option("--from", ft_from, "run directory holding pretrained/ weights");

  auto* resume_cmd = app.add_subcommand("resume", "continue a run from its last checkpoint");
  std::string resume_dir;
  std::optional<std::size_t> resume_stop;
  bool resume_quiet = false;
  resume_cmd->add_option("run_dir", resume_dir)->required();
  resume_cmd->add_option("--stop-after", resume_stop);
  resume_cmd->add_flag("-q,--quiet", resume_quiet);

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a finished run");
  std::string eval_dir, eval_split = "test", eval_json;
  eval_cmd->add_option("run_dir", eval_dir)->required();
  eval_cmd->add_option("--split", eval_split)->check(CLI::IsMember({"train", "dev", "test"}));
  eval_cmd->add_option("--json", eval_json, "also write the report as JSON here");

  auto* compare_cmd = app.add_subcommand("compare", "per-group and per-language deltas of A relative to B");
  std::string cmp_a, cmp_b, cmp_dir = S2ST_FIXTURE_DIR;
  compare_cmd->add_option("updated", cmp_a, "report JSON or fixture:Row|encoder|decoder")->required();
  compare_cmd->add_option("baseline", cmp_b, "report JSON or fixture:Row|encoder|decoder")->required();
  compare_cmd->add_option("--fixtures", cmp_dir, "fixture directory");

  auto* fix_cmd = app.add_subcommand("fixtures", "recompute published summary tables from per-language values");
  std::string fix_dir = S2ST_FIXTURE_DIR;
  bool fix_verbose = false;
  fix_cmd->add_option("--dir", fix_dir, "fixture directory");
  fix_cmd->add_flag("-v,--verbose", fix_verbose, "print every check");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*run_cmd) {
      print_result(expcli::run(run_flags.build(), run_flags.options()));
    } else if (*pre_cmd) {
      auto o = pre_flags.options();
      o.stages = expcli::Stages::pretrain;
      print_result(expcli::run(pre_flags.build(), o));
    } else if (*ft_cmd) {
      auto o = ft_flags.options();
      o.stages = expcli::Stages::finetune;
      if (!ft_from.empty()) o.pretrained_from = ft_from;
      print_result(expcli::run(ft_flags.build(), o));
    } else if (*resume_cmd) {
      expcli::RunOptions o;
      o.stop_after = resume_stop;
      o.log = resume_quiet ? nullptr : &std::cerr;
      print_result(expcli::resume(resume_dir, o));
    } else if (*eval_cmd) {
      const auto split = eval_split == "train" ? datagen::Split::train
                         : eval_split == "dev" ? datagen::Split::dev
                                               : datagen::Split::test;
      const auto report = expcli::evaluate_run(eval_dir, split);
      std::cout << evalkit::report_csv_header(report) << "\n" << evalkit::report_csv_row(report) << "\n";
      if (!eval_json.empty()) std::ofstream(eval_json) << evalkit::report_json(report);
    } else if (*compare_cmd) {
      const auto rows = evalkit::compare(load_report(cmp_a, cmp_dir), load_report(cmp_b, cmp_dir));
      std::cout << evalkit::diff_csv(rows);
    } else if (*fix_cmd) {
      return run_fixtures(fix_dir, fix_verbose);
    }
  } catch (const expcli::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kOk;
}
