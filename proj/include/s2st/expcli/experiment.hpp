#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>

#include "s2st/evalkit/evalkit.hpp"
#include "s2st/models/models.hpp"

namespace s2st::expcli {

enum class Recipe { scratch, encoder_pretrain_speech, encoder_pretrain_speech_text, decoder_pretrain, multitask, augment };
const char* recipe_name(Recipe r);
Recipe parse_recipe(const std::string& s);

// Pre-training stage a recipe needs before fine-tuning.
enum class PretrainKind { none, speech, speech_text, mt };
const char* pretrain_kind_name(PretrainKind k);

// Invalid or inconsistent configuration; raised before any compute.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  Recipe recipe = Recipe::scratch;
  std::optional<models::MtVariant> mt_variant;  // decoder_pretrain only
  std::optional<double> tau;                    // multitask (tau_MT) and augment (tau_aug) only
  std::string preset = "base";
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> data_seed;  // defaults to seed

  std::size_t pretrain_steps = 1000;
  std::size_t finetune_steps = 2000;
  std::size_t batch_size = 8;
  std::size_t warmup_steps = 100;
  std::size_t pretrain_warmup_steps = 100;
  double learning_rate = 5e-3;
  double pretrain_learning_rate = 5e-3;
  double dropout = 0.1;
  std::optional<double> decoder_dropout;  // default 0.3 for S2ST-only fine-tuning, else 0.1

  std::optional<bool> freeze_lower_encoder;          // multitask only
  std::optional<double> real_fraction;               // augment only, default 0.5
  std::optional<std::string> aug_temperature_scope;  // augment only: "synthetic" (default) or "both"

  std::size_t checkpoint_every = 250;
  double eval_max_len_factor = 4.0;
  std::string output_dir = "runs/default";
  std::string pretrain_cache;  // empty: no cache
  bool log_wall_clock = true;

  PretrainKind pretrain_kind() const;
  bool s2st_only() const;  // fine-tuning sees only the real S2ST corpus
  double effective_decoder_dropout() const;
  std::uint64_t effective_data_seed() const { return data_seed.value_or(seed); }
  models::ModelConfig model_config(const datagen::ToyWorld& world) const;
};

// TOML subset: `key = value` lines, "#" comments, quoted strings, numbers, booleans.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
// "key=value" from the command line; value quoting is optional for strings.
void apply_override(ExperimentConfig& config, const std::string& assignment);
void set_field(ExperimentConfig& config, const std::string& key, const std::string& raw_value);
void validate(const ExperimentConfig& config);
std::string to_toml(const ExperimentConfig& config);
// Hash of every field that affects results (paths and logging excluded).
std::uint64_t config_hash(const ExperimentConfig& config);
std::string hex64(std::uint64_t v);
const char* code_version();

enum class Stages { all, pretrain, finetune };

struct RunOptions {
  Stages stages = Stages::all;
  // Stop (with a checkpoint) once this global step is done.
  std::optional<std::size_t> stop_after;
  // finetune stage only: directory holding a pretrained/ checkpoint.
  std::optional<std::filesystem::path> pretrained_from;
  std::ostream* log = nullptr;
};

struct RunResult {
  bool completed = false;
  std::size_t global_step = 0;
  std::optional<evalkit::EvalReport> report;
  std::size_t skipped_utterances = 0;
};

// Fresh run into config.output_dir (any previous contents of the run files are replaced).
RunResult run(const ExperimentConfig& config, const RunOptions& options = {});
// Continue from the last checkpoint in run_dir. When `config` is given it must
// hash equal to the stored one.
RunResult resume(const std::filesystem::path& run_dir, const RunOptions& options = {},
                 const std::optional<ExperimentConfig>& config = std::nullopt);
// Evaluate the final fine-tuned checkpoint of a run.
evalkit::EvalReport evaluate_run(const std::filesystem::path& run_dir, datagen::Split split = datagen::Split::test);

}  // namespace s2st::expcli
