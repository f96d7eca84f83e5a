#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "s2st/expcli/experiment.hpp"

namespace s2st::expcli {

const char* recipe_name(Recipe r) {
  switch (r) {
    case Recipe::scratch: return "scratch";
    case Recipe::encoder_pretrain_speech: return "encoder_pretrain_speech";
    case Recipe::encoder_pretrain_speech_text: return "encoder_pretrain_speech_text";
    case Recipe::decoder_pretrain: return "decoder_pretrain";
    case Recipe::multitask: return "multitask";
    case Recipe::augment: return "augment";
  }
  return "?";
}

Recipe parse_recipe(const std::string& s) {
  for (auto r : {Recipe::scratch, Recipe::encoder_pretrain_speech, Recipe::encoder_pretrain_speech_text,
                 Recipe::decoder_pretrain, Recipe::multitask, Recipe::augment})
    if (s == recipe_name(r)) return r;
  throw ConfigError("unknown recipe '" + s + "'");
}

const char* pretrain_kind_name(PretrainKind k) {
  switch (k) {
    case PretrainKind::none: return "none";
    case PretrainKind::speech: return "w2v-bert";
    case PretrainKind::speech_text: return "mslam";
    case PretrainKind::mt: return "mt";
  }
  return "?";
}

PretrainKind ExperimentConfig::pretrain_kind() const {
  switch (recipe) {
    case Recipe::scratch: return PretrainKind::none;
    case Recipe::encoder_pretrain_speech: return PretrainKind::speech;
    case Recipe::decoder_pretrain: return PretrainKind::mt;
    case Recipe::encoder_pretrain_speech_text:
    case Recipe::multitask:
    case Recipe::augment: return PretrainKind::speech_text;
  }
  return PretrainKind::none;
}

bool ExperimentConfig::s2st_only() const { return recipe != Recipe::multitask && recipe != Recipe::augment; }

double ExperimentConfig::effective_decoder_dropout() const {
  if (decoder_dropout) return *decoder_dropout;
  return s2st_only() ? 0.3 : dropout;
}

models::ModelConfig ExperimentConfig::model_config(const datagen::ToyWorld& world) const {
  models::ModelConfig mc;
  mc.preset = models::preset(preset);
  mc.data = models::data_shape(world);
  mc.dropout = dropout;
  mc.decoder_dropout = effective_decoder_dropout();
  return mc;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string unquote(const std::string& raw) {
  if (raw.size() >= 2 && raw.front() == '"' && raw.back() == '"') return raw.substr(1, raw.size() - 2);
  return raw;
}

// Drops a trailing "# comment" that is not inside quotes.
std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

template <typename T>
T parse_uint(const std::string& key, const std::string& raw) {
  const auto v = unquote(raw);
  T out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty())
    throw ConfigError(key + ": expected a non-negative integer, got '" + raw + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& raw) {
  const auto v = unquote(raw);
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size() || !std::isfinite(d)) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + raw + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& raw) {
  const auto v = unquote(raw);
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError(key + ": expected true or false, got '" + raw + "'");
}

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  auto s = os.str();
  if (s.find_first_of(".eE") == std::string::npos) s += ".0";
  return s;
}

std::string quote(const std::string& s) { return "\"" + s + "\""; }

}  // namespace

void set_field(ExperimentConfig& c, const std::string& key, const std::string& raw) {
  if (key == "recipe") {
    c.recipe = parse_recipe(unquote(raw));
  } else if (key == "mt_variant") {
    try {
      c.mt_variant = models::parse_mt_variant(unquote(raw));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  } else if (key == "tau") {
    c.tau = parse_double(key, raw);
  } else if (key == "preset") {
    c.preset = unquote(raw);
  } else if (key == "seed") {
    c.seed = parse_uint<std::uint64_t>(key, raw);
  } else if (key == "data_seed") {
    c.data_seed = parse_uint<std::uint64_t>(key, raw);
  } else if (key == "pretrain_steps") {
    c.pretrain_steps = parse_uint<std::size_t>(key, raw);
  } else if (key == "finetune_steps") {
    c.finetune_steps = parse_uint<std::size_t>(key, raw);
  } else if (key == "batch_size") {
    c.batch_size = parse_uint<std::size_t>(key, raw);
  } else if (key == "warmup_steps") {
    c.warmup_steps = parse_uint<std::size_t>(key, raw);
  } else if (key == "pretrain_warmup_steps") {
    c.pretrain_warmup_steps = parse_uint<std::size_t>(key, raw);
  } else if (key == "learning_rate") {
    c.learning_rate = parse_double(key, raw);
  } else if (key == "pretrain_learning_rate") {
    c.pretrain_learning_rate = parse_double(key, raw);
  } else if (key == "dropout") {
    c.dropout = parse_double(key, raw);
  } else if (key == "decoder_dropout") {
    c.decoder_dropout = parse_double(key, raw);
  } else if (key == "freeze_lower_encoder") {
    c.freeze_lower_encoder = parse_bool(key, raw);
  } else if (key == "real_fraction") {
    c.real_fraction = parse_double(key, raw);
  } else if (key == "aug_temperature_scope") {
    c.aug_temperature_scope = unquote(raw);
  } else if (key == "checkpoint_every") {
    c.checkpoint_every = parse_uint<std::size_t>(key, raw);
  } else if (key == "eval_max_len_factor") {
    c.eval_max_len_factor = parse_double(key, raw);
  } else if (key == "output_dir") {
    c.output_dir = unquote(raw);
  } else if (key == "pretrain_cache") {
    c.pretrain_cache = unquote(raw);
  } else if (key == "log_wall_clock") {
    c.log_wall_clock = parse_bool(key, raw);
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> seen;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key or value");
    if (std::find(seen.begin(), seen.end(), key) != seen.end())
      throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    seen.push_back(key);
    set_field(c, key, value);
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void apply_override(ExperimentConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  set_field(config, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void validate(const ExperimentConfig& c) {
  const bool needs_tau = c.recipe == Recipe::multitask || c.recipe == Recipe::augment;
  if (needs_tau && !c.tau) throw ConfigError(std::string("recipe ") + recipe_name(c.recipe) + " requires tau");
  if (!needs_tau && c.tau) throw ConfigError(std::string("tau is not used by recipe ") + recipe_name(c.recipe));
  if (c.tau && !(*c.tau >= 1.0)) throw ConfigError("tau must be >= 1");
  if (c.recipe == Recipe::decoder_pretrain && !c.mt_variant) throw ConfigError("decoder_pretrain requires mt_variant");
  if (c.recipe != Recipe::decoder_pretrain && c.mt_variant)
    throw ConfigError("mt_variant is only used by decoder_pretrain");
  if (c.freeze_lower_encoder && c.recipe != Recipe::multitask)
    throw ConfigError("freeze_lower_encoder is only used by multitask");
  if (c.recipe != Recipe::augment && (c.real_fraction || c.aug_temperature_scope))
    throw ConfigError("real_fraction / aug_temperature_scope are only used by augment");
  if (c.real_fraction && !(*c.real_fraction > 0.0 && *c.real_fraction < 1.0))
    throw ConfigError("real_fraction must be in (0, 1)");
  if (c.aug_temperature_scope && *c.aug_temperature_scope != "synthetic" && *c.aug_temperature_scope != "both")
    throw ConfigError("aug_temperature_scope must be synthetic or both");
  if (c.preset != "base" && c.preset != "large") throw ConfigError("preset must be base or large");
  if (c.finetune_steps == 0) throw ConfigError("finetune_steps must be positive");
  if (c.pretrain_kind() != PretrainKind::none && c.pretrain_steps == 0)
    throw ConfigError(std::string("recipe ") + recipe_name(c.recipe) + " needs pretrain_steps > 0");
  if (c.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(c.learning_rate > 0.0) || !(c.pretrain_learning_rate > 0.0)) throw ConfigError("learning rates must be positive");
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
  if (c.decoder_dropout && !(*c.decoder_dropout >= 0.0 && *c.decoder_dropout < 1.0))
    throw ConfigError("decoder_dropout must be in [0, 1)");
  if (!(c.eval_max_len_factor >= 1.0)) throw ConfigError("eval_max_len_factor must be >= 1");
  if (c.output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

namespace {

std::string result_fields(const ExperimentConfig& c) {
  std::ostringstream o;
  o << "recipe = " << quote(recipe_name(c.recipe)) << "\n";
  if (c.mt_variant) o << "mt_variant = " << quote(models::mt_variant_name(*c.mt_variant)) << "\n";
  if (c.tau) o << "tau = " << num(*c.tau) << "\n";
  o << "preset = " << quote(c.preset) << "\n";
  o << "seed = " << c.seed << "\n";
  if (c.data_seed) o << "data_seed = " << *c.data_seed << "\n";
  o << "pretrain_steps = " << c.pretrain_steps << "\n";
  o << "finetune_steps = " << c.finetune_steps << "\n";
  o << "batch_size = " << c.batch_size << "\n";
  o << "warmup_steps = " << c.warmup_steps << "\n";
  o << "pretrain_warmup_steps = " << c.pretrain_warmup_steps << "\n";
  o << "learning_rate = " << num(c.learning_rate) << "\n";
  o << "pretrain_learning_rate = " << num(c.pretrain_learning_rate) << "\n";
  o << "dropout = " << num(c.dropout) << "\n";
  if (c.decoder_dropout) o << "decoder_dropout = " << num(*c.decoder_dropout) << "\n";
  if (c.freeze_lower_encoder) o << "freeze_lower_encoder = " << (*c.freeze_lower_encoder ? "true" : "false") << "\n";
  if (c.real_fraction) o << "real_fraction = " << num(*c.real_fraction) << "\n";
  if (c.aug_temperature_scope) o << "aug_temperature_scope = " << quote(*c.aug_temperature_scope) << "\n";
  o << "eval_max_len_factor = " << num(c.eval_max_len_factor) << "\n";
  return o.str();
}

}  // namespace

std::string to_toml(const ExperimentConfig& c) {
  std::ostringstream o;
  o << result_fields(c);
  o << "checkpoint_every = " << c.checkpoint_every << "\n";
  o << "output_dir = " << quote(c.output_dir) << "\n";
  if (!c.pretrain_cache.empty()) o << "pretrain_cache = " << quote(c.pretrain_cache) << "\n";
  o << "log_wall_clock = " << (c.log_wall_clock ? "true" : "false") << "\n";
  return o.str();
}

std::uint64_t config_hash(const ExperimentConfig& c) {
  // FNV-1a over the canonical result-affecting fields plus the code version
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : result_fields(c) + code_version()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

const char* code_version() { return "s2st-toy 0.1.0"; }

}  // namespace s2st::expcli
