#include <bit>
#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "s2st/core/autodiff.hpp"
#include "s2st/expcli/experiment.hpp"
#include "s2st/nn/optim.hpp"

namespace s2st::expcli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

// Stream tags for mix_seed.
constexpr std::uint64_t kWorldTag = 0x776f726c64;
constexpr std::uint64_t kCorpusTag = 0x636f72707573;
constexpr std::uint64_t kAugmentTag = 0x617567;
constexpr std::uint64_t kPretrainInitTag = 0x707265;
constexpr std::uint64_t kFinetuneInitTag = 0x66696e65;
constexpr std::uint64_t kPretrainStepTag = 0x70737470;
constexpr std::uint64_t kFinetuneStepTag = 0x66737470;
constexpr std::uint64_t kScheduleTag = 0x736368;

struct Data {
  datagen::ToyWorld world;
  datagen::Corpus corpus;
  std::vector<std::vector<datagen::S2stExample>> synthetic;  // augment only
};

Data make_data(const ExperimentConfig& c) {
  Data d;
  const auto seed = c.effective_data_seed();
  d.world = datagen::make_world(datagen::WorldConfig::standard(), mix_seed(seed, kWorldTag));
  d.corpus = datagen::make_corpus(d.world, mix_seed(seed, kCorpusTag));
  if (c.recipe == Recipe::augment) d.synthetic = datagen::augment_corpus(d.corpus, d.world, mix_seed(seed, kAugmentTag));
  return d;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& p, const std::string& text) {
  const auto tmp = fs::path(p.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
  }
  fs::rename(tmp, p);
}

// Hash of everything the pre-trained weights depend on.
std::string pretrain_key(const ExperimentConfig& c) {
  std::ostringstream o;
  o << pretrain_kind_name(c.pretrain_kind()) << '|' << c.preset << '|' << c.seed << '|' << c.effective_data_seed() << '|'
    << c.pretrain_steps << '|' << c.batch_size << '|' << c.pretrain_warmup_steps << '|' << hex64(std::bit_cast<std::uint64_t>(c.pretrain_learning_rate))
    << '|' << hex64(std::bit_cast<std::uint64_t>(c.dropout)) << '|' << code_version();
  if (c.pretrain_kind() == PretrainKind::mt)
    o << '|' << models::mt_variant_name(*c.mt_variant) << '|'
      << hex64(std::bit_cast<std::uint64_t>(c.effective_decoder_dropout()));
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : o.str()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return std::string(pretrain_kind_name(c.pretrain_kind())) + "-" + hex64(h);
}

struct CheckpointInfo {
  std::string stage;  // "pretrain" or "finetune"
  std::size_t stage_step = 0;
  std::size_t global_step = 0;
  std::size_t skipped = 0;
};

json checkpoint_manifest(const ExperimentConfig& c, const CheckpointInfo& info) {
  json m;
  m["stage"] = info.stage;
  m["stage_step"] = info.stage_step;
  m["global_step"] = info.global_step;
  m["skipped_utterances"] = info.skipped;
  m["config_hash"] = hex64(config_hash(c));
  m["seed"] = c.seed;
  m["data_seed"] = c.effective_data_seed();
  m["recipe"] = recipe_name(c.recipe);
  m["preset"] = c.preset;
  m["code_version"] = code_version();
  return m;
}

void save_checkpoint(const fs::path& dir, const ExperimentConfig& c, const CheckpointInfo& info,
                     const nn::ParameterSet& params, const nn::Adam& adam) {
  const auto tmp = fs::path(dir.string() + ".tmp");
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  save_named_tensors(tmp / "params.s2nt", params.to_named());
  save_named_tensors(tmp / "optim.s2nt", adam.state());
  {
    std::ofstream out(tmp / "manifest.json");
    out << checkpoint_manifest(c, info).dump(2) << "\n";
  }
  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

CheckpointInfo read_checkpoint(const fs::path& dir) {
  const auto m = json::parse(read_file(dir / "manifest.json"));
  CheckpointInfo info;
  info.stage = m.at("stage").get<std::string>();
  info.stage_step = m.at("stage_step").get<std::size_t>();
  info.global_step = m.at("global_step").get<std::size_t>();
  info.skipped = m.at("skipped_utterances").get<std::size_t>();
  return info;
}

std::string checkpoint_hash(const fs::path& dir) {
  return json::parse(read_file(dir / "manifest.json")).at("config_hash").get<std::string>();
}

// Keeps only records with step <= last_step.
void truncate_metrics(const fs::path& path, std::size_t last_step) {
  if (!fs::exists(path)) return;
  std::istringstream in(read_file(path));
  std::string line, kept;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (json::parse(line).at("step").get<std::size_t>() <= last_step) kept += line + "\n";
  }
  write_file_atomic(path, kept);
}

// Pre-training model of whichever kind the recipe uses.
struct PretrainModel {
  PretrainKind kind = PretrainKind::none;
  std::optional<models::W2vBert> w2v;
  std::optional<models::MSlam> mslam;
  std::optional<models::MtModel> mt;

  PretrainModel(const ExperimentConfig& c, const models::ModelConfig& mc) : kind(c.pretrain_kind()) {
    const auto seed = mix_seed(c.seed, kPretrainInitTag);
    if (kind == PretrainKind::speech) w2v.emplace(mc, seed);
    if (kind == PretrainKind::speech_text) mslam.emplace(mc, seed);
    if (kind == PretrainKind::mt) mt.emplace(mc, *c.mt_variant, seed);
  }

  nn::ParameterSet& params() {
    if (w2v) return w2v->params();
    if (mslam) return mslam->params();
    return mt->params();
  }

  const char* task() const { return pretrain_kind_name(kind); }
};

// Fine-tuning model: plain Translatotron 2 or the multi-task wrapper.
struct FinetuneModel {
  std::optional<models::Translatotron2> t2;
  std::optional<models::MultiTaskModel> multitask;
  nn::ParameterSet trainable;

  FinetuneModel(const ExperimentConfig& c, const models::ModelConfig& mc) {
    const auto seed = mix_seed(c.seed, kFinetuneInitTag);
    if (c.recipe == Recipe::multitask) {
      multitask.emplace(mc, seed, c.freeze_lower_encoder.value_or(false));
      trainable = multitask->trainable();
    } else {
      t2.emplace(mc, seed);
      trainable = t2->params();
    }
  }

  nn::ParameterSet& params() { return multitask ? multitask->params() : t2->params(); }
  const models::Translatotron2& translator() const { return multitask ? multitask->t2 : *t2; }

  models::TransferReport transfer_from(PretrainModel& pre) {
    if (pre.w2v) return models::transfer_encoder(*t2, *pre.w2v);
    if (pre.mslam) {
      if (multitask) return models::transfer_encoder(*multitask, *pre.mslam);
      return models::transfer_encoder(*t2, static_cast<const models::W2vBert&>(*pre.mslam));
    }
    return models::transfer_decoder(*t2, *pre.mt);
  }
};

class Runner {
 public:
  Runner(ExperimentConfig config, RunOptions options, fs::path dir)
      : c_(std::move(config)), opt_(options), dir_(std::move(dir)), data_(make_data(c_)),
        mc_(c_.model_config(data_.world)) {}

  RunResult execute(const std::optional<CheckpointInfo>& from);

 private:
  std::size_t pretrain_total() const { return c_.pretrain_kind() == PretrainKind::none ? 0 : c_.pretrain_steps; }
  fs::path checkpoint_dir() const { return dir_ / "checkpoint"; }
  fs::path pretrained_dir() const { return dir_ / "pretrained"; }
  fs::path metrics_path() const { return dir_ / "metrics.jsonl"; }
  bool stop_here(std::size_t global) const { return opt_.stop_after && *opt_.stop_after == global; }

  void log_line(const std::string& s) const {
    if (opt_.log) *opt_.log << s << std::endl;
  }

  void record(std::size_t global, const char* stage, const std::string& task, const objectives::LossBundle& losses,
              double total, double lr, double wall_ms);
  objectives::LossBundle pretrain_step(PretrainModel& m, std::size_t step, models::PretrainStats& stats);
  // Returns the task tag.
  std::string finetune_step(FinetuneModel& m, std::size_t step, objectives::LossBundle& out);

  bool run_pretrain(const std::optional<CheckpointInfo>& from, RunResult& result);
  bool try_pretrain_cache();
  void store_pretrain_cache();

  ExperimentConfig c_;
  RunOptions opt_;
  fs::path dir_;
  Data data_;
  models::ModelConfig mc_;
  std::ofstream metrics_;
  std::size_t skipped_ = 0;
  std::vector<datagen::Task> schedule_;
};

void Runner::record(std::size_t global, const char* stage, const std::string& task,
                    const objectives::LossBundle& losses, double total, double lr, double wall_ms) {
  json r;
  r["step"] = global;
  r["stage"] = stage;
  r["task"] = task;
  json l = json::object();
  for (const auto& e : losses.entries()) l[e.name] = e.loss.item();
  r["losses"] = l;
  r["total"] = total;
  r["lr"] = lr;
  r["wall_ms"] = c_.log_wall_clock ? wall_ms : 0.0;
  metrics_ << r.dump() << "\n";
  metrics_.flush();
}

objectives::LossBundle Runner::pretrain_step(PretrainModel& m, std::size_t step, models::PretrainStats& stats) {
  const auto stream = mix_seed(mix_seed(c_.seed, kPretrainStepTag), step);
  Rng rng(stream);
  const nn::ForwardContext ctx{true, c_.dropout, &rng};
  const auto& world = data_.world;
  auto random_speech = [&](const datagen::ToyLanguage& lang) {
    const auto sentence = world.random_sentence(lang, rng);
    return std::pair{sentence, world.oracle.synthesize(sentence, world.config.source_noise, &rng)};
  };
  if (m.kind == PretrainKind::speech) {
    std::vector<Tensor> specs;
    for (std::size_t b = 0; b < c_.batch_size; ++b)
      specs.push_back(random_speech(world.languages[rng.index(world.languages.size())]).second);
    return models::w2vbert_step(*m.w2v, specs, ctx, rng, objectives::kSpeechMaskProb, &stats);
  }
  if (m.kind == PretrainKind::speech_text) {
    // Unlabelled speech, unlabelled text and transcribed speech in equal proportion.
    std::vector<models::MslamItem> items;
    for (std::size_t b = 0; b < c_.batch_size; ++b) {
      const auto& lang = world.languages[rng.index(world.languages.size())];
      const auto kind = rng.index(3);
      if (kind == 0) {
        items.push_back({models::MslamKind::speech, random_speech(lang).second, {}});
      } else if (kind == 1) {
        items.push_back({models::MslamKind::text, {}, datagen::to_text(world.random_sentence(lang, rng))});
      } else {
        const auto& paired = data_.corpus.languages[lang.index].paired;
        const auto& p = paired[rng.index(paired.size())];
        items.push_back({models::MslamKind::paired, p.speech, p.text});
      }
    }
    return models::mslam_step(*m.mslam, items, ctx, rng, &stats);
  }
  std::vector<const std::vector<datagen::MtExample>*> mt;
  for (const auto& lc : data_.corpus.languages) mt.push_back(&lc.mt);
  datagen::SamplingConfig sc;
  const auto batch = datagen::draw_mt_batch(mt, sc, c_.batch_size, stream);
  return models::mt_forward(*m.mt, batch.mt, ctx);
}

std::string Runner::finetune_step(FinetuneModel& m, std::size_t step, objectives::LossBundle& out) {
  const auto stream = mix_seed(mix_seed(c_.seed, kFinetuneStepTag), step);
  Rng rng(stream);
  const nn::ForwardContext ctx{true, c_.dropout, &rng};
  std::vector<const std::vector<datagen::S2stExample>*> real;
  for (const auto& lc : data_.corpus.languages) real.push_back(&lc.train);
  datagen::SamplingConfig real_sc;

  if (c_.recipe == Recipe::multitask) {
    const auto task = schedule_.at(step - 1);
    datagen::TaskBatch batch;
    if (task == datagen::Task::s2st) {
      batch = datagen::draw_batch(real, real_sc, c_.batch_size, stream);
    } else {
      std::vector<const std::vector<datagen::MtExample>*> mt;
      for (const auto& lc : data_.corpus.languages) mt.push_back(&lc.mt);
      datagen::SamplingConfig mt_sc;
      mt_sc.temperature = *c_.tau;
      batch = datagen::draw_mt_batch(mt, mt_sc, c_.batch_size, stream);
    }
    out = models::multitask_step(*m.multitask, batch, ctx).losses;
    return datagen::task_name(task);
  }

  datagen::TaskBatch batch;
  if (c_.recipe == Recipe::augment) {
    std::vector<const std::vector<datagen::S2stExample>*> synthetic;
    for (const auto& s : data_.synthetic) synthetic.push_back(&s);
    datagen::SamplingConfig syn_sc;
    syn_sc.temperature = *c_.tau;
    syn_sc.seed = 1;
    if (c_.aug_temperature_scope.value_or("synthetic") == "both") real_sc.temperature = *c_.tau;
    batch = datagen::draw_mixture(real, real_sc, synthetic, syn_sc, c_.real_fraction.value_or(0.5), c_.batch_size,
                                  stream);
  } else {
    batch = datagen::draw_batch(real, real_sc, c_.batch_size, stream);
  }
  out = models::t2_forward(*m.t2, batch.s2st, ctx);
  backward(out.total());
  return "s2st";
}

bool Runner::try_pretrain_cache() {
  if (c_.pretrain_cache.empty()) return false;
  const auto entry = fs::path(c_.pretrain_cache) / pretrain_key(c_);
  if (!fs::exists(entry / "params.s2nt")) return false;
  fs::remove_all(pretrained_dir());
  fs::create_directories(pretrained_dir());
  fs::copy_file(entry / "params.s2nt", pretrained_dir() / "params.s2nt");
  metrics_ << read_file(entry / "metrics.jsonl");
  metrics_.flush();
  const auto m = json::parse(read_file(entry / "manifest.json"));
  skipped_ = m.at("skipped_utterances").get<std::size_t>();
  log_line("pretrain: reused cached weights " + entry.string());
  return true;
}

void Runner::store_pretrain_cache() {
  if (c_.pretrain_cache.empty()) return;
  const auto entry = fs::path(c_.pretrain_cache) / pretrain_key(c_);
  if (fs::exists(entry / "params.s2nt")) return;
  const auto tmp = fs::path(entry.string() + ".tmp" + hex64(config_hash(c_)));
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  fs::copy_file(pretrained_dir() / "params.s2nt", tmp / "params.s2nt");
  write_file_atomic(tmp / "metrics.jsonl", read_file(metrics_path()));
  json m;
  m["key"] = pretrain_key(c_);
  m["skipped_utterances"] = skipped_;
  write_file_atomic(tmp / "manifest.json", m.dump(2) + "\n");
  std::error_code ec;
  fs::rename(tmp, entry, ec);  // another process may have won the race
  if (ec) fs::remove_all(tmp);
}

// False when stopped early.
bool Runner::run_pretrain(const std::optional<CheckpointInfo>& from, RunResult& result) {
  const auto total = pretrain_total();
  if (total == 0 || fs::exists(pretrained_dir() / "params.s2nt")) return true;
  if (!from && try_pretrain_cache()) {
    result.global_step = total;
    if (!stop_here(total)) return true;
    PretrainModel model(c_, mc_);
    model.params().load(load_named_tensors(pretrained_dir() / "params.s2nt"));
    save_checkpoint(checkpoint_dir(), c_, {"pretrain", total, total, skipped_}, model.params(),
                    nn::Adam(model.params(), {}));
    return false;
  }
  PretrainModel model(c_, mc_);
  nn::AdamConfig ac;
  ac.peak_lr = c_.pretrain_learning_rate;
  ac.warmup_steps = c_.pretrain_warmup_steps;
  nn::Adam adam(model.params(), ac);
  std::size_t start = 0;
  if (from && from->stage == "pretrain") {
    model.params().load(load_named_tensors(checkpoint_dir() / "params.s2nt"));
    adam.load_state(load_named_tensors(checkpoint_dir() / "optim.s2nt"));
    start = from->stage_step;
  }
  for (std::size_t s = start + 1; s <= total; ++s) {
    const auto t0 = std::chrono::steady_clock::now();
    models::PretrainStats stats;
    const auto losses = pretrain_step(model, s, stats);
    const auto loss = losses.total();
    backward(loss);
    const double lr = adam.step(model.params());
    model.params().zero_grad();
    skipped_ += stats.skipped;
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    record(s, "pretrain", model.task(), losses, loss.item(), lr, ms);
    if (s == 1 || s % 100 == 0 || s == total)
      log_line("pretrain " + std::to_string(s) + "/" + std::to_string(total) + " loss " + std::to_string(loss.item()));
    result.global_step = s;
    const bool stop = stop_here(s);
    if (s == total) {
      const auto tmp = fs::path(pretrained_dir().string() + ".tmp");
      fs::remove_all(tmp);
      fs::create_directories(tmp);
      save_named_tensors(tmp / "params.s2nt", model.params().to_named());
      fs::remove_all(pretrained_dir());
      fs::rename(tmp, pretrained_dir());
      store_pretrain_cache();
    }
    if (stop || s == total || (c_.checkpoint_every > 0 && s % c_.checkpoint_every == 0))
      save_checkpoint(checkpoint_dir(), c_, {"pretrain", s, s, skipped_}, model.params(), adam);
    if (stop) return false;
  }
  return true;
}

RunResult Runner::execute(const std::optional<CheckpointInfo>& from) {
  RunResult result;
  const auto P = pretrain_total();
  const auto F = c_.finetune_steps;
  if (from) {
    skipped_ = from->skipped;
    result.global_step = from->global_step;
  }
  metrics_.open(metrics_path(), std::ios::app);
  if (!metrics_) throw std::runtime_error("cannot open " + metrics_path().string());

  if (opt_.stages == Stages::finetune && P > 0 && !fs::exists(pretrained_dir() / "params.s2nt")) {
    if (!opt_.pretrained_from) throw ConfigError("finetune stage of this recipe needs pretrained weights (--from)");
    const auto src = *opt_.pretrained_from / "pretrained" / "params.s2nt";
    if (!fs::exists(src)) throw std::runtime_error("no pretrained weights at " + src.string());
    fs::create_directories(pretrained_dir());
    fs::copy_file(src, pretrained_dir() / "params.s2nt", fs::copy_options::overwrite_existing);
  }
  if (opt_.stages != Stages::finetune) {
    if (!run_pretrain(from, result)) return result;
    if (opt_.stages == Stages::pretrain) {
      result.completed = true;
      return result;
    }
  }

  FinetuneModel model(c_, mc_);
  nn::AdamConfig ac;
  ac.peak_lr = c_.learning_rate;
  ac.warmup_steps = c_.warmup_steps;
  nn::Adam adam(model.trainable, ac);
  std::size_t start = 0;
  if (from && from->stage == "finetune") {
    model.params().load(load_named_tensors(checkpoint_dir() / "params.s2nt"));
    adam.load_state(load_named_tensors(checkpoint_dir() / "optim.s2nt"));
    start = from->stage_step;
  } else if (P > 0) {
    PretrainModel pre(c_, mc_);
    pre.params().load(load_named_tensors(pretrained_dir() / "params.s2nt"));
    const auto report = model.transfer_from(pre);
    log_line("transfer: " + std::to_string(report.copied.size()) + " tensors, " +
             std::to_string(report.copied_scalars) + " scalars");
  }
  if (c_.recipe == Recipe::multitask) schedule_ = datagen::schedule_tasks(mix_seed(c_.seed, kScheduleTag), F);

  for (std::size_t s = start + 1; s <= F; ++s) {
    const auto t0 = std::chrono::steady_clock::now();
    objectives::LossBundle losses;
    const auto task = finetune_step(model, s, losses);
    const double lr = adam.step(model.trainable);
    model.params().zero_grad();
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    const auto global = P + s;
    double total = 0.0;
    for (const auto& e : losses.entries()) total += e.weight * e.loss.item();
    record(global, "finetune", task, losses, total, lr, ms);
    if (s == 1 || s % 100 == 0 || s == F)
      log_line("finetune " + std::to_string(s) + "/" + std::to_string(F) + " " + task + " loss " +
               std::to_string(total));
    result.global_step = global;
    const bool stop = stop_here(global);
    if (stop || s == F || (c_.checkpoint_every > 0 && s % c_.checkpoint_every == 0))
      save_checkpoint(checkpoint_dir(), c_, {"finetune", s, global, skipped_}, model.params(), adam);
    if (stop && s < F) return result;
  }
  metrics_.close();

  evalkit::EvalOptions eo;
  eo.max_len_factor = c_.eval_max_len_factor;
  eo.model_id = recipe_name(c_.recipe);
  eo.step = P + F;
  auto report = evalkit::evaluate_model(model.translator(), data_.corpus, data_.world, eo);
  write_file_atomic(dir_ / "report.json", evalkit::report_json(report));
  write_file_atomic(dir_ / "report.csv", evalkit::report_csv_header(report) + "\n" + evalkit::report_csv_row(report) + "\n");
  log_line("eval: all " + std::to_string(report.all) + " low " + std::to_string(report.low));
  result.completed = true;
  result.report = std::move(report);
  result.skipped_utterances = skipped_;
  return result;
}

void write_run_manifest(const fs::path& dir, const ExperimentConfig& c) {
  json m;
  m["config_hash"] = hex64(config_hash(c));
  m["seed"] = c.seed;
  m["data_seed"] = c.effective_data_seed();
  m["recipe"] = recipe_name(c.recipe);
  m["preset"] = c.preset;
  m["code_version"] = code_version();
  m["config_file"] = "config.toml";
  write_file_atomic(dir / "manifest.json", m.dump(2) + "\n");
  write_file_atomic(dir / "config.toml", to_toml(c));
}

}  // namespace

RunResult run(const ExperimentConfig& config, const RunOptions& options) {
  validate(config);
  const fs::path dir = config.output_dir;
  fs::create_directories(dir);
  for (const char* name : {"metrics.jsonl", "report.json", "report.csv"}) fs::remove(dir / name);
  fs::remove_all(dir / "checkpoint");
  if (options.stages != Stages::finetune) fs::remove_all(dir / "pretrained");
  write_run_manifest(dir, config);
  Runner runner(config, options, dir);
  return runner.execute(std::nullopt);
}

RunResult resume(const fs::path& run_dir, const RunOptions& options, const std::optional<ExperimentConfig>& config) {
  auto stored = load_config(run_dir / "config.toml");
  stored.output_dir = run_dir.string();
  if (config && config_hash(*config) != config_hash(stored))
    throw std::runtime_error("config does not match the run in " + run_dir.string() + " (hash " +
                             hex64(config_hash(*config)) + " vs " + hex64(config_hash(stored)) + ")");
  validate(stored);
  const auto ckpt = run_dir / "checkpoint";
  if (!fs::exists(ckpt / "manifest.json")) throw std::runtime_error("no checkpoint in " + run_dir.string());
  if (checkpoint_hash(ckpt) != hex64(config_hash(stored)))
    throw std::runtime_error("checkpoint in " + run_dir.string() + " was written by a different config");
  const auto info = read_checkpoint(ckpt);
  truncate_metrics(run_dir / "metrics.jsonl", info.global_step);
  Runner runner(stored, options, run_dir);
  return runner.execute(info);
}

evalkit::EvalReport evaluate_run(const fs::path& run_dir, datagen::Split split) {
  auto c = load_config(run_dir / "config.toml");
  validate(c);
  const auto ckpt = run_dir / "checkpoint";
  const auto info = read_checkpoint(ckpt);
  if (checkpoint_hash(ckpt) != hex64(config_hash(c)))
    throw std::runtime_error("checkpoint in " + run_dir.string() + " was written by a different config");
  if (info.stage != "finetune" || info.stage_step != c.finetune_steps)
    throw std::runtime_error("run in " + run_dir.string() + " has not finished fine-tuning");
  const auto data = make_data(c);
  FinetuneModel model(c, c.model_config(data.world));
  model.params().load(load_named_tensors(ckpt / "params.s2nt"));
  evalkit::EvalOptions eo;
  eo.split = split;
  eo.max_len_factor = c.eval_max_len_factor;
  eo.model_id = recipe_name(c.recipe);
  eo.step = info.global_step;
  return evalkit::evaluate_model(model.translator(), data.corpus, data.world, eo);
}

}  // namespace s2st::expcli
