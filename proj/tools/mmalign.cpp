// mmalign: generate | train | eval | sweep-window | solve-align | bench

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mmalign/bench.hpp"
#include "mmalign/checkpoint.hpp"
#include "mmalign/data.hpp"
#include "mmalign/eval.hpp"
#include "mmalign/ot_align.hpp"
#include "mmalign/training.hpp"

#ifndef MMALIGN_VERSION
#define MMALIGN_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace mmalign;

namespace {

const std::map<std::string, Setting> kSettings{{"A", Setting::kA}, {"B", Setting::kB}};
const std::map<std::string, Modality> kModalities{{"m1", Modality::kM1}, {"m2", Modality::kM2}};
const std::map<std::string, Task> kTasks{{"regression", Task::kRegression},
                                         {"classification", Task::kClassification}};
const std::map<std::string, ImputeMode> kImpute{
    {"adl", ImputeMode::kAdl}, {"zero", ImputeMode::kZero}, {"self", ImputeMode::kSelf}};
const std::map<std::string, FitLossMode> kFitLoss{{"mse", FitLossMode::kMse},
                                                  {"literal", FitLossMode::kPaperLiteral}};
const std::map<std::string, ResidualVariant> kVariants{{"as-printed", ResidualVariant::kAsPrinted},
                                                       {"post-ln", ResidualVariant::kStandardPostLN}};

int exit_code(const Error& e) {
  switch (e.category()) {
    case Error::Category::kUsage: return 2;
    case Error::Category::kData: return 3;
    case Error::Category::kNumerical: return 4;
  }
  return 1;
}

// --seed on the command line or in the config file wins, then MMALIGN_SEED.
std::uint64_t resolve_seed(const CLI::Option* opt, std::uint64_t value) {
  if (opt->count() > 0) return value;
  if (const char* env = std::getenv("MMALIGN_SEED"); env && *env) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used == std::string(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string("MMALIGN_SEED is not an unsigned integer: ") + env);
  }
  return value;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_dataset(const fs::path& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  write_jsonl(out, data);
}

// Digest of the three split files of a data directory, in a fixed order.
json data_dir_digest(const fs::path& dir) {
  json files;
  std::string joined;
  for (const char* name : {"train.jsonl", "val.jsonl", "test.jsonl"}) {
    const auto d = file_digest(dir / name);
    files[name] = d;
    joined += d;
  }
  return {{"files", files}, {"digest", fnv1a_hex(joined)}};
}

SplitDataset load_data_dir(const fs::path& dir) {
  SplitDataset d;
  d.train = ingest(dir / "train.jsonl");
  d.val = ingest(dir / "val.jsonl");
  d.test = ingest(dir / "test.jsonl");
  return d;
}

std::pair<Index, Index> input_dims(const Dataset& data) {
  Index d1 = 0, d2 = 0;
  for (const auto& s : data) {
    if (d1 == 0) d1 = s.x1.dim();
    if (d2 == 0 && s.x2) d2 = s.x2->dim();
    if (s.x1.dim() != d1 || (s.x2 && s.x2->dim() != d2)) throw DataError("sample " + s.id + " has a different width");
  }
  return {d1, d2};
}

Index longest(const Dataset& data) {
  Index l = 0;
  for (const auto& s : data) l = std::max(l, s.x1.length());
  return l;
}

// ---------------------------------------------------------------- shared flags

struct SplitFlags {
  SplitSpec spec;

  void add(CLI::App* app) {
    app->add_option("--p", spec.p, "surviving rate of the victim modality in train, (0, 1]");
    app->add_option("--setting", spec.setting, "A: no victim at val/test; B: val/test masked at 1-p")
        ->transform(CLI::CheckedTransformer(kSettings));
    app->add_option("--victim", spec.victim, "modality that goes missing")->transform(CLI::CheckedTransformer(kModalities));
    app->add_option("--train-fraction", spec.train_fraction);
    app->add_option("--val-fraction", spec.val_fraction);
  }
};

struct ModelFlags {
  ModelConfig model;
  Index max_len = 0;  // 0: longest sequence in the data

  void add(CLI::App* app) {
    app->add_option("--attn-dim", model.d_model, "shared representation width");
    app->add_option("--num-head", model.num_heads);
    app->add_option("--ff-dim", model.d_ff);
    app->add_option("--encoder-layers", model.encoder_layers);
    app->add_option("--fusion-layers", model.fusion_layers);
    app->add_option("--head-hidden", model.head_hidden);
    app->add_option("--max-len", max_len, "position table size, head token included (default: longest input + 1)");
    app->add_option("--task", model.task)->transform(CLI::CheckedTransformer(kTasks));
    app->add_option("--num-classes", model.num_classes);
    app->add_option("--variant", model.variant, "residual form of the attention block")
        ->transform(CLI::CheckedTransformer(kVariants));
    app->add_flag("--encoder-positions", model.positional, "per-encoder position tables");
    app->add_flag("!--no-renorm", model.renormalize_columns, "skip column renormalization of decoded plans");
  }

  ModelConfig resolve(const Dataset& data, Index window) const {
    ModelConfig m = model;
    auto [d1, d2] = input_dims(data);
    if (d1 == 0 || d2 == 0) throw DataError("cannot infer modality widths: no sample carries both modalities");
    m.d_in1 = d1;
    m.d_in2 = d2;
    m.max_len = max_len > 0 ? max_len : longest(data) + 1;  // + head token
    m.window = window;
    return m;
  }
};

struct TrainFlags {
  TrainConfig train;
  bool no_con = false;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* impute_opt = nullptr;

  void add(CLI::App* app) {
    app->add_option("--eta-main", train.eta_main, "backbone learning rate");
    app->add_option("--eta-fit", train.eta_fit, "fitter learning rate");
    app->add_option("--batch", train.batch);
    app->add_option("--warm-up", train.warm_up_epochs, "warm-up epochs on the complete split");
    app->add_option("--patience", train.patience);
    app->add_option("--max-epochs", train.max_epochs);
    app->add_option("--lambda", train.lambda, "weight of the contrastive loss");
    app->add_option("--window", train.window, "alignment window W");
    app->add_option("--mu", train.mu, "entropic regularization");
    app->add_option("--tau", train.tau, "contrastive temperature");
    app->add_option("--fit-loss-mode", train.fit_loss)->transform(CLI::CheckedTransformer(kFitLoss));
    impute_opt = app->add_option("--impute", train.impute, "adl | zero | self; in checkpoint eval, overrides the trained mode")
                     ->transform(CLI::CheckedTransformer(kImpute));
    app->add_option("--clip-norm", train.adam.clip_norm);
    app->add_option("--sinkhorn-max-iter", train.sinkhorn_max_iter);
    app->add_flag("--no-con", no_con, "ablation: lambda = 0");
    app->add_flag("--random-fitter", train.random_fitter, "ablation: never train the fitter");
    app->add_flag("--split-loop", train.split_loop, "ablation: fitter and backbone in separate passes");
    app->add_flag("--log-domain-retry", train.log_domain_retry);
    seed_opt = app->add_option("--seed", seed);
  }

  TrainConfig resolve() const {
    TrainConfig t = train;
    if (no_con) t.lambda = 0.0;
    t.seed = resolve_seed(seed_opt, seed);
    return t;
  }
};

// The file itself is spliced into argv by expand_config before parsing.
void allow_config(CLI::App* app) {
  app->add_option("--config", "flat key=value file, keys named like the long flags; command-line flags win");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

// Rewrites `--config FILE` into `--key=value` arguments for every key the
// command line does not already set.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::vector<std::string> out;
  std::optional<std::string> file;
  std::set<std::string> given;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a == "--config" && i + 1 < args.size()) {
      file = args[++i];
      continue;
    }
    if (a.rfind("--config=", 0) == 0) {
      file = a.substr(9);
      continue;
    }
    if (a.rfind("--", 0) == 0) given.insert(a.substr(2, a.find('=') == std::string::npos ? std::string::npos : a.find('=') - 2));
    out.push_back(a);
  }
  if (!file) return out;
  std::ifstream in(*file);
  if (!in) throw ConfigError("cannot open config file " + *file);
  std::string line;
  std::size_t n = 0;
  std::vector<std::string> extra;
  while (std::getline(in, line)) {
    ++n;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(*file + ":" + std::to_string(n) + ": expected key=value");
    std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    std::replace(key.begin(), key.end(), '_', '-');
    if (key.empty()) throw ConfigError(*file + ":" + std::to_string(n) + ": empty key");
    if (!given.count(key)) extra.push_back("--" + key + "=" + value);
  }
  // after the subcommand name, which must come first
  if (out.size() < 2) throw ConfigError("--config needs a subcommand");
  out.insert(out.begin() + 2, extra.begin(), extra.end());
  return out;
}

// ---------------------------------------------------------------- generate

struct GenerateCmd {
  SynthConfig synth;
  SplitFlags split;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  fs::path out;

  void add(CLI::App& root) {
    auto* app = root.add_subcommand("generate", "synthetic shifted parallel sequences, split and masked");
    allow_config(app);
    app->add_option("--n", synth.n);
    app->add_option("--l", synth.length);
    app->add_option("--d", synth.dim);
    app->add_option("--shift-min", synth.shift_min);
    app->add_option("--shift-max", synth.shift_max);
    app->add_option("--mix-noise", synth.mix_noise);
    app->add_option("--label-noise", synth.label_noise);
    app->add_option("--smoothness", synth.smoothness);
    app->add_option("--shift-cue", synth.shift_cue);
    app->add_option("--label-window", synth.label_window);
    app->add_option("--x1-weight", synth.label_x1_weight);
    app->add_option("--x2-weight", synth.label_x2_weight);
    app->add_option("--classes", synth.num_classes, "> 0 turns labels into class indices");
    app->add_flag("--identity-mixing", synth.identity_mixing);
    split.add(app);
    seed_opt = app->add_option("--seed", seed);
    app->add_option("--out", out, "output directory")->required();
    app->callback([this] { run(); });
  }

  void run() {
    synth.seed = resolve_seed(seed_opt, seed);
    split.spec.seed = synth.seed;
    split.spec.validate();
    const Dataset full = synth_generate(synth);
    const SplitDataset masked = apply_missing(partition(full, split.spec), split.spec);
    fs::create_directories(out);
    write_dataset(out / "full.jsonl", full);
    write_dataset(out / "train.jsonl", masked.train);
    write_dataset(out / "val.jsonl", masked.val);
    write_dataset(out / "test.jsonl", masked.test);
    json sidecar{{"version", MMALIGN_VERSION},
                 {"split", to_json(split.spec)},
                 {"synth", to_json(synth)},
                 {"full_digest", file_digest(out / "full.jsonl")},
                 {"data", data_dir_digest(out)},
                 {"counts", {{"train", masked.train.size()}, {"val", masked.val.size()}, {"test", masked.test.size()}}}};
    write_json(out / "split.json", sidecar);
    std::cout << "wrote " << full.size() << " samples to " << out.string() << " (train " << masked.train.size()
              << ", val " << masked.val.size() << ", test " << masked.test.size() << ")\n";
  }
};

// ---------------------------------------------------------------- train

struct TrainCmd {
  ModelFlags model;
  TrainFlags train;
  fs::path data_dir;
  fs::path out;

  void add(CLI::App& root) {
    auto* app = root.add_subcommand("train", "denoising training on a generated or ingested data directory");
    allow_config(app);
    app->add_option("--data", data_dir, "directory holding train/val/test.jsonl")->required();
    app->add_option("--out", out, "run directory")->required();
    model.add(app);
    train.add(app);
    app->callback([this] { run(); });
  }

  void run() {
    TrainConfig cfg = train.resolve();
    cfg.validate();
    const SplitDataset data = load_data_dir(data_dir);
    if (fs::exists(data_dir / "split.json")) {
      const json side = read_json(data_dir / "split.json");
      const SplitSpec spec = split_spec_from_json(side.at("split"));
      cfg.p = spec.p;
      cfg.setting = spec.setting;
    }
    cfg.validate();
    Dataset all = data.train;
    all.insert(all.end(), data.val.begin(), data.val.end());
    all.insert(all.end(), data.test.begin(), data.test.end());
    const ModelConfig mc = model.resolve(all, cfg.window);

    fs::create_directories(out);
    const fs::path ckpt = out / "model.ckpt", log_path = out / "train_log.jsonl", result_path = out / "result.json";
    json manifest{{"version", MMALIGN_VERSION},
                  {"command", "train"},
                  {"seed", cfg.seed},
                  {"config", {{"model", to_json(mc)}, {"train", to_json(cfg)}}},
                  {"data", {{"dir", fs::absolute(data_dir).string()}, {"digest", data_dir_digest(data_dir)}}},
                  {"outputs", {{"checkpoint", ckpt.string()}, {"log", log_path.string()}, {"result", result_path.string()}}}};
    write_json(out / "manifest.json", manifest);

    std::ofstream log(log_path);
    FitResult result = fit(ModelParams(mc, cfg.seed), data, cfg, &log);
    save_checkpoint(ckpt, result.best, cfg.seed, to_json(cfg));

    const Metrics val = evaluate(result.best, data.val, cfg.impute);
    json res{{"best_epoch", result.best_epoch},
             {"epochs", result.log.size()},
             {"best_val", result.best_val},
             {"val", to_json(val)},
             {"skipped_batches", result.skipped_batches},
             {"checkpoint_digest", file_digest(ckpt)}};
    if (!data.test.empty()) res["test"] = to_json(evaluate(result.best, data.test, cfg.impute));
    write_json(result_path, res);
    std::cout << std::setprecision(17) << "best epoch " << result.best_epoch << " of " << result.log.size()
              << ", validation metric " << result.best_val << "\ncheckpoint " << ckpt.string() << "\n";
  }
};

// ---------------------------------------------------------------- eval

struct EvalCmd {
  // checkpoint mode
  fs::path checkpoint;
  fs::path data_dir;
  fs::path manifest;
  std::string split = "test";
  // condition mode
  fs::path input;
  std::vector<std::string> conditions;
  std::string reference;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  unsigned threads = 0;
  ModelFlags model;
  TrainFlags train;
  SplitFlags split_flags;
  fs::path out;

  void add(CLI::App& root) {
    auto* app = root.add_subcommand(
        "eval", "score a checkpoint on a data directory, or train and compare named conditions over seeds");
    allow_config(app);
    app->add_option("--checkpoint", checkpoint);
    app->add_option("--data", data_dir, "directory holding train/val/test.jsonl");
    app->add_option("--manifest", manifest, "run manifest whose data digest must match (default: next to the checkpoint)");
    app->add_option("--split", split)->check(CLI::IsMember({"val", "test"}));
    app->add_option("--input", input, "unmasked JSONL for condition runs");
    app->add_option("--conditions", conditions, "mm-align, lb, ub, zero-impute, random-fitter, no-con, split-loop")
        ->delimiter(',');
    app->add_option("--reference", reference, "condition every other one is t-tested against");
    app->add_option("--seeds", seeds)->delimiter(',');
    app->add_option("--threads", threads, "0 = all hardware threads");
    model.add(app);
    train.add(app);
    split_flags.add(app);
    app->add_option("--out", out, "directory for report.json");
    app->callback([this] { run(); });
  }

  void run() {
    if (!checkpoint.empty() && !input.empty()) throw ConfigError("give either --checkpoint or --input, not both");
    if (!checkpoint.empty()) return run_checkpoint();
    if (!input.empty()) return run_conditions();
    throw ConfigError("eval needs --checkpoint with --data, or --input with --conditions");
  }

  void run_checkpoint() {
    if (data_dir.empty()) throw ConfigError("--checkpoint needs --data");
    fs::path mpath = manifest.empty() ? checkpoint.parent_path() / "manifest.json" : manifest;
    json report{{"version", MMALIGN_VERSION}, {"checkpoint", checkpoint.string()}, {"split", split}};
    if (fs::exists(mpath)) {
      const json m = read_json(mpath);
      const std::string want = m.at("data").at("digest").at("digest").get<std::string>();
      const std::string got = data_dir_digest(data_dir).at("digest").get<std::string>();
      if (want != got) {
        throw DataError("data digest " + got + " does not match the manifest's " + want + " (" + mpath.string() + ")");
      }
      report["manifest"] = mpath.string();
      report["data_digest"] = got;
    } else if (!manifest.empty()) {
      throw DataError("manifest " + mpath.string() + " not found");
    } else {
      std::cerr << "note: no manifest next to the checkpoint, data digest not verified\n";
    }
    LoadedCheckpoint ck = load_checkpoint(checkpoint);
    const ImputeMode mode = train.impute_opt->count() > 0
                                ? train.train.impute
                                : kImpute.at(ck.hyperparameters.value("impute", std::string("adl")));
    const SplitDataset data = load_data_dir(data_dir);
    const Dataset& part = split == "val" ? data.val : data.test;
    const Metrics m = evaluate(ck.model, part, mode);
    report["impute"] = to_string(mode);
    report["metrics"] = to_json(m);
    report["validation_metric"] = validation_metric(m, ck.model.config.task);
    if (!out.empty()) {
      fs::create_directories(out);
      write_json(out / "report.json", report);
    }
    std::cout << std::setprecision(17) << report.dump(2) << "\n";
  }

  void run_conditions() {
    if (conditions.empty()) throw ConfigError("--input needs --conditions");
    const Dataset full = ingest(input);
    ExperimentConfig base;
    base.train = train.resolve();
    base.split = split_flags.spec;
    base.split.validate();
    base.model = model.resolve(full, base.train.window);
    std::vector<MetricReport> reports;
    for (const auto& name : conditions) {
      reports.push_back(run_condition(condition_from_string(name), full, base, seeds, threads));
    }
    if (!reference.empty()) {
      const auto it = std::find_if(reports.begin(), reports.end(),
                                   [&](const MetricReport& r) { return r.condition == reference; });
      if (it == reports.end()) throw ConfigError("reference condition '" + reference + "' was not run");
      const MetricReport ref = *it;
      for (auto& r : reports) {
        if (r.condition != reference) attach_t_test(r, ref);
      }
    }
    write_table(std::cout, reports);
    if (!out.empty()) {
      fs::create_directories(out);
      json j = json::array();
      for (const auto& r : reports) j.push_back(to_json(r));
      write_json(out / "report.json", {{"version", MMALIGN_VERSION}, {"input_digest", file_digest(input)}, {"reports", j}});
    }
  }
};

// ---------------------------------------------------------------- sweep-window

struct SweepCmd {
  fs::path input;
  std::vector<Index> windows{2, 4, 6, 8, 12, 16};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::string condition = "mm-align";
  unsigned threads = 0;
  ModelFlags model;
  TrainFlags train;
  SplitFlags split;
  fs::path out;

  void add(CLI::App& root) {
    auto* app = root.add_subcommand("sweep-window", "one condition run per alignment window");
    allow_config(app);
    app->add_option("--input", input, "unmasked JSONL")->required();
    app->add_option("--windows", windows)->delimiter(',');
    app->add_option("--seeds", seeds)->delimiter(',');
    app->add_option("--condition", condition);
    app->add_option("--threads", threads);
    model.add(app);
    train.add(app);
    split.add(app);
    app->add_option("--out", out, "directory for sweep.csv and sweep.json")->required();
    app->callback([this] { run(); });
  }

  void run() {
    const Dataset full = ingest(input);
    ExperimentConfig base;
    base.train = train.resolve();
    base.split = split.spec;
    base.split.validate();
    base.model = model.resolve(full, base.train.window);
    const SweepReport sweep = window_sweep(condition_from_string(condition), full, base, windows, seeds, threads);
    fs::create_directories(out);
    std::ofstream csv(out / "sweep.csv");
    write_sweep_csv(csv, sweep);
    write_json(out / "sweep.json", to_json(sweep));
    write_sweep_csv(std::cout, sweep);
  }
};

// ---------------------------------------------------------------- solve-align

struct SolveAlignCmd {
  fs::path input;
  fs::path checkpoint;
  Index window = 8;
  double mu = 0.1;
  Index min_length = 0;
  Index limit = 0;
  bool no_log_retry = false;
  fs::path out;

  void add(CLI::App& root) {
    auto* app = root.add_subcommand("solve-align", "dump Sinkhorn plans and band heat data");
    allow_config(app);
    app->add_option("--input", input, "JSONL; samples without m2 are skipped")->required();
    app->add_option("--checkpoint", checkpoint, "align encoder outputs instead of raw features");
    app->add_option("--window", window);
    app->add_option("--mu", mu);
    app->add_option("--min-length", min_length, "heat data counts only sequences at least this long");
    app->add_option("--limit", limit, "dump at most this many samples (0 = all)");
    app->add_flag("--no-log-domain-retry", no_log_retry);
    app->add_option("--out", out)->required();
    app->callback([this] { run(); });
  }

  void run() {
    const Dataset data = ingest(input);
    std::optional<LoadedCheckpoint> ck;
    if (!checkpoint.empty()) ck = load_checkpoint(checkpoint);
    SinkhornOptions opt;
    opt.log_domain_retry = !no_log_retry;
    fs::create_directories(out / "plans");
    std::vector<AlignmentPlan> plans;
    json samples = json::array();
    for (const auto& s : data) {
      if (!s.x2) continue;
      if (limit > 0 && static_cast<Index>(plans.size()) >= limit) break;
      Matrix a, b;
      if (ck) {
        a = encode(s.x1, ck->model.enc1).content();
        b = encode(*s.x2, ck->model.enc2).content();
      } else {
        if (s.x1.dim() != s.x2->dim()) throw ConfigError("raw-feature alignment needs equal widths; pass --checkpoint");
        a = s.x1.values;
        b = s.x2->values;
      }
      if (window >= s.x1.length()) throw ConfigError("window must be below the length of sample " + s.id);
      const SinkhornResult r = sinkhorn(build_cost(a, b, window), mu, opt);
      std::ofstream dump(out / "plans" / (s.id + ".txt"));
      write_alignment_dump(dump, r.plan);
      json entry{{"id", s.id},
                 {"l", r.plan.length},
                 {"iterations", r.iterations},
                 {"violation", r.violation},
                 {"converged", r.converged},
                 {"log_domain", r.log_domain},
                 {"row_argmax_offsets", row_argmax_offsets(r.plan.band, window)}};
      if (s.offset) entry["offset"] = *s.offset;
      samples.push_back(entry);
      plans.push_back(r.plan);
    }
    if (plans.empty()) throw DataError("no sample with both modalities in " + input.string());
    const Vector heat = band_heat(plans, min_length);
    std::ofstream csv(out / "heat.csv");
    csv << "slot,offset,mean_abs\n" << std::setprecision(10);
    for (Index k = 0; k < heat.size(); ++k) csv << k << "," << k - window << "," << heat[k] << "\n";
    write_json(out / "solve.json", {{"version", MMALIGN_VERSION},
                                    {"window", window},
                                    {"mu", mu},
                                    {"min_length", min_length},
                                    {"heat", std::vector<double>(heat.data(), heat.data() + heat.size())},
                                    {"samples", samples}});
    Index peak = 0;
    heat.maxCoeff(&peak);
    std::cout << "aligned " << plans.size() << " samples; heat peaks at slot " << peak << " (offset " << peak - window
              << ")\n";
  }
};

// ---------------------------------------------------------------- bench

struct BenchCmd {
  BenchConfig cfg;
  fs::path out;

  void add(CLI::App& root) {
    auto* app = root.add_subcommand("bench", "time the alignment decode path across sequence lengths");
    allow_config(app);
    app->add_option("--reps", cfg.reps, "timed repetitions per length");
    app->add_option("--warmup-reps", cfg.warmup_reps);
    app->add_option("--d", cfg.dim);
    app->add_option("--window", cfg.window);
    app->add_option("--batch", cfg.batch);
    app->add_option("--lengths", cfg.lengths)->delimiter(',');
    app->add_option("--seed", cfg.seed);
    app->add_option("--out", out, "write the report here as JSON");
    app->callback([this] { run(); });
  }

  void run() {
    const json report = to_json(bench_adl_decode(cfg));
    if (!out.empty()) write_json(out, report);
    std::cout << report.dump(2) << "\n";
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"windowed optimal-transport alignment for missing-modality sequence learning"};
  app.set_version_flag("--version", MMALIGN_VERSION);
  app.require_subcommand(1);
  GenerateCmd generate;
  TrainCmd train;
  EvalCmd eval;
  SweepCmd sweep;
  SolveAlignCmd solve;
  BenchCmd bench;
  generate.add(app);
  train.add(app);
  eval.add(app);
  sweep.add(app);
  solve.add(app);
  bench.add(app);

  try {
    std::vector<std::string> args(argv, argv + argc);
    args = expand_config(args);
    std::vector<std::string> rev(args.rbegin(), args.rend() - 1);  // CLI11 wants reversed, program name dropped
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const Error& e) {
    std::cerr << "mmalign: " << e.what() << "\n";
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "mmalign: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
