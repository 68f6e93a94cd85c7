// poisonlab command-line front end. Every subcommand shares --config, --out,
// --seed, --force and --deterministic. Exit codes: 0 ok, 2 bad config or
// input, 3 runtime/training failure.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "poisonlab/binary_io.hpp"
#include "poisonlab/errors.hpp"
#include "poisonlab/experiment.hpp"
#include "poisonlab/hashing.hpp"
#include "poisonlab/report.hpp"

namespace fs = std::filesystem;
using namespace poisonlab;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool force = false;
  bool deterministic = false;
};

void add_common(CLI::App* cmd, Common& c, bool out_required = true) {
  cmd->add_option("--config", c.config, "experiment config (JSON)");
  auto* out = cmd->add_option("--out", c.out, "output file or directory");
  if (out_required) out->required();
  cmd->add_option("--seed", c.seed, "run seed");
  cmd->add_flag("--force", c.force, "overwrite existing outputs");
  cmd->add_flag("--deterministic", c.deterministic, "request bit-reproducible execution");
}

ExperimentConfig config_of(const Common& c) {
  ExperimentConfig config;
  if (!c.config.empty()) {
    config = load_experiment_config(c.config);
  } else {
    config.dataset.synthetic = SyntheticConfig{};
  }
  if (c.deterministic) config.deterministic = true;
  config.victim.deterministic = config.victim.deterministic || config.deterministic;
  return config;
}

std::uint64_t seed_of(const Common& c, const ExperimentConfig& config) {
  if (c.seed) return *c.seed;
  return config.seeds.empty() ? 0 : config.seeds.front();
}

void guard(const fs::path& path, bool force) {
  if (fs::exists(path) && !force) {
    throw ValidationError(path.string() + " already exists; pass --force to overwrite");
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_text_file(path, j.dump(2) + "\n");
}

CompactCnnSpec spec_for(const ExperimentConfig& config, const Dataset& data) {
  CompactCnnSpec spec = config.model;
  spec.input = data.resolution;
  spec.validate();
  return spec;
}

void print_eval(const EvalReport& r) {
  std::cout << "BA  " << r.ba.hits << "/" << r.ba.total;
  if (r.ba.value()) std::cout << " = " << format_exact(*r.ba.value());
  std::cout << "\n";
  if (r.asr) {
    std::cout << "ASR " << r.asr->asr.hits << "/" << r.asr->asr.total;
    if (r.asr->asr.value()) std::cout << " = " << format_exact(*r.asr->asr.value());
    std::cout << "\n";
  }
}

int cmd_synth(const Common& c) {
  SyntheticConfig synth;
  if (!c.config.empty()) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_text_file(c.config));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(c.config + ": " + e.what());
    }
    if (j.contains("dataset") || j.contains("poisonlab_manifest")) {
      const auto config = load_experiment_config(c.config);
      if (!config.dataset.synthetic) throw ValidationError(c.config + ": dataset is not synthetic");
      synth = *config.dataset.synthetic;
    } else {
      try {
        synth = j.get<SyntheticConfig>();
      } catch (const nlohmann::json::exception& e) {
        throw ValidationError(c.config + ": " + e.what());
      }
    }
  }
  if (c.seed) synth.seed = *c.seed;
  synth.validate();
  guard(c.out, c.force);
  const Dataset data = generate_synthetic(synth);
  if (fs::path(c.out).has_parent_path()) fs::create_directories(fs::path(c.out).parent_path());
  write_dataset_cache(c.out, data);
  std::cout << c.out << "  " << data.size() << " samples  sha256 " << sha256_file(c.out) << "\n";
  return 0;
}

// train-clean trains the attacker's benign surrogate (surrogate_training);
// train trains the victim (victim_training) on whatever cache it is given.
int cmd_train(const Common& c, const std::string& data_path, const std::string& test_path, bool surrogate) {
  const auto config = config_of(c);
  const Dataset data = read_dataset_cache(data_path);
  const auto spec = spec_for(config, data);
  TrainConfig tc = surrogate ? config.surrogate_config() : config.victim;
  tc.seed = seed_of(c, config);
  const fs::path out(c.out);
  guard(out / "model.ckpt", c.force);
  auto trained = train_classifier(spec, data, tc, [](int epoch, const CompactCnn&) {
    std::cerr << "epoch " << epoch << "\n";
  });
  fs::create_directories(out);
  write_checkpoint(out / "model.ckpt", trained.model);
  nlohmann::json metrics;
  if (!test_path.empty()) {
    EvalReport r = evaluate(trained.model, read_dataset_cache(test_path), nullptr, config.target);
    r.epochs = trained.records;
    r.config = {{"role", surrogate ? "surrogate" : "victim"}, {"target", config.target}, {"training", tc}};
    r.seeds = {{"train", tc.seed}};
    metrics = eval_report_to_json(r);
    print_eval(r);
  } else {
    metrics = {{"epochs", trained.records}, {"training", tc}};
  }
  metrics["model_fingerprint"] = trained.model.fingerprint();
  write_json(out / "metrics.json", metrics);
  std::cout << (out / "model.ckpt").string() << "\n";
  return 0;
}

int cmd_trigger(const Common& c, const std::string& method, const std::string& data_path,
                const std::string& model_path) {
  const auto config = config_of(c);
  const Dataset data = read_dataset_cache(data_path);
  const TriggerMethod m = parse_trigger_method(method);
  guard(c.out, c.force);
  RunSeeds seeds = RunSeeds::derive(seed_of(c, config));
  std::optional<CompactCnn> model;
  if (m == TriggerMethod::optimized) {
    if (model_path.empty()) throw ValidationError("optimize-trigger --method optimized needs --model");
    model = read_checkpoint(model_path);
  }
  const Trigger t = build_trigger(m, config.trigger, data, seeds, model ? &*model : nullptr);
  if (fs::path(c.out).has_parent_path()) fs::create_directories(fs::path(c.out).parent_path());
  write_trigger(c.out, t);
  std::cout << c.out << "  " << to_string(t.kind) << "  sha256 " << sha256_file(c.out) << "\n";
  return 0;
}

int cmd_select(const Common& c, const std::string& method, const std::string& data_path,
               const std::string& trigger_path, double ratio) {
  const auto config = config_of(c);
  const Dataset data = read_dataset_cache(data_path);
  const Trigger trigger = read_trigger(trigger_path);
  const RunSeeds seeds = RunSeeds::derive(seed_of(c, config));
  guard(c.out, c.force);
  auto outcome = run_selection(config, parse_selection_method(method), data, trigger, ratio, seeds, 0);
  if (fs::path(c.out).has_parent_path()) fs::create_directories(fs::path(c.out).parent_path());
  write_pool(c.out, outcome.pool);
  if (!outcome.trace.empty()) {
    const fs::path trace = fs::path(c.out).replace_extension(".fus_trace.json");
    write_json(trace, fus_trace_to_json(outcome.trace));
  }
  std::cout << c.out << "  " << outcome.pool.size() << " ids\n";
  return 0;
}

int cmd_poison(const Common& c, const std::string& data_path, const std::string& trigger_path,
               const std::string& pool_path) {
  const Dataset data = read_dataset_cache(data_path);
  const Trigger trigger = read_trigger(trigger_path);
  const SamplePool pool = read_pool(pool_path);
  const fs::path out(c.out);
  guard(out / "mixed.manifest", c.force);
  PoisonPlan plan;
  plan.pool = pool.ids();
  plan.trigger = trigger;
  plan.target = pool.header.target;
  plan.label_mode = pool.header.label_mode;
  plan.mixing_ratio = static_cast<double>(plan.pool.size()) / static_cast<double>(data.size());
  const auto poisoned = build_poisoned_set(data, plan);
  const auto mixed = mix_training_set(data, poisoned);
  fs::create_directories(out);
  write_mixed_manifest(out / "mixed.manifest", make_manifest(data, sha256_file(trigger_path), plan, mixed));
  write_dataset_cache(out / "mixed.cache", mixed.data);
  std::cout << (out / "mixed.cache").string() << "  " << mixed.poison_ids.size() << " poisoned of "
            << mixed.data.size() << "\n";
  return 0;
}

int cmd_eval(const Common& c, const std::string& model_path, const std::string& data_path,
             const std::string& trigger_path) {
  const auto config = config_of(c);
  const CompactCnn model = read_checkpoint(model_path);
  const Dataset test = read_dataset_cache(data_path);
  std::optional<Trigger> trigger;
  if (!trigger_path.empty()) trigger = read_trigger(trigger_path);
  guard(c.out, c.force);
  EvalReport r = evaluate(model, test, trigger ? &*trigger : nullptr, config.target);
  r.config = {{"target", config.target}, {"model", model_path}, {"test", data_path}};
  write_json(c.out, eval_report_to_json(r));
  print_eval(r);
  return 0;
}

int cmd_pipeline(const Common& c) {
  if (c.config.empty()) throw ValidationError("pipeline needs --config");
  auto log = [](const std::string& msg) { std::cerr << "[pipeline] " << msg << "\n"; };
  bool is_manifest = false;
  try {
    is_manifest = nlohmann::json::parse(read_text_file(c.config)).contains("poisonlab_manifest");
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(c.config + ": " + e.what());
  }
  if (is_manifest) {
    if (c.out.empty()) throw ValidationError("replaying a manifest needs --out");
    const auto problems = verify_manifest(c.config);
    for (const auto& p : problems) std::cerr << "stored artifact: " << p << "\n";
    const auto replay = replay_manifest(c.config, c.out, PipelineOptions{c.force, log});
    std::cout << "replayed " << replay.compared << " artifacts, " << replay.mismatches.size() << " mismatches\n";
    for (const auto& m : replay.mismatches) std::cout << "  " << m << "\n";
    return replay.ok() ? 0 : kExitRuntime;
  }
  auto config = config_of(c);
  if (c.seed) config.seeds = {*c.seed};
  const fs::path out = c.out.empty() ? config.output : fs::path(c.out);
  const auto result = run_pipeline(config, out, PipelineOptions{c.force, log});
  for (const auto& cell : result.manifest.at("cells")) {
    std::cout << "seed " << cell.at("seed") << "  " << cell.at("attack").get<std::string>() << "  r="
              << format_exact(cell.at("ratio").get<double>()) << "  " << cell.value("status", std::string("?"));
    if (cell.contains("asr")) std::cout << "  asr " << cell.at("asr").at("value") << "  ba " << cell.at("ba").at("value");
    std::cout << "\n";
  }
  std::cout << (out / "manifest.json").string() << "  status " << result.manifest.at("status").get<std::string>()
            << "\n";
  return result.ok ? 0 : kExitRuntime;
}

int cmd_report(const Common& c, const std::vector<std::string>& runs) {
  std::vector<fs::path> dirs(runs.begin(), runs.end());
  const auto report = write_report(dirs, c.out);
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
  for (const auto& f : report.files) std::cout << f.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"poisonlab: backdoor poisoning experiments on binary real/fake image classifiers"};
  app.set_version_flag("--version", tool_version());
  app.require_subcommand(1);

  Common common;
  std::string data, test, model, trigger, pool;
  std::string trigger_method = "optimized", selection_method = "random";
  double ratio = 0.01;
  std::vector<std::string> runs;

  auto* synth = app.add_subcommand("synth-data", "generate a synthetic dataset cache");
  add_common(synth, common);

  auto* train_clean = app.add_subcommand("train-clean", "train a benign surrogate on a dataset cache");
  add_common(train_clean, common);
  train_clean->add_option("--data", data, "training cache")->required()->check(CLI::ExistingFile);
  train_clean->add_option("--test", test, "test cache for BA")->check(CLI::ExistingFile);

  auto* opt = app.add_subcommand("optimize-trigger", "build or optimize a trigger");
  add_common(opt, common);
  opt->add_option("--data", data, "training cache")->required()->check(CLI::ExistingFile);
  opt->add_option("--model", model, "surrogate checkpoint")->check(CLI::ExistingFile);
  opt->add_option("--method", trigger_method, "optimized | blended | patch")->capture_default_str();

  auto* sel = app.add_subcommand("select", "choose the poison pool");
  add_common(sel, common);
  sel->add_option("--data", data, "training cache")->required()->check(CLI::ExistingFile);
  sel->add_option("--trigger", trigger, "trigger file")->required()->check(CLI::ExistingFile);
  sel->add_option("--ratio", ratio, "mixing ratio r")->required();
  sel->add_option("--method", selection_method, "random | fus")->capture_default_str();

  auto* poison = app.add_subcommand("poison", "build and mix the poisoned training set");
  add_common(poison, common);
  poison->add_option("--data", data, "training cache")->required()->check(CLI::ExistingFile);
  poison->add_option("--trigger", trigger, "trigger file")->required()->check(CLI::ExistingFile);
  poison->add_option("--pool", pool, "pool file")->required()->check(CLI::ExistingFile);

  auto* train = app.add_subcommand("train", "train a victim model on a (mixed) dataset cache");
  add_common(train, common);
  train->add_option("--data", data, "training cache")->required()->check(CLI::ExistingFile);
  train->add_option("--test", test, "test cache for BA")->check(CLI::ExistingFile);

  auto* eval = app.add_subcommand("eval", "compute BA and ASR of a checkpoint");
  add_common(eval, common);
  eval->add_option("--model", model, "checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data, "test cache")->required()->check(CLI::ExistingFile);
  eval->add_option("--trigger", trigger, "trigger file for ASR")->check(CLI::ExistingFile);

  auto* pipeline = app.add_subcommand("pipeline", "run a full sweep, or replay a manifest");
  add_common(pipeline, common, false);

  auto* report = app.add_subcommand("report", "plots and summary table from finished runs");
  add_common(report, common);
  report->add_option("runs", runs, "run directories")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (*synth) return cmd_synth(common);
    if (*train_clean) return cmd_train(common, data, test, true);
    if (*opt) return cmd_trigger(common, trigger_method, data, model);
    if (*sel) return cmd_select(common, selection_method, data, trigger, ratio);
    if (*poison) return cmd_poison(common, data, trigger, pool);
    if (*train) return cmd_train(common, data, test, false);
    if (*eval) return cmd_eval(common, model, data, trigger);
    if (*pipeline) return cmd_pipeline(common);
    if (*report) return cmd_report(common, runs);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed JSON: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitValidation;
}
