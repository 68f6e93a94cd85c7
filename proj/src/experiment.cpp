#include "poisonlab/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "poisonlab/binary_io.hpp"
#include "poisonlab/errors.hpp"
#include "poisonlab/hashing.hpp"
#include "poisonlab/rng.hpp"

namespace poisonlab {

namespace fs = std::filesystem;

std::string to_string(TriggerMethod m) {
  switch (m) {
    case TriggerMethod::optimized: return "optimized";
    case TriggerMethod::blended: return "blended";
    case TriggerMethod::patch: return "patch";
  }
  return "unknown";
}

std::string to_string(SelectionMethod m) { return m == SelectionMethod::random ? "random" : "fus"; }

TriggerMethod parse_trigger_method(const std::string& text) {
  if (text == "optimized") return TriggerMethod::optimized;
  if (text == "blended") return TriggerMethod::blended;
  if (text == "patch") return TriggerMethod::patch;
  throw ValidationError("trigger method must be optimized, blended or patch, got '" + text + "'");
}

SelectionMethod parse_selection_method(const std::string& text) {
  if (text == "random") return SelectionMethod::random;
  if (text == "fus") return SelectionMethod::fus;
  throw ValidationError("selection method must be random or fus, got '" + text + "'");
}

std::string AttackSpec::name() const { return to_string(trigger) + "_" + to_string(selection); }

std::string AttackSpec::label() const {
  if (trigger == TriggerMethod::optimized && selection == SelectionMethod::fus) return "Bad-Deepfake";
  std::string base = trigger == TriggerMethod::optimized ? "Optimized"
                     : trigger == TriggerMethod::blended ? "Blended"
                                                         : "Patch";
  return selection == SelectionMethod::fus ? base + "+FUS" : base;
}

namespace {

AttackSpec parse_attack(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto text = j.get<std::string>();
    const auto plus = text.find('+');
    if (plus == std::string::npos) throw ValidationError("attack '" + text + "' must look like trigger+selection");
    return AttackSpec{parse_trigger_method(text.substr(0, plus)), parse_selection_method(text.substr(plus + 1))};
  }
  return AttackSpec{parse_trigger_method(j.at("trigger").get<std::string>()),
                    parse_selection_method(j.at("selection").get<std::string>())};
}

fs::path resolve(const fs::path& p, const fs::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + " must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw ValidationError(where + ": unknown key '" + key + "'");
  }
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

}  // namespace

void ExperimentConfig::validate() const {
  const int sources = (dataset.synthetic ? 1 : 0) + (dataset.folder.empty() ? 0 : 1) + (dataset.cache.empty() ? 0 : 1);
  if (sources != 1) throw ValidationError("dataset: give exactly one of synthetic, folder, cache");
  if (dataset.synthetic) dataset.synthetic->validate();
  if (!dataset.folder.empty() && !fs::is_directory(dataset.folder)) {
    throw ValidationError("dataset folder " + dataset.folder.string() + " does not exist");
  }
  if (!dataset.cache.empty() && !fs::is_regular_file(dataset.cache)) {
    throw ValidationError("dataset cache " + dataset.cache.string() + " does not exist");
  }
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ValidationError("split.test_fraction must lie in (0,1)");
  victim.validate();
  surrogate_config().validate();
  trigger.pgd.validate();
  if (!(trigger.blend_lambda >= 0.0 && trigger.blend_lambda <= 1.0)) {
    throw ValidationError("trigger.blend_lambda must lie in [0,1]");
  }
  if (trigger.blend_pattern != "grid" && trigger.blend_pattern != "noise") {
    throw ValidationError("trigger.blend_pattern must be grid or noise");
  }
  if (trigger.patch_size < 1) throw ValidationError("trigger.patch_size must be >= 1");
  FusConfig probe;
  probe.iterations = fus.iterations;
  probe.filtration_ratio = fus.filtration_ratio;
  probe.validate();
  if (!(fus.validation_fraction > 0.0 && fus.validation_fraction < 1.0)) {
    throw ValidationError("fus.validation_fraction must lie in (0,1)");
  }
  if (target != kReal && target != kFake) throw ValidationError("target must be 0 or 1");
  if (mixing_ratios.empty()) throw ValidationError("mixing_ratios must not be empty");
  for (double r : mixing_ratios) {
    if (!(r > 0.0 && r < 1.0)) throw ValidationError("mixing ratio " + format_exact(r) + " is outside (0,1)");
  }
  if (seeds.empty()) throw ValidationError("at least one seed is required");
  if (attacks.empty()) throw ValidationError("at least one attack is required");
  CompactCnnSpec spec = model;
  if (dataset.synthetic) spec.input = dataset.synthetic->resolution;
  else if (!dataset.folder.empty()) spec.input = dataset.resolution;
  spec.validate();
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j, const fs::path& base_dir) {
  try {
    check_keys(j,
               {"preset", "dataset", "split", "model", "victim_training", "surrogate_training", "trigger", "fus",
                "label_mode", "target", "mixing_ratios", "seeds", "attacks", "output", "deterministic", "$comment"},
               "config");
    ExperimentConfig c;
    const std::string preset = j.value("preset", std::string("dirty_label"));
    if (preset == "clean_label") {
      c.label_mode = LabelMode::clean;
      for (double& r : c.mixing_ratios) r *= 10.0;
    } else if (preset != "dirty_label") {
      throw ValidationError("preset must be dirty_label or clean_label");
    }
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      check_keys(d, {"synthetic", "folder", "cache", "resolution"}, "dataset");
      if (d.contains("synthetic")) c.dataset.synthetic = d.at("synthetic").get<SyntheticConfig>();
      if (d.contains("folder")) c.dataset.folder = resolve(d.at("folder").get<std::string>(), base_dir);
      if (d.contains("cache")) c.dataset.cache = resolve(d.at("cache").get<std::string>(), base_dir);
      if (d.contains("resolution")) c.dataset.resolution = d.at("resolution").get<Shape>();
    } else {
      c.dataset.synthetic = SyntheticConfig{};
    }
    if (j.contains("split")) {
      const auto& s = j.at("split");
      check_keys(s, {"test_fraction", "seed"}, "split");
      c.test_fraction = s.value("test_fraction", c.test_fraction);
      c.split_seed = s.value("seed", c.split_seed);
    }
    if (j.contains("model")) c.model = j.at("model").get<CompactCnnSpec>();
    if (j.contains("victim_training")) c.victim = j.at("victim_training").get<TrainConfig>();
    if (j.contains("surrogate_training")) c.surrogate = j.at("surrogate_training").get<TrainConfig>();
    if (j.contains("trigger")) {
      const auto& t = j.at("trigger");
      check_keys(t, {"pgd", "blend_lambda", "blend_pattern", "patch_size"}, "trigger");
      if (t.contains("pgd")) c.trigger.pgd = t.at("pgd").get<PgdConfig>();
      c.trigger.blend_lambda = t.value("blend_lambda", c.trigger.blend_lambda);
      c.trigger.blend_pattern = t.value("blend_pattern", c.trigger.blend_pattern);
      c.trigger.patch_size = t.value("patch_size", c.trigger.patch_size);
    }
    if (j.contains("fus")) {
      const auto& f = j.at("fus");
      check_keys(f, {"iterations", "filtration_ratio", "retention", "validation_fraction", "evaluate_final_pool"}, "fus");
      c.fus.iterations = f.value("iterations", c.fus.iterations);
      c.fus.filtration_ratio = f.value("filtration_ratio", c.fus.filtration_ratio);
      const std::string ret = f.value("retention", std::string("best"));
      if (ret != "best" && ret != "last") throw ValidationError("fus.retention must be best or last");
      c.fus.retention = ret == "best" ? Retention::best : Retention::last;
      c.fus.validation_fraction = f.value("validation_fraction", c.fus.validation_fraction);
      c.fus.evaluate_final_pool = f.value("evaluate_final_pool", c.fus.evaluate_final_pool);
    }
    if (j.contains("label_mode")) c.label_mode = parse_label_mode(j.at("label_mode").get<std::string>());
    c.target = j.value("target", c.target);
    if (j.contains("mixing_ratios")) c.mixing_ratios = j.at("mixing_ratios").get<std::vector<double>>();
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("attacks")) {
      c.attacks.clear();
      for (const auto& a : j.at("attacks")) c.attacks.push_back(parse_attack(a));
    }
    if (j.contains("output")) c.output = resolve(j.at("output").get<std::string>(), base_dir);
    c.deterministic = j.value("deterministic", c.deterministic);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
}

nlohmann::json experiment_config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  nlohmann::json d = nlohmann::json::object();
  if (c.dataset.synthetic) d["synthetic"] = *c.dataset.synthetic;
  if (!c.dataset.folder.empty()) {
    d["folder"] = fs::absolute(c.dataset.folder).lexically_normal().string();
    d["resolution"] = c.dataset.resolution;
  }
  if (!c.dataset.cache.empty()) d["cache"] = fs::absolute(c.dataset.cache).lexically_normal().string();
  j["dataset"] = d;
  j["split"] = {{"test_fraction", c.test_fraction}, {"seed", c.split_seed}};
  j["model"] = c.model;
  j["victim_training"] = c.victim;
  j["surrogate_training"] = c.surrogate_config();
  j["trigger"] = {{"pgd", c.trigger.pgd},
                  {"blend_lambda", c.trigger.blend_lambda},
                  {"blend_pattern", c.trigger.blend_pattern},
                  {"patch_size", c.trigger.patch_size}};
  j["fus"] = {{"iterations", c.fus.iterations},
              {"filtration_ratio", c.fus.filtration_ratio},
              {"retention", c.fus.retention == Retention::best ? "best" : "last"},
              {"validation_fraction", c.fus.validation_fraction},
              {"evaluate_final_pool", c.fus.evaluate_final_pool}};
  j["label_mode"] = to_string(c.label_mode);
  j["target"] = c.target;
  j["mixing_ratios"] = c.mixing_ratios;
  j["seeds"] = c.seeds;
  nlohmann::json attacks = nlohmann::json::array();
  for (const auto& a : c.attacks) attacks.push_back(to_string(a.trigger) + "+" + to_string(a.selection));
  j["attacks"] = attacks;
  j["output"] = c.output.string();
  j["deterministic"] = c.deterministic;
  return j;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  const fs::path base = path.parent_path();
  if (j.contains("poisonlab_manifest")) return experiment_config_from_json(j.at("config"), base);
  return experiment_config_from_json(j, base);
}

Dataset load_dataset(const DatasetSource& source) {
  if (source.synthetic) return generate_synthetic(*source.synthetic);
  if (!source.folder.empty()) return load_image_folder(source.folder, source.resolution);
  if (!source.cache.empty()) return read_dataset_cache(source.cache);
  throw ValidationError("dataset: no source configured");
}

RunSeeds RunSeeds::derive(std::uint64_t run_seed) {
  RunSeeds s;
  s.run = run_seed;
  s.victim_train = derive_seed(run_seed, 11);
  s.surrogate_train = derive_seed(run_seed, 12);
  s.pgd = derive_seed(run_seed, 13);
  s.blend_pattern = derive_seed(run_seed, 14);
  s.selection = derive_seed(run_seed, 15);
  s.fus_validation = derive_seed(run_seed, 16);
  s.fus_train = derive_seed(run_seed, 17);
  return s;
}

std::uint64_t RunSeeds::selection_for_ratio(std::size_t ratio_index) const {
  return derive_seed(selection, ratio_index);
}

nlohmann::json to_json(const RunSeeds& s) {
  return {{"run", s.run},
          {"victim_train", s.victim_train},
          {"surrogate_train", s.surrogate_train},
          {"pgd", s.pgd},
          {"blend_pattern", s.blend_pattern},
          {"selection", s.selection},
          {"fus_validation", s.fus_validation},
          {"fus_train", s.fus_train}};
}

Trigger build_trigger(TriggerMethod method, const TriggerSettings& settings, const Dataset& train,
                      const RunSeeds& seeds, const Classifier* surrogate) {
  switch (method) {
    case TriggerMethod::blended: {
      ImageArray pattern = settings.blend_pattern == "noise" ? random_blend_pattern(train.resolution, seeds.blend_pattern)
                                                             : grid_blend_pattern(train.resolution);
      Trigger t = make_blended_trigger(std::move(pattern), settings.blend_lambda);
      t.provenance.seed = settings.blend_pattern == "noise" ? seeds.blend_pattern : 0;
      return t;
    }
    case TriggerMethod::patch:
      return default_patch_trigger(train.resolution, settings.patch_size);
    case TriggerMethod::optimized: {
      if (!surrogate) throw ValidationError("optimized trigger needs a trained surrogate model");
      PgdConfig pgd = settings.pgd;
      pgd.seed = seeds.pgd;
      return optimize_trigger(*surrogate, train, pgd);
    }
  }
  throw ValidationError("unknown trigger method");
}

SelectionOutcome run_selection(const ExperimentConfig& config, SelectionMethod method, const Dataset& train,
                               const Trigger& trigger, double ratio, const RunSeeds& seeds, std::size_t ratio_index) {
  const std::uint64_t seed = seeds.selection_for_ratio(ratio_index);
  const std::size_t pool_size = pool_size_for(ratio, train.size());
  SelectionOutcome outcome;
  if (method == SelectionMethod::random) {
    outcome.pool = select_random(train, ratio, config.label_mode, config.target, seed, pool_size);
    return outcome;
  }
  const DatasetSplit holdout = split_dataset(train, config.fus.validation_fraction, seeds.fus_validation);
  FusConfig fus;
  fus.iterations = config.fus.iterations;
  fus.filtration_ratio = config.fus.filtration_ratio;
  fus.mixing_ratio = ratio;
  fus.label_mode = config.label_mode;
  fus.retention = config.fus.retention;
  fus.seed = seed;
  fus.evaluate_final_pool = config.fus.evaluate_final_pool;
  fus.pool_size = pool_size;
  CompactCnnSpec spec = config.model;
  spec.input = train.resolution;
  TrainConfig surrogate = config.surrogate_config();
  surrogate.seed = derive_seed(seeds.fus_train, ratio_index);
  auto result = fus_select(holdout.train, trigger, fus, config.target, make_cnn_train_fn(spec, surrogate),
                           holdout.test);
  outcome.pool = std::move(result.pool);
  outcome.trace = std::move(result.trace);
  return outcome;
}

std::string ratio_dir_name(double ratio) { return "r_" + format_exact(ratio); }

std::string tool_version() { return POISONLAB_VERSION; }

namespace {

class ArtifactLog {
 public:
  explicit ArtifactLog(fs::path root) : root_(std::move(root)) {}
  void add(const fs::path& file) {
    hashes_[fs::relative(file, root_).generic_string()] = sha256_file(file);
  }
  std::string hash_of(const fs::path& file) const {
    return hashes_.at(fs::relative(file, root_).generic_string());
  }
  nlohmann::json json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : hashes_) j[k] = v;
    return j;
  }

 private:
  fs::path root_;
  std::map<std::string, std::string> hashes_;
};

void write_json(const fs::path& path, const nlohmann::json& j) { write_text_file(path, j.dump(2) + "\n"); }

}  // namespace

PipelineResult run_pipeline(const ExperimentConfig& config, const fs::path& out, const PipelineOptions& options) {
  config.validate();
  const fs::path manifest_path = out / "manifest.json";
  if (fs::exists(manifest_path) && !options.force) {
    throw ValidationError(out.string() + " already holds a pipeline run; pass --force to overwrite");
  }
  auto log = [&](const std::string& msg) {
    if (options.log) options.log(msg);
  };
  fs::create_directories(out);
  ArtifactLog artifacts(out);

  nlohmann::json manifest;
  manifest["poisonlab_manifest"] = 1;
  manifest["tool_version"] = tool_version();
  manifest["started"] = utc_now();
  manifest["config"] = experiment_config_to_json(config);
  nlohmann::json cells = nlohmann::json::array();
  nlohmann::json baselines = nlohmann::json::array();
  nlohmann::json errors = nlohmann::json::array();
  bool ok = true;

  log("loading dataset");
  const Dataset full = load_dataset(config.dataset);
  validate_dataset(full);
  CompactCnnSpec spec = config.model;
  spec.input = full.resolution;
  spec.validate();
  const DatasetSplit split = split_dataset(full, config.test_fraction, config.split_seed);
  write_dataset_cache(out / "data" / "train.cache", split.train);
  write_dataset_cache(out / "data" / "test.cache", split.test);
  artifacts.add(out / "data" / "train.cache");
  artifacts.add(out / "data" / "test.cache");
  manifest["dataset"] = {{"source_hash", full.source_hash},
                         {"train_size", split.train.size()},
                         {"test_size", split.test.size()},
                         {"train_hash", dataset_content_hash(split.train)}};

  const bool needs_surrogate = std::any_of(config.attacks.begin(), config.attacks.end(), [](const AttackSpec& a) {
    return a.trigger == TriggerMethod::optimized;
  });
  std::vector<TriggerMethod> trigger_methods;
  for (const auto& a : config.attacks) {
    if (std::find(trigger_methods.begin(), trigger_methods.end(), a.trigger) == trigger_methods.end()) {
      trigger_methods.push_back(a.trigger);
    }
  }

  for (std::uint64_t run_seed : config.seeds) {
    const RunSeeds seeds = RunSeeds::derive(run_seed);
    const fs::path seed_dir = out / ("seed_" + std::to_string(run_seed));
    std::map<TriggerMethod, Trigger> triggers;
    std::map<TriggerMethod, std::string> trigger_hashes;
    try {
      log("seed " + std::to_string(run_seed) + ": clean baseline");
      TrainConfig victim = config.victim;
      victim.seed = seeds.victim_train;
      auto clean = train_classifier(spec, split.train, victim);
      write_checkpoint(seed_dir / "clean" / "model.ckpt", clean.model);
      artifacts.add(seed_dir / "clean" / "model.ckpt");

      std::optional<CompactCnn> surrogate;
      if (needs_surrogate) {
        log("seed " + std::to_string(run_seed) + ": surrogate");
        TrainConfig sur = config.surrogate_config();
        sur.seed = seeds.surrogate_train;
        surrogate = train_classifier(spec, split.train, sur).model;
        write_checkpoint(seed_dir / "surrogate" / "model.ckpt", *surrogate);
        artifacts.add(seed_dir / "surrogate" / "model.ckpt");
      }
      for (TriggerMethod m : trigger_methods) {
        log("seed " + std::to_string(run_seed) + ": trigger " + to_string(m));
        Trigger t = build_trigger(m, config.trigger, split.train, seeds, surrogate ? &*surrogate : nullptr);
        const fs::path file = seed_dir / "triggers" / (to_string(m) + ".trigger");
        write_trigger(file, t);
        artifacts.add(file);
        trigger_hashes[m] = artifacts.hash_of(file);
        triggers.emplace(m, std::move(t));
      }

      EvalReport report = evaluate(clean.model, split.test, nullptr, config.target);
      report.epochs = clean.records;
      report.config = {{"role", "clean"}, {"target", config.target}, {"victim_training", victim}};
      report.seeds = to_json(seeds);
      nlohmann::json metrics = eval_report_to_json(report);
      nlohmann::json transfer = nlohmann::json::object();
      for (const auto& [m, t] : triggers) {
        transfer[to_string(m)] = compute_asr(clean.model, split.test, t, config.target).asr;
      }
      metrics["trigger_transfer_asr"] = transfer;
      write_json(seed_dir / "clean" / "metrics.json", metrics);
      artifacts.add(seed_dir / "clean" / "metrics.json");
      baselines.push_back({{"seed", run_seed},
                           {"dir", fs::relative(seed_dir / "clean", out).generic_string()},
                           {"ba", report.ba},
                           {"status", "ok"}});
    } catch (const Error& e) {
      ok = false;
      errors.push_back({{"seed", run_seed}, {"stage", "baseline"}, {"error", e.what()}});
      baselines.push_back({{"seed", run_seed}, {"status", "failed"}, {"error", e.what()}});
      log(std::string("seed failed: ") + e.what());
      continue;
    }

    for (const auto& attack : config.attacks) {
      for (std::size_t ri = 0; ri < config.mixing_ratios.size(); ++ri) {
        const double ratio = config.mixing_ratios[ri];
        const fs::path cell_dir = seed_dir / attack.name() / ratio_dir_name(ratio);
        nlohmann::json cell = {{"seed", run_seed},
                               {"attack", attack.name()},
                               {"label", attack.label()},
                               {"ratio", ratio},
                               {"dir", fs::relative(cell_dir, out).generic_string()}};
        try {
          log("seed " + std::to_string(run_seed) + ": " + attack.name() + " r=" + format_exact(ratio));
          const Trigger& trigger = triggers.at(attack.trigger);
          auto selection = run_selection(config, attack.selection, split.train, trigger, ratio, seeds, ri);
          write_pool(cell_dir / "pool.txt", selection.pool);
          artifacts.add(cell_dir / "pool.txt");
          if (!selection.trace.empty()) {
            write_json(cell_dir / "fus_trace.json", fus_trace_to_json(selection.trace));
            artifacts.add(cell_dir / "fus_trace.json");
          }
          PoisonPlan plan;
          plan.pool = selection.pool.ids();
          plan.trigger = trigger;
          plan.target = config.target;
          plan.label_mode = config.label_mode;
          plan.mixing_ratio = static_cast<double>(plan.pool.size()) / static_cast<double>(split.train.size());
          const auto poisoned = build_poisoned_set(split.train, plan);
          const auto mixed = mix_training_set(split.train, poisoned);
          write_mixed_manifest(cell_dir / "mixed.manifest",
                               make_manifest(split.train, trigger_hashes.at(attack.trigger), plan, mixed));
          artifacts.add(cell_dir / "mixed.manifest");

          TrainConfig victim = config.victim;
          victim.seed = seeds.victim_train;
          auto trained = train_classifier(spec, mixed.data, victim);
          write_checkpoint(cell_dir / "model.ckpt", trained.model);
          artifacts.add(cell_dir / "model.ckpt");

          EvalReport report = evaluate(trained.model, split.test, &trigger, config.target);
          report.epochs = trained.records;
          report.config = {{"role", "backdoored"},
                           {"attack", attack.name()},
                           {"label", attack.label()},
                           {"trigger", to_string(attack.trigger)},
                           {"selection", to_string(attack.selection)},
                           {"label_mode", to_string(config.label_mode)},
                           {"target", config.target},
                           {"mixing_ratio", ratio},
                           {"victim_training", victim}};
          report.seeds = to_json(seeds);
          report.seeds["selection_for_ratio"] = seeds.selection_for_ratio(ri);
          nlohmann::json metrics = eval_report_to_json(report);
          metrics["poison_count"] = mixed.poison_ids.size();
          metrics["mixing_ratio_actual"] = mixing_ratio(mixed);
          metrics["pool_chosen_iteration"] = selection.pool.header.chosen_iteration;
          write_json(cell_dir / "metrics.json", metrics);
          artifacts.add(cell_dir / "metrics.json");
          cell["status"] = "ok";
          cell["asr"] = report.asr->asr;
          cell["asr_excluding_naturally_misclassified"] = report.asr->asr_excluding_natural;
          cell["ba"] = report.ba;
        } catch (const Error& e) {
          ok = false;
          cell["status"] = "failed";
          cell["error"] = e.what();
          errors.push_back({{"seed", run_seed}, {"stage", attack.name() + "/" + ratio_dir_name(ratio)},
                            {"error", e.what()}});
          log(std::string("cell failed: ") + e.what());
        }
        cells.push_back(cell);
      }
    }
  }

  manifest["baselines"] = baselines;
  manifest["cells"] = cells;
  manifest["errors"] = errors;
  manifest["artifacts"] = artifacts.json();
  manifest["status"] = ok ? "ok" : "failed";
  manifest["finished"] = utc_now();
  write_json(manifest_path, manifest);
  return PipelineResult{manifest, ok};
}

ReplayReport replay_manifest(const fs::path& manifest_path, const fs::path& out, const PipelineOptions& options) {
  nlohmann::json original;
  try {
    original = nlohmann::json::parse(read_text_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(manifest_path.string() + ": " + e.what());
  }
  if (!original.contains("poisonlab_manifest")) throw ValidationError(manifest_path.string() + ": not a manifest");
  const ExperimentConfig config = experiment_config_from_json(original.at("config"), manifest_path.parent_path());
  const auto result = run_pipeline(config, out, options);
  ReplayReport report;
  const auto& before = original.at("artifacts");
  const auto& after = result.manifest.at("artifacts");
  for (const auto& [key, hash] : before.items()) {
    ++report.compared;
    if (!after.contains(key)) {
      report.mismatches.push_back(key + ": missing in replay");
    } else if (after.at(key) != hash) {
      report.mismatches.push_back(key + ": hash differs");
    }
  }
  return report;
}

std::vector<std::string> verify_manifest(const fs::path& manifest_path) {
  const auto j = nlohmann::json::parse(read_text_file(manifest_path));
  const fs::path root = manifest_path.parent_path();
  std::vector<std::string> problems;
  for (const auto& [key, hash] : j.at("artifacts").items()) {
    const fs::path file = root / key;
    if (!fs::exists(file)) {
      problems.push_back(key + ": missing");
    } else if (sha256_file(file) != hash.get<std::string>()) {
      problems.push_back(key + ": hash differs");
    }
  }
  return problems;
}

}  // namespace poisonlab
