#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "poisonlab/classifier.hpp"
#include "poisonlab/data.hpp"
#include "poisonlab/poisoning.hpp"
#include "poisonlab/selection.hpp"
#include "poisonlab/training.hpp"
#include "poisonlab/trigger.hpp"

namespace poisonlab {

/// Either a synthetic generator config, an image folder, or a dataset cache file.
struct DatasetSource {
  std::optional<SyntheticConfig> synthetic;
  std::filesystem::path folder;
  std::filesystem::path cache;
  Shape resolution{32, 32, 3};  // for folders
};

enum class TriggerMethod { optimized, blended, patch };
enum class SelectionMethod { random, fus };

std::string to_string(TriggerMethod m);
std::string to_string(SelectionMethod m);
TriggerMethod parse_trigger_method(const std::string& text);
SelectionMethod parse_selection_method(const std::string& text);

struct AttackSpec {
  TriggerMethod trigger = TriggerMethod::blended;
  SelectionMethod selection = SelectionMethod::random;
  /// Directory / report name, e.g. "blended_random".
  std::string name() const;
  /// Human label used in plots ("Blended", "Blended+FUS", "Bad-Deepfake", ...).
  std::string label() const;
  bool operator==(const AttackSpec&) const = default;
};

struct TriggerSettings {
  PgdConfig pgd{};
  double blend_lambda = 0.01;
  /// "grid" (pixel checkerboard) or "noise" (uniform random, seeded per run).
  std::string blend_pattern = "grid";
  int patch_size = 4;
};

struct FusSettings {
  int iterations = 10;
  double filtration_ratio = 0.3;
  Retention retention = Retention::best;
  /// Stratified share of D held out to score pools; those ids are never poisoned.
  double validation_fraction = 0.1;
  bool evaluate_final_pool = true;
};

struct ExperimentConfig {
  DatasetSource dataset;
  double test_fraction = 0.2;
  std::uint64_t split_seed = 1;
  CompactCnnSpec model{};
  TrainConfig victim{};
  /// Defaults to `victim`.
  std::optional<TrainConfig> surrogate;
  TriggerSettings trigger{};
  FusSettings fus{};
  LabelMode label_mode = LabelMode::dirty;
  ClassIndex target = kReal;
  std::vector<double> mixing_ratios{0.005, 0.01, 0.015, 0.02};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::vector<AttackSpec> attacks{{TriggerMethod::blended, SelectionMethod::random},
                                  {TriggerMethod::blended, SelectionMethod::fus},
                                  {TriggerMethod::optimized, SelectionMethod::fus}};
  std::filesystem::path output{"runs/default"};
  bool deterministic = true;

  void validate() const;
  const TrainConfig& surrogate_config() const { return surrogate ? *surrogate : victim; }
};

/// Parses a config document. A top-level "preset" of "clean_label" switches to
/// clean-label mode and multiplies the default ratios by ten. Relative paths
/// are resolved against `base_dir`.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
nlohmann::json experiment_config_to_json(const ExperimentConfig& c);
/// Reads a config file. A pipeline manifest is accepted too; its config echo is used.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

Dataset load_dataset(const DatasetSource& source);

/// Per-run derived seeds. Every stage draws from its own stream.
struct RunSeeds {
  std::uint64_t run = 0;
  std::uint64_t victim_train = 0;
  std::uint64_t surrogate_train = 0;
  std::uint64_t pgd = 0;
  std::uint64_t blend_pattern = 0;
  std::uint64_t selection = 0;
  std::uint64_t fus_validation = 0;
  std::uint64_t fus_train = 0;

  static RunSeeds derive(std::uint64_t run_seed);
  std::uint64_t selection_for_ratio(std::size_t ratio_index) const;
};

nlohmann::json to_json(const RunSeeds& s);

/// Builds a blended or patch trigger, or optimizes one against `surrogate`.
Trigger build_trigger(TriggerMethod method, const TriggerSettings& settings, const Dataset& train,
                      const RunSeeds& seeds, const Classifier* surrogate);

struct SelectionOutcome {
  SamplePool pool;
  std::vector<FusIteration> trace;  // empty for random selection
};

/// Random or FUS selection over `train` as configured. FUS holds out a
/// validation split and trains surrogates with the surrogate config.
SelectionOutcome run_selection(const ExperimentConfig& config, SelectionMethod method, const Dataset& train,
                               const Trigger& trigger, double ratio, const RunSeeds& seeds, std::size_t ratio_index);

struct PipelineOptions {
  bool force = false;
  std::function<void(const std::string&)> log;
};

struct PipelineResult {
  nlohmann::json manifest;
  bool ok = true;
};

/// Runs every (seed, attack, ratio) cell plus a clean baseline per seed and
/// writes artifacts under `out`. Refuses a directory that already holds a
/// manifest unless options.force is set.
PipelineResult run_pipeline(const ExperimentConfig& config, const std::filesystem::path& out,
                            const PipelineOptions& options = {});

struct ReplayReport {
  int compared = 0;
  std::vector<std::string> mismatches;
  bool ok() const { return mismatches.empty() && compared > 0; }
};

/// Re-runs the manifest's config into `out` and compares every metrics file
/// and the hashes of every recorded artifact.
ReplayReport replay_manifest(const std::filesystem::path& manifest_path, const std::filesystem::path& out,
                             const PipelineOptions& options = {});

/// Checks that every artifact hash in a manifest matches the file on disk.
std::vector<std::string> verify_manifest(const std::filesystem::path& manifest_path);

std::string ratio_dir_name(double ratio);
std::string tool_version();

}  // namespace poisonlab
