#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "poisonlab/classifier.hpp"
#include "poisonlab/image.hpp"
#include "poisonlab/trigger.hpp"

namespace poisonlab {

/// SGD with momentum, weight decay added to the gradient, and a step learning-rate
/// schedule. Defaults are the desk-scale preset.
struct TrainConfig {
  int epochs = 20;
  int batch_size = 64;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<int> milestones{10, 16};
  double lr_factor = 0.1;
  AugmentConfig augment{};
  std::uint64_t seed = 0;
  bool deterministic = true;

  void validate() const;
  /// Learning rate used during 1-based epoch `epoch`.
  double learning_rate_at(int epoch) const;
  bool operator==(const TrainConfig&) const = default;

  static TrainConfig desk_scale();
  /// 50 epochs, milestones {25, 40}.
  static TrainConfig full_scale();
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct EpochRecord {
  int epoch = 0;  // 1-based
  double learning_rate = 0.0;
  double loss = 0.0;
  double accuracy = 0.0;  // training accuracy on augmented batches
  bool operator==(const EpochRecord&) const = default;
};

void to_json(nlohmann::json& j, const EpochRecord& r);
void from_json(const nlohmann::json& j, EpochRecord& r);

/// Called after each epoch with the 1-based epoch number and the current model.
using EpochHook = std::function<void(int, const CompactCnn&)>;

struct TrainResult {
  CompactCnn model;
  std::vector<EpochRecord> records;
};

/// Trains a fresh network from scratch. Initialisation is seeded from
/// derive_seed(config.seed, spec.init_seed); batch order and augmentation from
/// config.seed. Throws TrainingError naming the epoch if the loss diverges.
TrainResult train_classifier(const CompactCnnSpec& spec, const Dataset& data, const TrainConfig& config,
                             const EpochHook& hook = {});

/// hits / total, kept as integers so aggregate numbers are exact.
struct Rate {
  std::int64_t hits = 0;
  std::int64_t total = 0;
  /// nullopt for 0/0.
  std::optional<double> value() const;
  bool operator==(const Rate&) const = default;
};

void to_json(nlohmann::json& j, const Rate& r);
void from_json(const nlohmann::json& j, Rate& r);

struct AsrResult {
  Rate asr;
  /// Excludes non-target samples the model already assigns to the target without the trigger.
  Rate asr_excluding_natural;
  /// Per non-target test sample, in test order.
  std::vector<SampleId> ids;
  std::vector<ClassIndex> clean_predictions;
  std::vector<ClassIndex> triggered_predictions;
};

AsrResult compute_asr(const Classifier& model, const Dataset& test, const Trigger& trigger, ClassIndex target);
/// Recomputes both rates from stored per-sample predictions.
AsrResult asr_from_predictions(std::vector<SampleId> ids, std::vector<ClassIndex> clean,
                               std::vector<ClassIndex> triggered, ClassIndex target);

Rate compute_ba(const Classifier& model, const Dataset& test);

/// One bit per sample: 1 iff the model predicts `target` on that (already poisoned) image.
std::vector<std::uint8_t> record_target_correctness(const Classifier& model,
                                                    std::span<const LabeledSample> samples, ClassIndex target);

/// Persisted evaluation of one trained model.
struct EvalReport {
  Rate ba;
  std::optional<AsrResult> asr;  // absent for clean baselines evaluated without a trigger
  std::vector<SampleId> test_ids;
  std::vector<ClassIndex> test_labels;
  std::vector<ClassIndex> test_predictions;
  std::vector<EpochRecord> epochs;
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json seeds = nlohmann::json::object();
  std::string model_fingerprint;
};

EvalReport evaluate(const Classifier& model, const Dataset& test, const Trigger* trigger, ClassIndex target);

nlohmann::json eval_report_to_json(const EvalReport& report);
/// Parses a metrics document; rates are recomputed from the per-sample
/// predictions and must agree with the stored counts.
EvalReport eval_report_from_json(const nlohmann::json& j);

}  // namespace poisonlab
