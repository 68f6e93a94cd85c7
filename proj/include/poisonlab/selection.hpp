#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "poisonlab/classifier.hpp"
#include "poisonlab/poisoning.hpp"
#include "poisonlab/training.hpp"

namespace poisonlab {

struct PoolMember {
  SampleId id = 0;
  ClassIndex original_label = kReal;
  /// Forgetting score from the last infected training that used this member, -1 if never scored.
  int score = -1;
  /// 0 for the initial random draw, i for ids added by FUS iteration i.
  int iteration_selected = 0;
  bool operator==(const PoolMember&) const = default;
};

enum class Retention { best, last };

struct PoolHeader {
  std::string method = "random";  // random | fus
  double mixing_ratio = 0.0;
  double filtration_ratio = 0.0;
  int iterations = 0;
  std::uint64_t seed = 0;
  std::string retention = "-";
  int chosen_iteration = 0;
  LabelMode label_mode = LabelMode::dirty;
  ClassIndex target = kReal;
  bool operator==(const PoolHeader&) const = default;
};

struct SamplePool {
  PoolHeader header;
  std::vector<PoolMember> members;

  std::vector<SampleId> ids() const;
  std::size_t size() const { return members.size(); }
  bool operator==(const SamplePool&) const = default;
};

/// Ids eligible for poisoning, ascending. dirty: label != target; clean: label == target.
std::vector<SampleId> eligible_indices(const Dataset& dataset, LabelMode mode, ClassIndex target);

/// Uniform draw without replacement of round(r * |dataset|) eligible ids.
/// `pool_size` overrides the rounded count when set.
SamplePool select_random(const Dataset& dataset, double r, LabelMode mode, ClassIndex target, std::uint64_t seed,
                         std::optional<std::size_t> pool_size = std::nullopt);

/// Number of 1 -> 0 transitions between consecutive epochs.
int forgetting_score(std::span<const std::uint8_t> row);

/// Target-class correctness of each poisoned sample, one bit per recorded epoch.
class CorrectnessLedger {
 public:
  explicit CorrectnessLedger(std::vector<SampleId> ids = {});

  /// Appends one epoch; `bits[i]` belongs to ids()[i].
  void record_epoch(std::span<const std::uint8_t> bits);
  const std::vector<SampleId>& ids() const { return ids_; }
  std::size_t epochs() const { return epochs_; }
  /// Bit sequence of sample `i` across epochs.
  std::vector<std::uint8_t> row(std::size_t i) const;
  std::vector<int> scores() const;

 private:
  std::vector<SampleId> ids_;
  std::vector<std::vector<std::uint8_t>> rows_;
  std::size_t epochs_ = 0;
};

struct FusConfig {
  int iterations = 10;
  double filtration_ratio = 0.3;
  double mixing_ratio = 0.01;
  LabelMode label_mode = LabelMode::dirty;
  Retention retention = Retention::best;
  std::uint64_t seed = 0;
  /// Train and score the pool produced by the last update as well (best retention only).
  bool evaluate_final_pool = true;
  /// Overrides round(mixing_ratio * |dataset|).
  std::optional<std::size_t> pool_size;

  void validate() const;
  std::size_t filtration_count(std::size_t pool) const;
};

void to_json(nlohmann::json& j, const FusConfig& c);
void from_json(const nlohmann::json& j, FusConfig& c);

struct InfectedTraining {
  std::shared_ptr<const Classifier> model;
  CorrectnessLedger ledger;
};

/// Trains an infected model from scratch on `mixed`, recording target correctness of `poisoned`.
using FusTrainFn = std::function<InfectedTraining(const MixedTrainingSet& mixed,
                                                  std::span<const LabeledSample> poisoned, int iteration)>;

struct FusIteration {
  int iteration = 0;  // 1-based; N+1 is the optional final-pool evaluation
  std::vector<SampleId> pool;
  std::optional<Rate> validation_asr;
  std::vector<int> scores;  // aligned with pool
  std::vector<SampleId> removed;
  std::vector<SampleId> added;
};

struct FusResult {
  SamplePool pool;
  std::vector<FusIteration> trace;
};

FusResult fus_select(const Dataset& dataset, const Trigger& trigger, const FusConfig& config, ClassIndex target,
                     const FusTrainFn& train_fn, const Dataset& validation);

/// Training callback used by the pipeline: trains a CompactCnn with `config`
/// (seed varied per iteration) and records correctness after every epoch.
FusTrainFn make_cnn_train_fn(CompactCnnSpec spec, TrainConfig config);

/// One header line, then `id original_label score iteration_selected` per member.
void write_pool(const std::filesystem::path& path, const SamplePool& pool);
SamplePool read_pool(const std::filesystem::path& path);

nlohmann::json fus_trace_to_json(const std::vector<FusIteration>& trace);

}  // namespace poisonlab
