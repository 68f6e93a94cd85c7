#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "poisonlab/image.hpp"
#include "poisonlab/trigger.hpp"

namespace poisonlab {

/// dirty: poisons come from the non-target class and are relabelled.
/// clean: poisons come from the target class; labels never change.
enum class LabelMode { dirty, clean };

std::string to_string(LabelMode mode);
LabelMode parse_label_mode(const std::string& text);

/// round(r * dataset_size); throws ValidationError when that is zero.
std::size_t pool_size_for(double mixing_ratio, std::size_t dataset_size);

struct PoisonPlan {
  std::vector<SampleId> pool;
  Trigger trigger;
  ClassIndex target = kReal;
  LabelMode label_mode = LabelMode::dirty;
  double mixing_ratio = 0.0;
};

struct MixedTrainingSet {
  Dataset data;
  /// Replaced ids, in pool order.
  std::vector<SampleId> poison_ids;
};

/// (apply_trigger(x), target) for every pool id, original ids kept, in pool order.
std::vector<LabeledSample> build_poisoned_set(const Dataset& dataset, const PoisonPlan& plan);

/// Replaces samples with matching ids in place; everything else is copied unchanged.
MixedTrainingSet mix_training_set(const Dataset& dataset, std::span<const LabeledSample> poisoned);

double mixing_ratio(const MixedTrainingSet& mixed);

/// Everything needed to rebuild D' from D and the trigger file.
struct MixedManifest {
  std::string dataset_hash;
  std::string trigger_hash;
  LabelMode label_mode = LabelMode::dirty;
  ClassIndex target = kReal;
  double mixing_ratio = 0.0;
  std::size_t dataset_size = 0;
  std::vector<SampleId> poison_ids;
  bool operator==(const MixedManifest&) const = default;
};

/// Content hash of a dataset's ids, labels and pixels.
std::string dataset_content_hash(const Dataset& dataset);

MixedManifest make_manifest(const Dataset& dataset, const std::string& trigger_hash, const PoisonPlan& plan,
                            const MixedTrainingSet& mixed);
void write_mixed_manifest(const std::filesystem::path& path, const MixedManifest& manifest);
MixedManifest read_mixed_manifest(const std::filesystem::path& path);

/// Rebuilds D'. Verifies the dataset hash and the trigger hash (when `trigger_hash` is non-empty).
MixedTrainingSet replay_mixed_manifest(const Dataset& dataset, const Trigger& trigger,
                                       const MixedManifest& manifest, const std::string& trigger_hash = {});

}  // namespace poisonlab
