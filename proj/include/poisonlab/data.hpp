#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>

#include <json.hpp>

#include "poisonlab/image.hpp"

namespace poisonlab {

/// Parameters of the synthetic real-vs-fake generator. Real images are smooth
/// low-frequency fields; fake images add a periodic checkerboard artifact.
/// Both classes receive the same Gaussian pixel noise.
struct SyntheticConfig {
  int count_per_class = 1000;
  Shape resolution{32, 32, 3};
  double artifact_amplitude = 0.15;
  int artifact_period = 4;
  double noise_std = 0.02;
  std::uint64_t seed = 7;

  void validate() const;
};

void to_json(nlohmann::json& j, const SyntheticConfig& c);
void from_json(const nlohmann::json& j, SyntheticConfig& c);
void to_json(nlohmann::json& j, const Shape& s);
void from_json(const nlohmann::json& j, Shape& s);

/// 2*count_per_class samples: ids [0, n) are Real, [n, 2n) are Fake.
Dataset generate_synthetic(const SyntheticConfig& config);

/// Loads `<root>/real/*` (label 0) and `<root>/fake/*` (label 1). Files are
/// decoded, resized bilinearly to `resolution`, and numbered in lexicographic
/// order, real before fake.
Dataset load_image_folder(const std::filesystem::path& root, Shape resolution);

struct DatasetSplit {
  Dataset train;
  Dataset test;
};

/// Stratified split; each class contributes round(test_fraction * n_class)
/// samples to the test side. Original order is kept within each side.
DatasetSplit split_dataset(const Dataset& dataset, double test_fraction, std::uint64_t seed);

/// Dataset cache: text header, f32 pixels, i32 labels, i32 ids, all little-endian.
void write_dataset_cache(const std::filesystem::path& path, const Dataset& dataset);
Dataset read_dataset_cache(const std::filesystem::path& path);

}  // namespace poisonlab
