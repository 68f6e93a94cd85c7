#include "poisonlab/image.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "poisonlab/errors.hpp"

namespace poisonlab {

std::string Shape::str() const {
  return std::to_string(height) + "x" + std::to_string(width) + "x" + std::to_string(channels);
}

ImageArray::ImageArray(Shape shape, float fill) : shape_(shape), values_(shape.size(), fill) {}

ImageArray::ImageArray(Shape shape, std::vector<float> values)
    : shape_(shape), values_(std::move(values)) {
  if (values_.size() != shape_.size()) {
    throw ValidationError("ImageArray: " + std::to_string(values_.size()) +
                          " values do not match shape " + shape_.str());
  }
}

bool in_unit_range(const ImageArray& image) {
  return std::all_of(image.values().begin(), image.values().end(),
                     [](float v) { return v >= 0.0f && v <= 1.0f; });
}

void require_unit_range(const ImageArray& image, const std::string& what) {
  if (!in_unit_range(image)) throw ValidationError(what + ": pixel values outside [0,1]");
}

float max_abs(std::span<const float> values) {
  float m = 0.0f;
  for (float v : values) m = std::max(m, std::fabs(v));
  return m;
}

double l2_norm(std::span<const float> values) {
  double s = 0.0;
  for (float v : values) s += static_cast<double>(v) * v;
  return std::sqrt(s);
}

std::size_t Dataset::count_label(ClassIndex label) const {
  return static_cast<std::size_t>(std::count_if(
      samples.begin(), samples.end(), [label](const LabeledSample& s) { return s.label == label; }));
}

std::unordered_map<SampleId, std::size_t> Dataset::id_index() const {
  std::unordered_map<SampleId, std::size_t> index;
  index.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) index.emplace(samples[i].id, i);
  return index;
}

void validate_dataset(const Dataset& dataset) {
  const Shape& r = dataset.resolution;
  if (r.height <= 0 || r.width <= 0 || (r.channels != 1 && r.channels != 3)) {
    throw ValidationError("dataset resolution " + r.str() + " is invalid (C must be 1 or 3)");
  }
  std::unordered_set<SampleId> seen;
  for (const auto& s : dataset.samples) {
    if (!seen.insert(s.id).second) {
      throw ValidationError("duplicate sample id " + std::to_string(s.id));
    }
    if (s.label != kReal && s.label != kFake) {
      throw ValidationError("sample " + std::to_string(s.id) + " has label outside {0,1}");
    }
    if (s.image.shape() != r) {
      throw ValidationError("sample " + std::to_string(s.id) + " has shape " +
                            s.image.shape().str() + ", expected " + r.str());
    }
  }
}

}  // namespace poisonlab
