#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace poisonlab {

using ClassIndex = int;
using SampleId = std::int64_t;

inline constexpr ClassIndex kReal = 0;
inline constexpr ClassIndex kFake = 1;
inline constexpr int kNumClasses = 2;

/// Height x width x channels of an image, row-major with interleaved channels.
struct Shape {
  int height = 0;
  int width = 0;
  int channels = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width) *
           static_cast<std::size_t>(channels);
  }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Dense H x W x C float array. Used both for images (values in [0,1]) and for
/// trigger payloads, which may be signed.
class ImageArray {
 public:
  ImageArray() = default;
  explicit ImageArray(Shape shape, float fill = 0.0f);
  ImageArray(Shape shape, std::vector<float> values);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  float& at(int row, int col, int ch) { return values_[offset(row, col, ch)]; }
  float at(int row, int col, int ch) const { return values_[offset(row, col, ch)]; }

  float& operator[](std::size_t i) { return values_[i]; }
  float operator[](std::size_t i) const { return values_[i]; }

  std::span<float> values() { return values_; }
  std::span<const float> values() const { return values_; }

  bool operator==(const ImageArray&) const = default;

 private:
  std::size_t offset(int row, int col, int ch) const {
    return (static_cast<std::size_t>(row) * shape_.width + col) * shape_.channels + ch;
  }

  Shape shape_{};
  std::vector<float> values_;
};

bool in_unit_range(const ImageArray& image);
/// Throws ValidationError unless every component lies in [0,1].
void require_unit_range(const ImageArray& image, const std::string& what);
float max_abs(std::span<const float> values);
double l2_norm(std::span<const float> values);

struct LabeledSample {
  SampleId id = 0;
  ImageArray image;
  ClassIndex label = kReal;

  bool operator==(const LabeledSample&) const = default;
};

struct Dataset {
  Shape resolution{};
  std::vector<LabeledSample> samples;
  std::array<std::string, 2> class_names{"real", "fake"};
  /// Hash of whatever the samples were produced from (generator config or folder contents).
  std::string source_hash;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  std::size_t count_label(ClassIndex label) const;
  /// id -> position in `samples`.
  std::unordered_map<SampleId, std::size_t> id_index() const;
  bool operator==(const Dataset&) const = default;
};

/// Checks label range, id uniqueness, and that every image has the declared resolution.
void validate_dataset(const Dataset& dataset);

}  // namespace poisonlab
