#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "poisonlab/classifier.hpp"
#include "poisonlab/image.hpp"
#include "poisonlab/rng.hpp"

namespace poisonlab {

enum class TriggerKind { additive, blended, patch };

std::string to_string(TriggerKind kind);
TriggerKind parse_trigger_kind(const std::string& text);

struct TriggerProvenance {
  std::uint64_t seed = 0;
  std::string surrogate_fingerprint = "-";
  int steps = 0;
  bool operator==(const TriggerProvenance&) const = default;
};

/// Payload semantics by kind:
///  additive: signed perturbation delta with max |delta| <= epsilon;
///  blended:  pattern t in [0,1], mixed as lambda * t + (1 - lambda) * x;
///  patch:    pixels pasted at (patch_row, patch_col).
struct Trigger {
  TriggerKind kind = TriggerKind::additive;
  ImageArray payload;
  double epsilon = 0.0;
  double lambda = 0.0;
  int patch_row = 0;
  int patch_col = 0;
  TriggerProvenance provenance;

  /// Checks the kind-specific invariant; with `image` set, also shape fit.
  void validate(std::optional<Shape> image = std::nullopt) const;
  bool operator==(const Trigger&) const = default;
};

Trigger make_additive_trigger(ImageArray delta, double epsilon);
Trigger make_blended_trigger(ImageArray pattern, double lambda);
Trigger make_patch_trigger(ImageArray patch, int row, int col);

/// Uniform random [0,1] pattern for blending, reproducible from `seed`.
ImageArray random_blend_pattern(Shape shape, std::uint64_t seed);
/// Pixel-level 0/1 checkerboard for blending.
ImageArray grid_blend_pattern(Shape shape);
/// Black/white checkered square of side `size` in the bottom-right corner.
Trigger default_patch_trigger(Shape image, int size);

/// F(x, t). Output always lies in [0,1]; additive results are clipped here.
ImageArray apply_trigger(const ImageArray& x, const Trigger& trigger);

/// Largest float not exceeding `epsilon`, so clamping to it never leaves the ball.
float ball_radius(double epsilon);

/// Componentwise clamp to [-epsilon, epsilon].
std::vector<float> project_linf(std::span<const float> delta, double epsilon);
ImageArray project_linf(const ImageArray& delta, double epsilon);

/// project_linf(delta - step_size * sign(gradient), epsilon) with sign(0) = 0.
ImageArray pgd_step(const ImageArray& delta, const ImageArray& gradient, double step_size,
                    double epsilon);

struct AugmentConfig {
  int crop_padding = 4;
  double flip_probability = 0.5;

  void validate() const;
  bool operator==(const AugmentConfig&) const = default;
};

void to_json(nlohmann::json& j, const AugmentConfig& c);
void from_json(const nlohmann::json& j, AugmentConfig& c);

/// One concrete draw of the crop/flip transform.
struct AugmentDraw {
  int offset_row = 0;  // in [0, 2 * padding]
  int offset_col = 0;
  bool flip = false;
};

AugmentDraw draw_augment(const AugmentConfig& config, Rng& rng);
/// Reflect-pad by `padding`, crop at the draw's offset, optionally mirror.
ImageArray apply_augment(const ImageArray& x, const AugmentDraw& draw, int padding);
/// Transpose of apply_augment: routes output-space gradients back to input pixels.
ImageArray augment_adjoint(const ImageArray& grad, const AugmentDraw& draw, int padding);
/// draw_augment followed by apply_augment.
ImageArray augment_sample(const ImageArray& x, const AugmentConfig& config, Rng& rng);

enum class SourceScope { all, non_target };

struct PgdConfig {
  double epsilon = 2.0 / 255.0;
  int steps = 50;
  /// Defaults to epsilon / 10 when unset.
  std::optional<double> step_size;
  int batch_size = 64;
  AugmentConfig augment{};
  ClassIndex target_label = kReal;
  SourceScope source_scope = SourceScope::non_target;
  std::uint64_t seed = 0;

  double effective_step_size() const { return step_size.value_or(epsilon / 10.0); }
  void validate() const;
};

void to_json(nlohmann::json& j, const PgdConfig& c);
void from_json(const nlohmann::json& j, PgdConfig& c);

/// Called after every PGD update with (step, batch index, current delta).
using PgdObserver = std::function<void(int, int, const ImageArray&)>;

/// Universal additive trigger: minimises the target-class loss of `model` over
/// augmented, trigger-applied batches with signed-gradient steps projected
/// onto the L-infinity ball. Deterministic for a fixed config.seed.
Trigger optimize_trigger(const Classifier& model, const Dataset& dataset, const PgdConfig& config,
                         const PgdObserver& observer = {});

/// Text header (kind, shape, epsilon/lambda, seed, surrogate_fingerprint,
/// steps; patch adds origin), blank line, little-endian f32 payload.
void write_trigger(const std::filesystem::path& path, const Trigger& trigger);
Trigger read_trigger(const std::filesystem::path& path);

}  // namespace poisonlab
