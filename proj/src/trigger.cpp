#include "poisonlab/trigger.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "poisonlab/binary_io.hpp"
#include "poisonlab/errors.hpp"

namespace poisonlab {

std::string to_string(TriggerKind kind) {
  switch (kind) {
    case TriggerKind::additive: return "additive";
    case TriggerKind::blended: return "blended";
    case TriggerKind::patch: return "patch";
  }
  return "unknown";
}

TriggerKind parse_trigger_kind(const std::string& text) {
  if (text == "additive") return TriggerKind::additive;
  if (text == "blended") return TriggerKind::blended;
  if (text == "patch") return TriggerKind::patch;
  throw ValidationError("unknown trigger kind '" + text + "'");
}

float ball_radius(double epsilon) {
  float r = static_cast<float>(epsilon);
  if (static_cast<double>(r) > epsilon) r = std::nextafter(r, 0.0f);
  return r;
}

void Trigger::validate(std::optional<Shape> image) const {
  switch (kind) {
    case TriggerKind::additive:
      if (!(epsilon >= 0.0)) throw ValidationError("additive trigger: epsilon must be >= 0");
      if (max_abs(payload.values()) > ball_radius(epsilon)) {
        throw ValidationError("additive trigger: payload exceeds the epsilon ball");
      }
      if (image && payload.shape() != *image) {
        throw ValidationError("additive trigger shape " + payload.shape().str() +
                              " does not match image " + image->str());
      }
      break;
    case TriggerKind::blended:
      if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValidationError("blended trigger: lambda must be in [0,1]");
      require_unit_range(payload, "blended trigger payload");
      if (image && payload.shape() != *image) {
        throw ValidationError("blended trigger shape " + payload.shape().str() +
                              " does not match image " + image->str());
      }
      break;
    case TriggerKind::patch:
      require_unit_range(payload, "patch trigger payload");
      if (patch_row < 0 || patch_col < 0) throw ValidationError("patch origin must be non-negative");
      if (image) {
        const Shape p = payload.shape();
        if (p.channels != image->channels || patch_row + p.height > image->height ||
            patch_col + p.width > image->width) {
          throw ValidationError("patch " + p.str() + " at (" + std::to_string(patch_row) + "," +
                                std::to_string(patch_col) + ") does not fit image " + image->str());
        }
      }
      break;
  }
}

Trigger make_additive_trigger(ImageArray delta, double epsilon) {
  Trigger t;
  t.kind = TriggerKind::additive;
  t.payload = std::move(delta);
  t.epsilon = epsilon;
  t.validate();
  return t;
}

Trigger make_blended_trigger(ImageArray pattern, double lambda) {
  Trigger t;
  t.kind = TriggerKind::blended;
  t.payload = std::move(pattern);
  t.lambda = lambda;
  t.validate();
  return t;
}

Trigger make_patch_trigger(ImageArray patch, int row, int col) {
  Trigger t;
  t.kind = TriggerKind::patch;
  t.payload = std::move(patch);
  t.patch_row = row;
  t.patch_col = col;
  t.validate();
  return t;
}

ImageArray random_blend_pattern(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  ImageArray pattern(shape);
  for (std::size_t i = 0; i < pattern.size(); ++i) pattern[i] = static_cast<float>(rng.uniform());
  return pattern;
}

ImageArray grid_blend_pattern(Shape shape) {
  ImageArray pattern(shape);
  for (int r = 0; r < shape.height; ++r) {
    for (int c = 0; c < shape.width; ++c) {
      for (int ch = 0; ch < shape.channels; ++ch) pattern.at(r, c, ch) = (r + c) % 2 == 0 ? 0.0f : 1.0f;
    }
  }
  return pattern;
}

Trigger default_patch_trigger(Shape image, int size) {
  if (size <= 0 || size > image.height || size > image.width) {
    throw ValidationError("patch size " + std::to_string(size) + " does not fit image " + image.str());
  }
  ImageArray patch(Shape{size, size, image.channels});
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      for (int ch = 0; ch < image.channels; ++ch) patch.at(r, c, ch) = ((r + c) % 2 == 0) ? 1.0f : 0.0f;
    }
  }
  Trigger t = make_patch_trigger(std::move(patch), image.height - size, image.width - size);
  return t;
}

ImageArray apply_trigger(const ImageArray& x, const Trigger& trigger) {
  trigger.validate(x.shape());
  ImageArray out = x;
  switch (trigger.kind) {
    case TriggerKind::additive:
      for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::clamp(x[i] + trigger.payload[i], 0.0f, 1.0f);
      }
      break;
    case TriggerKind::blended: {
      const double lam = trigger.lambda;
      for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = lam * trigger.payload[i] + (1.0 - lam) * x[i];
        out[i] = std::clamp(static_cast<float>(v), 0.0f, 1.0f);
      }
      break;
    }
    case TriggerKind::patch: {
      const Shape p = trigger.payload.shape();
      for (int r = 0; r < p.height; ++r) {
        for (int c = 0; c < p.width; ++c) {
          for (int ch = 0; ch < p.channels; ++ch) {
            out.at(trigger.patch_row + r, trigger.patch_col + c, ch) = trigger.payload.at(r, c, ch);
          }
        }
      }
      break;
    }
  }
  return out;
}

std::vector<float> project_linf(std::span<const float> delta, double epsilon) {
  if (!(epsilon >= 0.0)) throw ValidationError("project_linf: epsilon must be >= 0");
  const float r = ball_radius(epsilon);
  std::vector<float> out(delta.begin(), delta.end());
  for (float& v : out) v = std::clamp(v, -r, r);
  return out;
}

ImageArray project_linf(const ImageArray& delta, double epsilon) {
  return ImageArray(delta.shape(), project_linf(delta.values(), epsilon));
}

ImageArray pgd_step(const ImageArray& delta, const ImageArray& gradient, double step_size,
                    double epsilon) {
  if (delta.shape() != gradient.shape()) {
    throw ValidationError("pgd_step: delta " + delta.shape().str() + " and gradient " +
                          gradient.shape().str() + " differ in shape");
  }
  if (!(epsilon >= 0.0)) throw ValidationError("pgd_step: epsilon must be >= 0");
  const float r = ball_radius(epsilon);
  const auto step = static_cast<float>(step_size);
  ImageArray out(delta.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const float g = gradient[i];
    const float sign = g > 0.0f ? 1.0f : (g < 0.0f ? -1.0f : 0.0f);
    out[i] = std::clamp(delta[i] - step * sign, -r, r);
  }
  return out;
}

void AugmentConfig::validate() const {
  if (crop_padding < 0) throw ValidationError("crop_padding must be >= 0");
  if (!(flip_probability >= 0.0 && flip_probability <= 1.0)) {
    throw ValidationError("flip_probability must be in [0,1]");
  }
}

void to_json(nlohmann::json& j, const AugmentConfig& c) {
  j = {{"crop_padding", c.crop_padding}, {"flip_probability", c.flip_probability}};
}

void from_json(const nlohmann::json& j, AugmentConfig& c) {
  AugmentConfig d;
  c.crop_padding = j.value("crop_padding", d.crop_padding);
  c.flip_probability = j.value("flip_probability", d.flip_probability);
}

AugmentDraw draw_augment(const AugmentConfig& config, Rng& rng) {
  config.validate();
  AugmentDraw draw;
  if (config.crop_padding > 0) {
    const auto span = static_cast<std::uint64_t>(2 * config.crop_padding + 1);
    draw.offset_row = static_cast<int>(rng.below(span));
    draw.offset_col = static_cast<int>(rng.below(span));
  } else {
    draw.offset_row = draw.offset_col = 0;
  }
  if (config.flip_probability > 0.0) draw.flip = rng.bernoulli(config.flip_probability);
  return draw;
}

namespace {

int reflect(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

// Source (row, col) of output pixel (r, c).
std::pair<int, int> augment_source(int r, int c, const AugmentDraw& draw, int padding, const Shape& s) {
  const int cc = draw.flip ? s.width - 1 - c : c;
  return {reflect(r + draw.offset_row - padding, s.height), reflect(cc + draw.offset_col - padding, s.width)};
}

void check_draw(const AugmentDraw& draw, int padding) {
  if (padding < 0 || draw.offset_row < 0 || draw.offset_row > 2 * padding || draw.offset_col < 0 ||
      draw.offset_col > 2 * padding) {
    throw ValidationError("augment draw is inconsistent with the padding");
  }
}

}  // namespace

ImageArray apply_augment(const ImageArray& x, const AugmentDraw& draw, int padding) {
  check_draw(draw, padding);
  if (padding == 0 && !draw.flip) return x;
  const Shape s = x.shape();
  ImageArray out(s);
  for (int r = 0; r < s.height; ++r) {
    for (int c = 0; c < s.width; ++c) {
      const auto [sr, sc] = augment_source(r, c, draw, padding, s);
      for (int ch = 0; ch < s.channels; ++ch) out.at(r, c, ch) = x.at(sr, sc, ch);
    }
  }
  return out;
}

ImageArray augment_adjoint(const ImageArray& grad, const AugmentDraw& draw, int padding) {
  check_draw(draw, padding);
  if (padding == 0 && !draw.flip) return grad;
  const Shape s = grad.shape();
  ImageArray out(s, 0.0f);
  for (int r = 0; r < s.height; ++r) {
    for (int c = 0; c < s.width; ++c) {
      const auto [sr, sc] = augment_source(r, c, draw, padding, s);
      for (int ch = 0; ch < s.channels; ++ch) out.at(sr, sc, ch) += grad.at(r, c, ch);
    }
  }
  return out;
}

ImageArray augment_sample(const ImageArray& x, const AugmentConfig& config, Rng& rng) {
  const AugmentDraw draw = draw_augment(config, rng);
  return apply_augment(x, draw, config.crop_padding);
}

void PgdConfig::validate() const {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw ValidationError("pgd: epsilon must be > 0");
  if (steps < 0) throw ValidationError("pgd: steps must be >= 0");
  const double step = effective_step_size();
  if (!(step > 0.0)) throw ValidationError("pgd: step_size must be > 0");
  if (step > epsilon) throw ValidationError("pgd: step_size must not exceed epsilon");
  if (batch_size < 1) throw ValidationError("pgd: batch_size must be >= 1");
  if (target_label != kReal && target_label != kFake) throw ValidationError("pgd: target must be 0 or 1");
  augment.validate();
}

void to_json(nlohmann::json& j, const PgdConfig& c) {
  j = {{"epsilon", c.epsilon},
       {"steps", c.steps},
       {"step_size", c.effective_step_size()},
       {"batch_size", c.batch_size},
       {"augment", c.augment},
       {"target_label", c.target_label},
       {"source_scope", c.source_scope == SourceScope::all ? "all" : "non_target"},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, PgdConfig& c) {
  PgdConfig d;
  c.epsilon = j.value("epsilon", d.epsilon);
  c.steps = j.value("steps", d.steps);
  if (j.contains("step_size") && !j.at("step_size").is_null()) {
    c.step_size = j.at("step_size").get<double>();
  } else {
    c.step_size.reset();
  }
  c.batch_size = j.value("batch_size", d.batch_size);
  c.augment = j.contains("augment") ? j.at("augment").get<AugmentConfig>() : d.augment;
  c.target_label = j.value("target_label", d.target_label);
  const std::string scope = j.value("source_scope", std::string("non_target"));
  if (scope != "all" && scope != "non_target") throw ValidationError("source_scope must be all or non_target");
  c.source_scope = scope == "all" ? SourceScope::all : SourceScope::non_target;
  c.seed = j.value("seed", d.seed);
}

Trigger optimize_trigger(const Classifier& model, const Dataset& dataset, const PgdConfig& config,
                         const PgdObserver& observer) {
  config.validate();
  if (!model.is_trained()) throw ValidationError("optimize_trigger: surrogate model is not trained");
  if (model.input_shape() != dataset.resolution) {
    throw ValidationError("optimize_trigger: model input " + model.input_shape().str() +
                          " does not match dataset resolution " + dataset.resolution.str());
  }
  std::vector<std::size_t> scope;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (config.source_scope == SourceScope::all || dataset.samples[i].label != config.target_label) {
      scope.push_back(i);
    }
  }
  if (scope.empty()) throw ValidationError("optimize_trigger: no samples in the source scope");

  const Shape shape = dataset.resolution;
  const double step_size = config.effective_step_size();
  const int padding = config.augment.crop_padding;
  ImageArray delta(shape, 0.0f);
  Rng rng(config.seed);
  std::vector<ImageArray> batch;
  std::vector<AugmentDraw> draws;
  for (int step = 0; step < config.steps; ++step) {
    rng.shuffle(std::span<std::size_t>(scope));
    int batch_index = 0;
    for (std::size_t start = 0; start < scope.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(scope.size(), start + static_cast<std::size_t>(config.batch_size));
      batch.clear();
      draws.clear();
      for (std::size_t k = start; k < end; ++k) {
        const ImageArray& x = dataset.samples[scope[k]].image;
        ImageArray shifted(shape);
        for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] = x[i] + delta[i];
        draws.push_back(draw_augment(config.augment, rng));
        batch.push_back(apply_augment(shifted, draws.back(), padding));
      }
      const auto grads = input_gradient(model, batch, config.target_label);
      ImageArray total(shape, 0.0f);
      for (std::size_t b = 0; b < grads.size(); ++b) {
        const ImageArray back = augment_adjoint(grads[b], draws[b], padding);
        for (std::size_t i = 0; i < total.size(); ++i) total[i] += back[i];
      }
      delta = pgd_step(delta, total, step_size, config.epsilon);
      if (observer) observer(step, batch_index, delta);
      ++batch_index;
    }
  }
  Trigger trigger = make_additive_trigger(std::move(delta), config.epsilon);
  trigger.provenance = TriggerProvenance{config.seed, model.fingerprint(), config.steps};
  return trigger;
}

void write_trigger(const std::filesystem::path& path, const Trigger& trigger) {
  trigger.validate();
  const Shape s = trigger.payload.shape();
  TextHeader header;
  header.add("kind", to_string(trigger.kind));
  header.add("shape", std::to_string(s.height) + " " + std::to_string(s.width) + " " +
                          std::to_string(s.channels));
  switch (trigger.kind) {
    case TriggerKind::additive: header.add("epsilon", format_exact(trigger.epsilon)); break;
    case TriggerKind::blended: header.add("lambda", format_exact(trigger.lambda)); break;
    case TriggerKind::patch:
      header.add("origin", std::to_string(trigger.patch_row) + " " + std::to_string(trigger.patch_col));
      break;
  }
  header.add("seed", std::to_string(trigger.provenance.seed));
  header.add("surrogate_fingerprint",
             trigger.provenance.surrogate_fingerprint.empty() ? "-" : trigger.provenance.surrogate_fingerprint);
  header.add("steps", std::to_string(trigger.provenance.steps));
  auto out = open_for_write(path);
  header.write(out);
  write_f32_le(out, trigger.payload.values());
}

Trigger read_trigger(const std::filesystem::path& path) {
  auto in = open_for_read(path);
  const std::string src = path.string();
  const TextHeader header = TextHeader::read(in, src);
  Trigger t;
  t.kind = parse_trigger_kind(header.get("kind"));
  Shape s;
  {
    std::istringstream ss(header.get("shape"));
    ss >> s.height >> s.width >> s.channels;
    if (!ss || s.height <= 0 || s.width <= 0 || s.channels <= 0) throw DecodeError(src + ": bad shape line");
  }
  switch (t.kind) {
    case TriggerKind::additive: t.epsilon = parse_double(header.get("epsilon"), src + " epsilon"); break;
    case TriggerKind::blended: t.lambda = parse_double(header.get("lambda"), src + " lambda"); break;
    case TriggerKind::patch: {
      std::istringstream ss(header.get("origin"));
      ss >> t.patch_row >> t.patch_col;
      if (!ss) throw DecodeError(src + ": bad origin line");
      break;
    }
  }
  t.provenance.seed = static_cast<std::uint64_t>(std::stoull(header.get("seed")));
  t.provenance.surrogate_fingerprint = header.get("surrogate_fingerprint");
  t.provenance.steps = static_cast<int>(parse_int(header.get("steps"), src + " steps"));
  t.payload = ImageArray(s);
  read_f32_le(in, t.payload.values(), src);
  t.validate();
  return t;
}

}  // namespace poisonlab
