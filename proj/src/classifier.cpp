#include <cmath>

#include "poisonlab/binary_io.hpp"
#include "poisonlab/classifier.hpp"
#include "poisonlab/errors.hpp"
#include "poisonlab/hashing.hpp"

namespace poisonlab {

ClassIndex argmax(const Logits& logits) { return logits[1] > logits[0] ? 1 : 0; }

double cross_entropy(const Logits& logits, ClassIndex target) {
  const double z0 = logits[0], z1 = logits[1];
  const double m = std::max(z0, z1);
  const double lse = m + std::log(std::exp(z0 - m) + std::exp(z1 - m));
  return lse - (target == 0 ? z0 : z1);
}

namespace {

void check_shapes(const Classifier& model, std::span<const ImageArray> images) {
  const Shape expected = model.input_shape();
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape() != expected) {
      throw ValidationError("image " + std::to_string(i) + " has shape " + images[i].shape().str() +
                            ", model expects " + expected.str());
    }
  }
}

}  // namespace

std::vector<ClassIndex> predict_batch(const Classifier& model, std::span<const ImageArray> images) {
  check_shapes(model, images);
  const auto logits = model.logits(images);
  std::vector<ClassIndex> out;
  out.reserve(logits.size());
  for (const auto& z : logits) out.push_back(argmax(z));
  return out;
}

std::vector<ImageArray> input_gradient(const Classifier& model, std::span<const ImageArray> images,
                                       ClassIndex target, double loss_scale) {
  check_shapes(model, images);
  if (target != kReal && target != kFake) throw ValidationError("target must be 0 or 1");
  auto grads = model.loss_input_gradient(images, target, loss_scale);
  for (const auto& g : grads) {
    for (float v : g.values()) {
      if (!std::isfinite(v)) throw NumericError("input gradient contains non-finite values");
    }
  }
  return grads;
}

LinearClassifier::LinearClassifier(Shape input, std::vector<float> weights_real,
                                   std::vector<float> weights_fake, Logits bias)
    : shape_(input), w_real_(std::move(weights_real)), w_fake_(std::move(weights_fake)), bias_(bias) {
  if (w_real_.size() != shape_.size() || w_fake_.size() != shape_.size()) {
    throw ValidationError("LinearClassifier: weight length does not match input " + shape_.str());
  }
}

std::vector<Logits> LinearClassifier::logits(std::span<const ImageArray> images) const {
  std::vector<Logits> out;
  out.reserve(images.size());
  for (const auto& img : images) {
    double z0 = bias_[0], z1 = bias_[1];
    const auto v = img.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      z0 += static_cast<double>(w_real_[i]) * v[i];
      z1 += static_cast<double>(w_fake_[i]) * v[i];
    }
    out.push_back({static_cast<float>(z0), static_cast<float>(z1)});
  }
  return out;
}

std::vector<ImageArray> LinearClassifier::loss_input_gradient(std::span<const ImageArray> images,
                                                              ClassIndex target,
                                                              double loss_scale) const {
  const auto z = logits(images);
  std::vector<ImageArray> out;
  out.reserve(images.size());
  const double n = static_cast<double>(images.size());
  for (std::size_t b = 0; b < images.size(); ++b) {
    const double m = std::max(z[b][0], z[b][1]);
    const double e0 = std::exp(z[b][0] - m), e1 = std::exp(z[b][1] - m);
    const double p0 = e0 / (e0 + e1), p1 = e1 / (e0 + e1);
    const double g0 = loss_scale * (p0 - (target == 0 ? 1.0 : 0.0)) / n;
    const double g1 = loss_scale * (p1 - (target == 1 ? 1.0 : 0.0)) / n;
    ImageArray g(shape_);
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] = static_cast<float>(g0 * w_real_[i] + g1 * w_fake_[i]);
    }
    out.push_back(std::move(g));
  }
  return out;
}

std::string LinearClassifier::describe() const {
  return "{\"kind\":\"linear\",\"input\":\"" + shape_.str() + "\"}";
}

std::string LinearClassifier::fingerprint() const {
  Sha256 h;
  h.update(describe());
  auto bytes = [](const auto& v) {
    return std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(v.data()),
                                          v.size() * sizeof(float));
  };
  h.update(bytes(w_real_));
  h.update(bytes(w_fake_));
  h.update(bytes(bias_));
  return h.hex_digest();
}

void write_checkpoint(const std::filesystem::path& path, const CompactCnn& model) {
  TextHeader header;
  header.add("poisonlab-model", "1");
  header.add("spec", model.describe());
  header.add("param_count", std::to_string(model.parameters().size()));
  header.add("trained", model.is_trained() ? "1" : "0");
  header.add("fingerprint", model.fingerprint());
  auto out = open_for_write(path);
  header.write(out);
  write_f32_le(out, model.parameters());
}

CompactCnn read_checkpoint(const std::filesystem::path& path) {
  auto in = open_for_read(path);
  const std::string src = path.string();
  const TextHeader header = TextHeader::read(in, src);
  if (header.get("poisonlab-model") != "1") throw DecodeError(src + ": unsupported checkpoint version");
  CompactCnnSpec spec;
  try {
    spec = nlohmann::json::parse(header.get("spec")).get<CompactCnnSpec>();
  } catch (const nlohmann::json::exception& e) {
    throw DecodeError(src + ": bad spec line: " + e.what());
  }
  const auto count = parse_int(header.get("param_count"), src + " param_count");
  if (count < 0) throw DecodeError(src + ": negative parameter count");
  std::vector<float> params(static_cast<std::size_t>(count));
  read_f32_le(in, params, src);
  CompactCnn model(spec, std::move(params), header.get("trained") == "1");
  if (model.fingerprint() != header.get("fingerprint")) {
    throw DecodeError(src + ": fingerprint mismatch, file is corrupt");
  }
  return model;
}

}  // namespace poisonlab
