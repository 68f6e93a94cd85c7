#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "poisonlab/image.hpp"

namespace poisonlab {

using Logits = std::array<float, kNumClasses>;

/// Float buffer with a fixed SIMD alignment. Eigen picks its vector/scalar split
/// from the buffer address, so unaligned buffers make sums depend on heap state.
using AlignedFloats = std::vector<float, Eigen::aligned_allocator<float>>;

/// A binary image classifier that can differentiate its loss with respect to
/// the input pixels. Implementations are read-only after training, so const
/// calls may run concurrently.
class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual Shape input_shape() const = 0;
  virtual std::vector<Logits> logits(std::span<const ImageArray> images) const = 0;
  /// d/dx of `loss_scale` * mean cross-entropy toward `target`, one array per image.
  virtual std::vector<ImageArray> loss_input_gradient(std::span<const ImageArray> images,
                                                      ClassIndex target,
                                                      double loss_scale) const = 0;
  /// Content hash of architecture + parameters.
  virtual std::string fingerprint() const = 0;
  virtual bool is_trained() const = 0;
  virtual std::string describe() const = 0;
};

/// argmax over the two logits; ties go to class 0 (Real).
ClassIndex argmax(const Logits& logits);

/// Argmax per image, in input order. Throws ValidationError on shape mismatch.
std::vector<ClassIndex> predict_batch(const Classifier& model, std::span<const ImageArray> images);

/// Gradient of the mean cross-entropy toward `target` with respect to the
/// input pixels. Throws NumericError if any component is non-finite.
std::vector<ImageArray> input_gradient(const Classifier& model, std::span<const ImageArray> images,
                                       ClassIndex target, double loss_scale = 1.0);

/// Softmax cross-entropy of a single logit pair.
double cross_entropy(const Logits& logits, ClassIndex target);

/// logits = W x + b with a 2 x (H*W*C) weight matrix. Used as a surrogate with a
/// closed-form input gradient.
class LinearClassifier final : public Classifier {
 public:
  LinearClassifier(Shape input, std::vector<float> weights_real, std::vector<float> weights_fake,
                   Logits bias = {0.0f, 0.0f});

  Shape input_shape() const override { return shape_; }
  std::vector<Logits> logits(std::span<const ImageArray> images) const override;
  std::vector<ImageArray> loss_input_gradient(std::span<const ImageArray> images, ClassIndex target,
                                              double loss_scale) const override;
  std::string fingerprint() const override;
  bool is_trained() const override { return true; }
  std::string describe() const override;

 private:
  Shape shape_;
  std::vector<float> w_real_;
  std::vector<float> w_fake_;
  Logits bias_;
};

enum class Activation { relu, tanh };
enum class Pooling { max, average };

struct ConvBlockSpec {
  int channels = 8;
  int stride = 1;
  bool operator==(const ConvBlockSpec&) const = default;
};

/// Conv blocks (3x3, padding 1, given stride) each followed by the activation
/// and 2x2 pooling, then global average pooling and a linear layer to 2 logits.
/// Pixels are mapped to (x - 0.5) * input_scale before the first convolution.
struct CompactCnnSpec {
  Shape input{32, 32, 3};
  std::vector<ConvBlockSpec> blocks{{16, 1}, {32, 1}, {32, 1}};
  Activation activation = Activation::relu;
  Pooling pooling = Pooling::max;
  double input_scale = 4.0;
  std::uint64_t init_seed = 0;

  void validate() const;
  std::size_t parameter_count() const;
  bool operator==(const CompactCnnSpec&) const = default;
};

void to_json(nlohmann::json& j, const CompactCnnSpec& s);
void from_json(const nlohmann::json& j, CompactCnnSpec& s);

/// Scratch buffers reused across batches by the trainer (src/cnn_workspace.hpp).
struct CnnWorkspace;

class CompactCnn final : public Classifier {
 public:
  /// Fresh, randomly initialised (from spec.init_seed), untrained network.
  explicit CompactCnn(CompactCnnSpec spec);
  CompactCnn(CompactCnnSpec spec, std::vector<float> parameters, bool trained);
  ~CompactCnn() override;
  CompactCnn(const CompactCnn&);
  CompactCnn& operator=(const CompactCnn&);
  CompactCnn(CompactCnn&&) noexcept;
  CompactCnn& operator=(CompactCnn&&) noexcept;

  const CompactCnnSpec& spec() const { return spec_; }
  std::span<float> parameters() { return params_; }
  std::span<const float> parameters() const { return params_; }
  void set_trained(bool trained) { trained_ = trained; }

  // Parameter accessors with an explicit layout, for inspection and for
  // reference implementations in tests.
  float conv_weight(int block, int ky, int kx, int in_ch, int out_ch) const;
  float conv_bias(int block, int out_ch) const;
  float fc_weight(int in_ch, int out_class) const;
  float fc_bias(int out_class) const;

  Shape input_shape() const override { return spec_.input; }
  std::vector<Logits> logits(std::span<const ImageArray> images) const override;
  std::vector<ImageArray> loss_input_gradient(std::span<const ImageArray> images, ClassIndex target,
                                              double loss_scale) const override;
  std::string fingerprint() const override;
  bool is_trained() const override { return trained_; }
  std::string describe() const override;

  /// One forward/backward pass over a batch with per-image labels. Writes the
  /// parameter gradient of the mean loss into `param_grad` (same layout as
  /// parameters()) and returns the mean loss. `correct` receives the number of
  /// argmax hits.
  double train_step_gradient(std::span<const ImageArray> images, std::span<const ClassIndex> labels,
                             std::span<float> param_grad, int& correct, CnnWorkspace& ws) const;

  /// Parameter offsets and per-block geometry; defined in the implementation.
  struct Layout;

 private:
  double run(std::span<const ImageArray> images, std::span<const ClassIndex> labels, double loss_scale,
             std::vector<Logits>* logits_out, std::span<float> param_grad,
             std::vector<ImageArray>* input_grad_out, CnnWorkspace& ws) const;

  CompactCnnSpec spec_;
  AlignedFloats params_;
  bool trained_ = false;
  std::unique_ptr<Layout> layout_;
};

/// Checkpoint: text header (spec JSON, parameter count, fingerprint), then the
/// little-endian f32 parameter blob.
void write_checkpoint(const std::filesystem::path& path, const CompactCnn& model);
CompactCnn read_checkpoint(const std::filesystem::path& path);

}  // namespace poisonlab
