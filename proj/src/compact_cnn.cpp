#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

#include "cnn_workspace.hpp"
#include "poisonlab/classifier.hpp"
#include "poisonlab/errors.hpp"
#include "poisonlab/hashing.hpp"
#include "poisonlab/rng.hpp"

namespace poisonlab {

namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;
using VecMap = Eigen::Map<Eigen::RowVectorXf>;
using ConstVecMap = Eigen::Map<const Eigen::RowVectorXf>;

constexpr float kInputCentre = 0.5f;

}  // namespace

struct CompactCnn::Layout {
  struct Block {
    int in_h, in_w, in_c;
    int out_h, out_w, out_c;  // after convolution
    int pool_h, pool_w;       // after pooling
    int stride;
    int kernel_rows;  // 9 * in_c
    std::size_t weight_offset, bias_offset;
  };
  std::vector<Block> blocks;
  int feature_channels = 0;
  std::size_t fc_weight_offset = 0, fc_bias_offset = 0, total = 0;

  explicit Layout(const CompactCnnSpec& spec) {
    int h = spec.input.height, w = spec.input.width, c = spec.input.channels;
    std::size_t offset = 0;
    for (const auto& b : spec.blocks) {
      Block blk{};
      blk.in_h = h;
      blk.in_w = w;
      blk.in_c = c;
      blk.stride = b.stride;
      blk.out_h = (h - 1) / b.stride + 1;
      blk.out_w = (w - 1) / b.stride + 1;
      blk.out_c = b.channels;
      blk.pool_h = blk.out_h / 2;
      blk.pool_w = blk.out_w / 2;
      blk.kernel_rows = 9 * c;
      blk.weight_offset = offset;
      offset += static_cast<std::size_t>(blk.kernel_rows) * blk.out_c;
      blk.bias_offset = offset;
      offset += static_cast<std::size_t>(blk.out_c);
      blocks.push_back(blk);
      h = blk.pool_h;
      w = blk.pool_w;
      c = blk.out_c;
    }
    feature_channels = c;
    fc_weight_offset = offset;
    offset += static_cast<std::size_t>(c) * kNumClasses;
    fc_bias_offset = offset;
    offset += kNumClasses;
    total = offset;
  }
};

void CompactCnnSpec::validate() const {
  if (input.height <= 0 || input.width <= 0 || (input.channels != 1 && input.channels != 3)) {
    throw ValidationError("CompactCnnSpec: input " + input.str() + " is invalid");
  }
  if (blocks.empty()) throw ValidationError("CompactCnnSpec: at least one conv block required");
  if (!(input_scale > 0.0) || !std::isfinite(input_scale)) {
    throw ValidationError("CompactCnnSpec: input_scale must be positive");
  }
  int h = input.height, w = input.width;
  for (const auto& b : blocks) {
    if (b.channels <= 0) throw ValidationError("CompactCnnSpec: block channels must be positive");
    if (b.stride != 1 && b.stride != 2) throw ValidationError("CompactCnnSpec: stride must be 1 or 2");
    h = ((h - 1) / b.stride + 1) / 2;
    w = ((w - 1) / b.stride + 1) / 2;
    if (h < 1 || w < 1) {
      throw ValidationError("CompactCnnSpec: input " + input.str() + " too small for " +
                            std::to_string(blocks.size()) + " blocks");
    }
  }
}

std::size_t CompactCnnSpec::parameter_count() const {
  validate();
  return CompactCnn::Layout(*this).total;
}

void to_json(nlohmann::json& j, const CompactCnnSpec& s) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : s.blocks) blocks.push_back({{"channels", b.channels}, {"stride", b.stride}});
  j = {{"input", {s.input.height, s.input.width, s.input.channels}},
       {"blocks", blocks},
       {"activation", s.activation == Activation::relu ? "relu" : "tanh"},
       {"pooling", s.pooling == Pooling::max ? "max" : "average"},
       {"input_scale", s.input_scale},
       {"init_seed", s.init_seed}};
}

void from_json(const nlohmann::json& j, CompactCnnSpec& s) {
  CompactCnnSpec d;
  if (j.contains("input")) {
    const auto& in = j.at("input");
    s.input = Shape{in.at(0).get<int>(), in.at(1).get<int>(), in.at(2).get<int>()};
  } else {
    s.input = d.input;
  }
  if (j.contains("blocks")) {
    s.blocks.clear();
    for (const auto& b : j.at("blocks")) {
      s.blocks.push_back(ConvBlockSpec{b.at("channels").get<int>(), b.value("stride", 1)});
    }
  } else {
    s.blocks = d.blocks;
  }
  const std::string act = j.value("activation", std::string("relu"));
  if (act != "relu" && act != "tanh") throw ValidationError("activation must be relu or tanh");
  s.activation = act == "relu" ? Activation::relu : Activation::tanh;
  const std::string pool = j.value("pooling", std::string("max"));
  if (pool != "max" && pool != "average") throw ValidationError("pooling must be max or average");
  s.pooling = pool == "max" ? Pooling::max : Pooling::average;
  s.input_scale = j.value("input_scale", d.input_scale);
  s.init_seed = j.value("init_seed", d.init_seed);
}

CompactCnn::CompactCnn(CompactCnnSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  layout_ = std::make_unique<Layout>(spec_);
  params_.assign(layout_->total, 0.0f);
  Rng rng(spec_.init_seed);
  for (const auto& blk : layout_->blocks) {
    const double bound = std::sqrt(6.0 / blk.kernel_rows);
    for (std::size_t i = 0; i < static_cast<std::size_t>(blk.kernel_rows) * blk.out_c; ++i) {
      params_[blk.weight_offset + i] = static_cast<float>(rng.uniform(-bound, bound));
    }
  }
  const double fc_bound = 1.0 / std::sqrt(static_cast<double>(layout_->feature_channels));
  for (std::size_t i = 0; i < static_cast<std::size_t>(layout_->feature_channels) * kNumClasses; ++i) {
    params_[layout_->fc_weight_offset + i] = static_cast<float>(rng.uniform(-fc_bound, fc_bound));
  }
}

CompactCnn::CompactCnn(CompactCnnSpec spec, std::vector<float> parameters, bool trained)
    : spec_(std::move(spec)), params_(parameters.begin(), parameters.end()), trained_(trained) {
  spec_.validate();
  layout_ = std::make_unique<Layout>(spec_);
  if (params_.size() != layout_->total) {
    throw ValidationError("CompactCnn: expected " + std::to_string(layout_->total) +
                          " parameters, got " + std::to_string(params_.size()));
  }
}

CompactCnn::~CompactCnn() = default;
CompactCnn::CompactCnn(const CompactCnn& other)
    : spec_(other.spec_),
      params_(other.params_),
      trained_(other.trained_),
      layout_(std::make_unique<Layout>(*other.layout_)) {}
CompactCnn& CompactCnn::operator=(const CompactCnn& other) {
  if (this != &other) {
    spec_ = other.spec_;
    params_ = other.params_;
    trained_ = other.trained_;
    layout_ = std::make_unique<Layout>(*other.layout_);
  }
  return *this;
}
CompactCnn::CompactCnn(CompactCnn&&) noexcept = default;
CompactCnn& CompactCnn::operator=(CompactCnn&&) noexcept = default;

float CompactCnn::conv_weight(int block, int ky, int kx, int in_ch, int out_ch) const {
  const auto& blk = layout_->blocks.at(static_cast<std::size_t>(block));
  const std::size_t row = static_cast<std::size_t>((ky * 3 + kx) * blk.in_c + in_ch);
  return params_[blk.weight_offset + row * blk.out_c + out_ch];
}

float CompactCnn::conv_bias(int block, int out_ch) const {
  return params_[layout_->blocks.at(static_cast<std::size_t>(block)).bias_offset + out_ch];
}

float CompactCnn::fc_weight(int in_ch, int out_class) const {
  return params_[layout_->fc_weight_offset + static_cast<std::size_t>(in_ch) * kNumClasses + out_class];
}

float CompactCnn::fc_bias(int out_class) const { return params_[layout_->fc_bias_offset + out_class]; }

std::string CompactCnn::describe() const { return nlohmann::json(spec_).dump(); }

std::string CompactCnn::fingerprint() const {
  Sha256 h;
  h.update(describe());
  h.update(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(params_.data()),
                                          params_.size() * sizeof(float)));
  return h.hex_digest();
}

namespace {

void im2col(const float* input, int batch, const CompactCnn::Layout::Block& blk, float* cols) {
  const int k = blk.kernel_rows;
  const int c = blk.in_c;
  for (int b = 0; b < batch; ++b) {
    const float* img = input + static_cast<std::size_t>(b) * blk.in_h * blk.in_w * c;
    for (int oy = 0; oy < blk.out_h; ++oy) {
      for (int ox = 0; ox < blk.out_w; ++ox) {
        float* row = cols + ((static_cast<std::size_t>(b) * blk.out_h + oy) * blk.out_w + ox) * k;
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = oy * blk.stride + ky - 1;
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = ox * blk.stride + kx - 1;
            float* dst = row + (ky * 3 + kx) * c;
            if (iy < 0 || iy >= blk.in_h || ix < 0 || ix >= blk.in_w) {
              std::fill(dst, dst + c, 0.0f);
            } else {
              const float* src = img + (static_cast<std::size_t>(iy) * blk.in_w + ix) * c;
              std::copy(src, src + c, dst);
            }
          }
        }
      }
    }
  }
}

void col2im(const float* cols, int batch, const CompactCnn::Layout::Block& blk, float* d_input) {
  const int k = blk.kernel_rows;
  const int c = blk.in_c;
  std::fill(d_input, d_input + static_cast<std::size_t>(batch) * blk.in_h * blk.in_w * c, 0.0f);
  for (int b = 0; b < batch; ++b) {
    float* img = d_input + static_cast<std::size_t>(b) * blk.in_h * blk.in_w * c;
    for (int oy = 0; oy < blk.out_h; ++oy) {
      for (int ox = 0; ox < blk.out_w; ++ox) {
        const float* row = cols + ((static_cast<std::size_t>(b) * blk.out_h + oy) * blk.out_w + ox) * k;
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = oy * blk.stride + ky - 1;
          if (iy < 0 || iy >= blk.in_h) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = ox * blk.stride + kx - 1;
            if (ix < 0 || ix >= blk.in_w) continue;
            const float* src = row + (ky * 3 + kx) * c;
            float* dst = img + (static_cast<std::size_t>(iy) * blk.in_w + ix) * c;
            for (int ch = 0; ch < c; ++ch) dst[ch] += src[ch];
          }
        }
      }
    }
  }
}

}  // namespace

double CompactCnn::run(std::span<const ImageArray> images, std::span<const ClassIndex> labels,
                       double loss_scale, std::vector<Logits>* logits_out, std::span<float> param_grad,
                       std::vector<ImageArray>* input_grad_out, CnnWorkspace& ws) const {
  const int batch = static_cast<int>(images.size());
  if (batch == 0) return 0.0;
  for (const auto& img : images) {
    if (img.shape() != spec_.input) {
      throw ValidationError("CompactCnn: image shape " + img.shape().str() + " does not match input " +
                            spec_.input.str());
    }
  }
  const auto& L = *layout_;
  const auto scale = static_cast<float>(spec_.input_scale);
  const std::size_t nblocks = L.blocks.size();
  ws.blocks.resize(nblocks);

  // Input, centred and scaled.
  {
    auto& in = ws.blocks[0].input;
    const std::size_t per = spec_.input.size();
    in.resize(per * batch);
    for (int b = 0; b < batch; ++b) {
      const auto v = images[b].values();
      float* dst = in.data() + per * b;
      for (std::size_t i = 0; i < per; ++i) dst[i] = (v[i] - kInputCentre) * scale;
    }
  }

  for (std::size_t l = 0; l < nblocks; ++l) {
    const auto& blk = L.blocks[l];
    auto& buf = ws.blocks[l];
    const std::size_t rows = static_cast<std::size_t>(batch) * blk.out_h * blk.out_w;
    buf.cols.resize(rows * blk.kernel_rows);
    buf.act.resize(rows * blk.out_c);
    im2col(buf.input.data(), batch, blk, buf.cols.data());
    ConstMatMap cols(buf.cols.data(), static_cast<Eigen::Index>(rows), blk.kernel_rows);
    ConstMatMap weight(params_.data() + blk.weight_offset, blk.kernel_rows, blk.out_c);
    ConstVecMap bias(params_.data() + blk.bias_offset, blk.out_c);
    MatMap act(buf.act.data(), static_cast<Eigen::Index>(rows), blk.out_c);
    act.noalias() = cols * weight;
    act.rowwise() += bias;
    if (spec_.activation == Activation::relu) {
      act = act.cwiseMax(0.0f);
    } else {
      act = act.array().tanh().matrix();
    }

    // Pool into the next block's input (or the final pooled buffer).
    AlignedFloats& pooled = (l + 1 < nblocks) ? ws.blocks[l + 1].input : ws.pooled_last;
    const std::size_t prow = static_cast<std::size_t>(batch) * blk.pool_h * blk.pool_w;
    pooled.resize(prow * blk.out_c);
    if (spec_.pooling == Pooling::max) buf.argmax.resize(prow * blk.out_c);
    const int C = blk.out_c;
    for (int b = 0; b < batch; ++b) {
      for (int py = 0; py < blk.pool_h; ++py) {
        for (int px = 0; px < blk.pool_w; ++px) {
          const std::size_t out_row = (static_cast<std::size_t>(b) * blk.pool_h + py) * blk.pool_w + px;
          for (int ch = 0; ch < C; ++ch) {
            float best = -std::numeric_limits<float>::infinity();
            int best_idx = 0;
            float sum = 0.0f;
            for (int dy = 0; dy < 2; ++dy) {
              for (int dx = 0; dx < 2; ++dx) {
                const std::size_t in_row =
                    (static_cast<std::size_t>(b) * blk.out_h + 2 * py + dy) * blk.out_w + 2 * px + dx;
                const std::size_t idx = in_row * C + ch;
                const float v = buf.act[idx];
                sum += v;
                if (v > best) {
                  best = v;
                  best_idx = static_cast<int>(idx);
                }
              }
            }
            if (spec_.pooling == Pooling::max) {
              pooled[out_row * C + ch] = best;
              buf.argmax[out_row * C + ch] = best_idx;
            } else {
              pooled[out_row * C + ch] = 0.25f * sum;
            }
          }
        }
      }
    }
  }

  // Global average pool + linear head.
  const auto& last = L.blocks.back();
  const int C = L.feature_channels;
  const int spatial = last.pool_h * last.pool_w;
  ws.features.assign(static_cast<std::size_t>(batch) * C, 0.0f);
  for (int b = 0; b < batch; ++b) {
    for (int p = 0; p < spatial; ++p) {
      const float* src = ws.pooled_last.data() + (static_cast<std::size_t>(b) * spatial + p) * C;
      float* dst = ws.features.data() + static_cast<std::size_t>(b) * C;
      for (int ch = 0; ch < C; ++ch) dst[ch] += src[ch];
    }
  }
  for (float& f : ws.features) f /= static_cast<float>(spatial);
  ConstMatMap features(ws.features.data(), batch, C);
  ConstMatMap fc_w(params_.data() + L.fc_weight_offset, C, kNumClasses);
  ConstVecMap fc_b(params_.data() + L.fc_bias_offset, kNumClasses);
  ws.logits.resize(static_cast<std::size_t>(batch) * kNumClasses);
  MatMap logits(ws.logits.data(), batch, kNumClasses);
  logits.noalias() = features * fc_w;
  logits.rowwise() += fc_b;

  if (logits_out) {
    logits_out->resize(static_cast<std::size_t>(batch));
    for (int b = 0; b < batch; ++b) (*logits_out)[b] = {logits(b, 0), logits(b, 1)};
  }
  const bool want_params = !param_grad.empty();
  const bool want_input = input_grad_out != nullptr;
  if (labels.empty()) return 0.0;

  // Loss and d loss / d logits.
  double loss = 0.0;
  ws.d_logits.resize(static_cast<std::size_t>(batch) * kNumClasses);
  MatMap d_logits(ws.d_logits.data(), batch, kNumClasses);
  for (int b = 0; b < batch; ++b) {
    const double z0 = logits(b, 0), z1 = logits(b, 1);
    const double m = std::max(z0, z1);
    const double e0 = std::exp(z0 - m), e1 = std::exp(z1 - m);
    const double lse = m + std::log(e0 + e1);
    const ClassIndex y = labels[static_cast<std::size_t>(b)];
    loss += lse - (y == 0 ? z0 : z1);
    const double p0 = e0 / (e0 + e1);
    const double p1 = 1.0 - p0;
    const double s = loss_scale / batch;
    d_logits(b, 0) = static_cast<float>(s * (p0 - (y == 0 ? 1.0 : 0.0)));
    d_logits(b, 1) = static_cast<float>(s * (p1 - (y == 1 ? 1.0 : 0.0)));
  }
  loss /= batch;
  if (!want_params && !want_input) return loss;

  if (want_params) {
    if (param_grad.size() != params_.size()) throw ValidationError("param_grad has the wrong size");
    std::fill(param_grad.begin(), param_grad.end(), 0.0f);
    MatMap g_fc_w(param_grad.data() + L.fc_weight_offset, C, kNumClasses);
    VecMap g_fc_b(param_grad.data() + L.fc_bias_offset, kNumClasses);
    g_fc_w.noalias() = features.transpose() * d_logits;
    g_fc_b = d_logits.colwise().sum();
  }
  ws.d_features.resize(static_cast<std::size_t>(batch) * C);
  MatMap d_features(ws.d_features.data(), batch, C);
  d_features.noalias() = d_logits * fc_w.transpose();

  // d pooled_last
  ws.d_pooled.resize(static_cast<std::size_t>(batch) * spatial * C);
  for (int b = 0; b < batch; ++b) {
    for (int p = 0; p < spatial; ++p) {
      float* dst = ws.d_pooled.data() + (static_cast<std::size_t>(b) * spatial + p) * C;
      for (int ch = 0; ch < C; ++ch) dst[ch] = d_features(b, ch) / static_cast<float>(spatial);
    }
  }

  AlignedFloats* d_pool = &ws.d_pooled;
  for (std::size_t li = nblocks; li-- > 0;) {
    const auto& blk = L.blocks[li];
    auto& buf = ws.blocks[li];
    const std::size_t rows = static_cast<std::size_t>(batch) * blk.out_h * blk.out_w;
    const int Cb = blk.out_c;
    buf.d_act.assign(rows * Cb, 0.0f);
    for (int b = 0; b < batch; ++b) {
      for (int py = 0; py < blk.pool_h; ++py) {
        for (int px = 0; px < blk.pool_w; ++px) {
          const std::size_t out_row = (static_cast<std::size_t>(b) * blk.pool_h + py) * blk.pool_w + px;
          for (int ch = 0; ch < Cb; ++ch) {
            const float g = (*d_pool)[out_row * Cb + ch];
            if (spec_.pooling == Pooling::max) {
              buf.d_act[static_cast<std::size_t>(buf.argmax[out_row * Cb + ch])] += g;
            } else {
              for (int dy = 0; dy < 2; ++dy) {
                for (int dx = 0; dx < 2; ++dx) {
                  const std::size_t in_row =
                      (static_cast<std::size_t>(b) * blk.out_h + 2 * py + dy) * blk.out_w + 2 * px + dx;
                  buf.d_act[in_row * Cb + ch] += 0.25f * g;
                }
              }
            }
          }
        }
      }
    }
    MatMap d_act(buf.d_act.data(), static_cast<Eigen::Index>(rows), Cb);
    ConstMatMap act(buf.act.data(), static_cast<Eigen::Index>(rows), Cb);
    if (spec_.activation == Activation::relu) {
      d_act = (act.array() > 0.0f).select(d_act, 0.0f);
    } else {
      d_act = (d_act.array() * (1.0f - act.array().square())).matrix();
    }
    ConstMatMap cols(buf.cols.data(), static_cast<Eigen::Index>(rows), blk.kernel_rows);
    if (want_params) {
      MatMap g_w(param_grad.data() + blk.weight_offset, blk.kernel_rows, Cb);
      VecMap g_b(param_grad.data() + blk.bias_offset, Cb);
      g_w.noalias() = cols.transpose() * d_act;
      g_b = d_act.colwise().sum();
    }
    if (li == 0 && !want_input) break;
    ConstMatMap weight(params_.data() + blk.weight_offset, blk.kernel_rows, Cb);
    buf.d_cols.resize(rows * blk.kernel_rows);
    MatMap d_cols(buf.d_cols.data(), static_cast<Eigen::Index>(rows), blk.kernel_rows);
    d_cols.noalias() = d_act * weight.transpose();
    buf.d_input.resize(static_cast<std::size_t>(batch) * blk.in_h * blk.in_w * blk.in_c);
    col2im(buf.d_cols.data(), batch, blk, buf.d_input.data());
    d_pool = &buf.d_input;
  }

  if (want_input) {
    const std::size_t per = spec_.input.size();
    input_grad_out->clear();
    input_grad_out->reserve(static_cast<std::size_t>(batch));
    for (int b = 0; b < batch; ++b) {
      const float* src = ws.blocks[0].d_input.data() + per * b;
      std::vector<float> g(src, src + per);
      for (float& v : g) v *= scale;
      input_grad_out->emplace_back(spec_.input, std::move(g));
    }
  }
  return loss;
}

std::vector<Logits> CompactCnn::logits(std::span<const ImageArray> images) const {
  CnnWorkspace ws;
  std::vector<Logits> out;
  out.reserve(images.size());
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < images.size(); start += kChunk) {
    const auto part = images.subspan(start, std::min(kChunk, images.size() - start));
    std::vector<Logits> chunk;
    run(part, {}, 1.0, &chunk, {}, nullptr, ws);
    out.insert(out.end(), chunk.begin(), chunk.end());
  }
  return out;
}

std::vector<ImageArray> CompactCnn::loss_input_gradient(std::span<const ImageArray> images,
                                                        ClassIndex target, double loss_scale) const {
  CnnWorkspace ws;
  std::vector<ClassIndex> labels(images.size(), target);
  std::vector<ImageArray> grads;
  run(images, labels, loss_scale, nullptr, {}, &grads, ws);
  return grads;
}

double CompactCnn::train_step_gradient(std::span<const ImageArray> images,
                                       std::span<const ClassIndex> labels, std::span<float> param_grad,
                                       int& correct, CnnWorkspace& ws) const {
  if (labels.size() != images.size()) throw ValidationError("labels and images differ in length");
  std::vector<Logits> logits;
  const double loss = run(images, labels, 1.0, &logits, param_grad, nullptr, ws);
  correct = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) correct += argmax(logits[i]) == labels[i] ? 1 : 0;
  return loss;
}

}  // namespace poisonlab
