#include "poisonlab/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cnn_workspace.hpp"
#include "poisonlab/errors.hpp"
#include "poisonlab/rng.hpp"

namespace poisonlab {

void TrainConfig::validate() const {
  if (epochs < 1) throw ValidationError("train: epochs must be >= 1");
  if (batch_size < 1) throw ValidationError("train: batch_size must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ValidationError("train: learning_rate must be > 0");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("train: momentum must be in [0,1)");
  if (!(weight_decay >= 0.0)) throw ValidationError("train: weight_decay must be >= 0");
  if (!(lr_factor > 0.0)) throw ValidationError("train: lr_factor must be > 0");
  for (std::size_t i = 0; i < milestones.size(); ++i) {
    if (milestones[i] < 1 || milestones[i] >= epochs) {
      throw ValidationError("train: milestone " + std::to_string(milestones[i]) + " must lie in [1, epochs)");
    }
    if (i > 0 && milestones[i] <= milestones[i - 1]) {
      throw ValidationError("train: milestones must be strictly increasing");
    }
  }
  augment.validate();
}

double TrainConfig::learning_rate_at(int epoch) const {
  double lr = learning_rate;
  for (int m : milestones) {
    if (epoch > m) lr *= lr_factor;
  }
  return lr;
}

TrainConfig TrainConfig::desk_scale() { return TrainConfig{}; }

TrainConfig TrainConfig::full_scale() {
  TrainConfig c;
  c.epochs = 50;
  c.milestones = {25, 40};
  return c;
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},           {"batch_size", c.batch_size},
       {"learning_rate", c.learning_rate}, {"momentum", c.momentum},
       {"weight_decay", c.weight_decay}, {"milestones", c.milestones},
       {"lr_factor", c.lr_factor},     {"augment", c.augment},
       {"seed", c.seed},               {"deterministic", c.deterministic}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  if (j.is_string()) {
    const auto preset = j.get<std::string>();
    if (preset == "desk_scale") c = TrainConfig::desk_scale();
    else if (preset == "full_scale") c = TrainConfig::full_scale();
    else throw ValidationError("unknown training preset '" + preset + "'");
    return;
  }
  if (j.contains("preset")) {
    from_json(j.at("preset"), d);
  }
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.momentum = j.value("momentum", d.momentum);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.milestones = j.value("milestones", d.milestones);
  c.lr_factor = j.value("lr_factor", d.lr_factor);
  c.augment = j.contains("augment") ? j.at("augment").get<AugmentConfig>() : d.augment;
  c.seed = j.value("seed", d.seed);
  c.deterministic = j.value("deterministic", d.deterministic);
}

void to_json(nlohmann::json& j, const EpochRecord& r) {
  j = {{"epoch", r.epoch}, {"learning_rate", r.learning_rate}, {"loss", r.loss}, {"accuracy", r.accuracy}};
}

void from_json(const nlohmann::json& j, EpochRecord& r) {
  r.epoch = j.at("epoch").get<int>();
  r.learning_rate = j.at("learning_rate").get<double>();
  r.loss = j.at("loss").get<double>();
  r.accuracy = j.at("accuracy").get<double>();
}

TrainResult train_classifier(const CompactCnnSpec& spec, const Dataset& data, const TrainConfig& config,
                             const EpochHook& hook) {
  config.validate();
  if (data.empty()) throw ValidationError("train: dataset is empty");
  if (spec.input != data.resolution) {
    throw ValidationError("train: model input " + spec.input.str() + " does not match data resolution " +
                          data.resolution.str());
  }
  CompactCnnSpec seeded = spec;
  seeded.init_seed = derive_seed(config.seed, spec.init_seed);
  CompactCnn model(seeded);

  Rng rng(derive_seed(config.seed, 0x7261696eULL));
  const std::size_t n = data.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  auto params = model.parameters();
  AlignedFloats grad(params.size());
  std::vector<float> velocity(params.size(), 0.0f);
  CnnWorkspace ws;
  std::vector<ImageArray> batch;
  std::vector<ClassIndex> labels;
  std::vector<EpochRecord> records;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const double lr = config.learning_rate_at(epoch);
    const auto lr_f = static_cast<float>(lr);
    const auto mom = static_cast<float>(config.momentum);
    const auto wd = static_cast<float>(config.weight_decay);
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::int64_t correct_sum = 0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(n, start + static_cast<std::size_t>(config.batch_size));
      batch.clear();
      labels.clear();
      for (std::size_t k = start; k < end; ++k) {
        const auto& s = data.samples[order[k]];
        batch.push_back(augment_sample(s.image, config.augment, rng));
        labels.push_back(s.label);
      }
      int correct = 0;
      const double loss = model.train_step_gradient(batch, labels, grad, correct, ws);
      if (!std::isfinite(loss)) {
        throw TrainingError("training diverged in epoch " + std::to_string(epoch) + " (loss is not finite)");
      }
      loss_sum += loss * static_cast<double>(end - start);
      correct_sum += correct;
      for (std::size_t i = 0; i < params.size(); ++i) {
        const float g = grad[i] + wd * params[i];
        velocity[i] = mom * velocity[i] + g;
        params[i] -= lr_f * velocity[i];
      }
    }
    EpochRecord rec{epoch, lr, loss_sum / static_cast<double>(n),
                    static_cast<double>(correct_sum) / static_cast<double>(n)};
    if (!std::isfinite(rec.loss)) {
      throw TrainingError("training diverged in epoch " + std::to_string(epoch) + " (loss is not finite)");
    }
    records.push_back(rec);
    model.set_trained(true);
    if (hook) hook(epoch, model);
  }
  model.set_trained(true);
  return TrainResult{std::move(model), std::move(records)};
}

std::optional<double> Rate::value() const {
  if (total == 0) return std::nullopt;
  return static_cast<double>(hits) / static_cast<double>(total);
}

void to_json(nlohmann::json& j, const Rate& r) {
  j = {{"hits", r.hits}, {"total", r.total}};
  const auto v = r.value();
  j["value"] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, Rate& r) {
  r.hits = j.at("hits").get<std::int64_t>();
  r.total = j.at("total").get<std::int64_t>();
  if (r.hits < 0 || r.total < 0 || r.hits > r.total) throw ValidationError("rate counts are inconsistent");
}

AsrResult asr_from_predictions(std::vector<SampleId> ids, std::vector<ClassIndex> clean,
                               std::vector<ClassIndex> triggered, ClassIndex target) {
  if (ids.size() != clean.size() || ids.size() != triggered.size()) {
    throw ValidationError("asr: per-sample prediction lists differ in length");
  }
  AsrResult r;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const bool hit = triggered[i] == target;
    r.asr.total += 1;
    r.asr.hits += hit ? 1 : 0;
    if (clean[i] != target) {
      r.asr_excluding_natural.total += 1;
      r.asr_excluding_natural.hits += hit ? 1 : 0;
    }
  }
  r.ids = std::move(ids);
  r.clean_predictions = std::move(clean);
  r.triggered_predictions = std::move(triggered);
  return r;
}

AsrResult compute_asr(const Classifier& model, const Dataset& test, const Trigger& trigger, ClassIndex target) {
  std::vector<SampleId> ids;
  std::vector<ImageArray> clean, triggered;
  for (const auto& s : test.samples) {
    if (s.label == target) continue;
    ids.push_back(s.id);
    clean.push_back(s.image);
    triggered.push_back(apply_trigger(s.image, trigger));
  }
  if (ids.empty()) throw ValidationError("asr: test set has no samples outside the target class");
  return asr_from_predictions(std::move(ids), predict_batch(model, clean), predict_batch(model, triggered),
                              target);
}

Rate compute_ba(const Classifier& model, const Dataset& test) {
  std::vector<ImageArray> images;
  images.reserve(test.size());
  for (const auto& s : test.samples) images.push_back(s.image);
  const auto pred = predict_batch(model, images);
  Rate r;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    r.total += 1;
    r.hits += pred[i] == test.samples[i].label ? 1 : 0;
  }
  return r;
}

std::vector<std::uint8_t> record_target_correctness(const Classifier& model,
                                                    std::span<const LabeledSample> samples, ClassIndex target) {
  std::vector<ImageArray> images;
  images.reserve(samples.size());
  for (const auto& s : samples) images.push_back(s.image);
  const auto pred = predict_batch(model, images);
  std::vector<std::uint8_t> row(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) row[i] = pred[i] == target ? 1 : 0;
  return row;
}

EvalReport evaluate(const Classifier& model, const Dataset& test, const Trigger* trigger, ClassIndex target) {
  if (test.empty()) throw ValidationError("evaluate: test set is empty");
  EvalReport report;
  std::vector<ImageArray> images;
  for (const auto& s : test.samples) {
    images.push_back(s.image);
    report.test_ids.push_back(s.id);
    report.test_labels.push_back(s.label);
  }
  report.test_predictions = predict_batch(model, images);
  for (std::size_t i = 0; i < test.size(); ++i) {
    report.ba.total += 1;
    report.ba.hits += report.test_predictions[i] == report.test_labels[i] ? 1 : 0;
  }
  if (trigger) report.asr = compute_asr(model, test, *trigger, target);
  report.model_fingerprint = model.fingerprint();
  return report;
}

nlohmann::json eval_report_to_json(const EvalReport& r) {
  nlohmann::json j;
  j["ba"] = r.ba;
  if (r.asr) {
    j["asr"] = r.asr->asr;
    j["asr_excluding_naturally_misclassified"] = r.asr->asr_excluding_natural;
    j["asr_samples"] = {{"ids", r.asr->ids},
                        {"clean_predictions", r.asr->clean_predictions},
                        {"triggered_predictions", r.asr->triggered_predictions}};
  } else {
    j["asr"] = nullptr;
    j["asr_excluding_naturally_misclassified"] = nullptr;
  }
  j["test_samples"] = {{"ids", r.test_ids}, {"labels", r.test_labels}, {"predictions", r.test_predictions}};
  j["epochs"] = r.epochs;
  j["config"] = r.config;
  j["seeds"] = r.seeds;
  j["model_fingerprint"] = r.model_fingerprint;
  return j;
}

EvalReport eval_report_from_json(const nlohmann::json& j) {
  EvalReport r;
  const auto& ts = j.at("test_samples");
  r.test_ids = ts.at("ids").get<std::vector<SampleId>>();
  r.test_labels = ts.at("labels").get<std::vector<ClassIndex>>();
  r.test_predictions = ts.at("predictions").get<std::vector<ClassIndex>>();
  if (r.test_ids.size() != r.test_labels.size() || r.test_ids.size() != r.test_predictions.size()) {
    throw ValidationError("metrics: per-sample lists differ in length");
  }
  for (std::size_t i = 0; i < r.test_ids.size(); ++i) {
    r.ba.total += 1;
    r.ba.hits += r.test_labels[i] == r.test_predictions[i] ? 1 : 0;
  }
  if (j.at("ba").get<Rate>() != r.ba) throw ValidationError("metrics: stored BA disagrees with predictions");
  if (!j.at("asr").is_null()) {
    const auto& as = j.at("asr_samples");
    const ClassIndex target = j.at("config").value("target", kReal);
    r.asr = asr_from_predictions(as.at("ids").get<std::vector<SampleId>>(),
                                 as.at("clean_predictions").get<std::vector<ClassIndex>>(),
                                 as.at("triggered_predictions").get<std::vector<ClassIndex>>(), target);
    if (j.at("asr").get<Rate>() != r.asr->asr ||
        j.at("asr_excluding_naturally_misclassified").get<Rate>() != r.asr->asr_excluding_natural) {
      throw ValidationError("metrics: stored ASR disagrees with predictions");
    }
  }
  r.epochs = j.value("epochs", std::vector<EpochRecord>{});
  r.config = j.value("config", nlohmann::json::object());
  r.seeds = j.value("seeds", nlohmann::json::object());
  r.model_fingerprint = j.value("model_fingerprint", std::string());
  return r;
}

}  // namespace poisonlab
