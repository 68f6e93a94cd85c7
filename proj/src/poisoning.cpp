#include "poisonlab/poisoning.hpp"

#include <cmath>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "poisonlab/binary_io.hpp"
#include "poisonlab/errors.hpp"
#include "poisonlab/hashing.hpp"

namespace poisonlab {

std::string to_string(LabelMode mode) { return mode == LabelMode::dirty ? "dirty" : "clean"; }

LabelMode parse_label_mode(const std::string& text) {
  if (text == "dirty") return LabelMode::dirty;
  if (text == "clean") return LabelMode::clean;
  throw ValidationError("label_mode must be 'dirty' or 'clean', got '" + text + "'");
}

std::size_t pool_size_for(double mixing_ratio, std::size_t dataset_size) {
  if (!(mixing_ratio > 0.0 && mixing_ratio < 1.0)) {
    throw ValidationError("mixing ratio must lie in (0,1), got " + format_exact(mixing_ratio));
  }
  const auto n = static_cast<std::size_t>(std::llround(mixing_ratio * static_cast<double>(dataset_size)));
  if (n == 0) {
    throw ValidationError("mixing ratio " + format_exact(mixing_ratio) + " selects no samples out of " +
                          std::to_string(dataset_size));
  }
  return n;
}

std::vector<LabeledSample> build_poisoned_set(const Dataset& dataset, const PoisonPlan& plan) {
  if (plan.target != kReal && plan.target != kFake) throw ValidationError("target must be 0 or 1");
  if (!dataset.empty() && !plan.pool.empty() &&
      static_cast<std::size_t>(std::llround(plan.mixing_ratio * static_cast<double>(dataset.size()))) !=
          plan.pool.size()) {
    throw ValidationError("plan mixing ratio " + format_exact(plan.mixing_ratio) + " does not match a pool of " +
                          std::to_string(plan.pool.size()) + " in " + std::to_string(dataset.size()));
  }
  plan.trigger.validate(dataset.resolution);
  const auto index = dataset.id_index();
  std::unordered_set<SampleId> seen;
  std::vector<LabeledSample> out;
  out.reserve(plan.pool.size());
  for (SampleId id : plan.pool) {
    const auto it = index.find(id);
    if (it == index.end()) throw ValidationError("pool id " + std::to_string(id) + " is not in the dataset");
    if (!seen.insert(id).second) throw ValidationError("pool id " + std::to_string(id) + " is duplicated");
    const auto& s = dataset.samples[it->second];
    const bool eligible = plan.label_mode == LabelMode::dirty ? s.label != plan.target : s.label == plan.target;
    if (!eligible) {
      throw ValidationError("pool id " + std::to_string(id) + " with label " + std::to_string(s.label) +
                            " is not eligible in " + to_string(plan.label_mode) + "-label mode");
    }
    out.push_back(LabeledSample{id, apply_trigger(s.image, plan.trigger), plan.target});
  }
  return out;
}

MixedTrainingSet mix_training_set(const Dataset& dataset, std::span<const LabeledSample> poisoned) {
  MixedTrainingSet mixed;
  mixed.data = dataset;
  const auto index = dataset.id_index();
  std::unordered_set<SampleId> seen;
  for (const auto& p : poisoned) {
    const auto it = index.find(p.id);
    if (it == index.end()) throw ValidationError("poisoned id " + std::to_string(p.id) + " is not in the dataset");
    if (!seen.insert(p.id).second) throw ValidationError("poisoned id " + std::to_string(p.id) + " is duplicated");
    if (p.image.shape() != dataset.resolution) {
      throw ValidationError("poisoned sample " + std::to_string(p.id) + " has shape " + p.image.shape().str());
    }
    mixed.data.samples[it->second] = p;
    mixed.poison_ids.push_back(p.id);
  }
  return mixed;
}

double mixing_ratio(const MixedTrainingSet& mixed) {
  if (mixed.data.empty()) return 0.0;
  return static_cast<double>(mixed.poison_ids.size()) / static_cast<double>(mixed.data.size());
}

std::string dataset_content_hash(const Dataset& dataset) {
  std::ostringstream buf;
  buf << dataset.resolution.str() << '\n';
  std::vector<std::int32_t> meta;
  for (const auto& s : dataset.samples) {
    meta.push_back(static_cast<std::int32_t>(s.id));
    meta.push_back(static_cast<std::int32_t>(s.label));
  }
  write_i32_le(buf, meta);
  for (const auto& s : dataset.samples) write_f32_le(buf, s.image.values());
  return sha256_hex(buf.str());
}

MixedManifest make_manifest(const Dataset& dataset, const std::string& trigger_hash, const PoisonPlan& plan,
                            const MixedTrainingSet& mixed) {
  MixedManifest m;
  m.dataset_hash = dataset_content_hash(dataset);
  m.trigger_hash = trigger_hash;
  m.label_mode = plan.label_mode;
  m.target = plan.target;
  m.mixing_ratio = mixing_ratio(mixed);
  m.dataset_size = mixed.data.size();
  m.poison_ids = mixed.poison_ids;
  return m;
}

void write_mixed_manifest(const std::filesystem::path& path, const MixedManifest& m) {
  TextHeader header;
  header.add("poisonlab-mixed", "1");
  header.add("dataset_hash", m.dataset_hash.empty() ? "-" : m.dataset_hash);
  header.add("trigger_hash", m.trigger_hash.empty() ? "-" : m.trigger_hash);
  header.add("label_mode", to_string(m.label_mode));
  header.add("target", std::to_string(m.target));
  header.add("mixing_ratio", format_exact(m.mixing_ratio));
  header.add("dataset_size", std::to_string(m.dataset_size));
  header.add("poison_count", std::to_string(m.poison_ids.size()));
  auto out = open_for_write(path);
  header.write(out);
  for (SampleId id : m.poison_ids) out << id << '\n';
  if (!out) throw IoError(path.string() + ": write failed");
}

MixedManifest read_mixed_manifest(const std::filesystem::path& path) {
  auto in = open_for_read(path);
  const std::string src = path.string();
  const TextHeader header = TextHeader::read(in, src);
  if (header.get("poisonlab-mixed") != "1") throw DecodeError(src + ": not a mixed-set manifest");
  MixedManifest m;
  m.dataset_hash = header.get("dataset_hash") == "-" ? "" : header.get("dataset_hash");
  m.trigger_hash = header.get("trigger_hash") == "-" ? "" : header.get("trigger_hash");
  m.label_mode = parse_label_mode(header.get("label_mode"));
  m.target = static_cast<ClassIndex>(parse_int(header.get("target"), src + " target"));
  m.mixing_ratio = parse_double(header.get("mixing_ratio"), src + " mixing_ratio");
  m.dataset_size = static_cast<std::size_t>(parse_int(header.get("dataset_size"), src + " dataset_size"));
  const auto count = parse_int(header.get("poison_count"), src + " poison_count");
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    m.poison_ids.push_back(parse_int(line, src + " poison id"));
  }
  if (static_cast<std::int64_t>(m.poison_ids.size()) != count) {
    throw DecodeError(src + ": poison_count " + std::to_string(count) + " but " +
                      std::to_string(m.poison_ids.size()) + " ids listed");
  }
  return m;
}

MixedTrainingSet replay_mixed_manifest(const Dataset& dataset, const Trigger& trigger, const MixedManifest& manifest,
                                       const std::string& trigger_hash) {
  if (dataset.size() != manifest.dataset_size) {
    throw ValidationError("manifest expects " + std::to_string(manifest.dataset_size) + " samples, dataset has " +
                          std::to_string(dataset.size()));
  }
  if (!manifest.dataset_hash.empty() && dataset_content_hash(dataset) != manifest.dataset_hash) {
    throw ValidationError("dataset does not match the manifest's dataset hash");
  }
  if (!trigger_hash.empty() && !manifest.trigger_hash.empty() && trigger_hash != manifest.trigger_hash) {
    throw ValidationError("trigger file does not match the manifest's trigger hash");
  }
  PoisonPlan plan;
  plan.pool = manifest.poison_ids;
  plan.trigger = trigger;
  plan.target = manifest.target;
  plan.label_mode = manifest.label_mode;
  plan.mixing_ratio = manifest.mixing_ratio;
  const auto poisoned = build_poisoned_set(dataset, plan);
  return mix_training_set(dataset, poisoned);
}

}  // namespace poisonlab
