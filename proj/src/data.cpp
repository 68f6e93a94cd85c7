#include "poisonlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "poisonlab/binary_io.hpp"
#include "poisonlab/errors.hpp"
#include "poisonlab/hashing.hpp"
#include "poisonlab/image_codec.hpp"
#include "poisonlab/rng.hpp"

namespace poisonlab {

namespace fs = std::filesystem;

void to_json(nlohmann::json& j, const Shape& s) { j = {s.height, s.width, s.channels}; }

void from_json(const nlohmann::json& j, Shape& s) {
  if (!j.is_array() || j.size() != 3) throw ValidationError("resolution must be [H, W, C]");
  s = Shape{j[0].get<int>(), j[1].get<int>(), j[2].get<int>()};
}

void to_json(nlohmann::json& j, const SyntheticConfig& c) {
  j = {{"count_per_class", c.count_per_class}, {"resolution", c.resolution},
       {"artifact_amplitude", c.artifact_amplitude}, {"artifact_period", c.artifact_period},
       {"noise_std", c.noise_std}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SyntheticConfig& c) {
  SyntheticConfig d;
  c.count_per_class = j.value("count_per_class", d.count_per_class);
  c.resolution = j.contains("resolution") ? j.at("resolution").get<Shape>() : d.resolution;
  c.artifact_amplitude = j.value("artifact_amplitude", d.artifact_amplitude);
  c.artifact_period = j.value("artifact_period", d.artifact_period);
  c.noise_std = j.value("noise_std", d.noise_std);
  c.seed = j.value("seed", d.seed);
}

void SyntheticConfig::validate() const {
  if (count_per_class <= 0) throw ValidationError("count_per_class must be positive");
  if (artifact_period < 2) throw ValidationError("artifact_period must be at least 2");
  if (artifact_amplitude < 0.0 || !std::isfinite(artifact_amplitude)) {
    throw ValidationError("artifact_amplitude must be finite and non-negative");
  }
  if (noise_std < 0.0 || !std::isfinite(noise_std)) {
    throw ValidationError("noise_std must be finite and non-negative");
  }
  if (resolution.height <= 0 || resolution.width <= 0 ||
      (resolution.channels != 1 && resolution.channels != 3)) {
    throw ValidationError("resolution " + resolution.str() + " is invalid");
  }
}

namespace {

constexpr int kSmoothComponents = 3;

// Per-channel base level plus a few cosines of at most two cycles per image.
ImageArray smooth_field(Shape shape, Rng& rng) {
  ImageArray image(shape);
  for (int ch = 0; ch < shape.channels; ++ch) {
    const double level = rng.uniform(0.3, 0.7);
    struct Wave {
      double fy, fx, phase, amp;
    };
    Wave waves[kSmoothComponents];
    for (auto& w : waves) {
      do {
        w.fy = static_cast<double>(rng.below(3));
        w.fx = static_cast<double>(rng.below(3));
      } while (w.fy == 0.0 && w.fx == 0.0);
      w.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      w.amp = rng.uniform(0.0, 0.08);
    }
    for (int r = 0; r < shape.height; ++r) {
      for (int c = 0; c < shape.width; ++c) {
        double v = level;
        for (const auto& w : waves) {
          v += w.amp * std::cos(2.0 * std::numbers::pi *
                                    (w.fy * r / shape.height + w.fx * c / shape.width) +
                                w.phase);
        }
        image.at(r, c, ch) = static_cast<float>(v);
      }
    }
  }
  return image;
}

double checker_sign(int row, int col, int period) {
  const int half = std::max(1, period / 2);
  const bool a = (row % period) < half;
  const bool b = (col % period) < half;
  return a == b ? 1.0 : -1.0;
}

}  // namespace

Dataset generate_synthetic(const SyntheticConfig& config) {
  config.validate();
  Dataset dataset;
  dataset.resolution = config.resolution;
  dataset.source_hash = sha256_hex(nlohmann::json(config).dump());
  const int n = config.count_per_class;
  dataset.samples.reserve(2 * static_cast<std::size_t>(n));
  const Shape shape = config.resolution;
  for (int k = 0; k < 2 * n; ++k) {
    const ClassIndex label = k < n ? kReal : kFake;
    Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(k)));
    ImageArray image = smooth_field(shape, rng);
    for (int r = 0; r < shape.height; ++r) {
      for (int c = 0; c < shape.width; ++c) {
        const double artifact =
            label == kFake ? config.artifact_amplitude * checker_sign(r, c, config.artifact_period)
                           : 0.0;
        for (int ch = 0; ch < shape.channels; ++ch) {
          double v = image.at(r, c, ch) + artifact;
          if (config.noise_std > 0.0) v += config.noise_std * rng.normal();
          image.at(r, c, ch) = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }
    }
    dataset.samples.push_back(LabeledSample{k, std::move(image), label});
  }
  return dataset;
}

Dataset load_image_folder(const fs::path& root, Shape resolution) {
  if (resolution.height <= 0 || resolution.width <= 0 ||
      (resolution.channels != 1 && resolution.channels != 3)) {
    throw ValidationError("resolution " + resolution.str() + " is invalid");
  }
  if (!fs::is_directory(root)) throw StructureError(root.string() + ": not a directory");
  std::vector<std::string> subdirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) subdirs.push_back(entry.path().filename().string());
  }
  std::sort(subdirs.begin(), subdirs.end());
  if (subdirs != std::vector<std::string>{"fake", "real"}) {
    std::string found;
    for (const auto& s : subdirs) found += (found.empty() ? "" : ", ") + s;
    throw StructureError(root.string() + ": expected exactly subdirectories 'real' and 'fake', found [" +
                         found + "]");
  }

  Dataset dataset;
  dataset.resolution = resolution;
  Sha256 source;
  SampleId next_id = 0;
  for (const auto& [dir, label] : {std::pair{"real", kReal}, std::pair{"fake", kFake}}) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(root / dir)) {
      if (!entry.is_regular_file()) continue;
      if (entry.path().filename().string().starts_with(".")) continue;
      files.push_back(entry.path());
    }
    if (files.empty()) throw ValidationError(root.string() + ": class directory '" + dir + "' is empty");
    std::sort(files.begin(), files.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });
    for (const auto& file : files) {
      ImageArray decoded = decode_image_file(file, resolution.channels);
      source.update(std::string(dir) + "/" + file.filename().string() + "\n");
      source.update(sha256_file(file));
      dataset.samples.push_back(
          LabeledSample{next_id++, resize_bilinear(decoded, resolution.height, resolution.width), label});
    }
  }
  dataset.source_hash = source.hex_digest();
  return dataset;
}

DatasetSplit split_dataset(const Dataset& dataset, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ValidationError("test_fraction must lie in (0,1)");
  }
  if (dataset.empty()) throw ValidationError("cannot split an empty dataset");
  std::vector<char> to_test(dataset.size(), 0);
  Rng rng(seed);
  for (ClassIndex label : {kReal, kFake}) {
    std::vector<std::size_t> positions;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      if (dataset.samples[i].label == label) positions.push_back(i);
    }
    const auto take = static_cast<std::size_t>(std::lround(test_fraction * positions.size()));
    rng.shuffle(std::span<std::size_t>(positions));
    for (std::size_t k = 0; k < take; ++k) to_test[positions[k]] = 1;
  }
  DatasetSplit split;
  for (Dataset* part : {&split.train, &split.test}) {
    part->resolution = dataset.resolution;
    part->class_names = dataset.class_names;
    part->source_hash = dataset.source_hash;
  }
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    (to_test[i] ? split.test : split.train).samples.push_back(dataset.samples[i]);
  }
  if (split.train.empty() || split.test.empty()) {
    throw ValidationError("split would leave one side empty");
  }
  return split;
}

void write_dataset_cache(const fs::path& path, const Dataset& dataset) {
  validate_dataset(dataset);
  TextHeader header;
  header.add("poisonlab-dataset", "1");
  header.add("resolution", std::to_string(dataset.resolution.height) + " " +
                               std::to_string(dataset.resolution.width) + " " +
                               std::to_string(dataset.resolution.channels));
  header.add("count", std::to_string(dataset.size()));
  header.add("class_names", dataset.class_names[0] + " " + dataset.class_names[1]);
  header.add("source_hash", dataset.source_hash.empty() ? "-" : dataset.source_hash);
  header.add("blocks", "pixels:f32le labels:i32le ids:i32le");

  auto out = open_for_write(path);
  header.write(out);
  for (const auto& s : dataset.samples) write_f32_le(out, s.image.values());
  std::vector<std::int32_t> labels, ids;
  for (const auto& s : dataset.samples) {
    labels.push_back(s.label);
    if (s.id < 0 || s.id > INT32_MAX) throw ValidationError("sample id does not fit the cache format");
    ids.push_back(static_cast<std::int32_t>(s.id));
  }
  write_i32_le(out, labels);
  write_i32_le(out, ids);
}

Dataset read_dataset_cache(const fs::path& path) {
  auto in = open_for_read(path);
  const std::string src = path.string();
  const TextHeader header = TextHeader::read(in, src);
  if (header.get("poisonlab-dataset") != "1") throw DecodeError(src + ": unsupported cache version");
  Dataset dataset;
  {
    std::istringstream rs(header.get("resolution"));
    rs >> dataset.resolution.height >> dataset.resolution.width >> dataset.resolution.channels;
    if (!rs) throw DecodeError(src + ": bad resolution line");
    std::istringstream cs(header.get("class_names"));
    cs >> dataset.class_names[0] >> dataset.class_names[1];
  }
  const std::string& hash = header.get("source_hash");
  dataset.source_hash = hash == "-" ? "" : hash;
  const auto count = parse_int(header.get("count"), src + " count");
  if (count < 0) throw DecodeError(src + ": negative count");
  const std::size_t n = static_cast<std::size_t>(count);
  std::vector<ImageArray> images;
  images.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    ImageArray image(dataset.resolution);
    read_f32_le(in, image.values(), src);
    images.push_back(std::move(image));
  }
  std::vector<std::int32_t> labels(n), ids(n);
  read_i32_le(in, labels, src);
  read_i32_le(in, ids, src);
  for (std::size_t i = 0; i < n; ++i) {
    dataset.samples.push_back(LabeledSample{ids[i], std::move(images[i]), labels[i]});
  }
  validate_dataset(dataset);
  return dataset;
}

}  // namespace poisonlab
