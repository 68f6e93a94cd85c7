// Thin pybind11 layer over the C++ library. JSON crosses the boundary as
// strings (the Python package decodes them); images as float32 (N, H, W, C).

#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include "poisonlab/errors.hpp"
#include "poisonlab/experiment.hpp"
#include "poisonlab/report.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace poisonlab;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

FloatArray images_to_numpy(const std::vector<ImageArray>& images, Shape shape) {
  FloatArray out({static_cast<py::ssize_t>(images.size()), static_cast<py::ssize_t>(shape.height),
                  static_cast<py::ssize_t>(shape.width), static_cast<py::ssize_t>(shape.channels)});
  float* dst = out.mutable_data();
  for (const auto& img : images) {
    std::memcpy(dst, img.values().data(), img.size() * sizeof(float));
    dst += img.size();
  }
  return out;
}

FloatArray image_to_numpy(const ImageArray& img) {
  const Shape s = img.shape();
  FloatArray out({s.height, s.width, s.channels});
  std::memcpy(out.mutable_data(), img.values().data(), img.size() * sizeof(float));
  return out;
}

// Accepts (H, W, C) or (N, H, W, C).
std::vector<ImageArray> numpy_to_images(const FloatArray& a) {
  if (a.ndim() != 3 && a.ndim() != 4) throw ValidationError("expected an (H, W, C) or (N, H, W, C) float array");
  const bool single = a.ndim() == 3;
  const py::ssize_t n = single ? 1 : a.shape(0);
  const int off = single ? 0 : 1;
  const Shape s{static_cast<int>(a.shape(off)), static_cast<int>(a.shape(off + 1)), static_cast<int>(a.shape(off + 2))};
  std::vector<ImageArray> out;
  out.reserve(static_cast<std::size_t>(n));
  const float* src = a.data();
  for (py::ssize_t i = 0; i < n; ++i) {
    out.emplace_back(s, std::vector<float>(src, src + s.size()));
    src += s.size();
  }
  return out;
}

py::dict dataset_arrays(const Dataset& d) {
  std::vector<ImageArray> images;
  std::vector<std::int64_t> ids, labels;
  for (const auto& s : d.samples) {
    images.push_back(s.image);
    ids.push_back(s.id);
    labels.push_back(s.label);
  }
  py::dict out;
  out["images"] = images_to_numpy(images, d.resolution);
  out["labels"] = py::array_t<std::int64_t>(static_cast<py::ssize_t>(labels.size()), labels.data());
  out["ids"] = py::array_t<std::int64_t>(static_cast<py::ssize_t>(ids.size()), ids.data());
  out["class_names"] = py::make_tuple(d.class_names[0], d.class_names[1]);
  out["source_hash"] = d.source_hash;
  return out;
}

std::string trigger_json(const Trigger& t) {
  nlohmann::json j = {{"kind", to_string(t.kind)},
                      {"epsilon", t.epsilon},
                      {"lambda", t.lambda},
                      {"patch_row", t.patch_row},
                      {"patch_col", t.patch_col},
                      {"seed", t.provenance.seed},
                      {"surrogate_fingerprint", t.provenance.surrogate_fingerprint},
                      {"steps", t.provenance.steps}};
  return j.dump();
}

PipelineOptions options_for(bool force, const std::function<void(const std::string&)>& log) {
  PipelineOptions o;
  o.force = force;
  if (log) {
    o.log = [log](const std::string& m) {
      py::gil_scoped_acquire gil;
      log(m);
    };
  }
  return o;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of the poisonlab package.";

  auto base = py::register_exception<Error>(m, "PoisonlabError", PyExc_RuntimeError);
  auto validation = py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<StructureError>(m, "StructureError", validation.ptr());
  py::register_exception<DecodeError>(m, "DecodeError", validation.ptr());
  py::register_exception<TrainingError>(m, "TrainingError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());

  m.def("version", &tool_version);

  m.def(
      "normalize_config",
      [](const std::string& text, const fs::path& base_dir) {
        const auto c = experiment_config_from_json(nlohmann::json::parse(text), base_dir);
        c.validate();
        return experiment_config_to_json(c).dump();
      },
      py::arg("config_json"), py::arg("base_dir") = fs::path{});
  m.def(
      "load_config", [](const fs::path& p) { return experiment_config_to_json(load_experiment_config(p)).dump(); },
      py::arg("path"));

  m.def(
      "generate_synthetic",
      [](const std::string& text) {
        return dataset_arrays(generate_synthetic(nlohmann::json::parse(text).get<SyntheticConfig>()));
      },
      py::arg("config_json") = "{}");
  m.def(
      "read_dataset_cache", [](const fs::path& p) { return dataset_arrays(read_dataset_cache(p)); },
      py::arg("path"));

  m.def(
      "read_trigger",
      [](const fs::path& p) {
        const Trigger t = read_trigger(p);
        return py::make_tuple(trigger_json(t), image_to_numpy(t.payload));
      },
      py::arg("path"));
  m.def(
      "apply_trigger",
      [](const FloatArray& images, const fs::path& trigger_path) {
        const Trigger t = read_trigger(trigger_path);
        auto in = numpy_to_images(images);
        for (auto& img : in) img = apply_trigger(img, t);
        if (images.ndim() == 3) return image_to_numpy(in.front());
        return images_to_numpy(in, in.empty() ? t.payload.shape() : in.front().shape());
      },
      py::arg("images"), py::arg("trigger_path"));
  m.def(
      "project_linf",
      [](const FloatArray& delta, double eps) {
        const auto in = numpy_to_images(delta);
        return image_to_numpy(project_linf(in.front(), eps));
      },
      py::arg("delta"), py::arg("epsilon"));

  m.def(
      "predict",
      [](const fs::path& checkpoint, const FloatArray& images) {
        const CompactCnn model = read_checkpoint(checkpoint);
        const auto in = numpy_to_images(images);
        py::gil_scoped_release release;
        return predict_batch(model, in);
      },
      py::arg("checkpoint"), py::arg("images"));

  m.def(
      "forgetting_score",
      [](const std::vector<std::uint8_t>& row) { return forgetting_score(row); }, py::arg("row"));

  m.def(
      "run_pipeline",
      [](const std::string& config_json, const fs::path& out, bool force,
         const std::function<void(const std::string&)>& log) {
        const auto config = experiment_config_from_json(nlohmann::json::parse(config_json));
        const auto opts = options_for(force, log);
        PipelineResult r;
        {
          py::gil_scoped_release release;
          r = run_pipeline(config, out, opts);
        }
        return r.manifest.dump();
      },
      py::arg("config_json"), py::arg("out"), py::arg("force") = false, py::arg("log") = nullptr);
  m.def(
      "replay_manifest",
      [](const fs::path& manifest, const fs::path& out, const std::function<void(const std::string&)>& log) {
        const auto opts = options_for(false, log);
        ReplayReport r;
        {
          py::gil_scoped_release release;
          r = replay_manifest(manifest, out, opts);
        }
        return py::make_tuple(r.compared, r.mismatches);
      },
      py::arg("manifest"), py::arg("out"), py::arg("log") = nullptr);
  m.def("verify_manifest", &verify_manifest, py::arg("manifest"));
  m.def(
      "write_report",
      [](const std::vector<fs::path>& runs, const fs::path& out) {
        const auto r = write_report(runs, out);
        return py::make_tuple(r.summary.dump(), r.warnings);
      },
      py::arg("runs"), py::arg("out"));
}
