// Acceptance run: one PASS/FAIL line per criterion, plus INFO lines with the
// measured numbers. Exit status is 0 only if every selected criterion passes.
//
//   poisonlab_acceptance --work <dir> --configs <dir> [--only 1,2,...]

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "poisonlab/binary_io.hpp"
#include "poisonlab/errors.hpp"
#include "poisonlab/experiment.hpp"
#include "poisonlab/hashing.hpp"
#include "reference_cnn.hpp"

namespace fs = std::filesystem;
using namespace poisonlab;

namespace {

const double kEps = 2.0 / 255.0;

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      notes.push_back("violated: " + what);
    }
  }
  void info(const std::string& what) { notes.push_back(what); }
};

std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

ImageArray random_image(Shape shape, Rng& rng) {
  ImageArray img(shape);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(rng.uniform());
  return img;
}

Dataset random_dataset(int reals, int fakes, Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Dataset d;
  d.resolution = shape;
  for (int i = 0; i < reals + fakes; ++i) d.samples.push_back({i, random_image(shape, rng), i < reals ? kReal : kFake});
  rng.shuffle(std::span<LabeledSample>(d.samples));
  return d;
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(read_text_file(p)); }

// ---------------------------------------------------------------- 1
Outcome criterion_projection() {
  Outcome o;
  SyntheticConfig sc;
  sc.count_per_class = 200;
  sc.artifact_amplitude = 0.012;
  sc.noise_std = 0.005;
  const Dataset data = generate_synthetic(sc);
  CompactCnnSpec spec;
  spec.input = data.resolution;
  TrainConfig tc;
  tc.epochs = 3;
  tc.milestones = {};
  const auto surrogate = train_classifier(spec, data, tc).model;
  const PgdConfig defaults;
  o.require(defaults.epsilon == kEps && defaults.steps == 50, "defaults are eps = 2/255, 50 steps");
  double worst = 0.0;
  int updates = 0;
  const Trigger t = optimize_trigger(surrogate, data, defaults, [&](int, int, const ImageArray& d) {
    ++updates;
    worst = std::max(worst, static_cast<double>(max_abs(d.values())));
  });
  const double final_norm = max_abs(t.payload.values());
  o.require(worst <= kEps + 1e-9, "every intermediate delta within the ball");
  o.require(final_norm <= kEps + 1e-9, "final delta within the ball");
  o.require(updates >= 50, "observer saw every update");
  o.info("updates " + std::to_string(updates) + ", max |delta| over all steps " + fixed(worst * 255, 4) + "/255");
  return o;
}

// ---------------------------------------------------------------- 2
Outcome criterion_linear_oracle() {
  Outcome o;
  const Shape shape{32, 32, 3};
  Rng rng(5);
  std::vector<float> wr(shape.size()), wf(shape.size());
  for (std::size_t i = 0; i < wr.size(); ++i) {
    wr[i] = static_cast<float>(rng.uniform(-1, 1));
    do {
      wf[i] = static_cast<float>(rng.uniform(-1, 1));
    } while (std::abs(wf[i] - wr[i]) < 1e-4f);
  }
  const LinearClassifier model(shape, wr, wf, {0.0f, 0.3f});
  const Dataset data = random_dataset(40, 60, shape, 2);
  PgdConfig cfg;
  cfg.augment = AugmentConfig{0, 0.0};
  cfg.steps = 20;  // 20 * eps/10 >= eps
  const Trigger t = optimize_trigger(model, data, cfg);
  double worst = 0.0;
  for (std::size_t i = 0; i < wr.size(); ++i) {
    const double w = static_cast<double>(wf[i]) - wr[i];
    const double expect = -kEps * (w > 0 ? 1.0 : -1.0);
    worst = std::max(worst, std::abs(t.payload[i] - expect));
  }
  o.require(worst <= 1e-6, "payload equals -eps * sign(w_fake - w_real) within 1e-6");
  o.info("max deviation " + fixed(worst * 1e9, 3) + "e-9 over " + std::to_string(wr.size()) + " components");
  return o;
}

// ---------------------------------------------------------------- 3
Outcome criterion_gradient() {
  Outcome o;
  Rng rng(3);
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    CompactCnnSpec spec;
    spec.input = {4, 4, 1};
    spec.blocks = {{3, 1}};
    spec.activation = Activation::tanh;
    spec.pooling = Pooling::average;
    CompactCnn m(spec);
    for (auto& p : m.parameters()) p = static_cast<float>(rng.uniform(-0.8, 0.8));
    const ImageArray x = random_image(spec.input, rng);
    const int target = trial % 2;
    const auto g = input_gradient(m, std::span(&x, 1), target)[0];
    std::vector<double> px(x.values().begin(), x.values().end());
    for (std::size_t i = 0; i < px.size(); ++i) {
      const double h = 1e-5, keep = px[i];
      px[i] = keep + h;
      const double up = testing::reference_loss(m, px, target);
      px[i] = keep - h;
      const double down = testing::reference_loss(m, px, target);
      px[i] = keep;
      const double fd = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(g[i] - fd) / std::max(std::abs(fd), 1e-6));
    }
  }
  o.require(worst <= 1e-3, "relative error <= 1e-3 on every pixel");
  o.info("worst relative error " + fixed(worst * 1e6, 2) + "e-6 over 10 models x 16 pixels");
  return o;
}

// ---------------------------------------------------------------- 4
Outcome criterion_forgetting() {
  Outcome o;
  Rng rng(4);
  int disagreements = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<std::uint8_t> bits(1 + rng.below(60));
    const double p = rng.uniform();
    for (auto& b : bits) b = rng.bernoulli(p) ? 1 : 0;
    std::string s;
    for (auto b : bits) s.push_back(static_cast<char>('0' + b));
    int brute = 0;
    for (auto pos = s.find("10"); pos != std::string::npos; pos = s.find("10", pos + 1)) ++brute;
    disagreements += forgetting_score(bits) != brute;
  }
  o.require(disagreements == 0, "exact agreement on 1000 sequences");
  o.info(std::to_string(disagreements) + " disagreements");
  return o;
}

// ---------------------------------------------------------------- 5
Outcome criterion_set_algebra() {
  Outcome o;
  Rng rng(5);
  for (int trial = 0; trial < 60; ++trial) {
    const Shape shape{4, 4, 3};
    const Dataset d = random_dataset(30 + static_cast<int>(rng.below(100)), 30 + static_cast<int>(rng.below(100)),
                                     shape, trial);
    const auto mode = trial % 2 ? LabelMode::clean : LabelMode::dirty;
    const double r = rng.uniform(0.03, 0.2);
    PoisonPlan plan;
    plan.pool = select_random(d, r, mode, kReal, rng.next()).ids();
    plan.trigger = make_blended_trigger(grid_blend_pattern(shape), 0.1);
    plan.label_mode = mode;
    plan.mixing_ratio = r;
    const auto mixed = mix_training_set(d, build_poisoned_set(d, plan));
    const std::set<SampleId> pool(plan.pool.begin(), plan.pool.end());
    o.require(mixed.data.size() == d.size(), "|D'| = |D|");
    for (std::size_t i = 0; i < d.size(); ++i) {
      const auto& a = d.samples[i];
      const auto& b = mixed.data.samples[i];
      if (pool.count(a.id)) {
        o.require(b.label == kReal, "poisoned label = R");
        o.require(a.label == (mode == LabelMode::dirty ? kFake : kReal), "pool drawn from the right class");
      } else {
        o.require(a == b, "non-poison sample bit-identical");
      }
    }
  }
  // FUS pool size constant and exactly floor(alpha * n) replaced
  const Shape shape{2, 2, 1};
  const Dataset d = random_dataset(200, 200, shape, 1);
  const Dataset validation = random_dataset(10, 10, shape, 2);
  FusConfig c;
  c.iterations = 5;
  c.mixing_ratio = 0.05;
  const auto trigger = make_blended_trigger(ImageArray(shape, 0.5f), 0.1);
  FusTrainFn fake = [](const MixedTrainingSet&, std::span<const LabeledSample> poisoned, int) {
    std::vector<SampleId> ids;
    for (const auto& s : poisoned) ids.push_back(s.id);
    CorrectnessLedger ledger(ids);
    for (int e = 0; e < 6; ++e) {
      std::vector<std::uint8_t> col;
      for (SampleId id : ids) col.push_back(static_cast<std::uint8_t>((id + e) % 2));
      ledger.record_epoch(col);
    }
    const Shape s = poisoned.front().image.shape();
    return InfectedTraining{std::make_shared<LinearClassifier>(s, std::vector<float>(s.size(), 0.0f),
                                                               std::vector<float>(s.size(), 0.0f)),
                            ledger};
  };
  const auto result = fus_select(d, trigger, c, kReal, fake, validation);
  const std::size_t n = 20, k = 6;
  for (int i = 0; i < c.iterations; ++i) {
    const auto& it = result.trace[static_cast<std::size_t>(i)];
    o.require(it.pool.size() == n, "FUS pool size constant");
    o.require(it.removed.size() == k && it.added.size() == k, "FUS replaces exactly floor(alpha * n)");
  }
  o.require(result.pool.size() == n, "FUS final pool size");
  o.info("60 random instances, FUS n = 20, k = 6 over 5 iterations");
  return o;
}

// ------------------------------------------------------------ 6 and 7
struct CellKey {
  std::string attack;
  double ratio;
  bool operator<(const CellKey& o) const { return std::tie(attack, ratio) < std::tie(o.attack, o.ratio); }
};

struct Sweep {
  std::map<std::uint64_t, double> clean_ba;
  std::map<std::uint64_t, double> transfer_optimized;
  std::map<CellKey, std::map<std::uint64_t, double>> asr, ba;
  bool ok = false;
};

Sweep collect(const fs::path& run, const nlohmann::json& manifest) {
  Sweep s;
  s.ok = manifest.at("status") == "ok";
  for (const auto& b : manifest.at("baselines")) {
    if (b.value("status", "") != "ok") continue;
    const auto m = read_json(run / b.at("dir").get<std::string>() / "metrics.json");
    const auto seed = b.at("seed").get<std::uint64_t>();
    s.clean_ba[seed] = m.at("ba").at("value").get<double>();
    if (m.at("trigger_transfer_asr").contains("optimized")) {
      s.transfer_optimized[seed] = m.at("trigger_transfer_asr").at("optimized").at("value").get<double>();
    }
  }
  for (const auto& c : manifest.at("cells")) {
    if (c.value("status", "") != "ok") continue;
    const CellKey key{c.at("attack").get<std::string>(), c.at("ratio").get<double>()};
    const auto seed = c.at("seed").get<std::uint64_t>();
    s.asr[key][seed] = c.at("asr").at("value").get<double>();
    s.ba[key][seed] = c.at("ba").at("value").get<double>();
  }
  return s;
}

double mean(const std::map<std::uint64_t, double>& m) {
  double s = 0.0;
  for (const auto& [_, v] : m) s += v;
  return m.empty() ? std::nan("") : s / static_cast<double>(m.size());
}

std::string per_seed(const std::map<std::uint64_t, double>& m) {
  std::string s;
  for (const auto& [seed, v] : m) s += (s.empty() ? "" : " ") + fixed(v, 3);
  return "[" + s + "]";
}

ExperimentConfig desk_config(const fs::path& configs, const std::string& name) {
  return load_experiment_config(configs / name);
}

Outcome criterion_desk(const fs::path& configs, const fs::path& work, bool reuse) {
  Outcome o;
  ExperimentConfig config = desk_config(configs, "desk_dirty.json");
  config.mixing_ratios = {0.01, 0.02};
  config.fus.iterations = 3;
  config.attacks = {{TriggerMethod::blended, SelectionMethod::random},
                    {TriggerMethod::optimized, SelectionMethod::random},
                    {TriggerMethod::optimized, SelectionMethod::fus}};
  const fs::path run = work / "desk_dirty";
  o.require(config.seeds.size() == 3, "three seeds");
  o.require(config.dataset.synthetic && config.dataset.synthetic->count_per_class == 1250, "2000 train / 500 test");
  o.require(config.victim.epochs == 20, "20 epochs");
  nlohmann::json manifest;
  if (reuse && fs::exists(run / "manifest.json")) {
    manifest = read_json(run / "manifest.json");
  } else {
    fs::remove_all(run);
    manifest = run_pipeline(config, run, PipelineOptions{true, [](const std::string& m) {
                                                           std::cerr << "  [desk] " << m << "\n";
                                                         }})
                   .manifest;
  }
  const Sweep s = collect(run, manifest);
  o.require(s.ok, "pipeline completed without errors");

  const double clean = mean(s.clean_ba);
  o.info("clean BA per seed " + per_seed(s.clean_ba) + " mean " + fixed(clean));
  o.info("optimized trigger on the clean model (no poisoning), ASR per seed " + per_seed(s.transfer_optimized));
  for (const auto& [key, seeds] : s.asr) {
    o.info(key.attack + " r=" + format_exact(key.ratio) + ": ASR " + per_seed(seeds) + " mean " + fixed(mean(seeds)) +
           ", BA " + per_seed(s.ba.at(key)));
  }
  auto asr = [&](const std::string& a, double r) {
    const auto it = s.asr.find(CellKey{a, r});
    return it == s.asr.end() ? std::nan("") : mean(it->second);
  };
  o.require(clean >= 0.95, "6a clean BA >= 0.95");
  o.require(asr("blended_random", 0.02) >= 0.80, "6b blended+random ASR >= 0.80 at r = 0.02");
  for (double r : {0.01, 0.02}) {
    o.require(asr("optimized_random", r) >= asr("blended_random", r) - 0.01,
              "6c optimized >= blended - 0.01 at r = " + format_exact(r));
  }
  o.require(asr("optimized_fus", 0.01) >= asr("blended_random", 0.01) - 0.01,
            "6d Bad-Deepfake >= blended+random - 0.01 at r = 0.01");
  for (const auto& [key, seeds] : s.ba) {
    for (const auto& [seed, ba] : seeds) {
      const auto c = s.clean_ba.find(seed);
      o.require(c != s.clean_ba.end() && std::abs(ba - c->second) <= 0.03,
                "6e BA within 0.03 of clean for " + key.attack + " r=" + format_exact(key.ratio) + " seed " +
                    std::to_string(seed));
    }
  }
  return o;
}

Outcome criterion_clean_label(const fs::path& configs, const fs::path& work, bool reuse) {
  Outcome o;
  ExperimentConfig config = desk_config(configs, "desk_clean.json");
  o.require(config.label_mode == LabelMode::clean, "clean-label preset");
  config.mixing_ratios = {0.05};
  config.fus.iterations = 3;
  config.attacks = {{TriggerMethod::optimized, SelectionMethod::fus}};
  const fs::path run = work / "desk_clean";
  nlohmann::json manifest;
  if (reuse && fs::exists(run / "manifest.json")) {
    manifest = read_json(run / "manifest.json");
  } else {
    fs::remove_all(run);
    manifest = run_pipeline(config, run, PipelineOptions{true, [](const std::string& m) {
                                                           std::cerr << "  [clean] " << m << "\n";
                                                         }})
                   .manifest;
  }
  const Sweep s = collect(run, manifest);
  o.require(s.ok, "pipeline completed without errors");
  const auto& cells = s.asr.at(CellKey{"optimized_fus", 0.05});
  o.info("clean-label Bad-Deepfake r=0.05 ASR " + per_seed(cells) + " mean " + fixed(mean(cells)) +
         "; clean-model transfer " + per_seed(s.transfer_optimized));
  o.require(cells.size() == 3 && mean(cells) >= 0.5, "mean ASR >= 0.5 over 3 seeds");

  // Rebuild every D' and compare labels with D.
  const Dataset train = read_dataset_cache(run / "data" / "train.cache");
  int changed = 0, rebuilt = 0;
  for (const auto& c : manifest.at("cells")) {
    const fs::path dir = run / c.at("dir").get<std::string>();
    const auto seed = c.at("seed").get<std::uint64_t>();
    const Trigger t = read_trigger(run / ("seed_" + std::to_string(seed)) / "triggers" / "optimized.trigger");
    const auto mixed = replay_mixed_manifest(train, t, read_mixed_manifest(dir / "mixed.manifest"));
    ++rebuilt;
    for (std::size_t i = 0; i < train.size(); ++i) changed += mixed.data.samples[i].label != train.samples[i].label;
  }
  o.require(rebuilt == 3 && changed == 0, "no label in D' differs from D");
  o.info(std::to_string(rebuilt) + " mixed sets rebuilt, " + std::to_string(changed) + " labels changed");
  return o;
}

// ---------------------------------------------------------------- 8
Outcome criterion_determinism(const fs::path& configs, const fs::path& work) {
  Outcome o;
  ExperimentConfig config = load_experiment_config(configs / "smoke.json");
  config.seeds = {0, 1};
  config.deterministic = true;
  const fs::path run = work / "determinism";
  for (const char* d : {"determinism", "determinism_replay", "roundtrip"}) fs::remove_all(work / d);
  const auto first = run_pipeline(config, run, PipelineOptions{true, {}});
  o.require(first.ok, "pipeline ok");
  o.require(verify_manifest(run / "manifest.json").empty(), "manifest hashes verify");
  const auto replay = replay_manifest(run / "manifest.json", work / "determinism_replay", PipelineOptions{true, {}});
  o.require(replay.ok(), "replay reproduces every artifact hash");
  o.info("replay compared " + std::to_string(replay.compared) + " artifacts, " +
         std::to_string(replay.mismatches.size()) + " mismatches");
  const auto again = read_json(work / "determinism_replay" / "manifest.json");
  for (std::size_t i = 0; i < first.manifest.at("cells").size(); ++i) {
    const auto& a = first.manifest.at("cells")[i];
    const auto& b = again.at("cells")[i];
    o.require(a.at("asr") == b.at("asr") && a.at("ba") == b.at("ba"), "ASR/BA identical in replay");
  }

  // Round trips: read, write, compare bytes.
  const fs::path rt = work / "roundtrip";
  fs::create_directories(rt);
  const std::string cell = "seed_0/optimized_fus/r_0.05/";
  auto same = [&](const fs::path& a, const fs::path& b) { return sha256_file(a) == sha256_file(b); };
  write_dataset_cache(rt / "train.cache", read_dataset_cache(run / "data/train.cache"));
  o.require(same(rt / "train.cache", run / "data/train.cache"), "dataset cache round-trips bit-exactly");
  write_trigger(rt / "t.trigger", read_trigger(run / "seed_0/triggers/optimized.trigger"));
  o.require(same(rt / "t.trigger", run / "seed_0/triggers/optimized.trigger"), "trigger round-trips bit-exactly");
  write_pool(rt / "pool.txt", read_pool(run / (cell + "pool.txt")));
  o.require(same(rt / "pool.txt", run / (cell + "pool.txt")), "pool round-trips bit-exactly");
  write_checkpoint(rt / "model.ckpt", read_checkpoint(run / (cell + "model.ckpt")));
  o.require(same(rt / "model.ckpt", run / (cell + "model.ckpt")), "checkpoint round-trips bit-exactly");
  write_mixed_manifest(rt / "mixed.manifest", read_mixed_manifest(run / (cell + "mixed.manifest")));
  o.require(same(rt / "mixed.manifest", run / (cell + "mixed.manifest")), "mixed manifest round-trips bit-exactly");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"poisonlab acceptance criteria"};
  std::string work = "acceptance_work", configs = POISONLAB_CONFIG_DIR, only;
  bool reuse = false;
  app.add_option("--work", work, "scratch directory");
  app.add_option("--configs", configs, "directory holding the shipped configs");
  app.add_option("--only", only, "comma-separated criterion numbers");
  app.add_flag("--reuse", reuse, "reuse finished desk-scale runs found in --work");
  CLI11_PARSE(app, argc, argv);

  std::set<int> selected;
  std::stringstream ss(only);
  for (std::string item; std::getline(ss, item, ',');) selected.insert(std::stoi(item));
  fs::create_directories(work);

  struct Criterion {
    int number;
    std::string title;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "projection invariant of optimize_trigger", criterion_projection},
      {2, "linear-surrogate PGD oracle", criterion_linear_oracle},
      {3, "input gradient vs finite differences", criterion_gradient},
      {4, "forgetting score vs brute force", criterion_forgetting},
      {5, "poisoning set algebra and FUS pool bookkeeping", criterion_set_algebra},
      {6, "desk-scale dirty-label end to end", [&] { return criterion_desk(configs, work, reuse); }},
      {7, "clean-label smoke test", [&] { return criterion_clean_label(configs, work, reuse); }},
      {8, "determinism and persistence", [&] { return criterion_determinism(configs, work); }},
  };

  bool all = true;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.number)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.notes.push_back(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    for (const auto& n : o.notes) std::cout << "  INFO [" << c.number << "] " << n << "\n";
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << c.number << " " << c.title << " (" << fixed(secs, 1) << " s)"
              << std::endl;
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
