#include <doctest.h>

#include <set>

#include "poisonlab/binary_io.hpp"
#include "poisonlab/errors.hpp"
#include "poisonlab/experiment.hpp"
#include "poisonlab/report.hpp"
#include "test_support.hpp"

using namespace poisonlab;

namespace {

nlohmann::json tiny_config() {
  return nlohmann::json::parse(R"({
    "dataset": {"synthetic": {"count_per_class": 60, "resolution": [8, 8, 3], "artifact_amplitude": 0.15}},
    "split": {"test_fraction": 0.25, "seed": 1},
    "model": {"blocks": [{"channels": 4}]},
    "victim_training": {"epochs": 2, "milestones": [1]},
    "trigger": {"pgd": {"steps": 2, "batch_size": 32}, "blend_lambda": 0.05},
    "fus": {"iterations": 2, "filtration_ratio": 0.3},
    "mixing_ratios": [0.1],
    "seeds": [0, 1],
    "attacks": ["blended+random", "optimized+fus"]
  })");
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(read_text_file(p)); }

}  // namespace

TEST_CASE("config parsing") {
  const auto dir = testing::scratch("config");
  SUBCASE("defaults") {
    const auto c = experiment_config_from_json(nlohmann::json::object());
    CHECK(c.mixing_ratios == std::vector<double>{0.005, 0.01, 0.015, 0.02});
    CHECK(c.label_mode == LabelMode::dirty);
    CHECK(c.target == kReal);
    CHECK(c.fus.iterations == 10);
    CHECK(c.fus.filtration_ratio == 0.3);
    CHECK(c.trigger.pgd.epsilon == 2.0 / 255.0);
    CHECK(c.trigger.pgd.steps == 50);
    CHECK(c.attacks.size() == 3);
    CHECK_NOTHROW(c.validate());
  }
  SUBCASE("clean-label preset scales the ratios by ten") {
    const auto c = experiment_config_from_json({{"preset", "clean_label"}});
    CHECK(c.label_mode == LabelMode::clean);
    REQUIRE(c.mixing_ratios.size() == 4);
    CHECK(c.mixing_ratios[0] == doctest::Approx(0.05));
    CHECK(c.mixing_ratios[3] == doctest::Approx(0.2));
  }
  SUBCASE("unknown keys and bad values") {
    CHECK_THROWS_AS(experiment_config_from_json({{"mixing_ratio", 0.1}}), ValidationError);
    CHECK_THROWS_AS(experiment_config_from_json({{"trigger", {{"lambda", 0.1}}}}), ValidationError);
    CHECK_THROWS_AS(experiment_config_from_json({{"preset", "other"}}), ValidationError);
    CHECK_THROWS_AS(experiment_config_from_json({{"attacks", {"blended"}}}), ValidationError);
    CHECK_THROWS_AS(experiment_config_from_json({{"seeds", "zero"}}), ValidationError);
    auto c = experiment_config_from_json({{"mixing_ratios", {0.01, 1.5}}});
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = experiment_config_from_json({{"seeds", nlohmann::json::array()}});
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = experiment_config_from_json({{"dataset", {{"synthetic", {{"artifact_period", 1}}}}}});
    CHECK_THROWS_AS(c.validate(), ValidationError);
  }
  SUBCASE("relative paths resolve against the config file") {
    testing::spit(dir / "c.json", R"({"dataset": {"cache": "data/x.cache"}, "output": "out"})");
    const auto c = load_experiment_config(dir / "c.json");
    CHECK(c.dataset.cache == dir / "data/x.cache");
    CHECK(c.output == dir / "out");
    CHECK_THROWS_AS(c.validate(), ValidationError);  // cache file missing
  }
  SUBCASE("to_json/from_json is stable") {
    const auto c = experiment_config_from_json(tiny_config());
    const auto j = experiment_config_to_json(c);
    CHECK(experiment_config_to_json(experiment_config_from_json(j)) == j);
  }
  SUBCASE("malformed file") {
    testing::spit(dir / "bad.json", "{ not json");
    CHECK_THROWS_AS(load_experiment_config(dir / "bad.json"), ValidationError);
  }
}

TEST_CASE("attack names and labels") {
  CHECK(AttackSpec{TriggerMethod::optimized, SelectionMethod::fus}.label() == "Bad-Deepfake");
  CHECK(AttackSpec{TriggerMethod::blended, SelectionMethod::fus}.label() == "Blended+FUS");
  CHECK(AttackSpec{TriggerMethod::blended, SelectionMethod::random}.label() == "Blended");
  CHECK(AttackSpec{TriggerMethod::blended, SelectionMethod::random}.name() == "blended_random");
  CHECK(ratio_dir_name(0.015) == "r_0.015");
}

TEST_CASE("seed streams are distinct") {
  const auto s = RunSeeds::derive(0);
  const std::set<std::uint64_t> all{s.victim_train, s.surrogate_train, s.pgd,           s.blend_pattern,
                                    s.selection,    s.fus_validation,  s.fus_train};
  CHECK(all.size() == 7);
  CHECK(s.selection_for_ratio(0) != s.selection_for_ratio(1));
  CHECK(RunSeeds::derive(1).pgd != s.pgd);
}

TEST_CASE("sweep over four ratios writes one metrics file per cell plus baselines") {
  const auto dir = testing::scratch("sweep");
  auto j = tiny_config();
  j["dataset"]["synthetic"]["count_per_class"] = 250;
  j["split"]["test_fraction"] = 0.2;
  j["victim_training"] = {{"epochs", 1}, {"milestones", nlohmann::json::array()}};
  j["mixing_ratios"] = {0.005, 0.01, 0.015, 0.02};
  j["attacks"] = {"blended+random"};
  const auto config = experiment_config_from_json(j);
  const auto result = run_pipeline(config, dir / "run");
  CHECK(result.ok);
  int metrics = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir / "run")) metrics += e.path().filename() == "metrics.json";
  CHECK(metrics == 4 * 2 + 2);
  const auto pool = read_pool(dir / "run" / "seed_0" / "blended_random" / "r_0.005" / "pool.txt");
  CHECK(pool.size() == 2);  // round(0.005 * 400)
}

TEST_CASE("pipeline artifacts verify, replay bit-exactly and feed the report") {
  const auto dir = testing::scratch("pipeline");
  const auto config = experiment_config_from_json(tiny_config());
  const fs::path run = dir / "run";
  std::vector<std::string> log;
  const auto result = run_pipeline(config, run, PipelineOptions{false, [&](const std::string& m) { log.push_back(m); }});
  REQUIRE(result.ok);
  CHECK(!log.empty());
  const auto manifest = read_json(run / "manifest.json");
  CHECK(manifest.at("status") == "ok");
  CHECK(manifest.at("cells").size() == 4);
  CHECK(manifest.at("baselines").size() == 2);
  CHECK(manifest.at("tool_version") == tool_version());
  CHECK(verify_manifest(run / "manifest.json").empty());

  // artifacts exist where documented
  for (const char* f : {"data/train.cache", "data/test.cache", "seed_0/clean/model.ckpt", "seed_0/clean/metrics.json",
                        "seed_0/surrogate/model.ckpt", "seed_0/triggers/optimized.trigger",
                        "seed_1/optimized_fus/r_0.1/pool.txt", "seed_1/optimized_fus/r_0.1/fus_trace.json",
                        "seed_1/optimized_fus/r_0.1/mixed.manifest", "seed_1/blended_random/r_0.1/model.ckpt"}) {
    CHECK_MESSAGE(fs::exists(run / f), f);
  }
  const auto trig = read_trigger(run / "seed_0" / "triggers" / "optimized.trigger");
  CHECK(max_abs(trig.payload.values()) <= 2.0 / 255.0 + 1e-9);

  // metrics parse back and agree with their per-sample predictions
  const auto m = eval_report_from_json(read_json(run / "seed_0" / "optimized_fus" / "r_0.1" / "metrics.json"));
  CHECK(m.asr);
  CHECK(m.epochs.size() == 2);

  // clean-label invariant is checked elsewhere; here: mixed set rebuilt from its manifest
  const auto train = read_dataset_cache(run / "data" / "train.cache");
  const auto mm = read_mixed_manifest(run / "seed_0" / "blended_random" / "r_0.1" / "mixed.manifest");
  const auto rebuilt = replay_mixed_manifest(train, read_trigger(run / "seed_0" / "triggers" / "blended.trigger"), mm);
  CHECK(rebuilt.poison_ids.size() == 9);

  SUBCASE("existing run is protected") {
    CHECK_THROWS_AS(run_pipeline(config, run), ValidationError);
  }
  SUBCASE("replay reproduces every artifact") {
    const auto replay = replay_manifest(run / "manifest.json", dir / "replay");
    CHECK(replay.compared == static_cast<int>(manifest.at("artifacts").size()));
    CHECK(replay.mismatches.empty());
    CHECK(replay.ok());
  }
  SUBCASE("tampering is detected") {
    testing::spit(run / "seed_0" / "clean" / "metrics.json", "{}");
    const auto problems = verify_manifest(run / "manifest.json");
    REQUIRE(problems.size() == 1);
    CHECK(problems[0].find("seed_0/clean/metrics.json") != std::string::npos);
  }
  SUBCASE("report") {
    const auto out = write_report({run}, dir / "report");
    CHECK(out.warnings.empty());
    for (const char* f : {"asr_dirty.svg", "ba_dirty.svg", "grid.svg", "summary.json"}) {
      CHECK_MESSAGE(fs::exists(dir / "report" / f), f);
    }
    const auto& groups = out.summary.at("groups");
    REQUIRE(groups.size() == 2);
    std::set<std::string> labels;
    for (const auto& g : groups) {
      labels.insert(g.at("attack").get<std::string>());
      // exact mean of the per-seed rationals
      Fraction sum{0, 1};
      for (const auto& s : g.at("asr").at("per_seed")) {
        sum = sum + Fraction::of(s.at("hits").get<std::int64_t>(), s.at("total").get<std::int64_t>());
      }
      CHECK(g.at("asr").at("mean_exact") == sum.divided_by(2).str());
      CHECK(g.at("asr").at("per_seed").size() == 2);
    }
    CHECK(labels == std::set<std::string>{"Blended", "Bad-Deepfake"});
    CHECK(out.summary.at("clean").size() == 1);
    bool saw_optimized = false;
    for (const auto& row : out.summary.at("grid")) {
      if (row.at("trigger") == "optimized") {
        saw_optimized = true;
        CHECK(row.at("linf").get<double>() <= 2.0 / 255.0 + 1e-9);
      }
    }
    CHECK(saw_optimized);
    // numbers depend only on metrics files: a second report is identical
    const auto again = write_report({run}, dir / "report2");
    CHECK(again.summary.at("groups") == groups);
  }
  SUBCASE("report skips incomplete cells with a warning") {
    auto broken = manifest;
    broken["cells"][0]["status"] = "failed";
    fs::create_directories(dir / "broken");
    fs::copy(run, dir / "broken", fs::copy_options::recursive | fs::copy_options::overwrite_existing);
    write_text_file(dir / "broken" / "manifest.json", broken.dump(2));
    const auto out = write_report({dir / "broken", dir / "nowhere"}, dir / "report3");
    CHECK(out.warnings.size() == 2);
    CHECK_THROWS_AS(write_report({dir / "nowhere"}, dir / "report4"), ValidationError);
  }
}
