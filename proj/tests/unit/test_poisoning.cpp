#include <doctest.h>

#include <set>

#include "poisonlab/errors.hpp"
#include "poisonlab/hashing.hpp"
#include "poisonlab/poisoning.hpp"
#include "poisonlab/selection.hpp"
#include "test_support.hpp"

using namespace poisonlab;

TEST_CASE("pool size rounding") {
  CHECK(pool_size_for(0.01, 2000) == 20);
  CHECK(pool_size_for(0.005, 1600) == 8);
  CHECK(pool_size_for(0.015, 1000) == 15);
  CHECK_THROWS_AS(pool_size_for(0.0001, 100), ValidationError);
  CHECK_THROWS_AS(pool_size_for(0.0, 100), ValidationError);
  CHECK_THROWS_AS(pool_size_for(1.0, 100), ValidationError);
}

TEST_CASE("set algebra of the released mixed set") {
  Rng rng(31);
  for (int trial = 0; trial < 40; ++trial) {
    const Shape shape{3, 3, 1 + 2 * static_cast<int>(rng.below(2))};
    const Dataset d = testing::random_dataset(20 + static_cast<int>(rng.below(80)),
                                              20 + static_cast<int>(rng.below(80)), shape, trial);
    const auto mode = trial % 2 ? LabelMode::clean : LabelMode::dirty;
    const double r = rng.uniform(0.02, 0.15);
    const auto pool = select_random(d, r, mode, kReal, rng.next());
    PoisonPlan plan;
    plan.pool = pool.ids();
    plan.target = kReal;
    plan.label_mode = mode;
    plan.mixing_ratio = r;
    switch (trial % 3) {
      case 0: plan.trigger = make_blended_trigger(testing::random_image(shape, rng), 0.2); break;
      case 1: plan.trigger = default_patch_trigger(shape, 2); break;
      default: {
        ImageArray delta(shape);
        for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = static_cast<float>(rng.uniform(-0.007, 0.007));
        plan.trigger = make_additive_trigger(delta, 2.0 / 255.0);
      }
    }
    const auto poisoned = build_poisoned_set(d, plan);
    const auto mixed = mix_training_set(d, poisoned);

    CHECK(mixed.data.size() == d.size());
    CHECK(mixed.poison_ids == plan.pool);
    CHECK(mixing_ratio(mixed) == doctest::Approx(static_cast<double>(plan.pool.size()) / d.size()));
    const std::set<SampleId> in_pool(plan.pool.begin(), plan.pool.end());
    for (std::size_t i = 0; i < d.size(); ++i) {
      const auto& before = d.samples[i];
      const auto& after = mixed.data.samples[i];
      CHECK(after.id == before.id);
      if (in_pool.count(before.id)) {
        CHECK(after.label == kReal);
        CHECK(after.image == apply_trigger(before.image, plan.trigger));
        CHECK(before.label == (mode == LabelMode::dirty ? kFake : kReal));
      } else {
        CHECK(after == before);  // bit-identical
      }
      if (mode == LabelMode::clean) CHECK(after.label == before.label);
    }
  }
}

TEST_CASE("bad pools are rejected") {
  const Shape shape{2, 2, 1};
  const Dataset d = testing::random_dataset(50, 50, shape, 1);
  std::vector<SampleId> reals, fakes;
  for (const auto& s : d.samples) (s.label == kReal ? reals : fakes).push_back(s.id);
  PoisonPlan plan;
  plan.trigger = make_blended_trigger(ImageArray(shape, 0.5f), 0.5);
  plan.mixing_ratio = 0.02;
  plan.pool = {fakes[0], fakes[1]};
  CHECK_NOTHROW(build_poisoned_set(d, plan));
  plan.pool = {fakes[0], reals[0]};
  CHECK_THROWS_AS(build_poisoned_set(d, plan), ValidationError);
  plan.pool = {fakes[0], fakes[0]};
  CHECK_THROWS_AS(build_poisoned_set(d, plan), ValidationError);
  plan.pool = {fakes[0], 999};
  CHECK_THROWS_AS(build_poisoned_set(d, plan), ValidationError);
  plan.pool = {fakes[0], fakes[1], fakes[2]};  // round(0.02 * 100) = 2
  CHECK_THROWS_AS(build_poisoned_set(d, plan), ValidationError);
  plan.label_mode = LabelMode::clean;
  plan.pool = {reals[0], reals[1]};
  CHECK_NOTHROW(build_poisoned_set(d, plan));
}

TEST_CASE("content hash sees single-pixel changes") {
  const Dataset d = testing::random_dataset(5, 5, Shape{2, 2, 1}, 3);
  Dataset e = d;
  CHECK(dataset_content_hash(d) == dataset_content_hash(e));
  e.samples[4].image[1] = std::nextafter(e.samples[4].image[1], 2.0f);
  CHECK(dataset_content_hash(d) != dataset_content_hash(e));
  e = d;
  e.samples[0].label = 1 - e.samples[0].label;
  CHECK(dataset_content_hash(d) != dataset_content_hash(e));
}

TEST_CASE("mixed manifest round-trips and replays") {
  const auto dir = testing::scratch("mixed_manifest");
  const Shape shape{4, 4, 3};
  const Dataset d = testing::random_dataset(60, 40, shape, 2);
  const Trigger trigger = make_blended_trigger(grid_blend_pattern(shape), 0.05);
  write_trigger(dir / "t.trigger", trigger);
  const std::string thash = sha256_file(dir / "t.trigger");
  PoisonPlan plan;
  plan.pool = select_random(d, 0.05, LabelMode::dirty, kReal, 9).ids();
  plan.trigger = trigger;
  plan.mixing_ratio = 0.05;
  const auto mixed = mix_training_set(d, build_poisoned_set(d, plan));
  const MixedManifest m = make_manifest(d, thash, plan, mixed);
  write_mixed_manifest(dir / "mixed.manifest", m);
  const auto back = read_mixed_manifest(dir / "mixed.manifest");
  CHECK(back == m);
  write_mixed_manifest(dir / "again.manifest", back);
  CHECK(sha256_file(dir / "again.manifest") == sha256_file(dir / "mixed.manifest"));

  const auto replayed = replay_mixed_manifest(d, read_trigger(dir / "t.trigger"), back, thash);
  CHECK(replayed.data == mixed.data);
  CHECK(replayed.poison_ids == mixed.poison_ids);

  Dataset other = d;
  other.samples[0].image[0] = 1.0f - other.samples[0].image[0];
  CHECK_THROWS_AS(replay_mixed_manifest(other, trigger, back, thash), ValidationError);
  CHECK_THROWS_AS(replay_mixed_manifest(d, trigger, back, std::string(64, '0')), ValidationError);

  std::string text = testing::slurp(dir / "mixed.manifest");
  testing::spit(dir / "cut.manifest", text.substr(0, text.rfind('\n', text.size() - 2) + 1));
  CHECK_THROWS_AS(read_mixed_manifest(dir / "cut.manifest"), ValidationError);
}
