#include <doctest.h>

#include <algorithm>
#include <set>

#include "poisonlab/binary_io.hpp"
#include "poisonlab/errors.hpp"
#include "poisonlab/hashing.hpp"
#include "poisonlab/image_codec.hpp"
#include "test_support.hpp"

using namespace poisonlab;

namespace {

void require_all_unit(const Dataset& d) {
  for (const auto& s : d.samples) REQUIRE(in_unit_range(s.image));
}

}  // namespace

TEST_CASE("synthetic default config gives 1000 per class") {
  SyntheticConfig c;
  const Dataset d = generate_synthetic(c);
  CHECK(d.size() == 2000);
  CHECK(d.count_label(kReal) == 1000);
  CHECK(d.count_label(kFake) == 1000);
  CHECK(d.resolution == Shape{32, 32, 3});
  require_all_unit(d);
  validate_dataset(d);
}

TEST_CASE("synthetic generation is bit-identical for a seed and differs across seeds") {
  SyntheticConfig c;
  c.count_per_class = 20;
  c.resolution = {12, 12, 3};
  const Dataset a = generate_synthetic(c), b = generate_synthetic(c);
  CHECK(a == b);
  c.seed = 8;
  CHECK(!(generate_synthetic(c) == a));
}

TEST_CASE("synthetic config validation") {
  SyntheticConfig c;
  c.artifact_period = 1;
  CHECK_THROWS_AS(generate_synthetic(c), ValidationError);
  c = SyntheticConfig{};
  c.count_per_class = 0;
  CHECK_THROWS_AS(generate_synthetic(c), ValidationError);
}

TEST_CASE("fake class carries the periodic artifact") {
  // Same smooth base, so the class-mean difference should alternate with the period.
  SyntheticConfig c;
  c.count_per_class = 200;
  c.resolution = {16, 16, 1};
  c.noise_std = 0.0;
  c.artifact_amplitude = 0.1;
  const Dataset d = generate_synthetic(c);
  std::vector<double> diff(16 * 16, 0.0);
  for (const auto& s : d.samples) {
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] += (s.label == kFake ? 1.0 : -1.0) * s.image[i] / 200.0;
  }
  double energy = 0.0;
  for (double v : diff) energy += v * v;
  CHECK(std::sqrt(energy / diff.size()) > 0.03);
}

TEST_CASE("every synthetic pixel stays in [0,1] even at large amplitude") {
  SyntheticConfig c;
  c.count_per_class = 30;
  c.resolution = {8, 8, 3};
  c.artifact_amplitude = 0.9;
  c.noise_std = 0.3;
  require_all_unit(generate_synthetic(c));
}

TEST_CASE("split is a stratified deterministic partition") {
  Dataset d = testing::random_dataset(1000, 1000, Shape{2, 2, 1}, 4);
  const auto split = split_dataset(d, 0.25, 1);
  CHECK(split.train.size() == 1500);
  CHECK(split.test.size() == 500);
  CHECK(split.test.count_label(kReal) == 250);
  CHECK(split.test.count_label(kFake) == 250);
  const auto again = split_dataset(d, 0.25, 1);
  CHECK(again.train == split.train);
  CHECK(again.test == split.test);

  Rng rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    const int reals = 1 + static_cast<int>(rng.below(40)), fakes = 1 + static_cast<int>(rng.below(40));
    const Dataset x = testing::random_dataset(reals, fakes, Shape{1, 1, 1}, trial);
    const double f = rng.uniform(0.05, 0.6);
    DatasetSplit s;
    try {
      s = split_dataset(x, f, rng.next());
    } catch (const ValidationError&) {
      continue;  // one side came out empty
    }
    std::set<SampleId> train_ids, test_ids, all;
    for (const auto& v : s.train.samples) train_ids.insert(v.id);
    for (const auto& v : s.test.samples) test_ids.insert(v.id);
    for (const auto& v : x.samples) all.insert(v.id);
    std::set<SampleId> both;
    std::set_intersection(train_ids.begin(), train_ids.end(), test_ids.begin(), test_ids.end(),
                          std::inserter(both, both.begin()));
    CHECK(both.empty());
    CHECK(train_ids.size() + test_ids.size() == all.size());
    CHECK(s.test.count_label(kReal) == static_cast<std::size_t>(std::llround(f * reals)));
  }
  CHECK_THROWS_AS(split_dataset(d, 0.0, 1), ValidationError);
  CHECK_THROWS_AS(split_dataset(d, 1.0, 1), ValidationError);
}

TEST_CASE("dataset cache round-trips bit-exactly") {
  const auto dir = testing::scratch("cache");
  SyntheticConfig c;
  c.count_per_class = 15;
  c.resolution = {6, 5, 3};
  const Dataset d = split_dataset(generate_synthetic(c), 0.3, 2).train;  // ids not contiguous
  write_dataset_cache(dir / "d.cache", d);
  const Dataset back = read_dataset_cache(dir / "d.cache");
  CHECK(back == d);
  write_dataset_cache(dir / "e.cache", back);
  CHECK(sha256_file(dir / "d.cache") == sha256_file(dir / "e.cache"));

  const std::string bytes = testing::slurp(dir / "d.cache");
  testing::spit(dir / "short.cache", bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(read_dataset_cache(dir / "short.cache"), Error);
  CHECK_THROWS_AS(read_dataset_cache(dir / "missing.cache"), Error);
}

TEST_CASE("image folder loading") {
  const auto root = testing::scratch("folder");
  fs::create_directories(root / "real");
  fs::create_directories(root / "fake");
  Rng rng(5);
  for (const char* name : {"b.png", "a.png", "c.png"}) {
    write_png(root / "real" / name, testing::random_image(Shape{10, 12, 3}, rng));
  }
  for (const char* name : {"z.png", "y.png"}) write_png(root / "fake" / name, testing::random_image(Shape{7, 7, 1}, rng));

  const Dataset d = load_image_folder(root, Shape{32, 32, 3});
  REQUIRE(d.size() == 5);
  std::vector<ClassIndex> labels;
  for (const auto& s : d.samples) labels.push_back(s.label);
  CHECK(labels == std::vector<ClassIndex>{0, 0, 0, 1, 1});
  for (std::size_t i = 0; i < d.size(); ++i) CHECK(d.samples[i].id == static_cast<SampleId>(i));
  // a.png is first: decoding it directly must match sample 0
  const auto a = resize_bilinear(decode_image_file(root / "real" / "a.png", 3), 32, 32);
  CHECK(d.samples[0].image == a);
  require_all_unit(d);
  CHECK(load_image_folder(root, Shape{32, 32, 3}) == d);

  SUBCASE("empty class") {
    for (const auto& e : fs::directory_iterator(root / "fake")) fs::remove(e.path());
    CHECK_THROWS_AS(load_image_folder(root, Shape{32, 32, 3}), ValidationError);
  }
  SUBCASE("extra directory") {
    fs::create_directories(root / "other");
    CHECK_THROWS_AS(load_image_folder(root, Shape{32, 32, 3}), StructureError);
  }
  SUBCASE("missing directory") {
    fs::remove_all(root / "fake");
    CHECK_THROWS_AS(load_image_folder(root, Shape{32, 32, 3}), StructureError);
  }
  SUBCASE("undecodable file is named") {
    testing::spit(root / "fake" / "broken.png", "garbage");
    try {
      load_image_folder(root, Shape{32, 32, 3});
      FAIL("expected a decode error");
    } catch (const DecodeError& e) {
      CHECK(std::string(e.what()).find("broken.png") != std::string::npos);
    }
  }
}
