#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "poisonlab/data.hpp"
#include "poisonlab/image.hpp"
#include "poisonlab/rng.hpp"

namespace fs = std::filesystem;

namespace testing {

namespace fs = std::filesystem;

// Fresh scratch directory per call; ctest points POISONLAB_TEST_TMP into the build tree.
inline fs::path scratch(const std::string& name) {
  const char* env = std::getenv("POISONLAB_TEST_TMP");
  fs::path root = env ? fs::path(env) : fs::temp_directory_path() / "poisonlab_tests";
  fs::path dir = root / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

inline poisonlab::ImageArray random_image(poisonlab::Shape shape, poisonlab::Rng& rng, double lo = 0.0,
                                          double hi = 1.0) {
  poisonlab::ImageArray img(shape);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(rng.uniform(lo, hi));
  return img;
}

// Random dataset with `reals` label-0 and `fakes` label-1 samples, ids 0..n-1 shuffled.
inline poisonlab::Dataset random_dataset(int reals, int fakes, poisonlab::Shape shape, std::uint64_t seed) {
  poisonlab::Rng rng(seed);
  poisonlab::Dataset d;
  d.resolution = shape;
  for (int i = 0; i < reals + fakes; ++i) {
    d.samples.push_back({i, random_image(shape, rng), i < reals ? poisonlab::kReal : poisonlab::kFake});
  }
  rng.shuffle(std::span<poisonlab::LabeledSample>(d.samples));
  d.source_hash = "test";
  return d;
}

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

}  // namespace testing
