#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace poisonlab {

/// Exact sum/average of hit rates: numerator / denominator in lowest terms.
struct Fraction {
  std::int64_t num = 0;
  std::int64_t den = 1;

  static Fraction of(std::int64_t hits, std::int64_t total);
  Fraction operator+(const Fraction& o) const;
  Fraction divided_by(std::int64_t n) const;
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  std::string str() const;
  bool operator==(const Fraction&) const = default;
};

struct ReportOutput {
  nlohmann::json summary;
  std::vector<std::string> warnings;
  std::vector<std::filesystem::path> files;
};

/// Reads the manifests and metrics files of completed pipeline runs and writes
/// ASR/BA-vs-ratio SVG plots, a trigger visualisation grid and summary.json
/// into `out`. Cells without metrics are skipped with a warning. Throws
/// ValidationError when nothing usable is found.
ReportOutput write_report(const std::vector<std::filesystem::path>& run_dirs, const std::filesystem::path& out);

}  // namespace poisonlab
