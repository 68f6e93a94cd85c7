#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace poisonlab {

/// Ordered `key value...` lines that precede a binary block. On disk each field
/// is one line, the block ends with an empty line.
class TextHeader {
 public:
  void add(std::string key, std::string value);
  /// Value of `key`; throws DecodeError naming `source` if absent.
  const std::string& get(const std::string& key) const;
  bool has(const std::string& key) const;
  const std::vector<std::pair<std::string, std::string>>& fields() const { return fields_; }

  void write(std::ostream& out) const;
  static TextHeader read(std::istream& in, const std::string& source);

 private:
  std::vector<std::pair<std::string, std::string>> fields_;
  std::string source_;
};

/// Shortest decimal text that parses back to the same double.
std::string format_exact(double value);
double parse_double(const std::string& text, const std::string& what);
std::int64_t parse_int(const std::string& text, const std::string& what);

void write_f32_le(std::ostream& out, std::span<const float> values);
void read_f32_le(std::istream& in, std::span<float> values, const std::string& source);
void write_i32_le(std::ostream& out, std::span<const std::int32_t> values);
void read_i32_le(std::istream& in, std::span<std::int32_t> values, const std::string& source);

std::ofstream open_for_write(const std::filesystem::path& path);
std::ifstream open_for_read(const std::filesystem::path& path);
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace poisonlab
