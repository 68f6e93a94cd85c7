#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace poisonlab {

/// Lower-case hex SHA-256.
std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_hex(std::string_view text);
std::string sha256_file(const std::filesystem::path& path);

std::string base64_encode(std::span<const unsigned char> bytes);

/// Incremental SHA-256 for content that is produced piecewise.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(std::span<const unsigned char> bytes);
  void update(std::string_view text);
  std::string hex_digest();

 private:
  void* ctx_;
};

}  // namespace poisonlab
