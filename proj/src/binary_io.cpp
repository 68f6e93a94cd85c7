#include "poisonlab/binary_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "poisonlab/errors.hpp"

namespace poisonlab {

namespace {

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
}

template <typename T>
void write_le(std::ostream& out, std::span<const T> values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size_bytes()));
  } else {
    for (T v : values) {
      const T le = to_little(v);
      out.write(reinterpret_cast<const char*>(&le), sizeof(T));
    }
  }
  if (!out) throw IoError("write failed");
}

template <typename T>
void read_le(std::istream& in, std::span<T> values, const std::string& source) {
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  if (static_cast<std::size_t>(in.gcount()) != values.size_bytes()) {
    throw DecodeError(source + ": truncated binary block");
  }
  if constexpr (std::endian::native != std::endian::little) {
    for (T& v : values) v = to_little(v);
  }
}

}  // namespace

void TextHeader::add(std::string key, std::string value) {
  fields_.emplace_back(std::move(key), std::move(value));
}

bool TextHeader::has(const std::string& key) const {
  for (const auto& [k, v] : fields_) {
    if (k == key) return true;
  }
  return false;
}

const std::string& TextHeader::get(const std::string& key) const {
  for (const auto& [k, v] : fields_) {
    if (k == key) return v;
  }
  throw DecodeError(source_ + ": header field '" + key + "' missing");
}

void TextHeader::write(std::ostream& out) const {
  for (const auto& [k, v] : fields_) out << k << ' ' << v << '\n';
  out << '\n';
}

TextHeader TextHeader::read(std::istream& in, const std::string& source) {
  TextHeader header;
  header.source_ = source;
  std::string line;
  bool terminated = false;
  while (std::getline(in, line)) {
    if (line.empty()) {
      terminated = true;
      break;
    }
    const auto space = line.find(' ');
    if (space == std::string::npos) {
      header.add(line, "");
    } else {
      header.add(line.substr(0, space), line.substr(space + 1));
    }
  }
  if (!terminated) throw DecodeError(source + ": header is not terminated by a blank line");
  return header;
}

std::string format_exact(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc{}) throw Error("format_exact: conversion failed");
  return std::string(buf, end);
}

double parse_double(const std::string& text, const std::string& what) {
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw DecodeError(what + ": cannot parse '" + text + "' as a number");
  }
  return value;
}

std::int64_t parse_int(const std::string& text, const std::string& what) {
  std::int64_t value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw DecodeError(what + ": cannot parse '" + text + "' as an integer");
  }
  return value;
}

void write_f32_le(std::ostream& out, std::span<const float> values) { write_le(out, values); }
void read_f32_le(std::istream& in, std::span<float> values, const std::string& source) {
  read_le(in, values, source);
}
void write_i32_le(std::ostream& out, std::span<const std::int32_t> values) {
  write_le(out, values);
}
void read_i32_le(std::istream& in, std::span<std::int32_t> values, const std::string& source) {
  read_le(in, values, source);
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

std::ifstream open_for_read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  return in;
}

std::string read_text_file(const std::filesystem::path& path) {
  auto in = open_for_read(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  auto out = open_for_write(path);
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace poisonlab
