#include <doctest.h>

#include <cmath>
#include <cstring>
#include <sstream>

#include "poisonlab/binary_io.hpp"
#include "poisonlab/errors.hpp"
#include "poisonlab/hashing.hpp"
#include "poisonlab/image_codec.hpp"
#include "poisonlab/report.hpp"
#include "test_support.hpp"

using namespace poisonlab;

TEST_CASE("sha256 and base64 match published vectors") {
  CHECK(sha256_hex(std::string_view("abc")) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex(std::string_view("")) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  Sha256 inc;
  inc.update(std::string_view("a"));
  inc.update(std::string_view("bc"));
  CHECK(inc.hex_digest() == sha256_hex(std::string_view("abc")));
  const std::string text = "Man";
  CHECK(base64_encode(std::span(reinterpret_cast<const unsigned char*>(text.data()), 3)) == "TWFu");
  CHECK(base64_encode(std::span(reinterpret_cast<const unsigned char*>(text.data()), 1)) == "TQ==");
}

TEST_CASE("format_exact round-trips doubles") {
  Rng rng(3);
  for (int i = 0; i < 2000; ++i) {
    const double v = std::ldexp(rng.uniform(-1.0, 1.0), static_cast<int>(rng.below(80)) - 40);
    CHECK(parse_double(format_exact(v), "v") == v);
  }
  CHECK(format_exact(0.01) == "0.01");
  CHECK_THROWS_AS(parse_double("0.1x", "v"), DecodeError);
}

TEST_CASE("text header round trip and missing key") {
  TextHeader h;
  h.add("kind", "additive");
  h.add("shape", "4 4 1");
  std::stringstream s;
  h.write(s);
  s << "tail";
  const auto back = TextHeader::read(s, "mem");
  CHECK(back.get("shape") == "4 4 1");
  CHECK_THROWS_AS(back.get("nope"), DecodeError);
  std::string rest;
  s >> rest;
  CHECK(rest == "tail");
}

TEST_CASE("f32 little-endian blobs round-trip bit-exactly") {
  std::vector<float> v{0.0f, -0.0f, 1.5f, 1e-38f, 3.4e38f, -2.25f};
  std::stringstream s;
  write_f32_le(s, v);
  CHECK(s.str().size() == v.size() * 4);
  CHECK(static_cast<unsigned char>(s.str()[8 + 3]) == 0x3f);  // 1.5f = 0x3fc00000
  std::vector<float> back(v.size());
  read_f32_le(s, back, "mem");
  CHECK(std::memcmp(v.data(), back.data(), v.size() * 4) == 0);
  std::vector<float> more(1);
  CHECK_THROWS(read_f32_le(s, more, "mem"));
}

TEST_CASE("png encode/decode round-trips 8-bit values") {
  const auto dir = testing::scratch("png");
  Shape shape{5, 7, 3};
  ImageArray img(shape);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>((i * 37) % 256) / 255.0f;
  write_png(dir / "a.png", img);
  const auto back = decode_image_file(dir / "a.png", 3);
  REQUIRE(back.shape() == shape);
  for (std::size_t i = 0; i < img.size(); ++i) CHECK(back[i] == doctest::Approx(img[i]).epsilon(1e-6));
  const auto grey = decode_image_file(dir / "a.png", 1);
  CHECK(grey.shape() == Shape{5, 7, 1});
  testing::spit(dir / "bad.png", "not an image");
  CHECK_THROWS_AS(decode_image_file(dir / "bad.png", 3), DecodeError);
}

TEST_CASE("bilinear resize keeps constants and identity") {
  ImageArray flat(Shape{6, 6, 1}, 0.25f);
  const auto small = resize_bilinear(flat, 3, 4);
  for (std::size_t i = 0; i < small.size(); ++i) CHECK(small[i] == doctest::Approx(0.25));
  Rng rng(1);
  const auto img = testing::random_image(Shape{4, 5, 2}, rng);
  CHECK(resize_bilinear(img, 4, 5) == img);
}

TEST_CASE("fractions stay exact") {
  const Fraction a = Fraction::of(1, 3), b = Fraction::of(2, 6), c = Fraction::of(1, 2);
  CHECK(a == b);
  CHECK((a + c).str() == "5/6");
  CHECK((a + b + c).divided_by(3).str() == "7/18");
  CHECK(Fraction::of(0, 5).str() == "0/1");
  CHECK_THROWS(Fraction::of(1, 0));
}
