#include "poisonlab/image_codec.hpp"

#include <png.h>
#include <stdio.h>
#include <jpeglib.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstring>
#include <fstream>
#include <iterator>

#include "poisonlab/binary_io.hpp"
#include "poisonlab/errors.hpp"

namespace poisonlab {

namespace {

struct RawImage {
  int height = 0;
  int width = 0;
  int channels = 0;  // 1 or 3
  std::vector<unsigned char> bytes;
};

std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DecodeError(path.string() + ": cannot open");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool decode_png(const std::vector<unsigned char>& data, RawImage& out) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, data.data(), data.size())) return false;
  const bool grey = (image.format & PNG_FORMAT_FLAG_COLOR) == 0;
  image.format = grey ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  out.height = static_cast<int>(image.height);
  out.width = static_cast<int>(image.width);
  out.channels = grey ? 1 : 3;
  out.bytes.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.bytes.data(), 0, nullptr)) {
    png_image_free(&image);
    return false;
  }
  return true;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  std::longjmp(err->jump, 1);
}

// No C++ objects with destructors live across the setjmp in this function.
bool decode_jpeg(const std::vector<unsigned char>& data, RawImage& out) {
  jpeg_decompress_struct cinfo;
  JpegErrorManager jerr;
  cinfo.err = jpeg_std_error(&jerr.base);
  jerr.base.error_exit = jpeg_error_exit;
  if (setjmp(jerr.jump)) {
    jpeg_destroy_decompress(&cinfo);
    return false;
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, data.data(), static_cast<unsigned long>(data.size()));
  if (jpeg_read_header(&cinfo, TRUE) != JPEG_HEADER_OK) {
    jpeg_destroy_decompress(&cinfo);
    return false;
  }
  cinfo.out_color_space = cinfo.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_start_decompress(&cinfo);
  out.width = static_cast<int>(cinfo.output_width);
  out.height = static_cast<int>(cinfo.output_height);
  out.channels = cinfo.output_components;
  out.bytes.resize(static_cast<std::size_t>(out.width) * out.height * out.channels);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.bytes.data() +
                   static_cast<std::size_t>(cinfo.output_scanline) * out.width * out.channels;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return true;
}

}  // namespace

ImageArray decode_image_file(const std::filesystem::path& path, int channels) {
  if (channels != 1 && channels != 3) throw ValidationError("channels must be 1 or 3");
  const auto data = slurp(path);
  RawImage raw;
  bool ok = false;
  if (data.size() >= 8 && png_sig_cmp(data.data(), 0, 8) == 0) {
    ok = decode_png(data, raw);
  } else if (data.size() >= 3 && data[0] == 0xFF && data[1] == 0xD8 && data[2] == 0xFF) {
    ok = decode_jpeg(data, raw);
  }
  if (!ok || raw.width <= 0 || raw.height <= 0) {
    throw DecodeError(path.string() + ": not a decodable PNG or JPEG image");
  }
  ImageArray image(Shape{raw.height, raw.width, channels});
  const std::size_t npix = static_cast<std::size_t>(raw.height) * raw.width;
  for (std::size_t p = 0; p < npix; ++p) {
    const unsigned char* src = raw.bytes.data() + p * raw.channels;
    if (channels == raw.channels) {
      for (int c = 0; c < channels; ++c) image[p * channels + c] = src[c] / 255.0f;
    } else if (channels == 3) {
      for (int c = 0; c < 3; ++c) image[p * 3 + c] = src[0] / 255.0f;
    } else {
      // ITU-R BT.601 luma
      image[p] = (0.299f * src[0] + 0.587f * src[1] + 0.114f * src[2]) / 255.0f;
    }
  }
  return image;
}

ImageArray resize_bilinear(const ImageArray& image, int height, int width) {
  const Shape in = image.shape();
  if (height <= 0 || width <= 0) throw ValidationError("resize target must be positive");
  if (in.height == height && in.width == width) return image;
  ImageArray out(Shape{height, width, in.channels});
  const double sy = static_cast<double>(in.height) / height;
  const double sx = static_cast<double>(in.width) / width;
  for (int r = 0; r < height; ++r) {
    const double fy = std::clamp((r + 0.5) * sy - 0.5, 0.0, static_cast<double>(in.height - 1));
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, in.height - 1);
    const double wy = fy - y0;
    for (int c = 0; c < width; ++c) {
      const double fx = std::clamp((c + 0.5) * sx - 0.5, 0.0, static_cast<double>(in.width - 1));
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, in.width - 1);
      const double wx = fx - x0;
      for (int ch = 0; ch < in.channels; ++ch) {
        const double top = (1 - wx) * image.at(y0, x0, ch) + wx * image.at(y0, x1, ch);
        const double bottom = (1 - wx) * image.at(y1, x0, ch) + wx * image.at(y1, x1, ch);
        const double v = (1 - wy) * top + wy * bottom;
        out.at(r, c, ch) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return out;
}

std::vector<unsigned char> encode_png(const ImageArray& image) {
  const Shape s = image.shape();
  std::vector<unsigned char> pixels(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    pixels[i] = static_cast<unsigned char>(std::lround(std::clamp(image[i], 0.0f, 1.0f) * 255.0f));
  }
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(s.width);
  png.height = static_cast<png_uint_32>(s.height);
  png.format = s.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png, nullptr, &size, 0, pixels.data(), 0, nullptr)) {
    throw Error("png encode failed: " + std::string(png.message));
  }
  std::vector<unsigned char> out(size);
  if (!png_image_write_to_memory(&png, out.data(), &size, 0, pixels.data(), 0, nullptr)) {
    throw Error("png encode failed: " + std::string(png.message));
  }
  out.resize(size);
  return out;
}

void write_png(const std::filesystem::path& path, const ImageArray& image) {
  const auto bytes = encode_png(image);
  auto out = open_for_write(path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace poisonlab
