#pragma once

#include <filesystem>
#include <vector>

#include "poisonlab/image.hpp"

namespace poisonlab {

/// Decodes a PNG or JPEG (chosen by magic bytes) into [0,1] floats with
/// `channels` output channels (grey <-> RGB converted as needed, alpha dropped).
/// Throws DecodeError naming the file.
ImageArray decode_image_file(const std::filesystem::path& path, int channels);

/// Bilinear resampling with half-pixel centres and edge clamping.
ImageArray resize_bilinear(const ImageArray& image, int height, int width);

/// 8-bit PNG encoding (values clipped to [0,1] and rounded).
std::vector<unsigned char> encode_png(const ImageArray& image);
void write_png(const std::filesystem::path& path, const ImageArray& image);

}  // namespace poisonlab
