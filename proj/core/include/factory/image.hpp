#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "factory/tensor.hpp"

namespace factory {

/// RGB image with entries in [-1, 1], stored as a [3, H, W] tensor.
/// Conversion to 8-bit happens only at export.
struct Image {
  Tensor pixels;  // [3, H, W]

  Image() = default;
  Image(int height, int width) : pixels(Tensor({3, height, width})) {}
  explicit Image(Tensor t);

  int height() const { return pixels.dim(1); }
  int width() const { return pixels.dim(2); }
  double& at(int c, int y, int x) { return pixels.at3(c, y, x); }
  double at(int c, int y, int x) const { return pixels.at3(c, y, x); }
};

/// round((v+1)*127.5) clamped to [0,255]; inverse is u/127.5 - 1.
std::vector<std::uint8_t> to_u8_rgb(const Image& img);
Image from_u8_rgb(const std::uint8_t* data, int height, int width);

/// Deterministic PNG bytes (fixed encoder settings).
std::vector<std::uint8_t> encode_png(const Image& img);
void write_png(const Image& img, const std::string& path);
/// Decodes PNG or JPEG; throws on non-image payloads. Grayscale inputs are
/// replicated to 3 channels.
Image decode_image(const std::vector<std::uint8_t>& bytes);
Image read_image(const std::string& path);

Image resize_image(const Image& img, int out_h, int out_w);
Image hflip_image(const Image& img);

}  // namespace factory
