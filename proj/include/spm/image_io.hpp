#pragma once

// 8-bit PNG I/O. RGB images map linearly onto [−1, 1]; masks are 1-channel
// 0/255 (thresholded at 128 on read); label maps are 1-channel class indices.

#include <cstdint>
#include <string>
#include <vector>

#include "spm/tensor.hpp"

namespace spm {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Interleaved 8-bit pixels.
struct Image8 {
  std::size_t h = 0, w = 0, channels = 0;
  std::vector<std::uint8_t> data;

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) { return data[(y * w + x) * channels + c]; }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const { return data[(y * w + x) * channels + c]; }
  bool operator==(const Image8&) const = default;
};

// channels: 1 (gray) or 3 (RGB); the file is converted as needed.
Image8 read_png(const std::string& path, std::size_t channels);
Image8 decode_png(const std::string& bytes, std::size_t channels);
void write_png(const std::string& path, const Image8& img);
std::string encode_png(const Image8& img);

// v/127.5 − 1
float byte_to_unit(std::uint8_t v);
// round((x + 1)·127.5), clamped. byte_to_unit then unit_to_byte is the identity.
std::uint8_t unit_to_byte(float x);

// (1,3,H,W) in [−1, 1].
Tensor<float> to_tensor(const Image8& rgb);
Image8 to_image(const Tensor<float>& t, std::size_t sample = 0);

Mask to_mask(const Image8& gray);
Image8 from_mask(const Mask& m);
LabelGrid to_labels(const Image8& gray);
// Throws when a label is outside [0, 255].
Image8 from_labels(const LabelGrid& g);

}  // namespace spm
