#include "spm/image_io.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <png.h>

namespace spm {

namespace {

png_uint_32 png_format(std::size_t channels) {
  if (channels == 1) return PNG_FORMAT_GRAY;
  if (channels == 3) return PNG_FORMAT_RGB;
  throw ImageError("unsupported channel count " + std::to_string(channels));
}

Image8 finish_read(png_image& img, std::size_t channels, const std::string& what) {
  img.format = png_format(channels);
  Image8 out;
  out.h = img.height;
  out.w = img.width;
  out.channels = channels;
  out.data.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.data.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw ImageError("cannot decode " + what + ": " + msg);
  }
  return out;
}

}  // namespace

Image8 read_png(const std::string& path, std::size_t channels) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ImageError("cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  try {
    return decode_png(ss.str(), channels);
  } catch (const ImageError& e) {
    throw ImageError(path + ": " + e.what());
  }
}

Image8 decode_png(const std::string& bytes, std::size_t channels) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw ImageError(std::string("not a readable PNG: ") + img.message);
  }
  return finish_read(img, channels, "PNG");
}

std::string encode_png(const Image8& im) {
  if (im.data.size() != im.h * im.w * im.channels) throw ImageError("image buffer size mismatch");
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(im.w);
  img.height = static_cast<png_uint_32>(im.h);
  img.format = png_format(im.channels);
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, im.data.data(), 0, nullptr)) {
    throw ImageError(std::string("cannot encode PNG: ") + img.message);
  }
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, im.data.data(), 0, nullptr)) {
    throw ImageError(std::string("cannot encode PNG: ") + img.message);
  }
  out.resize(size);
  return out;
}

void write_png(const std::string& path, const Image8& img) {
  const std::string bytes = encode_png(img);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ImageError("cannot open " + path + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw ImageError("failed writing " + path);
}

float byte_to_unit(std::uint8_t v) { return static_cast<float>(v) / 127.5f - 1.0f; }

std::uint8_t unit_to_byte(float x) {
  const float v = std::nearbyint((x + 1.0f) * 127.5f);
  return static_cast<std::uint8_t>(std::clamp(v, 0.0f, 255.0f));
}

Tensor<float> to_tensor(const Image8& rgb) {
  if (rgb.channels != 3) throw ImageError("expected an RGB image");
  Tensor<float> t(Shape{1, 3, rgb.h, rgb.w});
  for (std::size_t c = 0; c < 3; ++c) {
    float* p = t.plane(0, c);
    for (std::size_t i = 0; i < rgb.h * rgb.w; ++i) p[i] = byte_to_unit(rgb.data[i * 3 + c]);
  }
  return t;
}

Image8 to_image(const Tensor<float>& t, std::size_t sample) {
  const Shape s = t.shape();
  if (s.c != 3) throw ImageError("expected a 3-channel tensor, got " + s.str());
  Image8 img{s.h, s.w, 3, std::vector<std::uint8_t>(s.h * s.w * 3)};
  for (std::size_t c = 0; c < 3; ++c) {
    const float* p = t.plane(sample, c);
    for (std::size_t i = 0; i < s.plane(); ++i) img.data[i * 3 + c] = unit_to_byte(p[i]);
  }
  return img;
}

Mask to_mask(const Image8& gray) {
  if (gray.channels != 1) throw ImageError("expected a 1-channel mask");
  Mask m(gray.h, gray.w);
  for (std::size_t i = 0; i < m.size(); ++i) m.data[i] = gray.data[i] >= 128 ? 1 : 0;
  return m;
}

Image8 from_mask(const Mask& m) {
  Image8 img{m.h, m.w, 1, std::vector<std::uint8_t>(m.size())};
  for (std::size_t i = 0; i < m.size(); ++i) img.data[i] = m.data[i] ? 255 : 0;
  return img;
}

LabelGrid to_labels(const Image8& gray) {
  if (gray.channels != 1) throw ImageError("expected a 1-channel label map");
  LabelGrid g(gray.h, gray.w);
  for (std::size_t i = 0; i < g.size(); ++i) g.data[i] = gray.data[i];
  return g;
}

Image8 from_labels(const LabelGrid& g) {
  Image8 img{g.h, g.w, 1, std::vector<std::uint8_t>(g.size())};
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g.data[i] < 0 || g.data[i] > 255) throw ImageError("label " + std::to_string(g.data[i]) + " does not fit in 8 bits");
    img.data[i] = static_cast<std::uint8_t>(g.data[i]);
  }
  return img;
}

}  // namespace spm
