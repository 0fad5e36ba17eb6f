#include <filesystem>

#include <gtest/gtest.h>

#include "spm/image_io.hpp"
#include "test_util.hpp"

using namespace spm;

TEST(ImageIo, ByteUnitRoundTripIsExact) {
  for (int v = 0; v < 256; ++v) EXPECT_EQ(unit_to_byte(byte_to_unit(static_cast<std::uint8_t>(v))), v);
  EXPECT_EQ(unit_to_byte(-5.f), 0);
  EXPECT_EQ(unit_to_byte(5.f), 255);
  EXPECT_FLOAT_EQ(byte_to_unit(0), -1.f);
  EXPECT_FLOAT_EQ(byte_to_unit(255), 1.f);
}

TEST(ImageIo, PngRoundTrip) {
  std::mt19937_64 rng(1);
  Image8 img{13, 7, 3, std::vector<std::uint8_t>(13 * 7 * 3)};
  for (auto& b : img.data) b = static_cast<std::uint8_t>(rng());
  EXPECT_EQ(decode_png(encode_png(img), 3), img);
  const auto path = (std::filesystem::temp_directory_path() / "spm_io_test.png").string();
  write_png(path, img);
  EXPECT_EQ(read_png(path, 3), img);
  std::filesystem::remove(path);
  // Same tensor → same bytes.
  EXPECT_EQ(to_image(to_tensor(img)), img);
}

TEST(ImageIo, LabelMapsRoundTripBitExactly) {
  LabelGrid g(9, 11);
  for (std::size_t i = 0; i < g.size(); ++i) g.data[i] = static_cast<std::int32_t>((i * 37) % 256);
  EXPECT_EQ(to_labels(decode_png(encode_png(from_labels(g)), 1)), g);
  g.data[3] = 256;
  EXPECT_THROW(from_labels(g), ImageError);
}

TEST(ImageIo, MaskThresholdAt128) {
  Image8 gray{1, 4, 1, {0, 127, 128, 255}};
  const Mask m = to_mask(gray);
  EXPECT_EQ(m.data, (std::vector<std::uint8_t>{0, 0, 1, 1}));
  EXPECT_EQ(from_mask(m).data, (std::vector<std::uint8_t>{0, 0, 255, 255}));
}

TEST(ImageIo, ColorConversionOnDecode) {
  Image8 rgb{1, 1, 3, {10, 200, 30}};
  const Image8 gray = decode_png(encode_png(rgb), 1);
  EXPECT_EQ(gray.channels, 1u);
  Image8 g1{2, 2, 1, {0, 50, 100, 255}};
  const Image8 back = decode_png(encode_png(g1), 3);
  EXPECT_EQ(back.at(1, 0, 2), 100);
}

TEST(ImageIo, GarbageIsRejected) {
  EXPECT_THROW(decode_png("not a png", 3), ImageError);
  EXPECT_THROW(decode_png("", 1), ImageError);
  EXPECT_THROW(read_png("/nonexistent.png", 3), ImageError);
  const std::string good = encode_png(Image8{4, 4, 3, std::vector<std::uint8_t>(48, 9)});
  EXPECT_THROW(decode_png(good.substr(0, good.size() / 2), 3), ImageError);
}
