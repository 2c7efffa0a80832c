#pragma once

// 8-bit RGB rasters and PNG encoding. Encoding is deterministic: fixed
// compression settings, no timestamps, text chunks only when asked for.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace contour {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Rgb&) const = default;
};

inline constexpr Rgb kBackground{0, 0, 0};
inline constexpr Rgb kForeground{255, 255, 255};
inline constexpr Rgb kMarker{255, 0, 0};

class Image {
 public:
  Image() = default;
  Image(std::int64_t height, std::int64_t width, Rgb fill = kBackground);

  std::int64_t height() const { return h_; }
  std::int64_t width() const { return w_; }
  bool contains(std::int64_t y, std::int64_t x) const { return y >= 0 && x >= 0 && y < h_ && x < w_; }

  Rgb get(std::int64_t y, std::int64_t x) const {
    const std::uint8_t* p = &data_[offset(y, x)];
    return {p[0], p[1], p[2]};
  }
  void set(std::int64_t y, std::int64_t x, Rgb c) {
    std::uint8_t* p = &data_[offset(y, x)];
    p[0] = c.r;
    p[1] = c.g;
    p[2] = c.b;
  }

  /// Row-major interleaved RGB.
  std::span<const std::uint8_t> bytes() const { return data_; }
  std::span<std::uint8_t> bytes() { return data_; }

  bool operator==(const Image&) const = default;

 private:
  std::size_t offset(std::int64_t y, std::int64_t x) const { return static_cast<std::size_t>((y * w_ + x) * 3); }

  std::int64_t h_ = 0, w_ = 0;
  std::vector<std::uint8_t> data_;
};

using PngText = std::vector<std::pair<std::string, std::string>>;

/// channels is 1 (gray) or 3 (RGB); pixels are row-major interleaved.
std::vector<unsigned char> encode_png(std::int64_t height, std::int64_t width, int channels,
                                      std::span<const std::uint8_t> pixels, const PngText& text = {});
std::vector<unsigned char> encode_png(const Image& img);

/// Any PNG, converted to 8-bit RGB.
Image decode_png(std::span<const unsigned char> png);

/// tEXt chunks of a PNG, in file order.
PngText read_png_text(std::span<const unsigned char> png);

std::vector<unsigned char> read_file(const std::filesystem::path& path);
/// Writes via a sibling temp file and rename.
void write_file(const std::filesystem::path& path, std::span<const unsigned char> bytes);

}  // namespace contour
