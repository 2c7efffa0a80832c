#include "contour/image.hpp"

#include <png.h>

#include <cstring>
#include <fstream>
#include <iterator>

#include "contour/errors.hpp"

namespace contour {

Image::Image(std::int64_t height, std::int64_t width, Rgb fill) : h_(height), w_(width) {
  if (height < 0 || width < 0) throw ShapeError("image extent must be non-negative");
  data_.resize(static_cast<std::size_t>(height * width * 3));
  for (std::size_t i = 0; i < data_.size(); i += 3) {
    data_[i] = fill.r;
    data_[i + 1] = fill.g;
    data_[i + 2] = fill.b;
  }
}

namespace {

[[noreturn]] void png_fail(png_structp, png_const_charp msg) { throw FormatError(std::string("png: ") + msg); }
void png_warn(png_structp, png_const_charp) {}

void append(png_structp png, png_bytep data, png_size_t n) {
  auto* out = static_cast<std::vector<unsigned char>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + n);
}

struct ReadCursor {
  std::span<const unsigned char> src;
  std::size_t pos = 0;
};

void consume(png_structp png, png_bytep data, png_size_t n) {
  auto* c = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (n > c->src.size() - c->pos) png_error(png, "truncated data");
  std::memcpy(data, c->src.data() + c->pos, n);
  c->pos += n;
}

// Owns the libpng read structs for the duration of one decode.
class PngReader {
 public:
  explicit PngReader(std::span<const unsigned char> src) : cursor_{src} {
    if (src.size() < 8 || png_sig_cmp(src.data(), 0, 8) != 0) throw FormatError("png: bad signature");
    png_ = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
    if (!png_) throw FormatError("png: cannot allocate reader");
    info_ = png_create_info_struct(png_);
    if (!info_) {
      png_destroy_read_struct(&png_, nullptr, nullptr);
      throw FormatError("png: cannot allocate info");
    }
    png_set_read_fn(png_, &cursor_, consume);
    png_read_info(png_, info_);
  }
  ~PngReader() { png_destroy_read_struct(&png_, &info_, nullptr); }
  PngReader(const PngReader&) = delete;
  PngReader& operator=(const PngReader&) = delete;

  png_structp png() { return png_; }
  png_infop info() { return info_; }

 private:
  ReadCursor cursor_;
  png_structp png_ = nullptr;
  png_infop info_ = nullptr;
};

}  // namespace

std::vector<unsigned char> encode_png(std::int64_t height, std::int64_t width, int channels,
                                      std::span<const std::uint8_t> pixels, const PngText& text) {
  if (channels != 1 && channels != 3) throw ShapeError("png: channels must be 1 or 3");
  if (height < 1 || width < 1) throw ShapeError("png: empty image");
  if (static_cast<std::int64_t>(pixels.size()) != height * width * channels) {
    throw ShapeError("png: pixel buffer does not match extent");
  }
  std::vector<unsigned char> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  if (!png) throw FormatError("png: cannot allocate writer");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_write_struct(p, i); }
  } guard{&png, &info};
  if (!info) throw FormatError("png: cannot allocate info");

  png_set_write_fn(png, &out, append, nullptr);
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  std::vector<png_text> chunks(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    chunks[i].compression = PNG_TEXT_COMPRESSION_NONE;
    chunks[i].key = const_cast<char*>(text[i].first.c_str());
    chunks[i].text = const_cast<char*>(text[i].second.c_str());
    chunks[i].text_length = text[i].second.size();
  }
  if (!chunks.empty()) png_set_text(png, info, chunks.data(), static_cast<int>(chunks.size()));
  png_write_info(png, info);
  const auto stride = static_cast<std::size_t>(width * channels);
  for (std::int64_t y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(pixels.data() + static_cast<std::size_t>(y) * stride));
  }
  png_write_end(png, nullptr);
  return out;
}

std::vector<unsigned char> encode_png(const Image& img) {
  return encode_png(img.height(), img.width(), 3, img.bytes());
}

Image decode_png(std::span<const unsigned char> src) {
  PngReader r(src);
  png_structp png = r.png();
  png_infop info = r.info();
  const auto width = png_get_image_width(png, info);
  const auto height = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_set_interlace_handling(png);
  png_read_update_info(png, info);
  if (png_get_rowbytes(png, info) != static_cast<png_size_t>(width) * 3) {
    throw FormatError("png: unsupported pixel layout");
  }
  Image img(height, width);
  std::vector<png_bytep> rows(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = img.bytes().data() + static_cast<std::size_t>(y) * width * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  return img;
}

PngText read_png_text(std::span<const unsigned char> src) {
  PngReader r(src);
  // Chunks after the image data are only visible once the rows are read.
  const auto height = png_get_image_height(r.png(), r.info());
  std::vector<unsigned char> row(png_get_rowbytes(r.png(), r.info()));
  png_set_interlace_handling(r.png());
  png_read_update_info(r.png(), r.info());
  row.resize(png_get_rowbytes(r.png(), r.info()));
  for (png_uint_32 y = 0; y < height; ++y) png_read_row(r.png(), row.data(), nullptr);
  png_read_end(r.png(), r.info());
  png_textp chunks = nullptr;
  const int n = png_get_text(r.png(), r.info(), &chunks, nullptr);
  PngText out;
  for (int i = 0; i < n; ++i) out.emplace_back(chunks[i].key, std::string(chunks[i].text, chunks[i].text_length));
  return out;
}

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const unsigned char> bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace contour
