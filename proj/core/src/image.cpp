#include "fpx/image.hpp"

#include <png.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>

#include "fpx/error.hpp"

namespace fpx {

GrayImage::GrayImage(int width, int height, std::uint8_t fill)
    : GrayImage(width, height,
                std::vector<std::uint8_t>(static_cast<std::size_t>(std::max(width, 0)) *
                                              static_cast<std::size_t>(std::max(height, 0)),
                                          fill)) {}

GrayImage::GrayImage(int width, int height, std::vector<std::uint8_t> pixels)
    : width_(width), height_(height), pixels_(std::move(pixels)) {
  check(width >= kMinSide && height >= kMinSide, ErrorCode::InvalidArgument,
        "image sides must be >= 8, got " + std::to_string(width) + "x" + std::to_string(height));
  check(pixels_.size() == static_cast<std::size_t>(width) * static_cast<std::size_t>(height),
        ErrorCode::ShapeMismatch, "pixel buffer does not match dimensions");
}

std::size_t Mask::area() const noexcept {
  return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(), [](auto b) { return b != 0; }));
}

std::uint8_t luma601(std::uint8_t r, std::uint8_t g, std::uint8_t b) noexcept {
  // 0.299 R + 0.587 G + 0.114 B in exact integer thousandths, + 0.5 for half-up.
  const unsigned y = 299u * r + 587u * g + 114u * b + 500u;
  return static_cast<std::uint8_t>(std::min(y / 1000u, 255u));
}

namespace {

std::uint32_t le32(std::span<const std::uint8_t> b, std::size_t off) {
  return static_cast<std::uint32_t>(b[off]) | (static_cast<std::uint32_t>(b[off + 1]) << 8) |
         (static_cast<std::uint32_t>(b[off + 2]) << 16) | (static_cast<std::uint32_t>(b[off + 3]) << 24);
}
std::uint16_t le16(std::span<const std::uint8_t> b, std::size_t off) {
  return static_cast<std::uint16_t>(b[off] | (b[off + 1] << 8));
}
void put32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

bool is_png(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t kSig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  return bytes.size() >= 8 && std::memcmp(bytes.data(), kSig, 8) == 0;
}

}  // namespace

GrayImage decode_bmp(std::span<const std::uint8_t> bytes) {
  check(bytes.size() >= 54, ErrorCode::DecodeError, "BMP shorter than its headers");
  check(bytes[0] == 'B' && bytes[1] == 'M', ErrorCode::UnsupportedFormat, "missing BM signature");
  const std::uint32_t data_offset = le32(bytes, 10);
  const std::uint32_t dib_size = le32(bytes, 14);
  check(dib_size >= 40, ErrorCode::UnsupportedFormat, "only BITMAPINFOHEADER or later is supported");
  const auto width = static_cast<std::int32_t>(le32(bytes, 18));
  const auto raw_height = static_cast<std::int32_t>(le32(bytes, 22));
  const std::uint16_t bpp = le16(bytes, 28);
  const std::uint32_t compression = le32(bytes, 30);
  std::uint32_t colors_used = le32(bytes, 46);

  check(compression == 0, ErrorCode::UnsupportedFormat, "compressed BMP");
  check(bpp == 8 || bpp == 24 || bpp == 32, ErrorCode::UnsupportedFormat,
        "unsupported bit depth " + std::to_string(bpp));
  check(width > 0 && raw_height != 0, ErrorCode::DecodeError, "invalid BMP dimensions");
  const bool top_down = raw_height < 0;
  const int height = top_down ? -raw_height : raw_height;
  check(width <= 1 << 16 && height <= 1 << 16, ErrorCode::DecodeError, "BMP dimensions too large");

  std::array<std::uint8_t, 256> palette_luma{};
  if (bpp == 8) {
    if (colors_used == 0 || colors_used > 256) colors_used = 256;
    const std::size_t pal_off = 14 + dib_size;
    check(pal_off + 4ull * colors_used <= bytes.size(), ErrorCode::DecodeError, "truncated BMP palette");
    for (std::uint32_t i = 0; i < colors_used; ++i) {
      const auto* p = bytes.data() + pal_off + 4 * i;  // B, G, R, reserved
      palette_luma[i] = luma601(p[2], p[1], p[0]);
    }
  }

  const std::size_t row_bytes = (static_cast<std::size_t>(width) * bpp / 8 + 3) & ~std::size_t{3};
  check(data_offset + row_bytes * height <= bytes.size(), ErrorCode::DecodeError, "truncated BMP pixel data");

  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(width) * height);
  for (int row = 0; row < height; ++row) {
    const int y = top_down ? row : height - 1 - row;
    const auto* src = bytes.data() + data_offset + row_bytes * row;
    auto* dst = pixels.data() + static_cast<std::size_t>(y) * width;
    for (int x = 0; x < width; ++x) {
      switch (bpp) {
        case 8: dst[x] = palette_luma[src[x]]; break;
        case 24: dst[x] = luma601(src[3 * x + 2], src[3 * x + 1], src[3 * x]); break;
        default: dst[x] = luma601(src[4 * x + 2], src[4 * x + 1], src[4 * x]); break;
      }
    }
  }
  return GrayImage(width, height, std::move(pixels));
}

std::vector<std::uint8_t> encode_bmp(const GrayImage& img) {
  const auto w = static_cast<std::uint32_t>(img.width());
  const auto h = static_cast<std::uint32_t>(img.height());
  const std::uint32_t row_bytes = (w + 3) & ~3u;
  const std::uint32_t offset = 14 + 40 + 256 * 4;
  const std::uint32_t file_size = offset + row_bytes * h;

  std::vector<std::uint8_t> out;
  out.reserve(file_size);
  out.push_back('B');
  out.push_back('M');
  put32(out, file_size);
  put32(out, 0);
  put32(out, offset);
  put32(out, 40);
  put32(out, w);
  put32(out, h);
  put16(out, 1);
  put16(out, 8);
  put32(out, 0);
  put32(out, row_bytes * h);
  put32(out, 2835);
  put32(out, 2835);
  put32(out, 256);
  put32(out, 0);
  for (int i = 0; i < 256; ++i) {
    const auto v = static_cast<std::uint8_t>(i);
    out.insert(out.end(), {v, v, v, 0});
  }
  for (std::uint32_t row = 0; row < h; ++row) {
    const auto y = static_cast<int>(h - 1 - row);
    for (std::uint32_t x = 0; x < w; ++x) out.push_back(img.at(static_cast<int>(x), y));
    for (std::uint32_t p = w; p < row_bytes; ++p) out.push_back(0);
  }
  return out;
}

GrayImage decode_png(std::span<const std::uint8_t> bytes) {
  check(is_png(bytes), ErrorCode::UnsupportedFormat, "missing PNG signature");
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    fail(ErrorCode::DecodeError, std::string("PNG header: ") + image.message);
  }
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const int w = static_cast<int>(image.width);
  const int h = static_cast<int>(image.height);
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    fail(ErrorCode::DecodeError, "PNG data: " + msg);
  }
  if (!color) return GrayImage(w, h, std::move(buffer));
  std::vector<std::uint8_t> gray(static_cast<std::size_t>(w) * h);
  for (std::size_t i = 0; i < gray.size(); ++i) {
    gray[i] = luma601(buffer[3 * i], buffer[3 * i + 1], buffer[3 * i + 2]);
  }
  return GrayImage(w, h, std::move(gray));
}

namespace {

std::vector<std::uint8_t> write_png(int w, int h, std::uint32_t format, const std::uint8_t* data) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(w);
  image.height = static_cast<png_uint_32>(h);
  image.format = format;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, data, 0, nullptr)) {
    fail(ErrorCode::IoError, std::string("PNG encode: ") + image.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, data, 0, nullptr)) {
    fail(ErrorCode::IoError, std::string("PNG encode: ") + image.message);
  }
  out.resize(size);
  return out;
}

}  // namespace

std::vector<std::uint8_t> encode_png(const GrayImage& img) {
  return write_png(img.width(), img.height(), PNG_FORMAT_GRAY, img.pixels().data());
}

std::vector<std::uint8_t> encode_png(const RgbImage& img) {
  check(img.rgb.size() == static_cast<std::size_t>(img.width) * img.height * 3, ErrorCode::ShapeMismatch,
        "RGB buffer does not match dimensions");
  return write_png(img.width, img.height, PNG_FORMAT_RGB, img.rgb.data());
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  check(static_cast<bool>(in), ErrorCode::IoError, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  check(!in.bad(), ErrorCode::IoError, "read failed: " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  check(static_cast<bool>(out), ErrorCode::IoError, "cannot create " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  check(static_cast<bool>(out), ErrorCode::IoError, "write failed: " + path.string());
}

GrayImage load_image(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  if (bytes.size() >= 2 && bytes[0] == 'B' && bytes[1] == 'M') return decode_bmp(bytes);
  if (is_png(bytes)) return decode_png(bytes);
  if (bytes.size() < 8) fail(ErrorCode::DecodeError, "file too short to identify: " + path.string());
  fail(ErrorCode::UnsupportedFormat, "not a BMP or PNG: " + path.string());
}

void save_bmp(const GrayImage& img, const std::filesystem::path& path) { write_file(path, encode_bmp(img)); }
void save_png(const GrayImage& img, const std::filesystem::path& path) { write_file(path, encode_png(img)); }
void save_png(const RgbImage& img, const std::filesystem::path& path) { write_file(path, encode_png(img)); }

void save_mask_png(const Mask& mask, const std::filesystem::path& path) {
  std::vector<std::uint8_t> px(mask.bits.size());
  std::transform(mask.bits.begin(), mask.bits.end(), px.begin(),
                 [](auto b) { return static_cast<std::uint8_t>(b ? 255 : 0); });
  write_file(path, write_png(mask.width, mask.height, PNG_FORMAT_GRAY, px.data()));
}

Mask load_mask(const std::filesystem::path& path) {
  const auto img = load_image(path);
  Mask m(img.width(), img.height());
  for (std::size_t i = 0; i < m.bits.size(); ++i) m.bits[i] = img.pixels()[i] >= 128 ? 1 : 0;
  return m;
}

}  // namespace fpx
