#include "slf/mask_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

namespace slf {

namespace {

void png_write_to_string(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), length);
}

void png_noop_flush(png_structp) {}

struct ReadCursor {
  const std::string* bytes;
  std::size_t offset;
};

void png_read_from_string(png_structp png, png_bytep data, png_size_t length) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cur->offset + length > cur->bytes->size()) png_error(png, "truncated PNG");
  std::memcpy(data, cur->bytes->data() + cur->offset, length);
  cur->offset += length;
}

}  // namespace

std::string encode_png(const GrayImage& img) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) throw Error(ErrorCode::IoError, "libpng init failed");
  std::string out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::IoError, "PNG encoding failed");
  }
  png_set_write_fn(png, &out, png_write_to_string, png_noop_flush);
  png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int v = 0; v < img.height; ++v)
    png_write_row(png, const_cast<png_bytep>(img.pixels.data() + std::size_t(v) * img.width));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

GrayImage decode_png(const std::string& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8))
    throw Error(ErrorCode::IoError, "not a PNG file");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) throw Error(ErrorCode::IoError, "libpng init failed");
  GrayImage img;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::IoError, "PNG decoding failed");
  }
  ReadCursor cur{&bytes, 0};
  png_set_read_fn(png, &cur, png_read_from_string);
  png_read_info(png, info);
  const png_byte color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_PALETTE)
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  png_read_update_info(png, info);
  img.width = int(png_get_image_width(png, info));
  img.height = int(png_get_image_height(png, info));
  img.pixels.resize(std::size_t(img.width) * img.height);
  for (int v = 0; v < img.height; ++v) png_read_row(png, img.pixels.data() + std::size_t(v) * img.width, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png(const GrayImage& img, const std::string& path) {
  const std::string bytes = encode_png(img);
  std::ofstream out(path, std::ios::binary);
  if (!out.write(bytes.data(), std::streamsize(bytes.size())))
    throw Error(ErrorCode::IoError, "cannot write " + path);
}

GrayImage read_png(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_png(ss.str());
}

void save_mask_png(const Mask& m, const std::string& path) {
  GrayImage img{m.width(), m.height(), {}};
  img.pixels.resize(std::size_t(img.width) * img.height);
  for (int v = 0; v < img.height; ++v)
    for (int u = 0; u < img.width; ++u)
      img.pixels[std::size_t(v) * img.width + u] =
          std::uint8_t(std::lround(std::clamp(m(u, v), 0.0f, 1.0f) * 255.0f));
  write_png(img, path);
}

Mask load_mask_png(const std::string& path) {
  const GrayImage img = read_png(path);
  Mask m(img.width, img.height);
  for (int v = 0; v < img.height; ++v)
    for (int u = 0; u < img.width; ++u) m(u, v) = img.pixels[std::size_t(v) * img.width + u] / 255.0f;
  return m;
}

Rle encode_rle(const Mask& m) {
  Rle rle{m.height(), m.width(), {}};
  bool current = false;
  std::uint32_t run = 0;
  for (int u = 0; u < m.width(); ++u)
    for (int v = 0; v < m.height(); ++v) {
      const bool on = m(u, v) >= 0.5f;
      if (on != current) {
        rle.counts.push_back(run);
        run = 0;
        current = on;
      }
      ++run;
    }
  rle.counts.push_back(run);
  return rle;
}

Mask decode_rle(const Rle& rle) {
  const std::uint64_t total = std::uint64_t(rle.width) * rle.height;
  std::uint64_t sum = 0;
  for (auto c : rle.counts) sum += c;
  if (rle.width < 0 || rle.height < 0 || sum != total)
    throw Error(ErrorCode::SizeMismatch, "RLE counts do not cover the mask");
  Mask m(rle.width, rle.height);
  std::uint64_t pos = 0;
  bool on = false;
  for (auto c : rle.counts) {
    if (on)
      for (std::uint64_t p = pos; p < pos + c; ++p) m(int(p / rle.height), int(p % rle.height)) = 1.0f;
    pos += c;
    on = !on;
  }
  return m;
}

nlohmann::json rle_to_json(const Rle& rle) {
  return {{"size", {rle.height, rle.width}}, {"counts", rle.counts}};
}

Rle rle_from_json(const nlohmann::json& j) {
  try {
    Rle rle;
    rle.height = j.at("size").at(0).get<int>();
    rle.width = j.at("size").at(1).get<int>();
    rle.counts = j.at("counts").get<std::vector<std::uint32_t>>();
    if (rle.height < 0 || rle.width < 0) throw Error(ErrorCode::BadResponse, "malformed RLE: negative size");
    std::uint64_t total = 0;
    for (auto c : rle.counts) total += c;
    if (total != std::uint64_t(rle.height) * std::uint64_t(rle.width))
      throw Error(ErrorCode::BadResponse, "malformed RLE: counts do not sum to height * width");
    return rle;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BadResponse, std::string("malformed RLE: ") + e.what());
  }
}

Mask rasterize_polygon(const std::vector<Eigen::Vector2d>& polygon, int width, int height) {
  Mask m(width, height);
  const std::size_t n = polygon.size();
  if (n < 3) return m;
  std::vector<double> xs;
  for (int v = 0; v < height; ++v) {
    xs.clear();
    for (std::size_t i = 0; i < n; ++i) {
      const Eigen::Vector2d& a = polygon[i];
      const Eigen::Vector2d& b = polygon[(i + 1) % n];
      // Half-open in y so shared vertices are counted once.
      if ((a.y() <= v && b.y() > v) || (b.y() <= v && a.y() > v))
        xs.push_back(a.x() + (v - a.y()) / (b.y() - a.y()) * (b.x() - a.x()));
    }
    std::sort(xs.begin(), xs.end());
    for (std::size_t i = 0; i + 1 < xs.size(); i += 2) {
      const int u0 = std::max(0, int(std::ceil(xs[i])));
      const int u1 = std::min(width - 1, int(std::ceil(xs[i + 1])) - 1);
      for (int u = u0; u <= u1; ++u) m(u, v) = 1.0f;
    }
  }
  return m;
}

}  // namespace slf
