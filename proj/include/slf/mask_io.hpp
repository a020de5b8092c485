#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "slf/render.hpp"

namespace slf {

/// 8-bit grayscale image, row-major.
struct GrayImage {
  int width{0}, height{0};
  std::vector<std::uint8_t> pixels;
};

void write_png(const GrayImage& img, const std::string& path);
std::string encode_png(const GrayImage& img);
GrayImage read_png(const std::string& path);
GrayImage decode_png(const std::string& bytes);

/// Masks are stored as value * 255, rounded.
void save_mask_png(const Mask& m, const std::string& path);
Mask load_mask_png(const std::string& path);

/// Uncompressed run-length encoding in column-major pixel order, counts
/// alternating background/foreground starting with background. Soft values
/// are binarized at 0.5.
struct Rle {
  int height{0}, width{0};
  std::vector<std::uint32_t> counts;
};

Rle encode_rle(const Mask& m);
Mask decode_rle(const Rle& rle);
nlohmann::json rle_to_json(const Rle& rle);  // {"size": [h, w], "counts": [...]}
Rle rle_from_json(const nlohmann::json& j);

/// Even-odd scanline fill of a polygon given in pixel coordinates; a pixel is
/// set when its center lies inside.
Mask rasterize_polygon(const std::vector<Eigen::Vector2d>& polygon, int width, int height);

}  // namespace slf
