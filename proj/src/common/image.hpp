#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace ds {

// 8-bit RGB raster, row-major, interleaved.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(std::size_t w, std::size_t h) : width(w), height(h), rgb(w * h * 3, 0) {}

  bool empty() const { return rgb.empty(); }
  std::uint8_t* pixel(std::size_t x, std::size_t y) { return &rgb[(y * width + x) * 3]; }
  const std::uint8_t* pixel(std::size_t x, std::size_t y) const { return &rgb[(y * width + x) * 3]; }
  bool operator==(const Image&) const = default;
};

// 8-bit grayscale or RGB PNG I/O through libpng.
void write_png(const std::filesystem::path& path, const Image& image);
void write_gray_png(const std::filesystem::path& path, std::size_t width, std::size_t height,
                    const std::vector<std::uint8_t>& gray);
Image read_png(const std::filesystem::path& path);

// Channel-planar [3,H,W] values in [-1,1] <-> image. Values are clamped and rounded.
std::vector<double> image_to_planar(const Image& image);
Image planar_to_image(const double* planar, std::size_t width, std::size_t height);

}  // namespace ds
