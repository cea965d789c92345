#include "pipeline/contact_sheet.hpp"

#include <algorithm>

#include "common/error.hpp"

namespace ds {

Image contact_sheet(const std::array<Image, kViewCount>& views) {
  const std::size_t w = views[0].width, h = views[0].height;
  for (const auto& v : views) {
    if (v.empty()) throw ValidationError("contact sheet: missing view image");
    if (v.width != w || v.height != h) throw ShapeError("contact sheet: view images differ in size");
  }
  Image sheet(3 * w, 2 * h);
  for (std::size_t row = 0; row < 2; ++row) {
    for (std::size_t col = 0; col < 3; ++col) {
      const Image& tile = views[view_index(kSheetGrid[row][col])];
      for (std::size_t y = 0; y < h; ++y) {
        std::copy_n(tile.pixel(0, y), 3 * w, sheet.pixel(col * w, row * h + y));
      }
    }
  }
  return sheet;
}

}  // namespace ds
