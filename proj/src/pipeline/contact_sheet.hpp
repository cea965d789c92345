#pragma once

#include <array>

#include "common/image.hpp"
#include "scene/types.hpp"

namespace ds {

// Front row FRONT_LEFT, FRONT, FRONT_RIGHT; back row BACK_LEFT, BACK, BACK_RIGHT.
inline constexpr std::array<std::array<ViewId, 3>, 2> kSheetGrid = {{
    {ViewId::kFrontLeft, ViewId::kFront, ViewId::kFrontRight},
    {ViewId::kBackLeft, ViewId::kBack, ViewId::kBackRight},
}};

// 2 x 3 grid of equally sized view images (indexed by view_index): 2H x 3W pixels.
Image contact_sheet(const std::array<Image, kViewCount>& views);

}  // namespace ds
