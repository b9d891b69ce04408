#pragma once

#include "vlo/tensor.hpp"

#include <string>

namespace vlo {

// Reads an 8-bit color image (PNG or binary PPM) into H x W x 3 with values
// v/255 in [0, 1]. Unsupported formats raise an error naming the format.
Grid load_image(const std::string& path);

// Binary PPM (P6) writer; values are clamped to [0,1] and scaled by 255.
void save_ppm(const std::string& path, const Grid& rgb);

// Zero padding at right/bottom; the original region is preserved unchanged.
// Errors when the image exceeds the target.
Grid pad_image(const Grid& img, int target_h, int target_w);

}  // namespace vlo
