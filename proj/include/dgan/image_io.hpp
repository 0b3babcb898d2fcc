#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dgan/tensor.hpp"

namespace dgan {

/// Clamps to [0,1] and rounds to the nearest of 256 levels.
std::uint8_t quantize(double v);
/// Returns the image with every value snapped to its 8-bit level.
Tensor quantize_image(const Tensor& img);

/// img [3,H,W] (or [1,3,H,W]) in [0,1] -> 8-bit RGB PNG.
void image_write(const Tensor& img, const std::string& path);
/// Any PNG -> [3,H,W] in [0,1].
Tensor image_read(const std::string& path);

/// Tiles images [N,3,H,W] into a mosaic with ceil(sqrt(N)) columns. Unused
/// cells stay black.
Tensor make_grid(const Tensor& images);
/// Tiles [N,3,H,W] into rows of `columns` images.
Tensor make_grid(const Tensor& images, std::size_t columns);
void grid_write(const Tensor& images, const std::string& path);

}  // namespace dgan
