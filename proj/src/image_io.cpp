#include "dgan/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstring>

#include "dgan/error.hpp"

namespace dgan {

std::uint8_t quantize(double v) {
  if (!(v > 0.0)) return 0;  // also maps NaN to 0
  if (v >= 1.0) return 255;
  return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

Tensor quantize_image(const Tensor& img) {
  std::vector<double> out(img.numel());
  auto src = img.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = quantize(src[i]) / 255.0;
  return Tensor::from(img.shape(), std::move(out));
}

void image_write(const Tensor& img, const std::string& path) {
  Shape s = img.shape();
  if (s.size() == 4 && s[0] == 1) s.erase(s.begin());
  if (s.size() != 3 || s[0] != 3) {
    throw DimensionError("image_write: expected [3,H,W], got " + shape_str(img.shape()));
  }
  const std::size_t h = s[1], w = s[2];
  auto src = img.data();
  std::vector<std::uint8_t> buf(3 * h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        buf[(y * w + x) * 3 + c] = quantize(src[c * h * w + y * w + x]);
      }
    }
  }
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(w);
  image.height = static_cast<png_uint_32>(h);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, buf.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw IoError("cannot write PNG '" + path + "': " + msg);
  }
}

Tensor image_read(const std::string& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    std::string msg = image.message;
    png_image_free(&image);
    throw IoError("cannot read PNG '" + path + "': " + msg);
  }
  image.format = PNG_FORMAT_RGB;
  const std::size_t h = image.height, w = image.width;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw IoError("cannot decode PNG '" + path + "': " + msg);
  }
  std::vector<double> out(3 * h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        out[c * h * w + y * w + x] = buf[(y * w + x) * 3 + c] / 255.0;
      }
    }
  }
  return Tensor::from({3, h, w}, std::move(out));
}

Tensor make_grid(const Tensor& images, std::size_t columns) {
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(0) == 0) {
    throw DimensionError("make_grid: expected [N,3,H,W], got " + shape_str(images.shape()));
  }
  if (columns == 0) throw ContractError("make_grid: columns must be positive");
  const std::size_t n = images.dim(0), h = images.dim(2), w = images.dim(3);
  const std::size_t rows = (n + columns - 1) / columns;
  const std::size_t gh = rows * h, gw = columns * w;
  std::vector<double> out(3 * gh * gw, 0.0);
  auto src = images.data();
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t oy = (k / columns) * h, ox = (k % columns) * w;
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t y = 0; y < h; ++y) {
        const double* row = src.data() + ((k * 3 + c) * h + y) * w;
        std::copy(row, row + w, out.begin() + static_cast<long>(c * gh * gw + (oy + y) * gw + ox));
      }
    }
  }
  return Tensor::from({3, gh, gw}, std::move(out));
}

Tensor make_grid(const Tensor& images) {
  if (images.rank() != 4 || images.dim(0) == 0) {
    throw DimensionError("make_grid: expected [N,3,H,W], got " + shape_str(images.shape()));
  }
  const auto n = images.dim(0);
  auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  while (cols * cols < n) ++cols;
  while (cols > 1 && (cols - 1) * (cols - 1) >= n) --cols;
  return make_grid(images, cols);
}

void grid_write(const Tensor& images, const std::string& path) {
  image_write(make_grid(images), path);
}

}  // namespace dgan
