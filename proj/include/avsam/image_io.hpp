#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <png.h>

#include "avsam/error.hpp"
#include "avsam/tensor.hpp"

namespace avsam::image_io {

namespace detail {
inline std::vector<unsigned char> read_png(const std::string& path, std::uint32_t format, std::size_t& w, std::size_t& h) {
  require(std::filesystem::exists(path), "file not found: " + path);
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw ContractError("PNG decode error (" + path + "): " + img.message);
  img.format = format;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw ContractError("PNG decode error (" + path + "): " + img.message);
  }
  w = img.width;
  h = img.height;
  return buf;
}

inline void write_png(const std::string& path, std::uint32_t format, std::size_t w, std::size_t h,
                      const std::vector<unsigned char>& buf) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = format;
  if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr))
    throw ContractError("PNG write error (" + path + "): " + img.message);
}

inline unsigned char to_byte(double v) { return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }
}  // namespace detail

/// RGB PNG -> (3, H, W) in [0, 1].
inline Tensor load_rgb(const std::string& path) {
  std::size_t w = 0, h = 0;
  const auto buf = detail::read_png(path, PNG_FORMAT_RGB, w, h);
  Tensor t({3, h, w});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t c = 0; c < 3; ++c) t.at(c, i, j) = buf[(i * w + j) * 3 + c] / 255.0;
  return t;
}

inline void save_rgb(const std::string& path, const Tensor& t) {
  require(t.rank() == 3 && t.dim(0) == 3, "save_rgb: expected (3,H,W)");
  const std::size_t h = t.dim(1), w = t.dim(2);
  std::vector<unsigned char> buf(h * w * 3);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t c = 0; c < 3; ++c) buf[(i * w + j) * 3 + c] = detail::to_byte(t.at(c, i, j));
  detail::write_png(path, PNG_FORMAT_RGB, w, h, buf);
}

/// 8-bit grayscale mask PNG -> (H, W) binary; 0 is background, anything
/// else foreground.
inline Tensor load_mask(const std::string& path) {
  std::size_t w = 0, h = 0;
  const auto buf = detail::read_png(path, PNG_FORMAT_GRAY, w, h);
  Tensor t({h, w});
  for (std::size_t i = 0; i < h * w; ++i) t[i] = buf[i] != 0 ? 1.0 : 0.0;
  return t;
}

/// Binary (H, W) mask -> grayscale PNG with values {0, 255}.
inline void save_mask(const std::string& path, const Tensor& mask) {
  require(mask.rank() == 2, "save_mask: expected (H,W)");
  std::vector<unsigned char> buf(mask.numel());
  for (std::size_t i = 0; i < mask.numel(); ++i) buf[i] = mask[i] != 0.0 ? 255 : 0;
  detail::write_png(path, PNG_FORMAT_GRAY, mask.dim(1), mask.dim(0), buf);
}

/// Alpha-blends the mask in red over the image at the given opacity.
inline Tensor overlay(const Tensor& image, const Tensor& mask, double alpha = 0.5) {
  require(image.rank() == 3 && image.dim(0) == 3 && mask.rank() == 2 && mask.dim(0) == image.dim(1) &&
              mask.dim(1) == image.dim(2),
          "overlay: image (3,H,W) and mask (H,W) sizes differ");
  Tensor out = image;
  const double red[3] = {1.0, 0.0, 0.0};
  for (std::size_t i = 0; i < mask.dim(0); ++i)
    for (std::size_t j = 0; j < mask.dim(1); ++j) {
      if (mask.at(i, j) == 0.0) continue;
      for (std::size_t c = 0; c < 3; ++c) out.at(c, i, j) = (1.0 - alpha) * image.at(c, i, j) + alpha * red[c];
    }
  return out;
}

}  // namespace avsam::image_io
