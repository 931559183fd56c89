#pragma once

#include <string>

#include "expredit/tensor.hpp"

namespace expredit {

// Single images are rank-3 (H, W, C) RGB in [-1,1]; batches are rank-4 NHWC.

// Decodes an image file, center-crops to square, resizes to
// resolution x resolution, and maps 8-bit [0,255] linearly to [-1,1].
Tensor load_image(const std::string& path, int resolution);

// Same decoding and range mapping, but keeps the stored size (no crop).
Tensor load_image_native(const std::string& path);

// Encodes a [-1,1] image to an 8-bit file (format from the extension).
void save_image(const Tensor& img, const std::string& path);

// Stacks N rank-3 images into one (N,H,W,C) batch / extracts one back out.
Tensor stack_images(const std::vector<Tensor>& imgs);
Tensor batch_slice(const Tensor& batch, long n);

inline double u8_to_unit(double v) { return v / 127.5 - 1.0; }
inline int unit_to_u8(double v) {
  const double s = (v + 1.0) * 127.5;
  const int r = int(std::lround(s));
  return r < 0 ? 0 : (r > 255 ? 255 : r);
}

}  // namespace expredit
