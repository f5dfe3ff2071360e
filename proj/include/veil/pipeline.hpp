#pragma once

#include <string>

#include "veil/tensor.hpp"

namespace veil::img {

struct BoundingBox {
  int x0 = 0, y0 = 0;  // top-left pixel
  int w = 0, h = 0;
};

struct Photo {
  Tensor pixels;  // (H,W,3) in [0,1]
  std::string source_path;
};

void validate_box(const Photo& photo, const BoundingBox& box);

// Exact pixel copy of the box region, shape (box.h, box.w, 3).
Tensor crop(const Photo& photo, const BoundingBox& box);

// Half-pixel-center bilinear (align_corners=false), edge-clamped. Works on
// signed fields; bounds-preserving on nonnegative images.
Tensor resize_bilinear(const Tensor& image, int out_h, int out_w);

// delta = adv_face - face, exactly.
Tensor extract_mask(const Tensor& adv_face, const Tensor& face);

// Resize delta to the box, scale by alpha, add to the face region, clip to
// [0,1]. Pixels outside the box are untouched. clipped_fraction, when given,
// receives the fraction of in-box pixels that hit the clip.
Photo apply_uncropped(const Photo& photo, const BoundingBox& box, const Tensor& delta,
                      double alpha, double* clipped_fraction = nullptr);

// clip(face + alpha * delta, 0, 1); identical to attack::amplify.
Tensor apply_cropped(const Tensor& face, const Tensor& delta, double alpha);

}  // namespace veil::img
