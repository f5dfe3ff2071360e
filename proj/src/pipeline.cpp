#include "veil/pipeline.hpp"

#include <algorithm>
#include <cmath>

#include "veil/attacks.hpp"

namespace veil::img {

void validate_box(const Photo& photo, const BoundingBox& box) {
  if (photo.pixels.shape.size() != 3 || photo.pixels.shape[2] != 3)
    throw ShapeError("photo must be (H,W,3)");
  const int H = photo.pixels.shape[0], W = photo.pixels.shape[1];
  if (box.w < 8 || box.h < 8) throw ArgumentError("bounding box must be at least 8x8");
  if (box.x0 < 0 || box.y0 < 0 || box.x0 + box.w > W || box.y0 + box.h > H)
    throw ArgumentError("bounding box exceeds image bounds");
}

Tensor crop(const Photo& photo, const BoundingBox& box) {
  validate_box(photo, box);
  Tensor out = Tensor::zeros({box.h, box.w, 3});
  for (int y = 0; y < box.h; ++y)
    for (int x = 0; x < box.w; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = photo.pixels.at(box.y0 + y, box.x0 + x, c);
  return out;
}

Tensor resize_bilinear(const Tensor& image, int out_h, int out_w) {
  if (image.shape.size() != 3) throw ShapeError("resize_bilinear expects (H,W,C)");
  if (out_h < 1 || out_w < 1) throw ArgumentError("resize_bilinear: output dims must be >= 1");
  const int in_h = image.shape[0], in_w = image.shape[1], ch = image.shape[2];
  const double sy = static_cast<double>(in_h) / out_h;
  const double sx = static_cast<double>(in_w) / out_w;
  Tensor out = Tensor::zeros({out_h, out_w, ch});
  for (int oy = 0; oy < out_h; ++oy) {
    const double fy = (oy + 0.5) * sy - 0.5;
    const int y0 = static_cast<int>(std::floor(fy));
    const double wy = fy - y0;
    const int ya = std::clamp(y0, 0, in_h - 1);
    const int yb = std::clamp(y0 + 1, 0, in_h - 1);
    for (int ox = 0; ox < out_w; ++ox) {
      const double fx = (ox + 0.5) * sx - 0.5;
      const int x0 = static_cast<int>(std::floor(fx));
      const double wx = fx - x0;
      const int xa = std::clamp(x0, 0, in_w - 1);
      const int xb = std::clamp(x0 + 1, 0, in_w - 1);
      for (int c = 0; c < ch; ++c) {
        const double top = (1.0 - wx) * image.at(ya, xa, c) + wx * image.at(ya, xb, c);
        const double bot = (1.0 - wx) * image.at(yb, xa, c) + wx * image.at(yb, xb, c);
        out.at(oy, ox, c) = (1.0 - wy) * top + wy * bot;
      }
    }
  }
  return out;
}

Tensor extract_mask(const Tensor& adv_face, const Tensor& face) {
  require_same_shape(adv_face, face, "extract_mask");
  return adv_face - face;
}

Photo apply_uncropped(const Photo& photo, const BoundingBox& box, const Tensor& delta,
                      double alpha, double* clipped_fraction) {
  validate_box(photo, box);
  if (delta.shape.size() != 3) throw ShapeError("mask must be (H,W,C)");
  if (alpha < 1.0) throw ArgumentError("apply_uncropped: alpha must be >= 1");

  // The mask is a signed field; resize before amplification.
  const Tensor resized = (delta.shape[0] == box.h && delta.shape[1] == box.w)
                             ? delta
                             : resize_bilinear(delta, box.h, box.w);
  Photo out = photo;
  std::int64_t clipped = 0;
  for (int y = 0; y < box.h; ++y) {
    for (int x = 0; x < box.w; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = photo.pixels.at(box.y0 + y, box.x0 + x, c) + alpha * resized.at(y, x, c);
        const double clipped_v = std::clamp(v, 0.0, 1.0);
        if (clipped_v != v) ++clipped;
        out.pixels.at(box.y0 + y, box.x0 + x, c) = clipped_v;
      }
    }
  }
  if (clipped_fraction)
    *clipped_fraction =
        static_cast<double>(clipped) / (static_cast<double>(box.h) * box.w * 3.0);
  return out;
}

Tensor apply_cropped(const Tensor& face, const Tensor& delta, double alpha) {
  return attack::amplify(face, delta, alpha);
}

}  // namespace veil::img
