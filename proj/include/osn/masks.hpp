#pragma once

#include <cstdint>
#include <vector>

#include "osn/tensor.hpp"

namespace osn::pipeline {

// Row-major binary mask.
struct Mask {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> bits;

  std::size_t count() const;
  bool empty() const { return count() == 0; }
  bool at(std::size_t r, std::size_t c) const { return bits[r * width + c] != 0; }
  bool operator==(const Mask&) const = default;
};

struct Point {
  double row = 0.0, col = 0.0;
};

// Mean pixel coordinate of the set bits; (NaN, NaN) for an empty mask.
Point centroid(const Mask& m);

struct IoU {
  double value = 0.0;
  bool both_empty = false;
};

// |a & b| / |a | b|, 0 (flagged) when both are empty.
IoU iou(const Mask& a, const Mask& b);

struct ObjectMask {
  Mask mask;
  bool blank = false;  // image range below 1e-6: nothing to segment
};

// Pixels at or above the midpoint of the image's min and max, reduced to the
// largest 4-connected component (ties: the component found first in raster
// order). The image is [H,W] or [1,H,W].
ObjectMask object_mask_of_output(const ad::Tensor& image);

Mask largest_component(const Mask& m);

}  // namespace osn::pipeline
