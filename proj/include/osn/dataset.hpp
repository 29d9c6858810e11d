#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "osn/masks.hpp"
#include "osn/nets.hpp"
#include "osn/tensor.hpp"

namespace osn::pipeline {

using ad::Tensor;

enum class ShapeClass : std::size_t { disk = 0, square = 1 };
inline constexpr std::array<const char*, 2> kClassNames{"disk", "square"};

// Half-open pixel rectangle [row0, row1) x [col0, col1).
struct Region {
  std::size_t row0 = 0, col0 = 0, row1 = 0, col1 = 0;
};

// Bright object on a dark background. Pixel values: background -1, object a
// uniform intensity drawn from [intensity_min, intensity_max]. Disks contain
// pixels within `radius` of the integer center; squares extend `radius` pixels
// each way from it.
struct DatasetSpec {
  std::size_t size = 24;
  std::size_t radius_min = 3;
  std::size_t radius_max = 6;
  Region region{0, 0, 24, 24};
  double intensity_min = 0.5;
  double intensity_max = 1.0;
  std::size_t count = 512;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ShapeSample {
  Tensor image;  // [1, size, size]
  std::size_t label = 0;
  Mask mask;
  Point centroid;
};

std::vector<ShapeSample> make_shapes_dataset(const DatasetSpec& spec);
std::vector<nets::LabeledImage> labeled(const std::vector<ShapeSample>& data);

}  // namespace osn::pipeline
