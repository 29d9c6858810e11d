#include "osn/dataset.hpp"

#include <numeric>

#include "osn/masks.hpp"
#include "osn/random.hpp"

namespace osn::pipeline {

void DatasetSpec::validate() const {
  require(size >= 4, "dataset image size must be >= 4");
  require(radius_min >= 1 && radius_min <= radius_max, "dataset radius range must satisfy 1 <= min <= max");
  require(region.row0 < region.row1 && region.col0 < region.col1 && region.row1 <= size && region.col1 <= size,
          "placement region must be a nonempty rectangle inside the frame");
  const std::size_t extent = 2 * radius_max + 1;
  require(extent <= region.row1 - region.row0 && extent <= region.col1 - region.col0,
          "unsatisfiable placement: objects up to " + std::to_string(extent) + " px do not fit the region");
  require(intensity_min <= intensity_max && intensity_min > -1.0, "intensity range must lie above the background");
  require(count >= 1, "dataset count must be >= 1");
}

std::vector<ShapeSample> make_shapes_dataset(const DatasetSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::vector<ShapeSample> out;
  out.reserve(spec.count);
  const std::size_t n = spec.size;
  for (std::size_t i = 0; i < spec.count; ++i) {
    const std::size_t label = i % kClassNames.size();
    const std::size_t r = rng.uniform_int(spec.radius_min, spec.radius_max);
    const std::size_t cy = rng.uniform_int(spec.region.row0 + r, spec.region.row1 - 1 - r);
    const std::size_t cx = rng.uniform_int(spec.region.col0 + r, spec.region.col1 - 1 - r);
    const double intensity = rng.uniform(spec.intensity_min, spec.intensity_max);

    Mask mask{n, n, std::vector<std::uint8_t>(n * n, 0)};
    std::vector<double> pix(n * n, -1.0);
    for (std::size_t y = cy - r; y <= cy + r; ++y)
      for (std::size_t x = cx - r; x <= cx + r; ++x) {
        const double dy = static_cast<double>(y) - static_cast<double>(cy);
        const double dx = static_cast<double>(x) - static_cast<double>(cx);
        const bool inside = label == static_cast<std::size_t>(ShapeClass::square) ||
                            dy * dy + dx * dx <= static_cast<double>(r * r);
        if (inside) {
          mask.bits[y * n + x] = 1;
          pix[y * n + x] = intensity;
        }
      }
    ShapeSample s{Tensor::constant({1, n, n}, std::move(pix)), label, mask, centroid(mask)};
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<nets::LabeledImage> labeled(const std::vector<ShapeSample>& data) {
  std::vector<nets::LabeledImage> out;
  out.reserve(data.size());
  for (const auto& s : data) out.push_back({s.image, s.label});
  return out;
}

}  // namespace osn::pipeline
