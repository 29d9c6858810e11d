#include "osn/masks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace osn::pipeline {

std::size_t Mask::count() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1)); }

Point centroid(const Mask& m) {
  double sr = 0.0, sc = 0.0;
  std::size_t n = 0;
  for (std::size_t r = 0; r < m.height; ++r)
    for (std::size_t c = 0; c < m.width; ++c)
      if (m.at(r, c)) {
        sr += static_cast<double>(r);
        sc += static_cast<double>(c);
        ++n;
      }
  if (n == 0) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  return {sr / static_cast<double>(n), sc / static_cast<double>(n)};
}

IoU iou(const Mask& a, const Mask& b) {
  require(a.height == b.height && a.width == b.width,
          "iou: shape mismatch " + std::to_string(a.height) + "x" + std::to_string(a.width) + " vs " +
              std::to_string(b.height) + "x" + std::to_string(b.width));
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    inter += (a.bits[i] && b.bits[i]) ? 1 : 0;
    uni += (a.bits[i] || b.bits[i]) ? 1 : 0;
  }
  if (uni == 0) return {0.0, true};
  return {static_cast<double>(inter) / static_cast<double>(uni), false};
}

Mask largest_component(const Mask& m) {
  const std::size_t h = m.height, w = m.width;
  std::vector<int> label(h * w, -1);
  std::vector<std::size_t> stack;
  int best = -1;
  std::size_t best_size = 0;
  int next = 0;
  for (std::size_t start = 0; start < h * w; ++start) {
    if (!m.bits[start] || label[start] >= 0) continue;
    std::size_t size = 0;
    stack.push_back(start);
    label[start] = next;
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      ++size;
      const std::size_t r = p / w, c = p % w;
      auto visit = [&](std::size_t q) {
        if (m.bits[q] && label[q] < 0) {
          label[q] = next;
          stack.push_back(q);
        }
      };
      if (r > 0) visit(p - w);
      if (r + 1 < h) visit(p + w);
      if (c > 0) visit(p - 1);
      if (c + 1 < w) visit(p + 1);
    }
    if (size > best_size) {
      best_size = size;
      best = next;
    }
    ++next;
  }
  Mask out{h, w, std::vector<std::uint8_t>(h * w, 0)};
  for (std::size_t i = 0; i < h * w; ++i) out.bits[i] = label[i] == best && best >= 0 ? 1 : 0;
  return out;
}

ObjectMask object_mask_of_output(const ad::Tensor& image) {
  const auto& s = image.shape();
  require(s.size() == 2 || (s.size() == 3 && s[0] == 1),
          "object_mask_of_output: expected [H,W] or [1,H,W], got " + ad::shape_str(s));
  require(ad::all_finite(image.values()), "object_mask_of_output: image has non-finite values");
  const std::size_t h = s[s.size() - 2], w = s[s.size() - 1];
  const auto v = image.values();
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  ObjectMask out{Mask{h, w, std::vector<std::uint8_t>(h * w, 0)}, false};
  if (*hi - *lo < 1e-6) {
    out.blank = true;
    return out;
  }
  const double mid = 0.5 * (*lo + *hi);
  for (std::size_t i = 0; i < h * w; ++i) out.mask.bits[i] = v[i] >= mid ? 1 : 0;
  out.mask = largest_component(out.mask);
  return out;
}

}  // namespace osn::pipeline
