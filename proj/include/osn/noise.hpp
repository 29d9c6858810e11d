#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "osn/masks.hpp"
#include "osn/nets.hpp"
#include "osn/tensor.hpp"

namespace osn::noise {

using ad::Tensor;

// The cosine distance is undefined for a zero-norm gradient. Kept distinct
// from shape errors; `step` is the inversion iteration (or -1 outside one).
class ZeroNormGradient : public ContractViolation {
 public:
  ZeroNormGradient(const std::string& what, long step) : ContractViolation(what), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

// 1 - <g, g*> / (|g| |g*|), recorded when g is.
Tensor cosine_gradient_distance(const Tensor& g, const Tensor& g_star);

struct IGConfig {
  std::size_t steps = 5000;  // k
  double learning_rate = 0.003;
  // Step decay: the rate drops by 10x at 3/8, 5/8 and 7/8 of the k steps.
  bool lr_decay = false;
  nets::OptimizerKind optimizer = nets::OptimizerKind::adam;
  std::vector<std::size_t> snapshots{0, 1000, 3000, 5000};
  std::uint64_t init_seed = 0;
  // Optional extras, off by default: squared total-variation penalty weight and
  // stepping on the sign of the image gradient.
  double tv_weight = 0.0;
  bool signed_gradient = false;

  void validate() const;
};

struct IGSnapshot {
  std::size_t step = 0;
  Tensor image;
  double objective = 0.0;  // cosine distance at this iterate (without the TV term)
};

// Starts from a unit Gaussian image drawn from cfg.init_seed and descends the
// cosine distance between the model's parameter gradient at the iterate and
// g_star. Returns the requested snapshots in step order; step k is always
// included.
std::vector<IGSnapshot> invert_gradients(const nets::LossModel& model, const Tensor& g_star, std::size_t y,
                                         const IGConfig& cfg);

// Objective value of a single image, outside any optimization.
double inversion_objective(const nets::LossModel& model, const Tensor& x, const Tensor& g_star, std::size_t y);

struct Standardized {
  Tensor image;
  double mean = 0.0;
  double stddev = 1.0;  // population
};

Standardized standardize(const Tensor& x);

// eps * sign(dL/dx), sign(0) = 0.
Tensor fgsm_map(const nets::LossModel& model, const Tensor& x, std::size_t y, double eps);

// Channel mean of |activation| of conv block `layer`, nearest-upsampled to the
// input resolution, shaped like the input's single channel.
Tensor feature_map_saliency(const nets::Classifier& clf, const Tensor& x, std::size_t layer);

// Clockwise quarter turn, out[r][c] = in[H-1-c][r], applied per channel.
Tensor rotate90(const Tensor& x);
// Mirror left-right, out[r][c] = in[r][W-1-c], applied per channel.
Tensor hflip(const Tensor& x);

// 1 where |value| >= the threshold, the sorted |values| entry at index
// floor(p N / 100); ties at the threshold are included.
pipeline::Mask saliency_mask(const Tensor& map, double percentile = 80.0);

enum class Method { inverting_gradients, fgsm, feature_map, gaussian_baseline };
const char* to_string(Method m);
Method parse_method(const std::string& s);

// Image-shaped noise with provenance. `values` is what the sampler receives.
struct SaliencyNoise {
  Tensor values;
  Method method = Method::gaussian_baseline;
  std::size_t steps = 0;  // k for inversion, 0 otherwise
  std::string source_id;
  std::size_t source_class = 0;
  bool standardized = true;
  double mean = 0.0;    // statistics removed by standardization
  double stddev = 1.0;  // (0 and 1 for raw noise)
  std::uint64_t seed = 0;

  // values * stddev + mean
  Tensor raw() const;
};

SaliencyNoise make_noise(const Tensor& raw, Method method, bool standardize_values);
SaliencyNoise gaussian_baseline(const ad::Shape& shape, std::uint64_t seed);

}  // namespace osn::noise
