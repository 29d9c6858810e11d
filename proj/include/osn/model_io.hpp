#pragma once

#include <filesystem>
#include <vector>

#include "osn/archive.hpp"
#include "osn/dataset.hpp"
#include "osn/diffusion.hpp"
#include "osn/nets.hpp"

namespace osn::pipeline {

// Architecture travels in the archive attributes, parameters as tensors in
// parameter order. Precision selects the payload element type.
Archive classifier_archive(const nets::Classifier& clf, Precision p);
nets::Classifier classifier_from(const Archive& a);

struct DenoiserBundle {
  nets::Denoiser model;
  diffusion::NoiseSchedule schedule;
  double beta_min = 0.0, beta_max = 0.0;
};
Archive denoiser_archive(const nets::Denoiser& den, double beta_min, double beta_max, Precision p);
DenoiserBundle denoiser_from(const Archive& a);

// images [N,1,H,W], labels [N], masks [N,H,W], centroids [N,2]
Archive dataset_archive(const std::vector<ShapeSample>& data);
std::vector<ShapeSample> dataset_from(const Archive& a);

}  // namespace osn::pipeline
