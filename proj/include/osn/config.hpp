#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "osn/dataset.hpp"
#include "osn/diffusion.hpp"
#include "osn/nets.hpp"
#include "osn/noise.hpp"

namespace osn::pipeline {

class ConfigError : public ContractViolation {
  using ContractViolation::ContractViolation;
};

// Everything a CLI run can be told. Field defaults are the desk setup.
struct RunConfig {
  std::uint64_t seed = 0;
  Precision precision = Precision::f64;

  DatasetSpec dataset{.count = 1024};  // train split; seed derived from `seed`
  std::size_t heldout_count = 256;

  nets::ClassifierArch classifier;
  nets::TrainConfig classifier_train{.epochs = 10, .batch_size = 16, .learning_rate = 3e-3};

  nets::DenoiserArch denoiser{.levels = 2};
  double beta_min = 1e-4;
  double beta_max = 0.04;
  nets::TrainConfig denoiser_train{.epochs = 100, .batch_size = 16, .learning_rate = 1e-3, .ema_decay = 0.995};

  noise::IGConfig ig;
  bool standardize = true;

  std::size_t sources = 20;            // source images per study, one seed each
  std::string targets = "source";      // "source" (target = label) or "all"
  double mask_percentile = 80.0;
  std::size_t source_index = 0;        // invert / generate: which held-out image
  double fgsm_eps = 1.0;
  std::size_t feature_layer = 1;
  std::size_t samples_per_class = 20;  // evaluate: sampler accuracy check

  diffusion::NoiseSchedule schedule() const;
  void validate() const;
};

// "key = value" lines; '#' starts a comment; blank lines ignored. Unknown or
// repeated keys and unparsable values raise ConfigError naming the line.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});
// Every key in schema order; parse_config(to_text(c)) reproduces c.
std::string to_text(const RunConfig& c);
std::vector<std::string> config_keys();

}  // namespace osn::pipeline
