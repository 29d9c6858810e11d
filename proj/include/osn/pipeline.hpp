#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "osn/diffusion.hpp"
#include "osn/masks.hpp"
#include "osn/nets.hpp"
#include "osn/noise.hpp"

namespace osn::pipeline {

using ad::Tensor;

// The two trained networks and the schedule the denoiser was trained with.
struct Models {
  const nets::Classifier& classifier;
  const nets::Denoiser& denoiser;
  const diffusion::NoiseSchedule& schedule;
};

struct GenerationConfig {
  noise::IGConfig ig;            // ig.steps is k; ig.init_seed seeds the start image
  bool standardize = true;
  std::uint64_t sample_seed = 0;  // x_T is supplied, so only the per-step z draws use it
  std::size_t snapshot_every = 0;  // 0 keeps x_T and x_0 only
  double mask_percentile = 80.0;
};

struct RecordMetrics {
  double iou = 0.0;
  bool iou_both_empty = false;
  double centroid_offset = 0.0;  // pixels between saliency and output centroids; NaN if either is empty
};

struct GenerationRecord {
  std::string source_id;
  std::size_t source_class = 0;  // y
  std::size_t target_class = 0;  // t
  noise::SaliencyNoise noise;
  diffusion::Trajectory trajectory;
  ObjectMask output_mask;
  RecordMetrics metrics;

  const Tensor& output() const { return trajectory.final_image(); }
};

RecordMetrics compute_metrics(const Tensor& noise, const ObjectMask& output, double percentile);

// Samples from the given noise once per target, all runs starting at the
// identical x_T.
std::vector<GenerationRecord> generate_from_noise(const noise::SaliencyNoise& noise, const std::string& source_id,
                                                  std::size_t y, const std::vector<std::size_t>& targets,
                                                  const Models& models, const GenerationConfig& cfg);

// Parameter gradient of x* -> inversion for k steps -> standardization ->
// one sampling run per target class from that shared noise.
std::vector<GenerationRecord> generate_conditioned(const Tensor& x_star, std::size_t y, const std::string& source_id,
                                                   const std::vector<std::size_t>& targets, const Models& models,
                                                   const GenerationConfig& cfg);

struct Quartiles {
  double q1 = 0.0, median = 0.0, q3 = 0.0;
  double iqr() const { return q3 - q1; }
};
// Linear interpolation between order statistics; NaN for an empty sample.
Quartiles quartiles(std::vector<double> v);

struct SignTest {
  std::size_t wins = 0, losses = 0, ties = 0;  // method vs baseline, per pair
  double p_value = 1.0;                        // P(Bin(wins + losses, 1/2) >= wins)
};
SignTest sign_test(const std::vector<double>& method, const std::vector<double>& baseline);

struct EvalRow {
  std::string method;
  std::string source_id;
  std::size_t source_class = 0, target_class = 0;
  double iou = 0.0;
  bool iou_both_empty = false;
  double centroid_offset = 0.0;
  bool output_blank = false;
};

struct MethodSummary {
  std::string method;
  std::size_t n = 0;
  Quartiles iou;
  Quartiles centroid_offset;  // over records where it is defined
};

struct EvalReport {
  std::vector<EvalRow> rows;  // method rows, then baseline rows
  MethodSummary method, baseline;
  SignTest test;  // paired by position, method IoU vs baseline IoU
};

// Metrics are recomputed from each record's stored noise and output.
EvalReport evaluate_localization(const std::vector<GenerationRecord>& records,
                                 const std::vector<GenerationRecord>& baseline, double mask_percentile);

// One entry per study cell: a held-out image with its own seed.
struct Source {
  std::string id;
  Tensor image;
  std::size_t label = 0;
  std::uint64_t seed = 0;
};

struct StudyConfig {
  GenerationConfig generation;
  bool all_targets = false;  // false: target = source label
};

// Seeds used for a source: inversion start, sampling noise, baseline noise.
std::uint64_t ig_seed(const Source& s);
std::uint64_t sample_seed(const Source& s);
std::uint64_t baseline_seed(const Source& s);

std::vector<std::size_t> targets_for(const Source& s, const StudyConfig& cfg, std::size_t num_classes);

// Baseline records: a standardized Gaussian (baseline_seed) sampled with the
// same sampler seed and targets as the OSN run for that source.
std::vector<GenerationRecord> baseline_records(const Source& s, const StudyConfig& cfg, const Models& models);

struct StepRow {
  std::size_t step = 0;
  std::vector<double> objectives;  // per source
  EvalReport report;
  std::vector<GenerationRecord> records;
};

struct StepStudy {
  std::vector<StepRow> rows;  // in snapshot order
  std::vector<GenerationRecord> baseline;
};

// One inversion per source, generation + evaluation for each snapshot step
// (step 0 is the standardized Gaussian start image).
StepStudy run_step_study(const std::vector<Source>& sources, const Models& models, const StudyConfig& cfg);

enum class Manipulation { hflip, rotate90 };
const char* to_string(Manipulation m);
Manipulation parse_manipulation(const std::string& s);

Tensor apply(Manipulation m, const Tensor& image);
// Where a pixel coordinate lands under the manipulation of an h x w image.
Point apply(Manipulation m, const Point& p, std::size_t h, std::size_t w);

struct ManipRow {
  std::string source_id;
  std::size_t target_class = 0;
  Point original;       // output-mask centroid, unmanipulated noise
  Point manipulated;    // output-mask centroid, manipulated noise
  Point predicted;      // manipulation applied to `original`
  double dist_predicted = 0.0;
  double dist_original = 0.0;
  bool agrees = false;  // strictly closer to predicted than to original
};

struct ManipStudy {
  Manipulation manipulation = Manipulation::hflip;
  std::vector<ManipRow> rows;
  std::size_t agreements = 0;
  double agreement_rate() const { return rows.empty() ? 0.0 : static_cast<double>(agreements) / rows.size(); }
};

// Distance is column distance for hflip and Euclidean for rotate90. Rows with
// a blank or empty output mask count as disagreement.
ManipStudy run_manipulation_study(const std::vector<Source>& sources, const Models& models, const StudyConfig& cfg,
                                  Manipulation m);
// Same, from noise that is already computed (one per source, in order).
ManipStudy run_manipulation_study(const std::vector<Source>& sources,
                                  const std::vector<noise::SaliencyNoise>& noises, const Models& models,
                                  const StudyConfig& cfg, Manipulation m);

struct AltMapsConfig {
  double fgsm_eps = 1.0;
  std::size_t feature_layer = 1;
};

struct AltMapsStudy {
  std::vector<std::string> methods;  // evaluation order
  std::vector<EvalReport> reports;   // per method, against the shared baseline
};

// Inverting gradients, FGSM and feature-map inputs, each standardized and
// sampled like the OSN path, all compared with the Gaussian baseline.
AltMapsStudy run_altmaps_study(const std::vector<Source>& sources, const Models& models, const StudyConfig& cfg,
                               const AltMapsConfig& alt);

noise::SaliencyNoise make_method_noise(noise::Method method, const Source& s, const Models& models,
                                       const StudyConfig& cfg, const AltMapsConfig& alt);

// CSV writers. Doubles use %.17g so reruns compare byte for byte.
std::string records_csv(const std::vector<GenerationRecord>& records);
std::string eval_rows_csv(const EvalReport& r);
std::string summary_csv(const std::vector<std::pair<std::string, const EvalReport*>>& reports);
std::string step_study_csv(const StepStudy& s);
std::string manip_csv(const ManipStudy& s);
std::string summary_text(const std::string& title, const std::vector<std::pair<std::string, const EvalReport*>>& reports);

// Fraction of class-conditional samples the classifier assigns to the
// requested class, per class.
std::vector<double> sample_accuracy(const Models& models, std::size_t per_class, std::uint64_t seed);

}  // namespace osn::pipeline
