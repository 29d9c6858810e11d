#include "osn/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "osn/random.hpp"

namespace osn::pipeline {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double dist(const Point& a, const Point& b) { return std::hypot(a.row - b.row, a.col - b.col); }

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string short_num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

RecordMetrics compute_metrics(const Tensor& noise, const ObjectMask& output, double percentile) {
  const Mask sal = noise::saliency_mask(noise, percentile);
  const auto u = iou(sal, output.mask);
  RecordMetrics m;
  m.iou = u.value;
  m.iou_both_empty = u.both_empty;
  m.centroid_offset = output.mask.empty() ? kNaN : dist(centroid(sal), centroid(output.mask));
  return m;
}

std::vector<GenerationRecord> generate_from_noise(const noise::SaliencyNoise& noise, const std::string& source_id,
                                                  std::size_t y, const std::vector<std::size_t>& targets,
                                                  const Models& models, const GenerationConfig& cfg) {
  require(noise.values.shape() == models.denoiser.arch().image,
          "generate: noise shape " + ad::shape_str(noise.values.shape()) + " does not match the denoiser image " +
              ad::shape_str(models.denoiser.arch().image));
  std::vector<GenerationRecord> out;
  for (std::size_t t : targets) {
    diffusion::SampleOptions opts;
    opts.snapshot_every = cfg.snapshot_every;
    opts.noise_source = noise::to_string(noise.method);
    GenerationRecord r;
    r.source_id = source_id;
    r.source_class = y;
    r.target_class = t;
    r.noise = noise;
    r.trajectory = diffusion::sample_loop(models.denoiser, models.schedule, t, noise.values, cfg.sample_seed, opts);
    r.output_mask = object_mask_of_output(r.output());
    r.metrics = compute_metrics(noise.values, r.output_mask, cfg.mask_percentile);
    out.push_back(std::move(r));
  }
  return out;
}

namespace {

std::vector<noise::IGSnapshot> invert_source(const Tensor& x_star, std::size_t y, const Models& models,
                                             const noise::IGConfig& ig) {
  const Tensor g_star = nets::param_gradient(models.classifier, x_star, y, false);
  return noise::invert_gradients(models.classifier, g_star, y, ig);
}

noise::SaliencyNoise snapshot_noise(const noise::IGSnapshot& s, const std::string& source_id, std::size_t y,
                                    const GenerationConfig& cfg) {
  auto n = noise::make_noise(s.image, noise::Method::inverting_gradients, cfg.standardize);
  n.steps = s.step;
  n.source_id = source_id;
  n.source_class = y;
  n.seed = cfg.ig.init_seed;
  return n;
}

}  // namespace

std::vector<GenerationRecord> generate_conditioned(const Tensor& x_star, std::size_t y, const std::string& source_id,
                                                   const std::vector<std::size_t>& targets, const Models& models,
                                                   const GenerationConfig& cfg) {
  noise::IGConfig ig = cfg.ig;
  ig.snapshots.clear();
  const auto snaps = invert_source(x_star, y, models, ig);
  return generate_from_noise(snapshot_noise(snaps.back(), source_id, y, cfg), source_id, y, targets, models, cfg);
}

Quartiles quartiles(std::vector<double> v) {
  if (v.empty()) return {kNaN, kNaN, kNaN};
  std::sort(v.begin(), v.end());
  auto at = [&](double p) {
    const double h = p * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  return {at(0.25), at(0.5), at(0.75)};
}

SignTest sign_test(const std::vector<double>& method, const std::vector<double>& baseline) {
  require(method.size() == baseline.size(), "sign_test: unpaired samples (" + std::to_string(method.size()) + " vs " +
                                                std::to_string(baseline.size()) + ")");
  SignTest s;
  for (std::size_t i = 0; i < method.size(); ++i) {
    if (method[i] > baseline[i]) ++s.wins;
    else if (method[i] < baseline[i]) ++s.losses;
    else ++s.ties;
  }
  const std::size_t n = s.wins + s.losses;
  if (n == 0) return s;
  // upper tail of Binomial(n, 1/2), summed in log space
  double p = 0.0;
  for (std::size_t k = s.wins; k <= n; ++k) {
    const double lc = std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(static_cast<double>(n - k) + 1.0);
    p += std::exp(lc - static_cast<double>(n) * std::log(2.0));
  }
  s.p_value = std::min(1.0, p);
  return s;
}

namespace {

MethodSummary summarize(const std::string& name, const std::vector<EvalRow>& rows) {
  MethodSummary s;
  s.method = name;
  s.n = rows.size();
  std::vector<double> ious, offs;
  for (const auto& r : rows) {
    ious.push_back(r.iou);
    if (!std::isnan(r.centroid_offset)) offs.push_back(r.centroid_offset);
  }
  s.iou = quartiles(ious);
  s.centroid_offset = quartiles(offs);
  return s;
}

EvalRow row_of(const GenerationRecord& r, double percentile, const char* method) {
  const auto m = compute_metrics(r.noise.values, r.output_mask, percentile);
  return {method, r.source_id, r.source_class, r.target_class, m.iou, m.iou_both_empty, m.centroid_offset,
          r.output_mask.blank};
}

}  // namespace

EvalReport evaluate_localization(const std::vector<GenerationRecord>& records,
                                 const std::vector<GenerationRecord>& baseline, double mask_percentile) {
  require(!records.empty() && !baseline.empty(), "evaluate_localization: empty record list");
  require(records.size() == baseline.size(), "evaluate_localization: records and baseline must pair up (" +
                                                 std::to_string(records.size()) + " vs " +
                                                 std::to_string(baseline.size()) + ")");
  const auto& shape = records.front().output().shape();
  for (const auto* list : {&records, &baseline})
    for (const auto& r : *list)
      require(r.output().shape() == shape && r.noise.values.shape() == shape,
              "evaluate_localization: records differ in image shape");

  EvalReport rep;
  std::vector<EvalRow> a, b;
  for (const auto& r : records) a.push_back(row_of(r, mask_percentile, noise::to_string(r.noise.method)));
  for (const auto& r : baseline) b.push_back(row_of(r, mask_percentile, "gaussian-baseline"));
  rep.method = summarize(a.front().method, a);
  rep.baseline = summarize("gaussian-baseline", b);
  std::vector<double> ia, ib;
  for (const auto& r : a) ia.push_back(r.iou);
  for (const auto& r : b) ib.push_back(r.iou);
  rep.test = sign_test(ia, ib);
  rep.rows = std::move(a);
  rep.rows.insert(rep.rows.end(), b.begin(), b.end());
  return rep;
}

std::uint64_t ig_seed(const Source& s) { return derive_seed(s.seed, 21); }
std::uint64_t sample_seed(const Source& s) { return derive_seed(s.seed, 22); }
std::uint64_t baseline_seed(const Source& s) { return derive_seed(s.seed, 23); }

std::vector<std::size_t> targets_for(const Source& s, const StudyConfig& cfg, std::size_t num_classes) {
  if (!cfg.all_targets) return {s.label};
  std::vector<std::size_t> out(num_classes);
  for (std::size_t i = 0; i < num_classes; ++i) out[i] = i;
  return out;
}

namespace {

GenerationConfig cell_config(const Source& s, const StudyConfig& cfg) {
  GenerationConfig g = cfg.generation;
  g.ig.init_seed = ig_seed(s);
  g.sample_seed = sample_seed(s);
  return g;
}

std::vector<std::size_t> targets_of(const Source& s, const StudyConfig& cfg, const Models& models) {
  return targets_for(s, cfg, models.denoiser.arch().num_classes);
}

}  // namespace

std::vector<GenerationRecord> baseline_records(const Source& s, const StudyConfig& cfg, const Models& models) {
  auto n = noise::gaussian_baseline(models.denoiser.arch().image, baseline_seed(s));
  n.source_id = s.id;
  n.source_class = s.label;
  return generate_from_noise(n, s.id, s.label, targets_of(s, cfg, models), models, cell_config(s, cfg));
}

StepStudy run_step_study(const std::vector<Source>& sources, const Models& models, const StudyConfig& cfg) {
  require(!sources.empty(), "step study: no sources");
  StepStudy study;
  const auto& steps = cfg.generation.ig.snapshots;
  require(!steps.empty(), "step study: no snapshot steps");
  cfg.generation.ig.validate();
  std::vector<std::vector<GenerationRecord>> per_step(steps.size());
  std::vector<std::vector<double>> objectives(steps.size());
  for (const auto& s : sources) {
    const auto g = cell_config(s, cfg);
    const auto snaps = invert_source(s.image, s.label, models, g.ig);
    for (std::size_t i = 0; i < steps.size(); ++i) {
      // snapshots come back in step order; step k may be appended at the end
      const auto it = std::find_if(snaps.begin(), snaps.end(), [&](const auto& q) { return q.step == steps[i]; });
      objectives[i].push_back(it->objective);
      auto recs = generate_from_noise(snapshot_noise(*it, s.id, s.label, g), s.id, s.label, targets_of(s, cfg, models),
                                      models, g);
      for (auto& r : recs) per_step[i].push_back(std::move(r));
    }
    for (auto& r : baseline_records(s, cfg, models)) study.baseline.push_back(std::move(r));
  }
  for (std::size_t i = 0; i < steps.size(); ++i) {
    StepRow row;
    row.step = steps[i];
    row.objectives = std::move(objectives[i]);
    row.report = evaluate_localization(per_step[i], study.baseline, cfg.generation.mask_percentile);
    row.records = std::move(per_step[i]);
    study.rows.push_back(std::move(row));
  }
  return study;
}

const char* to_string(Manipulation m) { return m == Manipulation::hflip ? "hflip" : "rotate90"; }

Manipulation parse_manipulation(const std::string& s) {
  if (s == "hflip") return Manipulation::hflip;
  if (s == "rotate90") return Manipulation::rotate90;
  throw ContractViolation("unknown manipulation '" + s + "' (expected hflip or rotate90)");
}

Tensor apply(Manipulation m, const Tensor& image) {
  return m == Manipulation::hflip ? noise::hflip(image) : noise::rotate90(image);
}

Point apply(Manipulation m, const Point& p, std::size_t h, std::size_t w) {
  if (m == Manipulation::hflip) return {p.row, static_cast<double>(w) - 1.0 - p.col};
  // out[r][c] = in[h-1-c][r]  =>  in (r0, c0) lands at (c0, h-1-r0)
  return {p.col, static_cast<double>(h) - 1.0 - p.row};
}

ManipStudy run_manipulation_study(const std::vector<Source>& sources,
                                  const std::vector<noise::SaliencyNoise>& noises, const Models& models,
                                  const StudyConfig& cfg, Manipulation m) {
  require(sources.size() == noises.size(), "manipulation study: one noise per source required");
  const auto& shape = models.denoiser.arch().image;
  require(m == Manipulation::hflip || shape[1] == shape[2], "rotate90 study needs square images");
  ManipStudy study;
  study.manipulation = m;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    const auto& s = sources[i];
    const auto g = cell_config(s, cfg);
    const auto targets = targets_of(s, cfg, models);
    const auto plain = generate_from_noise(noises[i], s.id, s.label, targets, models, g);
    noise::SaliencyNoise moved = noises[i];
    moved.values = apply(m, noises[i].values);
    const auto turned = generate_from_noise(moved, s.id, s.label, targets, models, g);
    for (std::size_t j = 0; j < targets.size(); ++j) {
      ManipRow row;
      row.source_id = s.id;
      row.target_class = targets[j];
      row.original = centroid(plain[j].output_mask.mask);
      row.manipulated = centroid(turned[j].output_mask.mask);
      row.predicted = apply(m, row.original, shape[1], shape[2]);
      if (m == Manipulation::hflip) {
        row.dist_predicted = std::abs(row.manipulated.col - row.predicted.col);
        row.dist_original = std::abs(row.manipulated.col - row.original.col);
      } else {
        row.dist_predicted = dist(row.manipulated, row.predicted);
        row.dist_original = dist(row.manipulated, row.original);
      }
      // NaN compares false, so empty masks never agree
      row.agrees = row.dist_predicted < row.dist_original;
      study.agreements += row.agrees ? 1 : 0;
      study.rows.push_back(row);
    }
  }
  return study;
}

ManipStudy run_manipulation_study(const std::vector<Source>& sources, const Models& models, const StudyConfig& cfg,
                                  Manipulation m) {
  std::vector<noise::SaliencyNoise> noises;
  for (const auto& s : sources)
    noises.push_back(make_method_noise(noise::Method::inverting_gradients, s, models, cfg, {}));
  return run_manipulation_study(sources, noises, models, cfg, m);
}

noise::SaliencyNoise make_method_noise(noise::Method method, const Source& s, const Models& models,
                                       const StudyConfig& cfg, const AltMapsConfig& alt) {
  const auto g = cell_config(s, cfg);
  noise::SaliencyNoise n;
  switch (method) {
    case noise::Method::inverting_gradients: {
      noise::IGConfig ig = g.ig;
      ig.snapshots.clear();
      return snapshot_noise(invert_source(s.image, s.label, models, ig).back(), s.id, s.label, g);
    }
    case noise::Method::fgsm:
      n = noise::make_noise(noise::fgsm_map(models.classifier, s.image, s.label, alt.fgsm_eps), method, g.standardize);
      break;
    case noise::Method::feature_map:
      n = noise::make_noise(noise::feature_map_saliency(models.classifier, s.image, alt.feature_layer), method,
                            g.standardize);
      break;
    case noise::Method::gaussian_baseline:
      n = noise::gaussian_baseline(models.denoiser.arch().image, baseline_seed(s));
      n.seed = baseline_seed(s);
      break;
  }
  n.source_id = s.id;
  n.source_class = s.label;
  return n;
}

AltMapsStudy run_altmaps_study(const std::vector<Source>& sources, const Models& models, const StudyConfig& cfg,
                               const AltMapsConfig& alt) {
  require(!sources.empty(), "altmaps study: no sources");
  const noise::Method methods[] = {noise::Method::inverting_gradients, noise::Method::fgsm,
                                   noise::Method::feature_map};
  std::vector<GenerationRecord> baseline;
  std::vector<std::vector<GenerationRecord>> recs(std::size(methods));
  for (const auto& s : sources) {
    const auto g = cell_config(s, cfg);
    const auto targets = targets_of(s, cfg, models);
    for (std::size_t i = 0; i < std::size(methods); ++i)
      for (auto& r : generate_from_noise(make_method_noise(methods[i], s, models, cfg, alt), s.id, s.label, targets,
                                         models, g))
        recs[i].push_back(std::move(r));
    for (auto& r : baseline_records(s, cfg, models)) baseline.push_back(std::move(r));
  }
  AltMapsStudy study;
  for (std::size_t i = 0; i < std::size(methods); ++i) {
    study.methods.push_back(noise::to_string(methods[i]));
    study.reports.push_back(evaluate_localization(recs[i], baseline, cfg.generation.mask_percentile));
  }
  return study;
}

std::string records_csv(const std::vector<GenerationRecord>& records) {
  std::string out =
      "source_id,source_class,target_class,method,steps,noise_seed,noise_mean,noise_stddev,sample_seed,iou,"
      "iou_both_empty,centroid_offset,output_blank\n";
  for (const auto& r : records) {
    out += r.source_id + "," + std::to_string(r.source_class) + "," + std::to_string(r.target_class) + "," +
           noise::to_string(r.noise.method) + "," + std::to_string(r.noise.steps) + "," +
           std::to_string(r.noise.seed) + "," + num(r.noise.mean) + "," + num(r.noise.stddev) + "," +
           std::to_string(r.trajectory.seed) + "," + num(r.metrics.iou) + "," + (r.metrics.iou_both_empty ? "1" : "0") +
           "," + num(r.metrics.centroid_offset) + "," + (r.output_mask.blank ? "1" : "0") + "\n";
  }
  return out;
}

std::string eval_rows_csv(const EvalReport& r) {
  std::string out = "method,source_id,source_class,target_class,iou,iou_both_empty,centroid_offset,output_blank\n";
  for (const auto& e : r.rows)
    out += e.method + "," + e.source_id + "," + std::to_string(e.source_class) + "," + std::to_string(e.target_class) +
           "," + num(e.iou) + "," + (e.iou_both_empty ? "1" : "0") + "," + num(e.centroid_offset) + "," +
           (e.output_blank ? "1" : "0") + "\n";
  return out;
}

std::string summary_csv(const std::vector<std::pair<std::string, const EvalReport*>>& reports) {
  std::string out =
      "label,method,n,iou_median,iou_q1,iou_q3,iou_iqr,baseline_median,baseline_q1,baseline_q3,baseline_iqr,"
      "offset_median,baseline_offset_median,wins,losses,ties,p_value\n";
  for (const auto& [label, r] : reports) {
    out += label + "," + r->method.method + "," + std::to_string(r->method.n) + "," + num(r->method.iou.median) + "," +
           num(r->method.iou.q1) + "," + num(r->method.iou.q3) + "," + num(r->method.iou.iqr()) + "," +
           num(r->baseline.iou.median) + "," + num(r->baseline.iou.q1) + "," + num(r->baseline.iou.q3) + "," +
           num(r->baseline.iou.iqr()) + "," + num(r->method.centroid_offset.median) + "," +
           num(r->baseline.centroid_offset.median) + "," + std::to_string(r->test.wins) + "," +
           std::to_string(r->test.losses) + "," + std::to_string(r->test.ties) + "," + num(r->test.p_value) + "\n";
  }
  return out;
}

std::string step_study_csv(const StepStudy& s) {
  std::string out = "step,source_index,objective\n";
  for (const auto& row : s.rows)
    for (std::size_t i = 0; i < row.objectives.size(); ++i)
      out += std::to_string(row.step) + "," + std::to_string(i) + "," + num(row.objectives[i]) + "\n";
  return out;
}

std::string manip_csv(const ManipStudy& s) {
  std::string out =
      "manipulation,source_id,target_class,orig_row,orig_col,manip_row,manip_col,pred_row,pred_col,dist_predicted,"
      "dist_original,agrees\n";
  for (const auto& r : s.rows)
    out += std::string(to_string(s.manipulation)) + "," + r.source_id + "," + std::to_string(r.target_class) + "," +
           num(r.original.row) + "," + num(r.original.col) + "," + num(r.manipulated.row) + "," +
           num(r.manipulated.col) + "," + num(r.predicted.row) + "," + num(r.predicted.col) + "," +
           num(r.dist_predicted) + "," + num(r.dist_original) + "," + (r.agrees ? "1" : "0") + "\n";
  return out;
}

std::string summary_text(const std::string& title, const std::vector<std::pair<std::string, const EvalReport*>>& reports) {
  std::string out = title + "\n";
  for (const auto& [label, r] : reports) {
    const std::string what = label == r->method.method ? "" : r->method.method + ", ";
    out += "  " + label + " (" + what + "n=" + std::to_string(r->method.n) + "): median IoU " +
           short_num(r->method.iou.median) + " [IQR " + short_num(r->method.iou.iqr()) + "] vs baseline " +
           short_num(r->baseline.iou.median) + " [IQR " + short_num(r->baseline.iou.iqr()) + "]; sign test " +
           std::to_string(r->test.wins) + "/" + std::to_string(r->test.losses) + "/" + std::to_string(r->test.ties) +
           " (win/loss/tie), one-sided p = " + short_num(r->test.p_value) + "\n";
  }
  return out;
}

std::vector<double> sample_accuracy(const Models& models, std::size_t per_class, std::uint64_t seed) {
  require(per_class > 0, "sample_accuracy: need at least one sample per class");
  const std::size_t k = models.denoiser.arch().num_classes;
  std::vector<double> acc(k, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < per_class; ++i) {
      const auto traj = diffusion::sample_loop(models.denoiser, models.schedule, c, std::nullopt,
                                               derive_seed(seed, c * per_class + i));
      hits += models.classifier.predict(traj.final_image()) == c ? 1 : 0;
    }
    acc[c] = static_cast<double>(hits) / static_cast<double>(per_class);
  }
  return acc;
}

}  // namespace osn::pipeline
