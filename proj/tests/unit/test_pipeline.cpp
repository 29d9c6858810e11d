#include <cmath>

#include "doctest.h"
#include "osn/pipeline.hpp"
#include "osn/random.hpp"

using namespace osn;
using namespace osn::ad;
using namespace osn::pipeline;

namespace {

// Untrained 8x8 networks: enough to exercise every contract quickly.
struct Tiny {
  nets::Classifier clf;
  nets::Denoiser den;
  diffusion::NoiseSchedule sched;

  Tiny()
      : clf(nets::Classifier::build({.input = {1, 8, 8}, .channels = {2}}, 1)),
        den(nets::Denoiser::build({.image = {1, 8, 8},
                                   .channels = 4,
                                   .dilations = {1, 2, 1},
                                   .time_dim = 4,
                                   .time_hidden = 4,
                                   .timesteps = 5},
                                  2)),
        sched(diffusion::make_schedule(5, diffusion::ScheduleKind::linear, 0.1, 0.5)) {}
  Models models() const { return {clf, den, sched}; }
};

std::vector<Source> tiny_sources(std::size_t n) {
  std::vector<Source> out;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(100 + i);
    out.push_back({"src" + std::to_string(i), rng.normal_tensor({1, 8, 8}), i % 2, 1000 + i});
  }
  return out;
}

StudyConfig tiny_study(std::size_t k) {
  StudyConfig cfg;
  cfg.generation.ig.steps = k;
  cfg.generation.ig.snapshots = {0, k / 2, k};
  cfg.generation.ig.learning_rate = 0.05;
  return cfg;
}

GenerationRecord fixed_record(const Tensor& noise, const Tensor& output) {
  GenerationRecord r;
  r.source_id = "fixed";
  r.noise = noise::make_noise(noise, noise::Method::inverting_gradients, false);
  r.trajectory.states = {{0, output}};
  r.output_mask = object_mask_of_output(output);
  r.metrics = compute_metrics(noise, r.output_mask, 80.0);
  return r;
}

double binom_tail(unsigned n, unsigned k) {
  double c = 1.0, total = 0.0;
  for (unsigned j = 0; j <= n; ++j) {
    if (j >= k) total += c;
    c = c * (n - j) / (j + 1);
  }
  return total / std::pow(2.0, n);
}

}  // namespace

TEST_CASE("quartiles and sign test") {
  const auto q = quartiles({4, 1, 3, 2});
  CHECK(q.q1 == doctest::Approx(1.75));
  CHECK(q.median == doctest::Approx(2.5));
  CHECK(q.q3 == doctest::Approx(3.25));
  CHECK(quartiles({7}).median == 7);
  CHECK(std::isnan(quartiles({}).median));

  std::vector<double> a(20), b(20);
  for (int i = 0; i < 20; ++i) {
    a[i] = i < 15 ? 1.0 : 0.0;
    b[i] = 0.5;
  }
  const auto s = sign_test(a, b);
  CHECK(s.wins == 15);
  CHECK(s.losses == 5);
  CHECK(s.p_value == doctest::Approx(21700.0 / 1048576.0).epsilon(1e-12));
  CHECK(s.p_value == doctest::Approx(binom_tail(20, 15)).epsilon(1e-12));

  // ties drop out of n
  const auto t = sign_test({1, 1, 1, 0.5, 0.5}, {0, 0, 0, 0.5, 0.5});
  CHECK(t.ties == 2);
  CHECK(t.p_value == doctest::Approx(1.0 / 8.0));
  CHECK(sign_test({1, 2}, {1, 2}).p_value == 1.0);
  CHECK(sign_test({0, 0, 0}, {1, 1, 1}).p_value == 1.0);
  CHECK_THROWS_AS(sign_test({1}, {1, 2}), ContractViolation);
}

TEST_CASE("evaluation on records with known masks") {
  // 4x5 bright rectangle is exactly the top 20% of a 10x10 map
  std::vector<double> v(100, 0.0);
  for (std::size_t r = 2; r < 6; ++r)
    for (std::size_t c = 3; c < 8; ++c) v[r * 10 + c] = 1.0;
  const Tensor img = Tensor::constant({1, 10, 10}, v);
  const auto rec = fixed_record(img, img);
  CHECK(rec.metrics.iou == 1.0);
  CHECK(rec.metrics.centroid_offset == 0.0);

  std::vector<GenerationRecord> recs(5, rec);
  const auto same = evaluate_localization(recs, recs, 80.0);
  CHECK(same.method.iou.median == 1.0);
  CHECK(same.test.ties == 5);
  CHECK(same.test.p_value == 1.0);
  CHECK(same.rows.size() == 10);

  Rng rng(3);
  std::vector<GenerationRecord> noisy;
  for (int i = 0; i < 5; ++i) noisy.push_back(fixed_record(rng.normal_tensor({1, 10, 10}), img));
  const auto rep = evaluate_localization(recs, noisy, 80.0);
  CHECK(rep.test.wins == 5);
  CHECK(rep.test.p_value == doctest::Approx(1.0 / 32.0));
  // aggregates follow from the rows
  std::vector<double> base;
  for (const auto& r : rep.rows)
    if (r.method == "gaussian-baseline") base.push_back(r.iou);
  CHECK(rep.baseline.iou.median == quartiles(base).median);

  CHECK_THROWS_AS(evaluate_localization({}, recs, 80.0), ContractViolation);
  CHECK_THROWS_AS(evaluate_localization(recs, {rec}, 80.0), ContractViolation);

  // a blank output gives an empty mask, flagged, and no centroid offset
  const auto blank = fixed_record(img, Tensor::zeros({1, 10, 10}));
  CHECK(blank.output_mask.blank);
  CHECK(blank.metrics.iou == 0.0);
  CHECK(std::isnan(blank.metrics.centroid_offset));
}

TEST_CASE("generate_conditioned shares one noise across targets") {
  const Tiny tiny;
  const auto src = tiny_sources(1)[0];
  GenerationConfig cfg;
  cfg.ig.steps = 6;
  cfg.ig.snapshots = {};
  cfg.ig.init_seed = 5;
  cfg.sample_seed = 9;
  const auto recs = generate_conditioned(src.image, src.label, src.id, {0, 1}, tiny.models(), cfg);
  REQUIRE(recs.size() == 2);
  CHECK(recs[0].noise.values.vec() == recs[1].noise.values.vec());
  CHECK(recs[0].trajectory.states.front().second.vec() == recs[0].noise.values.vec());
  CHECK(recs[0].target_class == 0);
  CHECK(recs[1].target_class == 1);
  CHECK(recs[0].noise.steps == 6);
  for (const auto& r : recs) {
    const auto m = compute_metrics(r.noise.values, object_mask_of_output(r.output()), cfg.mask_percentile);
    CHECK(m.iou == r.metrics.iou);
    CHECK(r.noise.values.shape() == r.output().shape());
  }
  const auto again = generate_conditioned(src.image, src.label, src.id, {0, 1}, tiny.models(), cfg);
  CHECK(again[1].output().vec() == recs[1].output().vec());

  SUBCASE("k = 0 is plain sampling from a standardized seeded Gaussian") {
    cfg.ig.steps = 0;
    const auto z = generate_conditioned(src.image, src.label, src.id, {1}, tiny.models(), cfg);
    Rng init(5);
    const auto expect = noise::standardize(Tensor::constant({1, 8, 8}, init.normal_vector(64)));
    CHECK(z[0].noise.values.vec() == expect.image.vec());
    const auto plain = diffusion::sample_loop(tiny.den, tiny.sched, 1, expect.image, 9);
    CHECK(z[0].output().vec() == plain.final_image().vec());
  }
}

TEST_CASE("manipulations of masks and generation") {
  const Tiny tiny;
  std::vector<double> v(64, 0.0);
  for (std::size_t r = 1; r < 3; ++r)
    for (std::size_t c = 4; c < 7; ++c) v[r * 8 + c] = 1.0;
  const Tensor img = Tensor::constant({1, 8, 8}, v);
  const Point p = centroid(object_mask_of_output(img).mask);
  for (Manipulation m : {Manipulation::hflip, Manipulation::rotate90}) {
    const Point q = centroid(object_mask_of_output(apply(m, img)).mask);
    const Point want = apply(m, p, 8, 8);
    CHECK(q.row == doctest::Approx(want.row));
    CHECK(q.col == doctest::Approx(want.col));
  }

  auto src = tiny_sources(1)[0];
  const auto cfg = tiny_study(4);
  const auto n = make_method_noise(noise::Method::inverting_gradients, src, tiny.models(), cfg, {});
  noise::SaliencyNoise twice = n;
  twice.values = noise::hflip(noise::hflip(n.values));
  const auto a = generate_from_noise(n, src.id, 0, {0}, tiny.models(), cfg.generation);
  const auto b = generate_from_noise(twice, src.id, 0, {0}, tiny.models(), cfg.generation);
  CHECK(a[0].output().vec() == b[0].output().vec());

  const auto sources = tiny_sources(3);
  const auto study = run_manipulation_study(sources, tiny.models(), cfg, Manipulation::rotate90);
  CHECK(study.rows.size() == 3);
  for (const auto& r : study.rows) {
    if (std::isnan(r.original.row)) continue;
    const Point want = apply(Manipulation::rotate90, r.original, 8, 8);
    CHECK(r.predicted.row == want.row);
    CHECK(r.predicted.col == want.col);
  }
  CHECK(manip_csv(study) == manip_csv(run_manipulation_study(sources, tiny.models(), cfg, Manipulation::rotate90)));
  CHECK(parse_manipulation("hflip") == Manipulation::hflip);
  CHECK_THROWS_AS(parse_manipulation("flip"), ContractViolation);
}

TEST_CASE("step study") {
  const Tiny tiny;
  const auto sources = tiny_sources(3);
  const auto cfg = tiny_study(8);
  const auto s = run_step_study(sources, tiny.models(), cfg);
  REQUIRE(s.rows.size() == 3);
  CHECK(s.rows[0].step == 0);
  CHECK(s.rows[2].step == 8);
  CHECK(s.baseline.size() == 3);
  for (const auto& row : s.rows) {
    CHECK(row.objectives.size() == 3);
    CHECK(row.records.size() == 3);
    CHECK(row.report.method.n == 3);
  }
  // step 0 uses the standardized start image of the inversion
  Rng init(ig_seed(sources[1]));
  CHECK(s.rows[0].records[1].noise.values.vec() ==
        noise::standardize(Tensor::constant({1, 8, 8}, init.normal_vector(64))).image.vec());
  // baseline noise is paired with the same sampler seed
  CHECK(s.baseline[1].trajectory.seed == s.rows[0].records[1].trajectory.seed);

  const auto again = run_step_study(sources, tiny.models(), cfg);
  CHECK(step_study_csv(again) == step_study_csv(s));
  CHECK(eval_rows_csv(again.rows[2].report) == eval_rows_csv(s.rows[2].report));

  StudyConfig all = cfg;
  all.all_targets = true;
  const auto wide = run_step_study(sources, tiny.models(), all);
  CHECK(wide.rows[0].records.size() == 6);
}

TEST_CASE("alternative maps study and reports") {
  const Tiny tiny;
  const auto sources = tiny_sources(2);
  const auto cfg = tiny_study(4);
  const AltMapsConfig alt{.fgsm_eps = 0.5, .feature_layer = 0};
  const auto a = run_altmaps_study(sources, tiny.models(), cfg, alt);
  REQUIRE(a.methods == std::vector<std::string>{"inverting-gradients", "fgsm", "feature-map"});
  std::vector<std::pair<std::string, const EvalReport*>> table;
  for (std::size_t i = 0; i < a.methods.size(); ++i) table.emplace_back(a.methods[i], &a.reports[i]);
  const std::string csv = summary_csv(table);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
  const auto b = run_altmaps_study(sources, tiny.models(), cfg, alt);
  std::vector<std::pair<std::string, const EvalReport*>> table_b;
  for (std::size_t i = 0; i < b.methods.size(); ++i) table_b.emplace_back(b.methods[i], &b.reports[i]);
  CHECK(summary_csv(table_b) == csv);
  CHECK(summary_text("alt", table_b) == summary_text("alt", table));

  const auto f = make_method_noise(noise::Method::fgsm, sources[0], tiny.models(), cfg, alt);
  CHECK(f.method == noise::Method::fgsm);
  CHECK(f.standardized);
  const auto raw = f.raw();
  for (double x : raw.values()) CHECK((std::abs(x) < 1e-9 || std::abs(std::abs(x) - 0.5) < 1e-9));

  const auto acc = sample_accuracy(tiny.models(), 3, 7);
  REQUIRE(acc.size() == 2);
  for (double x : acc) CHECK((x >= 0.0 && x <= 1.0));
  CHECK(sample_accuracy(tiny.models(), 3, 7) == acc);
}
