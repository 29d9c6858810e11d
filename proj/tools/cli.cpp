#include "cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <optional>
#include <string>

#include "osn/archive.hpp"
#include "osn/config.hpp"
#include "osn/model_io.hpp"
#include "osn/pgm.hpp"
#include "osn/pipeline.hpp"
#include "osn/random.hpp"

namespace osn::cli {

namespace fs = std::filesystem;
using namespace osn::pipeline;

namespace {

// Fixed seed streams derived from the run seed.
enum Stream : std::uint64_t {
  kTrainData = 1,
  kHeldoutData = 2,
  kClassifierTrain = 3,
  kDenoiserTrain = 4,
  kEvaluate = 5,
  kSources = 1000,
};

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "osn_out";
  std::optional<std::string> precision;
};

struct Context {
  RunConfig cfg;
  fs::path out;
  std::ostream& log;
};

Context make_context(const Common& c, std::ostream& log) {
  RunConfig cfg = c.config_path.empty() ? parse_config("") : load_config(c.config_path);
  if (c.seed) cfg.seed = *c.seed;
  if (c.precision) {
    cfg.precision = parse_precision(*c.precision);
    cfg.classifier_train.precision = cfg.precision;
    cfg.denoiser_train.precision = cfg.precision;
  }
  cfg.validate();
  fs::create_directories(c.out);
  write_file(fs::path(c.out) / "effective_config.txt", to_text(cfg));
  return {cfg, c.out, log};
}

fs::path train_path(const Context& ctx) { return ctx.out / "dataset" / "train.osn"; }
fs::path heldout_path(const Context& ctx) { return ctx.out / "dataset" / "heldout.osn"; }
fs::path classifier_path(const Context& ctx) { return ctx.out / "classifier.osn"; }
fs::path denoiser_path(const Context& ctx) { return ctx.out / "ddpm.osn"; }

void need(const fs::path& p, const char* producer) {
  if (!fs::exists(p)) throw std::runtime_error(p.string() + " not found; run `" + producer + "` first");
}

std::vector<ShapeSample> load_split(const fs::path& p) {
  need(p, "make-dataset");
  return dataset_from(load_archive(p));
}

nets::Classifier load_classifier(const Context& ctx) {
  need(classifier_path(ctx), "train-classifier");
  return classifier_from(load_archive(classifier_path(ctx)));
}

DenoiserBundle load_denoiser(const Context& ctx) {
  need(denoiser_path(ctx), "train-ddpm");
  return denoiser_from(load_archive(denoiser_path(ctx)));
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------- commands

void make_dataset(const Context& ctx) {
  DatasetSpec train = ctx.cfg.dataset;
  train.seed = derive_seed(ctx.cfg.seed, kTrainData);
  DatasetSpec held = ctx.cfg.dataset;
  held.seed = derive_seed(ctx.cfg.seed, kHeldoutData);
  held.count = ctx.cfg.heldout_count;
  const auto tr = make_shapes_dataset(train);
  const auto he = make_shapes_dataset(held);
  save_archive(dataset_archive(tr), train_path(ctx));
  save_archive(dataset_archive(he), heldout_path(ctx));
  std::string csv = "split,index,label,centroid_row,centroid_col,mask_pixels\n";
  for (const auto* split : {&tr, &he}) {
    const char* name = split == &tr ? "train" : "heldout";
    for (std::size_t i = 0; i < split->size(); ++i) {
      const auto& s = (*split)[i];
      csv += std::string(name) + "," + std::to_string(i) + "," + std::to_string(s.label) + "," + num(s.centroid.row) +
             "," + num(s.centroid.col) + "," + std::to_string(s.mask.count()) + "\n";
    }
  }
  write_file(ctx.out / "dataset" / "dataset.csv", csv);
  for (std::size_t i = 0; i < std::min<std::size_t>(8, tr.size()); ++i)
    write_pgm(tr[i].image, ctx.out / "dataset" / ("preview_" + std::to_string(i) + ".pgm"));
  ctx.log << "dataset: " << tr.size() << " train, " << he.size() << " held-out images in " << (ctx.out / "dataset")
          << "\n";
}

void train_classifier_cmd(const Context& ctx) {
  const auto train = labeled(load_split(train_path(ctx)));
  const auto held = labeled(load_split(heldout_path(ctx)));
  nets::TrainConfig tc = ctx.cfg.classifier_train;
  tc.seed = derive_seed(ctx.cfg.seed, kClassifierTrain);
  const auto run = nets::train_classifier(ctx.cfg.classifier, train, held, tc);
  save_archive(classifier_archive(run.model, ctx.cfg.precision), classifier_path(ctx));
  std::string csv = "epoch,loss\n";
  for (std::size_t e = 0; e < run.epoch_loss.size(); ++e) csv += std::to_string(e) + "," + num(run.epoch_loss[e]) + "\n";
  write_file(ctx.out / "classifier_log.csv", csv);
  write_file(ctx.out / "classifier_summary.txt", "heldout_accuracy = " + num(run.heldout_accuracy) + "\n");
  ctx.log << "classifier: held-out accuracy " << run.heldout_accuracy << "\n";
}

void train_ddpm_cmd(const Context& ctx) {
  const auto train = labeled(load_split(train_path(ctx)));
  nets::TrainConfig tc = ctx.cfg.denoiser_train;
  tc.seed = derive_seed(ctx.cfg.seed, kDenoiserTrain);
  const auto sched = ctx.cfg.schedule();
  const auto run = diffusion::train_denoiser(train, sched, ctx.cfg.denoiser, tc, [&](std::size_t e, double mse) {
    ctx.log << "ddpm epoch " << e << " mse " << mse << "\n";
  });
  save_archive(denoiser_archive(run.model, ctx.cfg.beta_min, ctx.cfg.beta_max, ctx.cfg.precision), denoiser_path(ctx));
  std::string csv = "epoch,mse\n";
  for (std::size_t e = 0; e < run.epoch_mse.size(); ++e) csv += std::to_string(e) + "," + num(run.epoch_mse[e]) + "\n";
  write_file(ctx.out / "ddpm_log.csv", csv);
}

std::vector<Source> study_sources(const Context& ctx) {
  const auto held = load_split(heldout_path(ctx));
  require(ctx.cfg.sources <= held.size(), "study.sources exceeds the held-out split (" + std::to_string(held.size()) + ")");
  std::vector<Source> out;
  for (std::size_t i = 0; i < ctx.cfg.sources; ++i)
    out.push_back({"heldout" + std::to_string(i), held[i].image, held[i].label,
                   derive_seed(ctx.cfg.seed, kSources + i)});
  return out;
}

Source single_source(const Context& ctx) {
  const auto held = load_split(heldout_path(ctx));
  const std::size_t i = ctx.cfg.source_index;
  require(i < held.size(), "study.source_index out of range");
  return {"heldout" + std::to_string(i), held[i].image, held[i].label, derive_seed(ctx.cfg.seed, kSources + i)};
}

StudyConfig study_config(const Context& ctx) {
  StudyConfig s;
  s.generation.ig = ctx.cfg.ig;
  s.generation.standardize = ctx.cfg.standardize;
  s.generation.mask_percentile = ctx.cfg.mask_percentile;
  s.all_targets = ctx.cfg.targets == "all";
  return s;
}

void invert_cmd(const Context& ctx) {
  const auto clf = load_classifier(ctx);
  const Source src = single_source(ctx);
  const Tensor g_star = nets::param_gradient(clf, src.image, src.label, false);
  noise::IGConfig ig = ctx.cfg.ig;
  ig.init_seed = ig_seed(src);
  const auto snaps = noise::invert_gradients(clf, g_star, src.label, ig);
  const fs::path dir = ctx.out / "invert";
  std::string csv = "step,objective\n";
  Archive a;
  a.attrs["kind"] = "noise";
  a.attrs["source_id"] = src.id;
  a.attrs["source_class"] = std::to_string(src.label);
  for (const auto& s : snaps) {
    csv += std::to_string(s.step) + "," + num(s.objective) + "\n";
    const auto n = noise::make_noise(s.image, noise::Method::inverting_gradients, ctx.cfg.standardize);
    a.add("noise_k" + std::to_string(s.step), n.values, Precision::f64);
    a.attrs["mean_k" + std::to_string(s.step)] = num(n.mean);
    a.attrs["stddev_k" + std::to_string(s.step)] = num(n.stddev);
    write_pgm(n.values, dir / ("noise_k" + std::to_string(s.step) + ".pgm"));
  }
  write_pgm(src.image, dir / "source.pgm");
  write_file(dir / "objective.csv", csv);
  save_archive(a, dir / "noise.osn");
  ctx.log << "invert: " << src.id << " objective " << snaps.front().objective << " -> " << snaps.back().objective
          << "\n";
}

void generate_cmd(const Context& ctx) {
  const auto clf = load_classifier(ctx);
  const auto den = load_denoiser(ctx);
  const Models models{clf, den.model, den.schedule};
  const Source src = single_source(ctx);
  const StudyConfig sc = study_config(ctx);
  GenerationConfig g = sc.generation;
  g.ig.init_seed = ig_seed(src);
  g.ig.snapshots.clear();
  g.sample_seed = sample_seed(src);
  const auto recs =
      generate_conditioned(src.image, src.label, src.id, targets_for(src, sc, den.model.arch().num_classes), models, g);
  const fs::path dir = ctx.out / "generate";
  write_pgm(src.image, dir / "source.pgm");
  write_pgm(recs.front().noise.values, dir / "noise.pgm");
  for (const auto& r : recs) {
    const std::string tag = "target" + std::to_string(r.target_class);
    write_pgm(r.output(), dir / ("output_" + tag + ".pgm"));
    ctx.log << "generate: " << tag << " IoU " << r.metrics.iou << "\n";
  }
  write_file(dir / "records.csv", records_csv(recs));
}

void study_steps_cmd(const Context& ctx) {
  const auto clf = load_classifier(ctx);
  const auto den = load_denoiser(ctx);
  const Models models{clf, den.model, den.schedule};
  const auto study = run_step_study(study_sources(ctx), models, study_config(ctx));
  const fs::path dir = ctx.out / "study_steps";
  std::vector<std::pair<std::string, const EvalReport*>> table;
  for (const auto& row : study.rows) {
    table.emplace_back("k=" + std::to_string(row.step), &row.report);
    write_file(dir / ("rows_k" + std::to_string(row.step) + ".csv"), eval_rows_csv(row.report));
  }
  write_file(dir / "summary.csv", summary_csv(table));
  write_file(dir / "objectives.csv", step_study_csv(study));
  const std::string text = summary_text("step study", table);
  write_file(dir / "summary.txt", text);
  ctx.log << text;
}

void study_manip_cmd(const Context& ctx, const std::string& which) {
  const auto clf = load_classifier(ctx);
  const auto den = load_denoiser(ctx);
  const Models models{clf, den.model, den.schedule};
  const auto sources = study_sources(ctx);
  const auto sc = study_config(ctx);
  std::vector<noise::SaliencyNoise> noises;
  for (const auto& s : sources) noises.push_back(make_method_noise(noise::Method::inverting_gradients, s, models, sc, {}));
  std::vector<Manipulation> ms;
  if (which == "both") ms = {Manipulation::hflip, Manipulation::rotate90};
  else ms = {parse_manipulation(which)};
  const fs::path dir = ctx.out / "study_manip";
  std::string text = "manipulation study\n";
  for (auto m : ms) {
    const auto st = run_manipulation_study(sources, noises, models, sc, m);
    write_file(dir / (std::string(to_string(m)) + ".csv"), manip_csv(st));
    text += "  " + std::string(to_string(m)) + ": " + std::to_string(st.agreements) + "/" +
            std::to_string(st.rows.size()) + " outputs closer to the manipulated centroid\n";
  }
  write_file(dir / "summary.txt", text);
  ctx.log << text;
}

void study_altmaps_cmd(const Context& ctx) {
  const auto clf = load_classifier(ctx);
  const auto den = load_denoiser(ctx);
  const Models models{clf, den.model, den.schedule};
  const AltMapsConfig alt{ctx.cfg.fgsm_eps, ctx.cfg.feature_layer};
  const auto study = run_altmaps_study(study_sources(ctx), models, study_config(ctx), alt);
  const fs::path dir = ctx.out / "study_altmaps";
  std::vector<std::pair<std::string, const EvalReport*>> table;
  for (std::size_t i = 0; i < study.methods.size(); ++i) {
    table.emplace_back(study.methods[i], &study.reports[i]);
    write_file(dir / ("rows_" + study.methods[i] + ".csv"), eval_rows_csv(study.reports[i]));
  }
  write_file(dir / "summary.csv", summary_csv(table));
  const std::string text = summary_text("alternative saliency maps", table);
  write_file(dir / "summary.txt", text);
  ctx.log << text;
}

void evaluate_cmd(const Context& ctx) {
  const auto clf = load_classifier(ctx);
  const auto den = load_denoiser(ctx);
  const Models models{clf, den.model, den.schedule};
  const auto held = labeled(load_split(heldout_path(ctx)));
  const double acc = nets::accuracy(clf, held);
  const auto per_class = sample_accuracy(models, ctx.cfg.samples_per_class, derive_seed(ctx.cfg.seed, kEvaluate));
  std::string csv = "quantity,class,value\nclassifier_heldout_accuracy,,";
  csv += num(acc) + "\n";
  std::string text = "classifier held-out accuracy " + num(acc) + "\n";
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    csv += "sample_accuracy," + std::to_string(c) + "," + num(per_class[c]) + "\n";
    text += "samples of class " + std::to_string(c) + " recognized: " + num(per_class[c]) + "\n";
  }
  write_file(ctx.out / "evaluate" / "evaluate.csv", csv);
  write_file(ctx.out / "evaluate" / "summary.txt", text);
  ctx.log << text;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Object saliency noise: desk-scale diffusion and gradient-inversion experiments"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "flat key = value config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", common.seed, "run seed (overrides the config)");
    sub->add_option("--out", common.out, "output and working directory")->capture_default_str();
    sub->add_option("--precision", common.precision, "f32 or f64 (overrides the config)")
        ->check(CLI::IsMember({"f32", "f64"}));
  };
  std::string manipulation = "both";
  struct Cmd {
    const char* name;
    const char* help;
  };
  const Cmd cmds[] = {
      {"make-dataset", "render the train and held-out shape images"},
      {"train-classifier", "train the classifier on the rendered data"},
      {"train-ddpm", "train the class-conditional denoiser"},
      {"invert", "inverting-gradients noise for one held-out image"},
      {"generate", "sample from standardized inversion noise"},
      {"study-steps", "localization at each snapshot step"},
      {"study-manip", "flip / rotate the noise and track the output"},
      {"study-altmaps", "FGSM and feature-map noise through the same evaluation"},
      {"evaluate", "classifier accuracy and per-class sample accuracy"},
  };
  for (const auto& c : cmds) {
    auto* sub = app.add_subcommand(c.name, c.help);
    add_common(sub);
    if (std::string(c.name) == "study-manip")
      sub->add_option("--manipulation", manipulation, "hflip, rotate90 or both")
          ->check(CLI::IsMember({"hflip", "rotate90", "both"}));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    const Context ctx = make_context(common, out);
    const std::string name = app.get_subcommands().front()->get_name();
    if (name == "make-dataset") make_dataset(ctx);
    else if (name == "train-classifier") train_classifier_cmd(ctx);
    else if (name == "train-ddpm") train_ddpm_cmd(ctx);
    else if (name == "invert") invert_cmd(ctx);
    else if (name == "generate") generate_cmd(ctx);
    else if (name == "study-steps") study_steps_cmd(ctx);
    else if (name == "study-manip") study_manip_cmd(ctx, manipulation);
    else if (name == "study-altmaps") study_altmaps_cmd(ctx);
    else if (name == "evaluate") evaluate_cmd(ctx);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace osn::cli
