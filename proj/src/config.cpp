#include "osn/config.hpp"

#include <charconv>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>

#include "osn/archive.hpp"

namespace osn::pipeline {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t to_u64(const std::string& s) {
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError("expected a nonnegative integer, got '" + s + "'");
  return v;
}

std::size_t to_size(const std::string& s) { return static_cast<std::size_t>(to_u64(s)); }

double to_double(const std::string& s) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError("expected a number, got '" + s + "'");
  return v;
}

bool to_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("expected true or false, got '" + s + "'");
}

std::vector<std::size_t> to_list(const std::string& s) {
  std::vector<std::size_t> out;
  if (s.empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_size(trim(item)));
  return out;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt(std::size_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

std::string fmt(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

struct Key {
  std::string name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define OSN_KEY(NAME, FIELD, PARSE) \
  Key { NAME, [](const RunConfig& c) { return fmt(c.FIELD); }, [](RunConfig& c, const std::string& v) { c.FIELD = PARSE(v); } }

const std::vector<Key>& schema() {
  static const std::vector<Key> keys = {
      Key{"seed", [](const RunConfig& c) { return std::to_string(c.seed); },
          [](RunConfig& c, const std::string& v) { c.seed = to_u64(v); }},
      Key{"precision", [](const RunConfig& c) { return std::string(to_string(c.precision)); },
          [](RunConfig& c, const std::string& v) { c.precision = parse_precision(v); }},

      OSN_KEY("dataset.count", dataset.count, to_size),
      OSN_KEY("dataset.heldout_count", heldout_count, to_size),
      OSN_KEY("dataset.size", dataset.size, to_size),
      OSN_KEY("dataset.radius_min", dataset.radius_min, to_size),
      OSN_KEY("dataset.radius_max", dataset.radius_max, to_size),
      Key{"dataset.region",
          [](const RunConfig& c) {
            const auto& r = c.dataset.region;
            return fmt(std::vector<std::size_t>{r.row0, r.col0, r.row1, r.col1});
          },
          [](RunConfig& c, const std::string& v) {
            const auto l = to_list(v);
            if (l.size() != 4) throw ConfigError("dataset.region needs row0,col0,row1,col1");
            c.dataset.region = {l[0], l[1], l[2], l[3]};
          }},
      OSN_KEY("dataset.intensity_min", dataset.intensity_min, to_double),
      OSN_KEY("dataset.intensity_max", dataset.intensity_max, to_double),

      OSN_KEY("classifier.channels", classifier.channels, to_list),
      OSN_KEY("classifier.kernel", classifier.kernel, to_size),
      OSN_KEY("classifier.epochs", classifier_train.epochs, to_size),
      OSN_KEY("classifier.batch_size", classifier_train.batch_size, to_size),
      OSN_KEY("classifier.learning_rate", classifier_train.learning_rate, to_double),
      Key{"classifier.optimizer", [](const RunConfig& c) { return std::string(nets::to_string(c.classifier_train.optimizer)); },
          [](RunConfig& c, const std::string& v) { c.classifier_train.optimizer = nets::parse_optimizer(v); }},

      OSN_KEY("ddpm.channels", denoiser.channels, to_size),
      OSN_KEY("ddpm.dilations", denoiser.dilations, to_list),
      OSN_KEY("ddpm.levels", denoiser.levels, to_size),
      OSN_KEY("ddpm.kernel", denoiser.kernel, to_size),
      OSN_KEY("ddpm.time_dim", denoiser.time_dim, to_size),
      OSN_KEY("ddpm.time_hidden", denoiser.time_hidden, to_size),
      OSN_KEY("ddpm.timesteps", denoiser.timesteps, to_size),
      OSN_KEY("ddpm.beta_min", beta_min, to_double),
      OSN_KEY("ddpm.beta_max", beta_max, to_double),
      OSN_KEY("ddpm.epochs", denoiser_train.epochs, to_size),
      OSN_KEY("ddpm.batch_size", denoiser_train.batch_size, to_size),
      OSN_KEY("ddpm.learning_rate", denoiser_train.learning_rate, to_double),
      OSN_KEY("ddpm.ema_decay", denoiser_train.ema_decay, to_double),
      Key{"ddpm.optimizer", [](const RunConfig& c) { return std::string(nets::to_string(c.denoiser_train.optimizer)); },
          [](RunConfig& c, const std::string& v) { c.denoiser_train.optimizer = nets::parse_optimizer(v); }},

      OSN_KEY("ig.steps", ig.steps, to_size),
      OSN_KEY("ig.learning_rate", ig.learning_rate, to_double),
      OSN_KEY("ig.lr_decay", ig.lr_decay, to_bool),
      Key{"ig.optimizer", [](const RunConfig& c) { return std::string(nets::to_string(c.ig.optimizer)); },
          [](RunConfig& c, const std::string& v) { c.ig.optimizer = nets::parse_optimizer(v); }},
      OSN_KEY("ig.snapshots", ig.snapshots, to_list),
      OSN_KEY("ig.tv_weight", ig.tv_weight, to_double),
      OSN_KEY("ig.signed_gradient", ig.signed_gradient, to_bool),
      OSN_KEY("ig.standardize", standardize, to_bool),

      OSN_KEY("study.sources", sources, to_size),
      Key{"study.targets", [](const RunConfig& c) { return c.targets; },
          [](RunConfig& c, const std::string& v) {
            if (v != "source" && v != "all") throw ConfigError("study.targets must be source or all");
            c.targets = v;
          }},
      OSN_KEY("study.mask_percentile", mask_percentile, to_double),
      OSN_KEY("study.source_index", source_index, to_size),
      OSN_KEY("study.fgsm_eps", fgsm_eps, to_double),
      OSN_KEY("study.feature_layer", feature_layer, to_size),
      OSN_KEY("study.samples_per_class", samples_per_class, to_size),
  };
  return keys;
}

#undef OSN_KEY

// Shapes that follow from other keys.
void sync(RunConfig& c) {
  c.classifier.input = {1, c.dataset.size, c.dataset.size};
  c.denoiser.image = {1, c.dataset.size, c.dataset.size};
  c.classifier_train.precision = c.precision;
  c.denoiser_train.precision = c.precision;
}

}  // namespace

diffusion::NoiseSchedule RunConfig::schedule() const {
  return diffusion::make_schedule(denoiser.timesteps, diffusion::ScheduleKind::linear, beta_min, beta_max);
}

void RunConfig::validate() const {
  dataset.validate();
  classifier_train.validate();
  denoiser_train.validate();
  ig.validate();
  require(heldout_count > 0, "dataset.heldout_count must be positive");
  require(classifier.input == denoiser.image, "classifier and denoiser image shapes differ");
  require(mask_percentile > 0.0 && mask_percentile < 100.0, "study.mask_percentile must lie in (0, 100)");
  require(sources > 0, "study.sources must be positive");
  require(source_index < heldout_count, "study.source_index must index the held-out split");
  require(fgsm_eps > 0.0, "study.fgsm_eps must be positive");
  require(feature_layer < classifier.channels.size(), "study.feature_layer exceeds the classifier's conv blocks");
  require(samples_per_class > 0, "study.samples_per_class must be positive");
  (void)schedule();
}

RunConfig parse_config(const std::string& text, RunConfig base) {
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto where = "config line " + std::to_string(line_no) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const Key* k = nullptr;
    for (const auto& cand : schema())
      if (cand.name == key) k = &cand;
    if (!k) throw ConfigError(where + "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(where + "repeated key '" + key + "'");
    try {
      k->set(base, value);
    } catch (const ContractViolation& e) {
      throw ConfigError(where + key + ": " + e.what());
    }
  }
  sync(base);
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  return parse_config(read_file(path), std::move(base));
}

std::string to_text(const RunConfig& c) {
  std::string out;
  for (const auto& k : schema()) out += k.name + " = " + k.get(c) + "\n";
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& k : schema()) out.push_back(k.name);
  return out;
}

}  // namespace osn::pipeline
