#include "osn/model_io.hpp"

#include <sstream>

namespace osn::pipeline {

namespace {

std::string join(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::vector<std::size_t> split(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(static_cast<std::size_t>(std::stoull(item)));
    } catch (const std::exception&) {
      throw ArchiveCorrupt("archive attribute: bad integer list '" + s + "'");
    }
  }
  return out;
}

std::size_t as_size(const Archive& a, const std::string& key) {
  const auto v = split(a.attr(key));
  if (v.size() != 1) throw ArchiveCorrupt("archive attribute '" + key + "' is not a single integer");
  return v[0];
}

double as_double(const Archive& a, const std::string& key) {
  try {
    return std::stod(a.attr(key));
  } catch (const std::invalid_argument&) {
    throw ArchiveCorrupt("archive attribute '" + key + "' is not a number");
  }
}

std::string exact(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

void require_kind(const Archive& a, const std::string& kind) {
  const auto it = a.attrs.find("kind");
  if (it == a.attrs.end() || it->second != kind)
    throw ContractViolation("archive does not hold a " + kind + " (kind = " +
                            (it == a.attrs.end() ? std::string("none") : it->second) + ")");
}

void add_params(Archive& a, const nets::ParamSet& ps, Precision p) {
  for (std::size_t i = 0; i < ps.names().size(); ++i) a.add(ps.names()[i], ps.tensors()[i], p);
}

void load_params(const Archive& a, nets::ParamSet& ps) {
  std::vector<double> flat;
  for (std::size_t i = 0; i < ps.names().size(); ++i) {
    const auto& e = a.get(ps.names()[i]);
    if (e.shape != ps.tensors()[i].shape())
      throw ContractViolation("archive tensor '" + e.name + "' has shape " + ad::shape_str(e.shape) + ", model expects " +
                              ad::shape_str(ps.tensors()[i].shape()));
    flat.insert(flat.end(), e.values.begin(), e.values.end());
  }
  ps.unflatten(flat);
}

}  // namespace

Archive classifier_archive(const nets::Classifier& clf, Precision p) {
  Archive a;
  const auto& arch = clf.arch();
  a.attrs["kind"] = "classifier";
  a.attrs["input"] = join(arch.input);
  a.attrs["channels"] = join(arch.channels);
  a.attrs["kernel"] = std::to_string(arch.kernel);
  a.attrs["num_classes"] = std::to_string(arch.num_classes);
  add_params(a, clf.params(), p);
  return a;
}

nets::Classifier classifier_from(const Archive& a) {
  require_kind(a, "classifier");
  nets::ClassifierArch arch;
  arch.input = split(a.attr("input"));
  arch.channels = split(a.attr("channels"));
  arch.kernel = as_size(a, "kernel");
  arch.num_classes = as_size(a, "num_classes");
  auto clf = nets::Classifier::build(arch, 0);
  load_params(a, clf.params());
  return clf;
}

Archive denoiser_archive(const nets::Denoiser& den, double beta_min, double beta_max, Precision p) {
  Archive a;
  const auto& arch = den.arch();
  a.attrs["kind"] = "denoiser";
  a.attrs["image"] = join(arch.image);
  a.attrs["channels"] = std::to_string(arch.channels);
  a.attrs["dilations"] = join(arch.dilations);
  a.attrs["levels"] = std::to_string(arch.levels);
  a.attrs["kernel"] = std::to_string(arch.kernel);
  a.attrs["time_dim"] = std::to_string(arch.time_dim);
  a.attrs["time_hidden"] = std::to_string(arch.time_hidden);
  a.attrs["num_classes"] = std::to_string(arch.num_classes);
  a.attrs["timesteps"] = std::to_string(arch.timesteps);
  a.attrs["beta_min"] = exact(beta_min);
  a.attrs["beta_max"] = exact(beta_max);
  add_params(a, den.params(), p);
  return a;
}

DenoiserBundle denoiser_from(const Archive& a) {
  require_kind(a, "denoiser");
  nets::DenoiserArch arch;
  arch.image = split(a.attr("image"));
  arch.channels = as_size(a, "channels");
  arch.dilations = split(a.attr("dilations"));
  arch.levels = as_size(a, "levels");
  arch.kernel = as_size(a, "kernel");
  arch.time_dim = as_size(a, "time_dim");
  arch.time_hidden = as_size(a, "time_hidden");
  arch.num_classes = as_size(a, "num_classes");
  arch.timesteps = as_size(a, "timesteps");
  const double bmin = as_double(a, "beta_min"), bmax = as_double(a, "beta_max");
  auto den = nets::Denoiser::build(arch, 0);
  load_params(a, den.params());
  return {std::move(den), diffusion::make_schedule(arch.timesteps, diffusion::ScheduleKind::linear, bmin, bmax), bmin,
          bmax};
}

Archive dataset_archive(const std::vector<ShapeSample>& data) {
  require(!data.empty(), "dataset archive: empty dataset");
  const auto& shape = data.front().image.shape();
  const std::size_t n = data.size(), h = shape[1], w = shape[2];
  std::vector<double> images, labels, masks, cents;
  for (const auto& s : data) {
    require(s.image.shape() == shape, "dataset archive: images differ in shape");
    images.insert(images.end(), s.image.values().begin(), s.image.values().end());
    labels.push_back(static_cast<double>(s.label));
    for (auto b : s.mask.bits) masks.push_back(b);
    cents.push_back(s.centroid.row);
    cents.push_back(s.centroid.col);
  }
  Archive a;
  a.attrs["kind"] = "dataset";
  a.add("images", ad::Tensor::constant({n, shape[0], h, w}, std::move(images)));
  a.add("labels", ad::Tensor::constant({n}, std::move(labels)));
  a.add("masks", ad::Tensor::constant({n, h, w}, std::move(masks)));
  a.add("centroids", ad::Tensor::constant({n, 2}, std::move(cents)));
  return a;
}

std::vector<ShapeSample> dataset_from(const Archive& a) {
  require_kind(a, "dataset");
  const auto& im = a.get("images");
  const auto& lb = a.get("labels");
  const auto& mk = a.get("masks");
  const auto& ct = a.get("centroids");
  if (im.shape.size() != 4 || lb.shape.size() != 1 || lb.shape[0] != im.shape[0] || mk.shape.size() != 3 ||
      ct.shape.size() != 2)
    throw ArchiveCorrupt("dataset archive: inconsistent tensor shapes");
  const std::size_t n = im.shape[0], c = im.shape[1], h = im.shape[2], w = im.shape[3];
  std::vector<ShapeSample> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& s = out[i];
    s.image = ad::Tensor::constant({c, h, w}, std::vector<double>(im.values.begin() + static_cast<long>(i * c * h * w),
                                                                   im.values.begin() + static_cast<long>((i + 1) * c * h * w)));
    s.label = static_cast<std::size_t>(lb.values[i]);
    s.mask = Mask{h, w, std::vector<std::uint8_t>(h * w)};
    for (std::size_t j = 0; j < h * w; ++j) s.mask.bits[j] = mk.values[i * h * w + j] != 0.0 ? 1 : 0;
    s.centroid = {ct.values[2 * i], ct.values[2 * i + 1]};
  }
  return out;
}

}  // namespace osn::pipeline
