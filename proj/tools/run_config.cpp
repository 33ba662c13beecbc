#include "run_config.hpp"

#include <stdexcept>

#include "qmri/json_fields.hpp"

namespace qmri::cli {

namespace {

// Keys that the global config owns and a section must not repeat.
void reject_keys(const nlohmann::json& j, const std::string& section, std::initializer_list<const char*> keys,
                 const std::string& owner) {
  if (!j.is_object()) return;
  for (const char* k : keys) {
    if (j.contains(k)) throw std::invalid_argument(section + ": key \"" + k + "\" is set by " + owner);
  }
}

}  // namespace

void RunConfig::set_seed(std::uint64_t s) {
  seed = s;
  phantom.seed = s;
  train.seed = s;
}

void RunConfig::validate() const {
  phantom.validate();
  if (phantom.seed != seed || train.seed != seed) throw std::invalid_argument("config: section seeds differ from the global seed");
  if (train.center_lines != mask.center_lines) throw std::invalid_argument("config: train and mask center_lines differ");
  if (mask.accel < 1) throw std::invalid_argument("mask: accel must be >= 1");
  if (mask.center_lines < 1) throw std::invalid_argument("mask: center_lines must be >= 1");
  if (mask.offset < -1 || mask.offset >= mask.accel) throw std::invalid_argument("mask: offset must be -1 or in [0, accel)");
  if (mask.center_lines > phantom.height) throw std::invalid_argument("mask: center_lines exceeds the phase-encode extent");
  model.modl.validate();
  train.validate();
  fit.validate();
  if (!(eval.sigma > 0.0) || !(eval.truncate > 0.0) || eval.data_range < 0.0) {
    throw std::invalid_argument("eval: sigma and truncate must be positive, data_range >= 0");
  }
  if (io.out.empty()) throw std::invalid_argument("io: out must be nonempty");
  if (io.subjects != "train" && io.subjects != "val" && io.subjects != "test" && io.subjects != "all") {
    throw std::invalid_argument("io: subjects must be train, val, test or all");
  }
}

nlohmann::json to_json(const FitConfig& c) {
  return {{"max_iters", c.max_iters},
          {"damping", c.damping},
          {"damping_up", c.damping_up},
          {"damping_down", c.damping_down},
          {"param_tol", c.param_tol},
          {"magnitude_fit", c.magnitude_fit},
          {"polarity_restoration", c.polarity_restoration},
          {"nonfit_threshold", c.nonfit_threshold}};
}

void from_json(const nlohmann::json& j, FitConfig& c) {
  JsonFields f(j, "fit");
  f.get("max_iters", c.max_iters);
  f.get("damping", c.damping);
  f.get("damping_up", c.damping_up);
  f.get("damping_down", c.damping_down);
  f.get("param_tol", c.param_tol);
  f.get("magnitude_fit", c.magnitude_fit);
  f.get("polarity_restoration", c.polarity_restoration);
  f.get("nonfit_threshold", c.nonfit_threshold);
  f.finish();
  c.validate();
}

nlohmann::json to_json(const MetricOptions& c) {
  return {{"data_range", c.data_range}, {"sigma", c.sigma}, {"truncate", c.truncate}, {"k1", c.k1}, {"k2", c.k2}};
}

void from_json(const nlohmann::json& j, MetricOptions& c) {
  JsonFields f(j, "eval");
  f.get("data_range", c.data_range);
  f.get("sigma", c.sigma);
  f.get("truncate", c.truncate);
  f.get("k1", c.k1);
  f.get("k2", c.k2);
  f.finish();
}

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json phantom = to_json(c.phantom);
  phantom.erase("sequence");
  phantom.erase("seed");
  nlohmann::json model = to_json(c.model);
  model.erase("modl");
  nlohmann::json train = to_json(c.train);
  train.erase("seed");
  train.erase("center_lines");
  return {{"seed", c.seed},
          {"phantom", phantom},
          {"sequence", {{"kind", sequence_name(c.phantom.sequence)}}},
          {"mask", {{"accel", c.mask.accel}, {"center_lines", c.mask.center_lines}, {"offset", c.mask.offset}}},
          {"model", model},
          {"train", train},
          {"modl", to_json(c.model.modl)},
          {"fit", to_json(c.fit)},
          {"eval", to_json(c.eval)},
          {"io", {{"out", c.io.out}, {"subjects", c.io.subjects}, {"png", c.io.png}}}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  JsonFields f(j, "config");
  f.get("seed", c.seed);

  nlohmann::json phantom = f.child("phantom");
  reject_keys(phantom, "phantom", {"sequence", "seed"}, "the sequence section and the global seed");
  const nlohmann::json sequence = f.child("sequence");
  JsonFields sf(sequence, "sequence");
  std::string kind = sequence_name(c.phantom.sequence);
  sf.get("kind", kind);
  sf.finish();
  if (!phantom.is_object()) throw std::invalid_argument("phantom: expected an object");
  phantom["sequence"] = kind;
  phantom["seed"] = c.seed;
  from_json(phantom, c.phantom);

  const nlohmann::json mask = f.child("mask");
  JsonFields mf(mask, "mask");
  mf.get("accel", c.mask.accel);
  mf.get("center_lines", c.mask.center_lines);
  mf.get("offset", c.mask.offset);
  mf.finish();

  const nlohmann::json model = f.child("model");
  reject_keys(model, "model", {"modl"}, "the top-level modl section");
  from_json(model, c.model);
  from_json(f.child("modl"), c.model.modl);

  nlohmann::json train = f.child("train");
  reject_keys(train, "train", {"seed", "center_lines"}, "the global seed and mask.center_lines");
  if (!train.is_object()) throw std::invalid_argument("train: expected an object");
  train["seed"] = c.seed;
  train["center_lines"] = c.mask.center_lines;
  from_json(train, c.train);

  from_json(f.child("fit"), c.fit);
  from_json(f.child("eval"), c.eval);

  const nlohmann::json io = f.child("io");
  JsonFields iof(io, "io");
  iof.get("out", c.io.out);
  iof.get("subjects", c.io.subjects);
  iof.get("png", c.io.png);
  iof.finish();

  f.finish();
  c.validate();
  return c;
}

}  // namespace qmri::cli
