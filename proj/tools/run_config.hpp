#pragma once

// The shared configuration of every subcommand. Sections mirror the library
// configs; the global seed replaces their per-section seeds.

#include <cstdint>
#include <string>

#include "json.hpp"

#include "qmri/mapping.hpp"
#include "qmri/metrics.hpp"
#include "qmri/pipeline.hpp"

namespace qmri::cli {

struct MaskConfig {
  int accel = 8;
  int center_lines = 8;  // also used for training and calibration
  int offset = -1;       // -1: per-subject offset from the subject seed
};

struct IoConfig {
  std::string out = "out";
  std::string subjects = "test";  // train | val | test | all
  bool png = true;
};

struct RunConfig {
  std::uint64_t seed = 1;
  DatasetConfig phantom;  // sequence and seed come from their own fields
  MaskConfig mask;
  ModelConfig model;      // model.modl is the "modl" section
  TrainConfig train;
  FitConfig fit;
  MetricOptions eval;
  IoConfig io;

  // The global seed drives simulation, initialization and training.
  void set_seed(std::uint64_t s);
  void validate() const;
};

nlohmann::json to_json(const RunConfig& c);
// Strict: unknown keys anywhere are rejected. Missing keys keep defaults.
RunConfig run_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const FitConfig& c);
void from_json(const nlohmann::json& j, FitConfig& c);
nlohmann::json to_json(const MetricOptions& c);
void from_json(const nlohmann::json& j, MetricOptions& c);

}  // namespace qmri::cli
