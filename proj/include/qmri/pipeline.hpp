#pragma once

// End-to-end workflows: synthetic datasets, zero-fill / CG-SENSE / network /
// unrolled reconstructions, training, and map-level evaluation.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "qmri/coils.hpp"
#include "qmri/kspace.hpp"
#include "qmri/mapping.hpp"
#include "qmri/metrics.hpp"
#include "qmri/network.hpp"
#include "qmri/phantom.hpp"

namespace qmri {

// ---- data -------------------------------------------------------------------

struct DatasetConfig {
  int subjects = 20;
  std::int64_t height = 64;  // phase-encode extent
  std::int64_t width = 32;
  SequenceKind sequence = SequenceKind::molli;
  int num_coils = 1;          // 1: single-coil data of the combined image
  bool noise = true;
  double snr_db = 30.0;       // relative to the mean k-space power
  double raw_scale = 0.01;    // raw data is this much smaller than the images
  bool random_anatomy = true;
  std::uint64_t seed = 1;

  void validate() const;
};

struct Subject {
  int index = 0;
  std::uint64_t seed = 0;
  TissueMaps maps;
  SequenceSpec sequence;
  Tensor frames;   // noiseless images [T, H, W, 2], unit scale
  Tensor csm;      // coils used for simulation [Wc, H, W, 2]; ones for single coil
  Tensor kspace;   // fully sampled raw data [Wc, T, H, W, 2], raw scale, noisy if configured
};

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

Subject make_subject(const DatasetConfig& cfg, int index);
std::vector<Subject> make_dataset(const DatasetConfig& cfg);

struct Split {
  std::vector<int> train, val, test;
};
// 10% validation and 10% test (floor), the rest train; order follows the index.
Split split_dataset(int count);

// What a reconstruction sees: scaled undersampled k-space and coil maps.
struct Acquisition {
  KSpaceData y;                       // scaled by kDefaultKSpaceScale
  Tensor csm;                         // [Wc, H, W, 2]
  std::vector<std::uint8_t> support;  // where csm is defined
};

// Undersamples and scales. Single-coil data uses unit coil maps; multi-coil data
// estimates maps from the calibration lines.
Acquisition acquire(const Subject& s, const MaskSpec& mask, const CsmEstimateConfig& csm_cfg = {});
// Same, with supplied maps (e.g. the simulation coils).
Acquisition acquire_with_csm(const Subject& s, const MaskSpec& mask, const Tensor& csm,
                             const std::vector<std::uint8_t>& support);

// Fully sampled reference in the scaled image domain, combined with `csm`.
Tensor reference_frames(const Subject& s, const Tensor& csm);

// ---- models -----------------------------------------------------------------

enum class ModelKind { unet, unet_lt, modl, modl_lt };
const char* model_kind_name(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);
bool uses_lt(ModelKind kind);
bool is_unrolled(ModelKind kind);

struct ModlConfig {
  int outer_iters = 5;
  CgConfig cg;
  bool share_network_weights_across_iters = true;

  void validate() const;
};

struct ModelConfig {
  ModelKind kind = ModelKind::unet_lt;
  UNetConfig unet;
  LTConfig lt;
  CsmRefinerConfig refiner;
  ModlConfig modl;
};

// Parameters live under "net." (or "net.it<i>." without weight sharing) and
// "csm." for the coil-map refiner of unrolled models.
struct Model {
  ModelConfig config;
  ParamStore params;
};

Model init_model(const ModelConfig& cfg, std::uint64_t seed);
void save_model(const std::filesystem::path& path, const Model& model);
Model load_model(const std::filesystem::path& path);

nlohmann::json to_json(const CgConfig& c);
nlohmann::json to_json(const ModlConfig& c);
nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const DatasetConfig& c);
void from_json(const nlohmann::json& j, CgConfig& c);
void from_json(const nlohmann::json& j, ModlConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void from_json(const nlohmann::json& j, DatasetConfig& c);

// ---- reconstruction ---------------------------------------------------------

// Per-frame inverse FFT, combined with conj(csm) over coils.
Tensor recon_zero_fill(const KSpaceData& y, const Tensor& csm);

// Regularized SENSE toward zero: (E^H E + lambda I) x = E^H y.
CgResult recon_cg_sense(const Acquisition& a, const CgConfig& cfg);

// Zero fill followed by the network.
Tensor recon_single_coil(const Acquisition& a, const Model& model);

struct ModlResult {
  Tensor frames;
  Tensor csm;                  // refined maps
  std::vector<Tensor> iterates;  // x^0 .. x^N when requested
  bool converged = true;       // every inner solve converged
};
ModlResult recon_multi_coil_modl(const Acquisition& a, const Model& model, bool keep_iterates = false);

// Dispatch on the model kind. Builds a graph when grad mode is on.
Tensor reconstruct(const Acquisition& a, const Model& model, bool* converged = nullptr);

// ---- training ---------------------------------------------------------------

enum class LossKind { l1, l2 };

struct TrainConfig {
  int epochs = 30;
  int batch_size = 1;  // subjects per optimizer step
  double learning_rate = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  double grad_clip = 1.0;  // global L2 norm; 0 disables
  LossKind loss = LossKind::l1;
  std::uint64_t seed = 1;
  std::vector<int> accel_factors = {8};
  int center_lines = 8;
  int val_accel = 8;
  CsmEstimateConfig csm;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  ImageMetrics val;  // cropped-magnitude frame metrics, mean over validation subjects
};
// Metric-log records: {epoch, split, loss} for train, plus psnr/ssim/nmse/rmse for val.
std::vector<nlohmann::json> metric_records(const EpochLog& e);

struct TrainResult {
  Model best;              // parameters at the lowest validation loss
  Model last;
  int best_epoch = 0;      // 0: the initial parameters were never beaten
  double initial_train_loss = 0.0;  // fixed validation-style masks on the training subjects
  double final_train_loss = 0.0;    // same masks, last parameters
  double initial_val_loss = 0.0;
  std::vector<EpochLog> log;
};

// `on_epoch` (optional) sees each log entry as it is produced.
TrainResult train(const std::vector<Subject>& data, const Split& split, const ModelConfig& mcfg,
                  const TrainConfig& tcfg, const std::function<void(const EpochLog&)>& on_epoch = {});

// Fixed validation acquisition of a subject: offset from the subject seed.
MaskSpec validation_mask(const Subject& s, int accel, int center_lines);

// Loss between a reconstruction and its reference, both [T, H, W, 2].
Tensor recon_loss(const Tensor& recon, const Tensor& reference, LossKind kind);

// ---- evaluation -------------------------------------------------------------

struct SubjectScore {
  ImageMetrics images;
  ImageMetrics maps;
};

// recon and reference in the scaled image domain. Maps are fitted after the
// scaling is reversed and compared with the true T1 or T2 on the phantom support.
SubjectScore score_subject(const Subject& s, const Tensor& recon, const Tensor& reference, const FitConfig& fit = {},
                           const MetricOptions& opts = {});
ParamMap fit_maps(const Tensor& frames, const SequenceSpec& seq, const FitConfig& fit = {});

}  // namespace qmri
