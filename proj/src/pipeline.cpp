#include "qmri/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include "qmri/io.hpp"
#include "qmri/json_fields.hpp"

namespace qmri {

namespace {

Tensor unit_csm(std::int64_t h, std::int64_t w) {
  std::vector<double> v(static_cast<std::size_t>(h * w * 2), 0.0);
  for (std::size_t i = 0; i < v.size(); i += 2) v[i] = 1.0;
  return Tensor({1, h, w, 2}, std::move(v));
}

SequenceSpec sequence_for(SequenceKind kind) {
  return kind == SequenceKind::molli ? SequenceSpec::molli() : SequenceSpec::t2prep();
}

SequenceKind parse_sequence(const std::string& s) {
  if (s == "molli") return SequenceKind::molli;
  if (s == "t2prep") return SequenceKind::t2prep;
  throw std::invalid_argument("unknown sequence \"" + s + "\" (expected molli or t2prep)");
}

ParamStore network_params(const Model& m, int iteration) {
  if (m.config.modl.share_network_weights_across_iters || !is_unrolled(m.config.kind)) {
    return m.params.with_prefix("net.");
  }
  return m.params.with_prefix("net.it" + std::to_string(iteration) + ".");
}

Tensor apply_network(const Tensor& frames, const ParamStore& net, const ModelConfig& cfg) {
  return channels_to_frames(unet_forward(frames_to_channels(frames), net, cfg.unet, cfg.lt, uses_lt(cfg.kind)));
}

}  // namespace

// ---- data -------------------------------------------------------------------

void DatasetConfig::validate() const {
  if (subjects < 1) throw std::invalid_argument("dataset: subjects must be positive");
  if (height < 8 || width < 8) throw std::invalid_argument("dataset: grid must be at least 8x8");
  if (num_coils < 1) throw std::invalid_argument("dataset: num_coils must be positive");
  if (!(raw_scale > 0.0)) throw std::invalid_argument("dataset: raw_scale must be positive");
  if (noise && !std::isfinite(snr_db)) throw std::invalid_argument("dataset: snr_db must be finite");
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);  // splitmix64 finalizer
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Subject make_subject(const DatasetConfig& cfg, int index) {
  cfg.validate();
  Subject s;
  s.index = index;
  s.seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(index));
  PhantomSpec spec = cfg.random_anatomy ? random_cardiac_phantom(cfg.height, cfg.width, s.seed)
                                        : cardiac_phantom(cfg.height, cfg.width);
  spec.seed = s.seed;
  s.sequence = sequence_for(cfg.sequence);
  GroundTruth gt = simulate_subject(spec, s.sequence, cfg.num_coils);
  s.maps = std::move(gt.maps);
  s.frames = gt.frames.frames;
  s.csm = cfg.num_coils == 1 ? unit_csm(cfg.height, cfg.width) : gt.csm;

  NoGradGuard no_grad;
  const Tensor clean = scale(fft2c(coil_expand(s.frames, s.csm)), cfg.raw_scale);
  if (!cfg.noise) {
    s.kspace = clean;
    return s;
  }
  const auto v = clean.values();
  double power = 0.0;
  for (double x : v) power += x * x;
  power /= static_cast<double>(v.size() / 2);  // per complex sample
  const double sigma = std::sqrt(power / std::pow(10.0, cfg.snr_db / 10.0) / 2.0);
  std::mt19937_64 rng(mix_seed(s.seed, 0x6e6f697365ULL));
  std::normal_distribution<double> n(0.0, sigma);
  std::vector<double> noisy(v.begin(), v.end());
  for (auto& x : noisy) x += n(rng);
  s.kspace = Tensor(clean.shape(), std::move(noisy));
  return s;
}

std::vector<Subject> make_dataset(const DatasetConfig& cfg) {
  std::vector<Subject> out;
  for (int i = 0; i < cfg.subjects; ++i) out.push_back(make_subject(cfg, i));
  return out;
}

Split split_dataset(int count) {
  if (count < 1) throw std::invalid_argument("split: empty dataset");
  const int val = count / 10, test = count / 10;
  const int train = count - val - test;
  Split s;
  for (int i = 0; i < count; ++i) (i < train ? s.train : i < train + val ? s.val : s.test).push_back(i);
  return s;
}

Acquisition acquire_with_csm(const Subject& s, const MaskSpec& mask, const Tensor& csm,
                             const std::vector<std::uint8_t>& support) {
  MaskSpec m = mask;
  m.width_pe = s.kspace.dim(2);
  NoGradGuard no_grad;
  return {scale_kspace(undersample(s.kspace, m), kDefaultKSpaceScale, ScaleDirection::apply), csm, support};
}

Acquisition acquire(const Subject& s, const MaskSpec& mask, const CsmEstimateConfig& csm_cfg) {
  const auto h = s.kspace.dim(2), w = s.kspace.dim(3);
  if (s.kspace.dim(0) == 1) {
    return acquire_with_csm(s, mask, unit_csm(h, w), std::vector<std::uint8_t>(static_cast<std::size_t>(h * w), 1));
  }
  Acquisition a = acquire_with_csm(s, mask, Tensor(), {});
  const CsmStack est = estimate_csm(a.y.data, mask.center_lines, csm_cfg);
  a.csm = est.maps;
  a.support = est.support;
  return a;
}

Tensor reference_frames(const Subject& s, const Tensor& csm) {
  NoGradGuard no_grad;
  return coil_combine_conj(ifft2c(scale(s.kspace, kDefaultKSpaceScale)), csm);
}

// ---- models -----------------------------------------------------------------

const char* model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::unet: return "unet";
    case ModelKind::unet_lt: return "unet_lt";
    case ModelKind::modl: return "modl";
    case ModelKind::modl_lt: return "modl_lt";
  }
  return "?";
}

ModelKind parse_model_kind(const std::string& name) {
  for (auto k : {ModelKind::unet, ModelKind::unet_lt, ModelKind::modl, ModelKind::modl_lt})
    if (name == model_kind_name(k)) return k;
  throw std::invalid_argument("unknown model kind \"" + name + "\"");
}

bool uses_lt(ModelKind kind) { return kind == ModelKind::unet_lt || kind == ModelKind::modl_lt; }
bool is_unrolled(ModelKind kind) { return kind == ModelKind::modl || kind == ModelKind::modl_lt; }

void ModlConfig::validate() const {
  if (outer_iters < 1) throw std::invalid_argument("modl: outer_iters must be >= 1");
  cg.validate();
}

Model init_model(const ModelConfig& cfg, std::uint64_t seed) {
  Model m{cfg, {}};
  const bool lt = uses_lt(cfg.kind);
  if (is_unrolled(cfg.kind)) {
    cfg.modl.validate();
    if (cfg.modl.share_network_weights_across_iters) {
      m.params.merge(init_unet(cfg.unet, cfg.lt, lt, seed), "net.");
    } else {
      for (int i = 0; i < cfg.modl.outer_iters; ++i) {
        m.params.merge(init_unet(cfg.unet, cfg.lt, lt, mix_seed(seed, static_cast<std::uint64_t>(i))),
                       "net.it" + std::to_string(i) + ".");
      }
    }
    m.params.merge(init_csm_refiner(cfg.refiner, seed), "csm.");
  } else {
    m.params.merge(init_unet(cfg.unet, cfg.lt, lt, seed), "net.");
  }
  return m;
}

void save_model(const std::filesystem::path& path, const Model& model) {
  save_checkpoint(path, model.params, to_json(model.config));
}

Model load_model(const std::filesystem::path& path) {
  nlohmann::json cfg;
  Model m;
  m.params = load_checkpoint(path, &cfg);
  from_json(cfg, m.config);
  const Model fresh = init_model(m.config, 0);
  if (fresh.params.names() != m.params.names()) {
    throw std::invalid_argument(path.string() + ": parameters do not match the stored model config");
  }
  for (const auto& n : fresh.params.names()) {
    if (fresh.params.get(n).shape() != m.params.get(n).shape()) {
      throw std::invalid_argument(path.string() + ": shape mismatch for " + n);
    }
  }
  return m;
}

nlohmann::json to_json(const CgConfig& c) {
  return {{"lambda", c.lambda},
          {"max_iters", c.max_iters},
          {"tol", c.tol},
          {"variant", c.variant == CgVariant::conjugate_residual ? "conjugate_residual" : "conjugate_gradient"}};
}

nlohmann::json to_json(const ModlConfig& c) {
  return {{"outer_iters", c.outer_iters},
          {"cg", to_json(c.cg)},
          {"share_network_weights_across_iters", c.share_network_weights_across_iters}};
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"kind", model_kind_name(c.kind)},
          {"unet", to_json(c.unet)},
          {"lt", to_json(c.lt)},
          {"refiner", to_json(c.refiner)},
          {"modl", to_json(c.modl)}};
}

nlohmann::json to_json(const DatasetConfig& c) {
  return {{"subjects", c.subjects},   {"height", c.height},
          {"width", c.width},         {"sequence", sequence_name(c.sequence)},
          {"num_coils", c.num_coils}, {"noise", c.noise},
          {"snr_db", c.snr_db},       {"raw_scale", c.raw_scale},
          {"random_anatomy", c.random_anatomy}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, CgConfig& c) {
  JsonFields f(j, "cg");
  f.get("lambda", c.lambda);
  f.get("max_iters", c.max_iters);
  f.get("tol", c.tol);
  std::string variant;
  f.get("variant", variant);
  if (variant == "conjugate_residual") {
    c.variant = CgVariant::conjugate_residual;
  } else if (variant == "conjugate_gradient") {
    c.variant = CgVariant::conjugate_gradient;
  } else if (!variant.empty()) {
    throw std::invalid_argument("cg.variant: unknown value \"" + variant + "\"");
  }
  f.finish();
  c.validate();
}

void from_json(const nlohmann::json& j, ModlConfig& c) {
  JsonFields f(j, "modl");
  f.get("outer_iters", c.outer_iters);
  from_json(f.child("cg"), c.cg);
  f.get("share_network_weights_across_iters", c.share_network_weights_across_iters);
  f.finish();
  c.validate();
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  JsonFields f(j, "model");
  std::string kind = model_kind_name(c.kind);
  f.get("kind", kind);
  c.kind = parse_model_kind(kind);
  from_json(f.child("unet"), c.unet);
  from_json(f.child("lt"), c.lt);
  from_json(f.child("refiner"), c.refiner);
  from_json(f.child("modl"), c.modl);
  f.finish();
}

void from_json(const nlohmann::json& j, DatasetConfig& c) {
  JsonFields f(j, "dataset");
  f.get("subjects", c.subjects);
  f.get("height", c.height);
  f.get("width", c.width);
  std::string seq = sequence_name(c.sequence);
  f.get("sequence", seq);
  c.sequence = parse_sequence(seq);
  f.get("num_coils", c.num_coils);
  f.get("noise", c.noise);
  f.get("snr_db", c.snr_db);
  f.get("raw_scale", c.raw_scale);
  f.get("random_anatomy", c.random_anatomy);
  f.get("seed", c.seed);
  f.finish();
  c.validate();
}

// ---- reconstruction ---------------------------------------------------------

Tensor recon_zero_fill(const KSpaceData& y, const Tensor& csm) { return coil_combine_conj(ifft2c(y.data), csm); }

CgResult recon_cg_sense(const Acquisition& a, const CgConfig& cfg) {
  const Shape shape = {a.y.frames(), a.y.data.dim(2), a.y.data.dim(3), 2};
  return cg_sense(a.y, a.csm, cfg, cfg.lambda > 0.0 ? Tensor::zeros(shape) : Tensor());
}

Tensor recon_single_coil(const Acquisition& a, const Model& model) {
  if (is_unrolled(model.config.kind)) throw std::invalid_argument("recon_single_coil: unrolled model given");
  return apply_network(recon_zero_fill(a.y, a.csm), network_params(model, 0), model.config);
}

ModlResult recon_multi_coil_modl(const Acquisition& a, const Model& model, bool keep_iterates) {
  const auto& cfg = model.config;
  if (!is_unrolled(cfg.kind)) throw std::invalid_argument("recon_multi_coil_modl: not an unrolled model");
  cfg.modl.validate();
  ModlResult r;
  r.csm = csm_refine(a.csm, a.support, model.params.with_prefix("csm."), cfg.refiner);
  Tensor x = recon_zero_fill(a.y, r.csm);
  if (keep_iterates) r.iterates.push_back(x);
  for (int i = 0; i < cfg.modl.outer_iters; ++i) {
    const Tensor prior = apply_network(x, network_params(model, i), cfg);
    CgResult step = cg_sense(a.y, r.csm, cfg.modl.cg, prior);
    r.converged = r.converged && step.converged;
    x = step.x;
    if (keep_iterates) r.iterates.push_back(x);
  }
  r.frames = x;
  return r;
}

Tensor reconstruct(const Acquisition& a, const Model& model, bool* converged) {
  if (converged) *converged = true;
  if (!is_unrolled(model.config.kind)) return recon_single_coil(a, model);
  ModlResult r = recon_multi_coil_modl(a, model);
  if (converged) *converged = r.converged;
  return r.frames;
}

// ---- training ---------------------------------------------------------------

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("train: learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw std::invalid_argument("train: betas in [0, 1)");
  if (!(adam_eps > 0.0)) throw std::invalid_argument("train: adam_eps must be positive");
  if (grad_clip < 0.0) throw std::invalid_argument("train: grad_clip must be >= 0");
  if (accel_factors.empty()) throw std::invalid_argument("train: accel_factors must be nonempty");
  for (int k : accel_factors)
    if (k < 1) throw std::invalid_argument("train: acceleration factors must be >= 1");
  if (val_accel < 1) throw std::invalid_argument("train: val_accel must be >= 1");
  if (center_lines < 1) throw std::invalid_argument("train: center_lines must be >= 1");
  csm.validate();
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},
          {"grad_clip", c.grad_clip},
          {"loss", c.loss == LossKind::l1 ? "l1" : "l2"},
          {"seed", c.seed},
          {"accel_factors", c.accel_factors},
          {"center_lines", c.center_lines},
          {"val_accel", c.val_accel},
          {"csm", {{"smoothing", c.csm.smoothing}, {"iters", c.csm.iters}, {"support_threshold", c.csm.support_threshold}}}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  JsonFields f(j, "train");
  f.get("epochs", c.epochs);
  f.get("batch_size", c.batch_size);
  f.get("learning_rate", c.learning_rate);
  f.get("beta1", c.beta1);
  f.get("beta2", c.beta2);
  f.get("adam_eps", c.adam_eps);
  f.get("grad_clip", c.grad_clip);
  std::string loss = c.loss == LossKind::l1 ? "l1" : "l2";
  f.get("loss", loss);
  if (loss == "l1") {
    c.loss = LossKind::l1;
  } else if (loss == "l2") {
    c.loss = LossKind::l2;
  } else {
    throw std::invalid_argument("train.loss: expected l1 or l2");
  }
  f.get("seed", c.seed);
  f.get("accel_factors", c.accel_factors);
  f.get("center_lines", c.center_lines);
  f.get("val_accel", c.val_accel);
  const auto csm = f.child("csm");
  JsonFields g(csm, "train.csm");
  g.get("smoothing", c.csm.smoothing);
  g.get("iters", c.csm.iters);
  g.get("support_threshold", c.csm.support_threshold);
  g.finish();
  f.finish();
  c.validate();
}

std::vector<nlohmann::json> metric_records(const EpochLog& e) {
  nlohmann::json val = to_json(e.val);
  val["epoch"] = e.epoch;
  val["split"] = "val";
  val["loss"] = e.val_loss;
  return {{{"epoch", e.epoch}, {"split", "train"}, {"loss", e.train_loss}}, val};
}

MaskSpec validation_mask(const Subject& s, int accel, int center_lines) {
  MaskSpec m;
  m.width_pe = s.kspace.dim(2);
  m.accel_k = accel;
  m.offset_s = static_cast<int>(s.seed % static_cast<std::uint64_t>(accel));
  m.center_lines = center_lines;
  return m;
}

Tensor recon_loss(const Tensor& recon, const Tensor& reference, LossKind kind) {
  const Tensor d = recon - reference;
  return kind == LossKind::l1 ? mean(abs(d)) : mean(square(d));
}

namespace {

struct Prepared {
  Acquisition acq;
  Tensor reference;
};

class Adam {
 public:
  Adam(const ParamStore& params, const TrainConfig& cfg) : cfg_(cfg), params_(params.tensors()) {
    for (const auto& p : params_) {
      m_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
      v_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
    }
  }

  void step(double grad_scale) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, t_), c2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      const auto g = params_[k].grad().to_vector();
      auto w = params_[k].to_vector();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i] * grad_scale;
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
        w[i] -= cfg_.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.adam_eps);
      }
      params_[k].assign(w);
    }
  }

 private:
  const TrainConfig& cfg_;
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  int t_ = 0;
};

double grad_norm(const ParamStore& params) {
  double s = 0.0;
  for (const auto& p : params.tensors()) {
    const Tensor g = p.grad();
    for (double v : g.values()) s += v * v;
  }
  return std::sqrt(s);
}

// Mean loss and mean cropped-magnitude frame metrics over prepared subjects, no graph.
std::pair<double, ImageMetrics> evaluate(const std::vector<Prepared>& set, const Model& model, LossKind kind) {
  if (set.empty()) return {0.0, {}};
  NoGradGuard no_grad;
  double loss = 0.0;
  ImageMetrics m;
  for (const auto& p : set) {
    const Tensor out = reconstruct(p.acq, model);
    loss += recon_loss(out, p.reference, kind).item();
    const ImageMetrics f = frame_metrics(p.reference, out);
    m.psnr += f.psnr;
    m.ssim += f.ssim;
    m.nmse += f.nmse;
    m.rmse += f.rmse;
  }
  const double n = static_cast<double>(set.size());
  return {loss / n, {m.psnr / n, m.ssim / n, m.nmse / n, m.rmse / n}};
}

Model clone_model(const Model& m) { return {m.config, m.params.clone()}; }

}  // namespace

TrainResult train(const std::vector<Subject>& data, const Split& split, const ModelConfig& mcfg,
                  const TrainConfig& tcfg, const std::function<void(const EpochLog&)>& on_epoch) {
  tcfg.validate();
  if (split.train.empty()) throw std::invalid_argument("train: no training subjects");
  auto prepare = [&](const std::vector<int>& idx) {
    std::vector<Prepared> out;
    for (int i : idx) {
      const Subject& s = data.at(static_cast<std::size_t>(i));
      Acquisition a = acquire(s, validation_mask(s, tcfg.val_accel, tcfg.center_lines), tcfg.csm);
      Tensor ref = reference_frames(s, a.csm);
      out.push_back({std::move(a), std::move(ref)});
    }
    return out;
  };
  const auto fixed_train = prepare(split.train);
  const auto fixed_val = prepare(split.val);

  Model model = init_model(mcfg, tcfg.seed);
  model.params.set_requires_grad(true);
  Adam adam(model.params, tcfg);

  TrainResult result;
  result.initial_train_loss = evaluate(fixed_train, model, tcfg.loss).first;
  result.initial_val_loss = evaluate(fixed_val, model, tcfg.loss).first;
  double best_val = fixed_val.empty() ? std::numeric_limits<double>::infinity() : result.initial_val_loss;
  result.best = clone_model(model);

  // Calibration maps do not depend on the mask offset, so the fixed acquisitions
  // supply them (and the references) for every epoch.
  for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    std::mt19937_64 rng(mix_seed(tcfg.seed, static_cast<std::uint64_t>(epoch)));
    std::vector<std::size_t> order(split.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(tcfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(tcfg.batch_size));
      model.params.zero_grad();
      for (std::size_t b = start; b < stop; ++b) {
        const std::size_t k = order[b];
        const Subject& s = data.at(static_cast<std::size_t>(split.train[k]));
        MaskSpec ms = validation_mask(s, tcfg.accel_factors[rng() % tcfg.accel_factors.size()], tcfg.center_lines);
        ms = random_mask(ms, rng());
        const Acquisition a = acquire_with_csm(s, ms, fixed_train[k].acq.csm, fixed_train[k].acq.support);
        const Tensor loss = recon_loss(reconstruct(a, model), fixed_train[k].reference, tcfg.loss);
        epoch_loss += loss.item();
        scale(loss, 1.0 / static_cast<double>(stop - start)).backward();
      }
      double factor = 1.0;
      if (tcfg.grad_clip > 0.0) {
        const double norm = grad_norm(model.params);
        if (norm > tcfg.grad_clip) factor = tcfg.grad_clip / norm;
      }
      adam.step(factor);
    }

    EpochLog e;
    e.epoch = epoch;
    e.train_loss = epoch_loss / static_cast<double>(order.size());
    std::tie(e.val_loss, e.val) = evaluate(fixed_val, model, tcfg.loss);
    result.log.push_back(e);
    if (on_epoch) on_epoch(e);
    if (!fixed_val.empty() && e.val_loss < best_val) {
      best_val = e.val_loss;
      result.best = clone_model(model);
      result.best_epoch = epoch;
    }
  }
  model.params.set_requires_grad(false);
  result.last = clone_model(model);
  result.final_train_loss = evaluate(fixed_train, result.last, tcfg.loss).first;
  if (fixed_val.empty()) {
    result.best = result.last;
    result.best_epoch = tcfg.epochs;
  }
  return result;
}

// ---- evaluation -------------------------------------------------------------

ParamMap fit_maps(const Tensor& frames, const SequenceSpec& seq, const FitConfig& fit) {
  return seq.kind == SequenceKind::molli ? fit_t1_molli(frames, seq.times, fit) : fit_t2(frames, seq.times, fit);
}

SubjectScore score_subject(const Subject& s, const Tensor& recon, const Tensor& reference, const FitConfig& fit,
                           const MetricOptions& opts) {
  NoGradGuard no_grad;
  SubjectScore out;
  out.images = frame_metrics(reference, recon, opts);
  const ParamMap pm = fit_maps(scale(recon, 1.0 / kDefaultKSpaceScale), s.sequence, fit);
  const Tensor& truth = s.sequence.kind == SequenceKind::molli ? s.maps.t1 : s.maps.t2;
  out.maps = map_metrics(truth, pm.value, s.maps.support, pm.fitted, opts);
  return out;
}

}  // namespace qmri
