// Acceptance suite: one PASS/FAIL line per criterion, details indented below.
// Usage: acceptance [criterion numbers...]   (default: all ten)

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "cli.hpp"
#include "../dense_oracle.hpp"
#include "qmri/coils.hpp"
#include "qmri/grad_check.hpp"
#include "qmri/io.hpp"
#include "qmri/kspace.hpp"
#include "qmri/mapping.hpp"
#include "qmri/metrics.hpp"
#include "qmri/network.hpp"
#include "qmri/phantom.hpp"
#include "qmri/pipeline.hpp"

using namespace qmri;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> details;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    details.push_back(std::string(ok ? "ok   " : "FAIL ") + what);
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double inner(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.values().size(); ++i) s += a.values()[i] * b.values()[i];
  return s;
}

double norm2(const Tensor& t) { return std::sqrt(inner(t, t)); }

double rel_err(const Tensor& a, const Tensor& b) {
  double n = 0.0, d = 0.0;
  for (std::size_t i = 0; i < a.values().size(); ++i) {
    const double e = a.values()[i] - b.values()[i];
    n += e * e;
    d += b.values()[i] * b.values()[i];
  }
  return std::sqrt(n / d);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.values().size(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

// ---- 1 ----------------------------------------------------------------------

Outcome operator_correctness() {
  Outcome o;
  std::mt19937_64 rng(101);
  auto uni = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  double worst_adj = 0.0, worst_parseval = 0.0;
  for (int draw = 0; draw < 100; ++draw) {
    const int nc = uni(1, 4), t = uni(1, 3), h = uni(6, 16), w = uni(5, 16), k = uni(1, 4);
    const Tensor x = randn({t, h, w, 2}, rng);
    const Tensor y = randn({nc, t, h, w, 2}, rng);
    const Tensor csm = randn({nc, h, w, 2}, rng);
    const LineMask mask = make_mask({h, k, uni(0, k - 1), uni(0, h)});
    const double lhs = inner(encode(x, csm, mask), y), rhs = inner(x, encode_adjoint(y, csm, mask));
    worst_adj = std::max(worst_adj, std::abs(lhs - rhs) / std::max(std::abs(lhs), std::abs(rhs)));
    worst_parseval = std::max(worst_parseval, std::abs(norm2(fft2c(x)) - norm2(x)) / norm2(x));
  }
  o.require(worst_adj < 1e-10, "adjoint identity, 100 random draws: max rel err " + fmt("%.2e", worst_adj) + " < 1e-10");
  o.require(worst_parseval < 1e-10, "fft2c Parseval, 100 random inputs: max rel err " + fmt("%.2e", worst_parseval) + " < 1e-10");
  return o;
}

// ---- 2 ----------------------------------------------------------------------

Outcome cg_oracle() {
  Outcome o;
  double worst = 0.0;
  int converged = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(200 + seed);
    const int h = 8, w = 8;
    const Tensor csm = randn({3, h, w, 2}, rng);
    const Tensor prior = randn({1, h, w, 2}, rng);
    KSpaceData d;
    d.mask = make_mask(random_mask({h, 2, 0, 2}, seed));
    d.data = apply_mask(randn({3, 1, h, w, 2}, rng), d.mask);
    const double lambda = 0.05;
    const CgResult r = cg_sense(d, csm, {lambda, 500, 1e-14}, prior);
    converged += r.converged;
    const Eigen::MatrixXcd e = oracle::dense_encoding(csm, d.mask, h, w);
    const Eigen::MatrixXcd a = e.adjoint() * e + lambda * Eigen::MatrixXcd::Identity(h * w, h * w);
    const Eigen::VectorXcd rhs = e.adjoint() * oracle::to_complex(d.data) + lambda * oracle::to_complex(prior);
    const Eigen::VectorXcd want = a.partialPivLu().solve(rhs);
    worst = std::max(worst, (oracle::to_complex(r.x) - want).norm() / want.norm());
  }
  o.require(worst < 1e-8, "8x8, 3 coils, k=2, lambda=0.05, 20 instances vs dense LU: max rel err " + fmt("%.2e", worst) +
                              " < 1e-8");
  o.details.push_back("     inner solver converged in " + std::to_string(converged) + "/20 instances");
  return o;
}

// ---- 3 ----------------------------------------------------------------------

// Directional check per parameter tensor: <grad, d> from one backward pass
// against a central difference along a random unit direction d. Single
// coordinates are not used: many LT entries have gradients near 1e-6 against a
// loss near 100, below what any f64 difference quotient resolves to 1e-5.
double param_grad_error(const std::function<Tensor(const ParamStore&)>& loss, const ParamStore& p, double eps,
                        std::uint64_t seed) {
  ParamStore g = p.clone();
  g.set_requires_grad(true);
  loss(g).backward();
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  NoGradGuard no_grad;
  for (const auto& name : p.names()) {
    const std::vector<double> grad = g.get(name).grad().to_vector();
    const std::vector<double> base = p.get(name).to_vector();
    std::vector<double> d = randn({static_cast<std::int64_t>(base.size())}, rng).to_vector();
    double dn = 0.0;
    for (double v : d) dn += v * v;
    double analytic = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      d[i] /= std::sqrt(dn);
      analytic += grad[i] * d[i];
    }
    auto at = [&](double step) {
      std::vector<double> v = base;
      for (std::size_t i = 0; i < v.size(); ++i) v[i] += step * d[i];
      ParamStore q = p.clone();
      q.set(name, Tensor(p.get(name).shape(), v));
      return loss(q).item();
    };
    const double central = (at(eps) - at(-eps)) / (2.0 * eps);
    worst = std::max(worst, std::abs(analytic - central) / std::max({std::abs(analytic), std::abs(central), 1e-12}));
  }
  return worst;
}

Outcome gradient_integrity() {
  Outcome o;
  std::mt19937_64 rng(300);
  // Steps sit where truncation (eps^2) and roundoff (1/eps) balance: input
  // coordinates are truncation-limited at 1e-4, the deepest LT query/key
  // directions (derivatives near 5e-5) roundoff-limited at 1e-5.
  const double eps = 1e-5, eps_param = 1e-4;
  const Tensor x = randn({3, 2, 8, 8}, rng);
  const Tensor r = randn({3, 2, 8, 8}, rng);
  UNetConfig u;
  u.zero_init_out = false;
  LTConfig l;
  l.zero_init_out = false;
  const ParamStore p = init_unet(u, l, true, 12);
  auto net_loss = [&](const Tensor& in, const ParamStore& q) { return sum(unet_forward(in, q, u, l, true) * r); };
  const double input_err = grad_check([&](const Tensor& z) { return net_loss(z, p); }, x, eps);
  const double param_err = param_grad_error([&](const ParamStore& q) { return net_loss(x, q); }, p, eps_param, 301);
  o.require(input_err < 1e-5, "U-Net+LT input gradient [3,2,8,8], all 384 coordinates, step 1e-5: max rel err " + fmt("%.2e", input_err));
  o.require(param_err < 1e-5, "U-Net+LT parameter gradients, " + std::to_string(p.size()) +
                                  " tensors, random directions, step 1e-4: max rel err " + fmt("%.2e", param_err));

  const Tensor coils = simulate_coils(3, 8, 8, 4);
  std::vector<std::uint8_t> support(64, 1);
  support[0] = support[9] = 0;
  CsmRefinerConfig cfg;
  cfg.zero_init_out = false;
  const ParamStore rp = init_csm_refiner(cfg, 3);
  const Tensor rr = randn(coils.shape(), rng);
  const double csm_in = grad_check([&](const Tensor& c) { return sum(csm_refine(c, support, rp, cfg) * rr); }, coils, eps);
  const double csm_par = param_grad_error([&](const ParamStore& q) { return sum(csm_refine(coils, support, q, cfg) * rr); },
                                          rp, eps_param, 302);
  o.require(csm_in < 1e-5, "CSM refiner input gradient: max rel err " + fmt("%.2e", csm_in));
  o.require(csm_par < 1e-5, "CSM refiner parameter gradients, " + std::to_string(rp.size()) +
                                " tensors, random directions: max rel err " + fmt("%.2e", csm_par));
  return o;
}

// ---- 4 ----------------------------------------------------------------------

Tensor permute_frames(const Tensor& x, const std::vector<std::int64_t>& order) {
  std::vector<Tensor> parts;
  for (auto t : order) parts.push_back(slice(x, 0, t, 1));
  return concat(parts, 0);
}

Outcome lt_symmetry() {
  Outcome o;
  std::mt19937_64 rng(400);
  const Tensor x = randn({9, 2, 16, 16}, rng);
  UNetConfig u;
  u.zero_init_out = false;
  const LTConfig l0;
  const Tensor a = unet_forward(x, init_unet(u, l0, true, 7), u, l0, true);
  const Tensor b = unet_forward(x, init_unet(u, l0, false, 7), u, l0, false);
  o.require(max_abs_diff(a, b) == 0.0, "zero-init LT vs LT-free U-Net, [9,2,16,16]: max abs diff " +
                                           fmt("%.1e", max_abs_diff(a, b)) + " (bitwise)");
  o.require(max_abs_diff(a, x) > 0.0, "the compared network is not the identity");

  LTConfig l;
  l.zero_init_out = false;
  const ParamStore p = init_unet(u, l, true, 8);
  double worst = 0.0;
  std::vector<std::int64_t> order = {0, 1, 2, 3, 4, 5, 6, 7, 8};
  for (int trial = 0; trial < 3; ++trial) {
    std::shuffle(order.begin(), order.end(), rng);
    const Tensor pa = permute_frames(unet_forward(x, p, u, l, true), order);
    const Tensor pb = unet_forward(permute_frames(x, order), p, u, l, true);
    worst = std::max(worst, max_abs_diff(pa, pb));
  }
  o.require(worst < 1e-10, "frame permutation equivariance (positional embedding off), 3 permutations: max abs diff " +
                               fmt("%.2e", worst) + " < 1e-10");
  return o;
}

// ---- 5 ----------------------------------------------------------------------

Outcome mask_protocol() {
  Outcome o;
  int cases = 0, mismatches = 0;
  for (int width : {16, 144}) {
    // 24 central lines do not fit a 16-line grid; 4 is used there.
    const int center = width >= 24 ? 24 : 4;
    for (int k : {4, 8, 10}) {
      for (int s = 0; s < k; ++s) {
        std::set<int> want;
        for (int i = s; i < width; i += k) want.insert(i);
        for (int i = width / 2 - center / 2; i < width / 2 - center / 2 + center; ++i) want.insert(i);
        const LineMask m = make_mask({width, k, s, center});
        std::set<int> got;
        for (int i = 0; i < width; ++i)
          if (m[static_cast<std::size_t>(i)]) got.insert(i);
        ++cases;
        mismatches += got != want || sampled_line_count(m) != static_cast<std::int64_t>(want.size());
      }
    }
  }
  o.require(mismatches == 0, "independent enumeration, k in {4,8,10}, widths {16,144}, every offset: " +
                                 std::to_string(cases - mismatches) + "/" + std::to_string(cases) + " masks identical");
  const LineMask wide = make_mask({144, 4, 0, 24});
  o.require(sampled_line_count(wide) == 54, "width 144, k=4, s=0, 24 central lines: 54 sampled lines");

  double worst = 0.0;
  for (int k : {4, 8, 10}) {
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (std::uint64_t seed = 0; seed < 1000; ++seed) counts[static_cast<std::size_t>(random_mask({144, k, 0, 24}, seed).offset_s)]++;
    for (int c : counts) worst = std::max(worst, std::abs(c / 1000.0 - 1.0 / k));
  }
  o.require(worst <= 0.05, "random offsets over 1000 seeds, k in {4,8,10}: max |frequency - 1/k| " + fmt("%.4f", worst) +
                               " <= 0.05");
  return o;
}

// ---- 6 ----------------------------------------------------------------------

Outcome relaxometry() {
  Outcome o;
  double worst_t1 = 0.0, worst_t2 = 0.0;
  std::size_t pixels = 0, unfitted = 0;
  const auto molli = SequenceSpec::molli();
  const auto t2prep = SequenceSpec::t2prep();
  for (std::uint64_t seed : {1, 2, 3}) {
    const TissueMaps maps = generate_phantom(random_cardiac_phantom(64, 64, seed));
    const ParamMap t1 = fit_t1_molli(simulate_frames(maps, molli).frames, molli.times);
    const ParamMap t2 = fit_t2(simulate_frames(maps, t2prep).frames, t2prep.times);
    for (std::size_t p = 0; p < maps.support.size(); ++p) {
      if (!maps.support[p]) continue;
      ++pixels;
      unfitted += !t1.converged[p] || !t2.converged[p];
      worst_t1 = std::max(worst_t1, std::abs(t1.value.values()[p] - maps.t1.values()[p]) / maps.t1.values()[p]);
      worst_t2 = std::max(worst_t2, std::abs(t2.value.values()[p] - maps.t2.values()[p]) / maps.t2.values()[p]);
    }
  }
  o.require(worst_t1 < 1e-3, "T1 (MOLLI), 3 random 64x64 phantoms, " + std::to_string(pixels) +
                                 " support pixels: max rel err " + fmt("%.2e", worst_t1) + " < 1e-3");
  o.require(worst_t2 < 1e-3, "T2 (T2prep), same pixels: max rel err " + fmt("%.2e", worst_t2) + " < 1e-3");
  o.require(unfitted == 0, "every support pixel converged");

  Region r;
  r.ru = r.rv = 0.9;
  r.t1 = 640.0;
  PhantomSpec s;
  s.height = s.width = 64;
  s.regions = {r};
  SequenceSpec seq = molli;
  seq.inversion_factor = 1.8;
  const TissueMaps maps = generate_phantom(s);
  const ParamMap fit = fit_t1_molli(simulate_frames(maps, seq).frames, seq.times);
  double worst_ll = 0.0, worst_star = 0.0;
  for (std::size_t p = 0; p < maps.support.size(); ++p) {
    if (!maps.support[p]) continue;
    worst_ll = std::max(worst_ll, std::abs(fit.value.values()[p] - 640.0) / 640.0);
    worst_star = std::max(worst_star, std::abs(fit.t1_star.values()[p] - 800.0) / 800.0);
  }
  o.require(worst_ll < 1e-3, "Look-Locker case B/A = 1.8, T1* = 800 ms: T1 = 640 ms within rel " + fmt("%.2e", worst_ll) +
                                 " (T1* rel err " + fmt("%.2e", worst_star) + ")");
  return o;
}

// ---- 7 ----------------------------------------------------------------------

// Mirrors the generator in tests/oracles/metrics_oracle.py.
struct Lcg {
  std::uint64_t state;
  double uniform() {
    state = state * 6364136223846793005ULL + 1442695040888963407ULL;
    return static_cast<double>(state >> 11) * (1.0 / 9007199254740992.0);
  }
};

const double kReference[][4] = {
#include "../oracles/metrics_reference.inc"
};

Outcome metrics_oracle() {
  Outcome o;
  double worst = 0.0;
  for (int index = 0; index < 20; ++index) {
    const std::int64_t h = index < 16 ? 32 : 24, w = index < 16 ? 32 : 40;
    Lcg rng{static_cast<std::uint64_t>(1000 + index)};
    std::vector<double> ref(static_cast<std::size_t>(h * w)), test(ref.size());
    for (auto& v : ref) v = rng.uniform();
    const double noise = 0.05 + 0.02 * index;
    for (std::size_t i = 0; i < ref.size(); ++i) test[i] = ref[i] + noise * (rng.uniform() - 0.5);
    const ImageMetrics m = compute_metrics(Tensor({h, w}, ref), Tensor({h, w}, test));
    const double got[4] = {m.psnr, m.ssim, m.nmse, m.rmse};
    for (int k = 0; k < 4; ++k) {
      worst = std::max(worst, std::abs(got[k] - kReference[index][k]) / std::max(1.0, std::abs(kReference[index][k])));
    }
  }
  o.require(worst < 1e-6, "PSNR/SSIM/NMSE/RMSE vs scikit-image reference, 20 pairs: max discrepancy " + fmt("%.2e", worst) +
                              " < 1e-6");
  const RoiWindow roi = roi_window(144, 512);
  const Tensor cropped = crop_roi(Tensor::zeros({144, 512}));
  o.require(roi.rows == 72 && roi.cols == 171 && cropped.dim(0) == 72 && cropped.dim(1) == 171,
            "crop of 144x512 -> " + std::to_string(cropped.dim(0)) + "x" + std::to_string(cropped.dim(1)));
  return o;
}

// ---- 8 ----------------------------------------------------------------------

Outcome end_to_end() {
  Outcome o;
  const auto start = std::chrono::steady_clock::now();
  int lt_wins = 0;
  bool all_beat_zf = true;
  for (std::uint64_t seed : {1, 2, 3}) {
    DatasetConfig dc;  // 20 subjects, 64x32, MOLLI, single coil, 30 dB
    dc.seed = seed;
    const auto data = make_dataset(dc);
    const Split split = split_dataset(dc.subjects);
    TrainConfig tc;  // 30 epochs, lr 1e-3, k=8, 8 central lines
    tc.seed = seed;

    struct Score {
      double img = 0.0, map = 0.0;
    };
    auto score_val = [&](const std::function<Tensor(const Acquisition&)>& recon) {
      Score s;
      for (int i : split.val) {
        const Subject& subj = data[static_cast<std::size_t>(i)];
        const Acquisition a = acquire(subj, validation_mask(subj, tc.val_accel, tc.center_lines), tc.csm);
        NoGradGuard no_grad;
        const SubjectScore sc = score_subject(subj, recon(a), reference_frames(subj, a.csm));
        s.img += sc.images.nmse / static_cast<double>(split.val.size());
        s.map += sc.maps.nmse / static_cast<double>(split.val.size());
      }
      return s;
    };
    const Score zf = score_val([](const Acquisition& a) { return recon_zero_fill(a.y, a.csm); });
    std::map<std::string, Score> trained;
    std::string reductions;
    for (ModelKind kind : {ModelKind::unet, ModelKind::unet_lt}) {
      ModelConfig mc;
      mc.kind = kind;
      const TrainResult r = train(data, split, mc, tc);
      trained[model_kind_name(kind)] = score_val([&](const Acquisition& a) { return reconstruct(a, r.best); });
      reductions += std::string(reductions.empty() ? "" : ", ") + model_kind_name(kind) + " " +
                    fmt("%.1f%%", 100.0 * (1.0 - r.final_train_loss / r.initial_train_loss));
    }
    const Score& un = trained["unet"];
    const Score& lt = trained["unet_lt"];
    lt_wins += lt.img <= un.img;
    const bool beat = un.img < zf.img && lt.img < zf.img && un.map < zf.map && lt.map < zf.map;
    all_beat_zf = all_beat_zf && beat;
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "seed %d: val image NMSE zf %.5f unet %.5f unet_lt %.5f | map NMSE zf %.5f unet %.5f unet_lt %.5f",
                  static_cast<int>(seed), zf.img, un.img, lt.img, zf.map, un.map, lt.map);
    o.details.push_back(std::string("     ") + buf);
    // Not part of this criterion; the 50% target is reported, not enforced.
    o.details.push_back("     seed " + std::to_string(seed) + ": train loss reduction " + reductions +
                        " (informational, target >= 50%)");
  }
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / 60.0;
  o.require(lt_wins >= 2, "unet_lt validation NMSE <= unet in " + std::to_string(lt_wins) + "/3 paired seeds (need 2)");
  o.require(all_beat_zf, "both networks beat zero filling on image and map NMSE in every seed");
  o.details.push_back("     runtime " + fmt("%.1f", minutes) + " min (target < 30)");
  return o;
}

// ---- 9 ----------------------------------------------------------------------

Outcome modl_sanity() {
  Outcome o;
  DatasetConfig dc;
  dc.subjects = 1;
  dc.height = dc.width = 32;
  dc.num_coils = 8;
  dc.noise = false;
  const Subject s = make_subject(dc, 0);
  ModelConfig mc;
  mc.kind = ModelKind::modl_lt;  // zero-initialized outputs: identity network and refiner
  mc.modl.cg.lambda = 1e-3;
  mc.modl.cg.max_iters = 50;
  mc.modl.cg.tol = 1e-10;
  const Model m = init_model(mc, 1);
  NoGradGuard no_grad;

  MaskSpec ms;
  ms.accel_k = 2;
  ms.center_lines = 8;
  const Acquisition a = acquire(s, ms);  // maps estimated from the calibration lines
  const ModlResult r = recon_multi_coil_modl(a, m, true);
  std::string deltas;
  double last = 0.0;
  for (std::size_t i = 1; i < r.iterates.size(); ++i) {
    last = rel_err(r.iterates[i], r.iterates[i - 1]);
    deltas += (i > 1 ? ", " : "") + fmt("%.1e", last);
  }
  o.require(last < 1e-6, "noiseless MOLLI 32x32, 8 coils, k=2, lambda=1e-3: ||x^5 - x^4||/||x^4|| = " + fmt("%.2e", last) +
                             " < 1e-6 (deltas " + deltas + ")");
  o.require(r.converged, "every inner CG solve converged (50 iterations, tol 1e-10)");

  ms.accel_k = 1;
  const Acquisition full = acquire_with_csm(s, ms, s.csm, std::vector<std::uint8_t>(32 * 32, 1));
  const ModlResult f = recon_multi_coil_modl(full, m);
  const double err = rel_err(f.frames, scale(s.frames, kDefaultKSpaceScale * dc.raw_scale));
  o.require(err < 1e-8, "full sampling returns the combined ground truth: rel err " + fmt("%.2e", err) + " < 1e-8");
  return o;
}

// ---- 10 ---------------------------------------------------------------------

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream f(e.path(), std::ios::binary);
    out[fs::relative(e.path(), root).string()] = {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
  }
  return out;
}

Outcome reproducibility() {
  Outcome o;
  const fs::path root = fs::temp_directory_path() / ("qmri_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root);
  write_json(root / "c.json", {{"phantom", {{"subjects", 10}, {"height", 32}, {"width", 32}, {"num_coils", 4}}},
                               {"mask", {{"accel", 4}}},
                               {"model", {{"kind", "modl_lt"}, {"unet", {{"depth", 2}, {"base_channels", 4}}}}},
                               {"modl", {{"outer_iters", 2}}},
                               {"train", {{"epochs", 1}}}});
  const std::string c = (root / "c.json").string();
  auto p = [&](const char* name) { return (root / name).string(); };
  const std::vector<std::pair<std::string, std::vector<std::string>>> steps = {
      {"simulate", {"simulate", "--out", p("data")}},
      {"train", {"train", "--data", p("data"), "--out", p("train")}},
      {"recon", {"recon", "--data", p("data"), "--method", "modl_lt", "--checkpoint", p("train/checkpoint.qtns"), "--out",
                 p("modl")}},
      {"recon", {"recon", "--data", p("data"), "--method", "cgsense", "--out", p("cg")}},
      {"fit", {"fit", "--input", p("modl"), "--out", p("fit")}},
      {"eval", {"eval", "--input", p("modl"), "--input", p("cg"), "--out", p("eval")}},
      {"report", {"report", "--input", p("modl"), "--input", p("cg"), "--out", p("report")}}};
  auto run_all = [&](const std::string& threads) {
    std::map<std::string, std::map<std::string, std::string>> snap;
    for (const auto& [name, args] : steps) {
      std::vector<std::string> full = args;
      full.insert(full.end(), {"--config", c, "--seed", "5", "--threads", threads});
      fs::remove_all(full[full.size() - 7]);  // the --out directory
      std::ostringstream out, err;
      const int code = cli::run(full, out, err);
      if (code != 0) throw std::runtime_error(name + " failed: " + err.str());
      snap[full[full.size() - 7]] = tree(full[full.size() - 7]);
    }
    return snap;
  };
  try {
    const auto first = run_all("1");
    const auto second = run_all("2");
    std::size_t files = 0;
    for (const auto& [dir, t] : first) files += t.size();
    o.require(first == second, "simulate/train/recon/fit/eval/report run twice (1 and 2 threads): " + std::to_string(files) +
                                   " files byte-identical");
  } catch (const std::exception& e) {
    o.require(false, std::string("CLI run: ") + e.what());
  }
  fs::remove_all(root);

  std::mt19937_64 rng(1000);
  bool exact = true;
  for (DType dtype : {DType::f32, DType::f64}) {
    for (bool complex : {false, true}) {
      const Tensor t = randn(complex ? Shape{3, 5, 2} : Shape{4, 7}, rng, 1.0, dtype);
      const TensorFile back = decode_tensor_file(encode_tensor_file({t, complex, nullptr}));
      exact = exact && back.complex == complex && back.tensor.dtype() == dtype && back.tensor.shape() == t.shape() &&
              std::memcmp(back.tensor.values().data(), t.values().data(), t.values().size() * sizeof(double)) == 0;
    }
  }
  o.require(exact, "TensorFile round trips bit-exact for f32, f64, real and complex payloads");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"operator correctness", operator_correctness},
      {"CG-SENSE oracle equivalence", cg_oracle},
      {"gradient integrity", gradient_integrity},
      {"LT initialization and symmetry", lt_symmetry},
      {"mask protocol", mask_protocol},
      {"relaxometry round trip", relaxometry},
      {"metrics oracle", metrics_oracle},
      {"end-to-end directional claim", end_to_end},
      {"MoDL pipeline sanity", modl_sanity},
      {"reproducibility", reproducibility}};
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!wanted.empty() && !wanted.count(n)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s criterion %d: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", n, criteria[i].first.c_str(), secs);
    for (const auto& d : o.details) std::printf("    %s\n", d.c_str());
    std::fflush(stdout);
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
