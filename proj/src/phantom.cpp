#include "qmri/phantom.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

namespace qmri {

namespace {

double grid_coord(std::int64_t index, std::int64_t extent) {
  return (static_cast<double>(index) + 0.5) * 2.0 / static_cast<double>(extent) - 1.0;
}

bool covers(const Region& r, double u, double v) {
  const double du = (u - r.cu) / r.ru;
  const double dv = (v - r.cv) / r.rv;
  const double d2 = du * du + dv * dv;
  if (d2 > 1.0) return false;
  if (r.kind == Region::Kind::annulus) return d2 > r.inner * r.inner;
  return true;
}

}  // namespace

void PhantomSpec::validate() const {
  if (height < 1 || width < 1) throw std::invalid_argument("PhantomSpec: grid must be at least 1x1");
  for (std::size_t i = 0; i < regions.size(); ++i) {
    const auto& r = regions[i];
    const std::string tag = "PhantomSpec region " + std::to_string(i) + ": ";
    if (!(r.ru > 0.0 && r.rv > 0.0)) throw std::invalid_argument(tag + "semi-axes must be positive");
    if (std::abs(r.cu) + r.ru > 1.0 + 1e-12 || std::abs(r.cv) + r.rv > 1.0 + 1e-12) {
      throw std::invalid_argument(tag + "does not fit inside the grid");
    }
    if (r.kind == Region::Kind::annulus && !(r.inner > 0.0 && r.inner < 1.0)) {
      throw std::invalid_argument(tag + "annulus inner fraction must lie in (0, 1)");
    }
    if (!(r.t1 > 0.0 && r.t2 > 0.0)) throw std::invalid_argument(tag + "T1 and T2 must be positive");
    if (r.t1 < r.t2) throw std::invalid_argument(tag + "T1 must be >= T2");
    if (!(r.pd >= 0.0 && r.pd <= 1.0)) throw std::invalid_argument(tag + "proton density outside [0, 1]");
    if (region_pixel_count(*this, i) == 0) throw std::invalid_argument(tag + "zero area at this resolution");
  }
}

std::int64_t region_pixel_count(const PhantomSpec& spec, std::size_t index) {
  const auto& r = spec.regions.at(index);
  std::int64_t n = 0;
  for (std::int64_t i = 0; i < spec.height; ++i)
    for (std::int64_t j = 0; j < spec.width; ++j) n += covers(r, grid_coord(j, spec.width), grid_coord(i, spec.height));
  return n;
}

PhantomSpec cardiac_phantom(std::int64_t height, std::int64_t width) {
  PhantomSpec spec;
  spec.height = height;
  spec.width = width;
  using K = Region::Kind;
  spec.regions = {
      {K::ellipse, 0.0, 0.0, 0.85, 0.78, 0.0, 800.0, 40.0, 0.6},     // body
      {K::ellipse, -0.36, -0.02, 0.16, 0.28, 0.0, 1800.0, 60.0, 0.9}, // right ventricle
      {K::annulus, 0.06, 0.0, 0.34, 0.34, 0.65, 1200.0, 45.0, 0.7},   // myocardium
      {K::ellipse, 0.06, 0.0, 0.221, 0.221, 0.0, 1800.0, 60.0, 0.9},  // left ventricle
  };
  return spec;
}

PhantomSpec random_cardiac_phantom(std::int64_t height, std::int64_t width, std::uint64_t seed) {
  PhantomSpec spec = cardiac_phantom(height, width);
  spec.seed = seed;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);

  const double du = 0.05 * jitter(rng), dv = 0.05 * jitter(rng);
  const double heart_scale = 1.0 + 0.1 * jitter(rng);
  for (std::size_t i = 1; i < spec.regions.size(); ++i) {
    auto& r = spec.regions[i];
    r.cu += du;
    r.cv += dv;
    r.ru *= heart_scale;
    r.rv *= heart_scale;
  }
  spec.regions[0].ru *= 1.0 + 0.05 * jitter(rng);
  spec.regions[0].rv *= 1.0 + 0.05 * jitter(rng);
  spec.regions[0].ru = std::min(spec.regions[0].ru, 0.98);
  spec.regions[0].rv = std::min(spec.regions[0].rv, 0.98);

  // Blood pools share one draw so both ventricles stay consistent.
  const double blood_t1 = 1.0 + 0.08 * jitter(rng), blood_t2 = 1.0 + 0.08 * jitter(rng);
  for (std::size_t i = 0; i < spec.regions.size(); ++i) {
    auto& r = spec.regions[i];
    const bool blood = (i == 1 || i == 3);
    r.t1 *= blood ? blood_t1 : 1.0 + 0.08 * jitter(rng);
    r.t2 *= blood ? blood_t2 : 1.0 + 0.08 * jitter(rng);
    r.pd = std::min(1.0, r.pd * (1.0 + 0.1 * jitter(rng)));
  }
  spec.validate();
  return spec;
}

TissueMaps generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  const auto h = spec.height, w = spec.width;
  const auto n = static_cast<std::size_t>(h * w);
  std::vector<double> t1(n, 0.0), t2(n, 0.0), pd(n, 0.0);
  std::vector<std::uint8_t> support(n, 0);
  for (std::int64_t i = 0; i < h; ++i) {
    const double v = grid_coord(i, h);
    for (std::int64_t j = 0; j < w; ++j) {
      const double u = grid_coord(j, w);
      const auto p = static_cast<std::size_t>(i * w + j);
      for (const auto& r : spec.regions) {
        if (!covers(r, u, v)) continue;
        t1[p] = r.t1;
        t2[p] = r.t2;
        pd[p] = r.pd;
      }
      support[p] = pd[p] > 0.0 ? 1 : 0;
      if (!support[p]) t1[p] = t2[p] = 0.0;
    }
  }
  return {Tensor({h, w}, std::move(t1)), Tensor({h, w}, std::move(t2)), Tensor({h, w}, std::move(pd)),
          std::move(support)};
}

void SequenceSpec::validate() const {
  if (times.empty()) throw std::invalid_argument("SequenceSpec: no frame times");
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (!(times[i] >= 0.0)) throw std::invalid_argument("SequenceSpec: negative or non-finite time");
    if (i > 0 && !(times[i] > times[i - 1])) throw std::invalid_argument("SequenceSpec: times must be strictly increasing");
  }
  if (kind == SequenceKind::molli && !(inversion_factor > 1.0)) {
    throw std::invalid_argument("SequenceSpec: MOLLI inversion_factor must exceed 1");
  }
}

SequenceSpec SequenceSpec::molli() {
  SequenceSpec s;
  s.kind = SequenceKind::molli;
  // Geometric spread 100 .. 3500 ms.
  for (int i = 0; i < 9; ++i) s.times.push_back(std::round(100.0 * std::pow(35.0, i / 8.0)));
  return s;
}

SequenceSpec SequenceSpec::t2prep() {
  SequenceSpec s;
  s.kind = SequenceKind::t2prep;
  s.times = {0.0, 25.0, 55.0};
  return s;
}

const char* sequence_name(SequenceKind kind) { return kind == SequenceKind::molli ? "molli" : "t2prep"; }

double molli_signal(double a, double b, double t1_star, double ti) { return a - b * std::exp(-ti / t1_star); }

double t2prep_signal(double s0, double t2, double te) { return s0 * std::exp(-te / t2); }

FrameStack simulate_frames(const TissueMaps& maps, const SequenceSpec& seq, const PhaseSpec& phase) {
  seq.validate();
  const auto h = maps.height(), w = maps.width();
  const auto t = seq.frames();
  const auto hw = static_cast<std::size_t>(h * w);
  std::vector<double> out(static_cast<std::size_t>(t) * hw * 2, 0.0);
  const auto t1 = maps.t1.values(), t2 = maps.t2.values(), pd = maps.pd.values();
  const double f = seq.inversion_factor;
  for (std::int64_t i = 0; i < h; ++i) {
    const double v = grid_coord(i, h);
    for (std::int64_t j = 0; j < w; ++j) {
      const double u = grid_coord(j, w);
      const auto p = static_cast<std::size_t>(i * w + j);
      if (!maps.support[p]) continue;
      const double phi = phase.c0 + phase.cu * u + phase.cv * v + phase.cuv * u * v;
      const double c = std::cos(phi), s = std::sin(phi);
      for (std::int64_t k = 0; k < t; ++k) {
        const double tk = seq.times[static_cast<std::size_t>(k)];
        const double m = seq.kind == SequenceKind::molli ? molli_signal(pd[p], f * pd[p], t1[p] / (f - 1.0), tk)
                                                         : t2prep_signal(pd[p], t2[p], tk);
        const auto o = (static_cast<std::size_t>(k) * hw + p) * 2;
        out[o] = m * c;
        out[o + 1] = m * s;
      }
    }
  }
  return {Tensor({t, h, w, 2}, std::move(out)), seq.times, seq.kind};
}

Tensor simulate_coils(int num_coils, std::int64_t height, std::int64_t width, std::uint64_t seed) {
  if (num_coils < 1) throw std::invalid_argument("simulate_coils: num_coils must be >= 1");
  if (height < 1 || width < 1) throw std::invalid_argument("simulate_coils: empty grid");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  struct Coil {
    double cu, cv, sigma, phase0, gu, gv;
  };
  std::vector<Coil> coils;
  for (int c = 0; c < num_coils; ++c) {
    const double angle = 2.0 * std::numbers::pi * (c + 0.25 * unit(rng)) / num_coils;
    coils.push_back({1.3 * std::cos(angle), 1.3 * std::sin(angle), 0.9 * (1.0 + 0.1 * unit(rng)),
                     std::numbers::pi * unit(rng), 0.5 * unit(rng), 0.5 * unit(rng)});
  }

  const auto hw = static_cast<std::size_t>(height * width);
  std::vector<double> out(static_cast<std::size_t>(num_coils) * hw * 2);
  for (std::int64_t i = 0; i < height; ++i) {
    const double v = grid_coord(i, height);
    for (std::int64_t j = 0; j < width; ++j) {
      const double u = grid_coord(j, width);
      const auto p = static_cast<std::size_t>(i * width + j);
      double sos = 0.0;
      for (int c = 0; c < num_coils; ++c) {
        const auto& k = coils[static_cast<std::size_t>(c)];
        const double d2 = (u - k.cu) * (u - k.cu) + (v - k.cv) * (v - k.cv);
        const double mag = std::exp(-d2 / (2.0 * k.sigma * k.sigma));
        const double phi = k.phase0 + k.gu * u + k.gv * v;
        const auto o = (static_cast<std::size_t>(c) * hw + p) * 2;
        out[o] = mag * std::cos(phi);
        out[o + 1] = mag * std::sin(phi);
        sos += mag * mag;
      }
      const double inv = 1.0 / std::sqrt(sos);
      for (int c = 0; c < num_coils; ++c) {
        const auto o = (static_cast<std::size_t>(c) * hw + p) * 2;
        out[o] *= inv;
        out[o + 1] *= inv;
      }
    }
  }
  return Tensor({num_coils, height, width, 2}, std::move(out));
}

GroundTruth simulate_subject(const PhantomSpec& spec, const SequenceSpec& seq, int num_coils,
                             const PhaseSpec& phase) {
  GroundTruth gt;
  gt.maps = generate_phantom(spec);
  gt.frames = simulate_frames(gt.maps, seq, phase);
  gt.csm = simulate_coils(num_coils, spec.height, spec.width, spec.seed ^ 0x9e3779b97f4a7c15ULL);
  return gt;
}

}  // namespace qmri
