#pragma once

// Synthetic cardiac phantoms: tissue maps, relaxation-weighted frames and
// smooth coil sensitivities.
//
// Geometry is given in normalized grid coordinates: u (columns) and v (rows)
// both run over [-1, 1], pixel centers at u = (j + 0.5) * 2 / W - 1.

#include <cstdint>
#include <vector>

#include "qmri/tensor.hpp"

namespace qmri {

struct Region {
  enum class Kind { ellipse, annulus };
  Kind kind = Kind::ellipse;
  double cu = 0.0, cv = 0.0;  // center
  double ru = 0.5, rv = 0.5;  // outer semi-axes
  double inner = 0.0;         // annulus: inner semi-axes as a fraction of the outer ones
  double t1 = 1000.0;         // ms
  double t2 = 50.0;           // ms
  double pd = 1.0;
};

struct PhantomSpec {
  std::int64_t height = 64;
  std::int64_t width = 64;
  std::vector<Region> regions;  // later regions overwrite earlier ones
  std::uint64_t seed = 0;

  void validate() const;
};

// Body, myocardium annulus, left and right ventricular blood pools.
PhantomSpec cardiac_phantom(std::int64_t height, std::int64_t width);

// cardiac_phantom with geometry and relaxation values jittered by seed.
PhantomSpec random_cardiac_phantom(std::int64_t height, std::int64_t width, std::uint64_t seed);

struct TissueMaps {
  Tensor t1;  // [H, W] ms, 0 off support
  Tensor t2;  // [H, W] ms, 0 off support
  Tensor pd;  // [H, W]
  std::vector<std::uint8_t> support;

  std::int64_t height() const { return pd.dim(0); }
  std::int64_t width() const { return pd.dim(1); }
};

TissueMaps generate_phantom(const PhantomSpec& spec);

// Pixel count of region i alone (ignoring overlap with other regions).
std::int64_t region_pixel_count(const PhantomSpec& spec, std::size_t index);

enum class SequenceKind { molli, t2prep };

struct SequenceSpec {
  SequenceKind kind = SequenceKind::molli;
  std::vector<double> times;      // TI (MOLLI) or TE (T2prep), ms
  double inversion_factor = 2.0;  // B / A

  std::int64_t frames() const { return static_cast<std::int64_t>(times.size()); }
  void validate() const;

  static SequenceSpec molli();
  static SequenceSpec t2prep();
};

const char* sequence_name(SequenceKind kind);

// Image phase phi(u, v) = c0 + cu*u + cv*v + cuv*u*v in radians.
struct PhaseSpec {
  double c0 = 0.3;
  double cu = 0.6;
  double cv = -0.4;
  double cuv = 0.25;

  static PhaseSpec none() { return {0.0, 0.0, 0.0, 0.0}; }
};

struct FrameStack {
  Tensor frames;  // [T, H, W, 2]
  std::vector<double> times;
  SequenceKind kind = SequenceKind::molli;
};

// Real signal model at one pixel; the sign of MOLLI signals is kept.
double molli_signal(double a, double b, double t1_star, double ti);
double t2prep_signal(double s0, double t2, double te);

FrameStack simulate_frames(const TissueMaps& maps, const SequenceSpec& seq, const PhaseSpec& phase = {});

// [num_coils, H, W, 2], pixel-wise sum of squares 1 everywhere.
Tensor simulate_coils(int num_coils, std::int64_t height, std::int64_t width, std::uint64_t seed);

struct GroundTruth {
  TissueMaps maps;
  FrameStack frames;
  Tensor csm;  // [Wc, H, W, 2]
};

GroundTruth simulate_subject(const PhantomSpec& spec, const SequenceSpec& seq, int num_coils,
                             const PhaseSpec& phase = {});

}  // namespace qmri
