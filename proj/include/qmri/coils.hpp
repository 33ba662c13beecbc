#pragma once

// Coil sensitivity estimation, conjugate coil combination and CG-SENSE.

#include <cstdint>
#include <vector>

#include "qmri/kspace.hpp"
#include "qmri/tensor.hpp"

namespace qmri {

struct CsmStack {
  Tensor maps;  // [Wc, H, W, 2]
  std::vector<std::uint8_t> support;
};

struct CsmEstimateConfig {
  int smoothing = 5;  // box kernel width, pixels
  int iters = 10;
  double support_threshold = 0.05;  // relative to the max combined magnitude

  void validate() const;
};

// Iterative dominant-eigenvector estimate from the central `center_lines`
// phase-encode lines of coil k-space [Wc, T, H, W, 2]. Other lines are ignored.
CsmStack estimate_csm(const Tensor& kspace, std::int64_t center_lines, const CsmEstimateConfig& cfg = {});

// sum_w conj(C_w) x_w: [Wc,T,H,W,2] x [Wc,H,W,2] -> [T,H,W,2].
Tensor coil_combine_conj(const Tensor& coil_images, const Tensor& csm);

// Scales each pixel's coil vector to unit norm on support and zeroes it elsewhere.
// Differentiable.
Tensor normalize_coils(const Tensor& csm, const std::vector<std::uint8_t>& support);

// conjugate_residual minimizes ||r|| over the same Krylov space as plain CG, so
// the residual history is non-increasing; plain CG only guarantees that for the
// A-norm of the error.
enum class CgVariant { conjugate_residual, conjugate_gradient };

struct CgConfig {
  double lambda = 0.05;
  int max_iters = 10;
  double tol = 1e-6;
  CgVariant variant = CgVariant::conjugate_residual;

  void validate() const;
};

struct CgResult {
  Tensor x;                        // [T, H, W, 2]
  int iterations = 0;
  std::vector<double> residuals;   // ||r_i|| / ||rhs||, starting with the initial residual
  bool converged = false;
};

// Solves (E^H E + lambda I) x = E^H y + lambda * prior, starting from prior when
// given, else from E^H y. Built from graph operations, so gradients flow into
// csm and prior through the unrolled iterations.
CgResult cg_sense(const KSpaceData& y, const Tensor& csm, const CgConfig& cfg, const Tensor& prior = Tensor());

// E^H E x + lambda x.
Tensor normal_operator(const Tensor& x, const Tensor& csm, const LineMask& mask, double lambda);

}  // namespace qmri
