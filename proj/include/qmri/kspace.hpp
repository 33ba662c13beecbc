#pragma once

// Cartesian k-space: centered Fourier transforms, phase-encode line masks,
// k-space scaling, and the multi-coil encoding operator E = M F C.
//
// Layout conventions:
//   combined image   [T, H, W, 2]
//   coil maps        [Wc, H, W, 2]
//   coil k-space     [Wc, T, H, W, 2]
// H is the phase-encode axis; masks select lines along H.

#include <cstdint>
#include <utility>
#include <vector>

#include "qmri/tensor.hpp"

namespace qmri {

struct MaskSpec {
  std::int64_t width_pe = 0;
  int accel_k = 1;
  int offset_s = 0;
  int center_lines = 24;

  void validate() const;
};

// One entry per phase-encode line: 1 sampled, 0 skipped.
using LineMask = std::vector<std::uint8_t>;

// Floor-centered block of `count` indices inside [0, extent): returns
// (start, count) with start = extent/2 - count/2.
std::pair<std::int64_t, std::int64_t> centered_block(std::int64_t extent, std::int64_t count);

LineMask make_mask(const MaskSpec& spec);

// Same spec with offset_s drawn uniformly from [0, accel_k); deterministic in seed.
MaskSpec random_mask(MaskSpec spec, std::uint64_t seed);

std::int64_t sampled_line_count(const LineMask& mask);

// width / sampled lines. Not assumed equal to accel_k: the center block adds lines.
double effective_acceleration(const LineMask& mask);

// Orthonormal centered 2-D DFT over axes (-3, -2) of a [..., H, W, 2] tensor.
// Differentiable; the backward pass of each is the other.
Tensor fft2c(const Tensor& image);
Tensor ifft2c(const Tensor& kspace);

// Zeroes unsampled lines along axis -3. Self-adjoint and idempotent.
Tensor apply_mask(const Tensor& kspace, const LineMask& mask);

// [T,H,W,2] x [Wc,H,W,2] -> [Wc,T,H,W,2]: each coil image is C_w * x_t.
Tensor coil_expand(const Tensor& image, const Tensor& csm);

// [Wc,T,H,W,2] x [Wc,H,W,2] -> [T,H,W,2]: sum_w conj(C_w) * x_{w,t}.
Tensor coil_reduce_conj(const Tensor& coil_images, const Tensor& csm);

// y = M F C x and its adjoint x = C^H F^H M y.
Tensor encode(const Tensor& image, const Tensor& csm, const LineMask& mask);
Tensor encode_adjoint(const Tensor& kspace, const Tensor& csm, const LineMask& mask);

struct KSpaceData {
  Tensor data;  // [Wc, T, H, W, 2]
  LineMask mask;
  MaskSpec spec;
  bool scale_applied = false;
  double scale_factor = 1.0;

  std::int64_t coils() const { return data.dim(0); }
  std::int64_t frames() const { return data.dim(1); }
};

// Masks fully sampled coil k-space [Wc,T,H,W,2] with make_mask(spec).
KSpaceData undersample(const Tensor& full_kspace, const MaskSpec& spec);

inline constexpr double kDefaultKSpaceScale = 100.0;

enum class ScaleDirection { apply, reverse };

// Multiplies (apply) or divides (reverse) all samples by factor. Applying twice,
// or reversing data that was never scaled, throws.
KSpaceData scale_kspace(const KSpaceData& data, double factor, ScaleDirection direction);

}  // namespace qmri
