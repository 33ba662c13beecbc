#include "qmri/kspace.hpp"

#include <fftw3.h>

#include <cmath>
#include <map>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>

#include "qmri/autograd.hpp"

namespace qmri {

using detail::make_op;
using Span = std::span<const double>;
using GradIn = std::span<std::vector<double>*>;

void MaskSpec::validate() const {
  if (width_pe < 1) throw std::invalid_argument("MaskSpec: width_pe must be >= 1");
  if (accel_k < 1) throw std::invalid_argument("MaskSpec: accel_k must be >= 1");
  if (offset_s < 0 || offset_s >= accel_k) {
    throw std::invalid_argument("MaskSpec: offset_s " + std::to_string(offset_s) + " outside [0, " +
                                std::to_string(accel_k) + ")");
  }
  if (center_lines < 0 || center_lines > width_pe) {
    throw std::invalid_argument("MaskSpec: center_lines " + std::to_string(center_lines) +
                                " exceeds width " + std::to_string(width_pe));
  }
}

std::pair<std::int64_t, std::int64_t> centered_block(std::int64_t extent, std::int64_t count) {
  if (count < 0 || count > extent) throw std::invalid_argument("centered_block: count out of range");
  return {extent / 2 - count / 2, count};
}

LineMask make_mask(const MaskSpec& spec) {
  spec.validate();
  LineMask mask(static_cast<std::size_t>(spec.width_pe), 0);
  for (std::int64_t i = spec.offset_s; i < spec.width_pe; i += spec.accel_k) mask[static_cast<std::size_t>(i)] = 1;
  const auto [start, count] = centered_block(spec.width_pe, spec.center_lines);
  for (std::int64_t i = start; i < start + count; ++i) mask[static_cast<std::size_t>(i)] = 1;
  return mask;
}

MaskSpec random_mask(MaskSpec spec, std::uint64_t seed) {
  spec.offset_s = 0;
  spec.validate();
  std::mt19937_64 rng(seed);
  spec.offset_s = static_cast<int>(std::uniform_int_distribution<int>(0, spec.accel_k - 1)(rng));
  return spec;
}

std::int64_t sampled_line_count(const LineMask& mask) {
  std::int64_t n = 0;
  for (auto m : mask) n += m ? 1 : 0;
  return n;
}

double effective_acceleration(const LineMask& mask) {
  const auto n = sampled_line_count(mask);
  if (n == 0) throw std::invalid_argument("effective_acceleration: empty mask");
  return static_cast<double>(mask.size()) / static_cast<double>(n);
}

// ---- Fourier transforms ------------------------------------------------------

namespace {

class PlanCache {
 public:
  static PlanCache& instance() {
    static PlanCache cache;
    return cache;
  }

  fftw_plan get(int h, int w, int sign) {
    std::lock_guard lock(mutex_);
    auto key = std::make_tuple(h, w, sign);
    auto it = plans_.find(key);
    if (it != plans_.end()) return it->second;
    auto* buf = fftw_alloc_complex(static_cast<std::size_t>(h) * static_cast<std::size_t>(w));
    fftw_plan plan = fftw_plan_dft_2d(h, w, buf, buf, sign, FFTW_ESTIMATE);
    fftw_free(buf);
    plans_.emplace(key, plan);
    return plan;
  }

 private:
  std::mutex mutex_;
  std::map<std::tuple<int, int, int>, fftw_plan> plans_;
};

// Centered transform: shift(F(ishift(x))) / sqrt(HW). Shifts are floor-centered.
std::vector<double> centered_dft(Span in, std::int64_t batch, std::int64_t h, std::int64_t w, int sign) {
  fftw_plan plan = PlanCache::instance().get(static_cast<int>(h), static_cast<int>(w), sign);
  const auto hw = static_cast<std::size_t>(h * w);
  fftw_complex* buf = fftw_alloc_complex(hw);
  std::vector<double> out(in.size());
  const double norm = 1.0 / std::sqrt(static_cast<double>(h * w));
  const auto sh = h / 2, sw = w / 2;
  for (std::int64_t b = 0; b < batch; ++b) {
    const double* src = in.data() + b * h * w * 2;
    for (std::int64_t i = 0; i < h; ++i) {
      const auto si = (i + sh) % h;
      for (std::int64_t j = 0; j < w; ++j) {
        const auto sj = (j + sw) % w;
        buf[i * w + j][0] = src[(si * w + sj) * 2];
        buf[i * w + j][1] = src[(si * w + sj) * 2 + 1];
      }
    }
    fftw_execute_dft(plan, buf, buf);
    double* dst = out.data() + b * h * w * 2;
    for (std::int64_t i = 0; i < h; ++i) {
      const auto di = (i + sh) % h;
      for (std::int64_t j = 0; j < w; ++j) {
        const auto dj = (j + sw) % w;
        dst[(di * w + dj) * 2] = buf[i * w + j][0] * norm;
        dst[(di * w + dj) * 2 + 1] = buf[i * w + j][1] * norm;
      }
    }
  }
  fftw_free(buf);
  return out;
}

Tensor fourier_op(const Tensor& x, int sign, const char* name) {
  detail::require_complex(x, name);
  if (x.ndim() < 3) throw std::invalid_argument(std::string(name) + ": needs [..., H, W, 2]");
  const auto h = x.dim(-3), w = x.dim(-2);
  const auto batch = x.numel() / (h * w * 2);
  auto out = centered_dft(x.values(), batch, h, w, sign);
  return make_op(x.shape(), std::move(out), x.dtype(), {x}, [batch, h, w, sign](Span, Span g, GradIn gin) {
    // Orthonormal: the adjoint is the transform with the opposite sign.
    const auto adj = centered_dft(g, batch, h, w, -sign);
    auto& gx = *gin[0];
    for (std::size_t i = 0; i < adj.size(); ++i) gx[i] += adj[i];
  });
}

void check_csm_shape(const Tensor& csm, std::int64_t h, std::int64_t w, const char* op) {
  if (csm.ndim() != 4 || csm.dim(1) != h || csm.dim(2) != w || csm.dim(3) != 2) {
    throw std::invalid_argument(std::string(op) + ": coil maps " + shape_str(csm.shape()) +
                                " do not match image grid " + std::to_string(h) + "x" + std::to_string(w));
  }
}

}  // namespace

Tensor fft2c(const Tensor& image) { return fourier_op(image, FFTW_FORWARD, "fft2c"); }
Tensor ifft2c(const Tensor& kspace) { return fourier_op(kspace, FFTW_BACKWARD, "ifft2c"); }

Tensor apply_mask(const Tensor& kspace, const LineMask& mask) {
  detail::require_complex(kspace, "apply_mask");
  if (kspace.ndim() < 3 || kspace.dim(-3) != static_cast<std::int64_t>(mask.size())) {
    throw std::invalid_argument("apply_mask: mask of " + std::to_string(mask.size()) + " lines vs k-space " +
                                shape_str(kspace.shape()));
  }
  const auto h = kspace.dim(-3);
  const auto row = kspace.dim(-2) * 2;
  const auto outer = kspace.numel() / (h * row);
  auto zero_lines = [=](std::span<double> v) {
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t i = 0; i < h; ++i)
        if (!mask[static_cast<std::size_t>(i)]) std::fill_n(v.data() + (o * h + i) * row, row, 0.0);
  };
  auto out = kspace.to_vector();
  zero_lines(out);
  return make_op(kspace.shape(), std::move(out), kspace.dtype(), {kspace},
                 [zero_lines](Span, Span g, GradIn gin) {
                   std::vector<double> masked(g.begin(), g.end());
                   zero_lines(masked);
                   auto& gx = *gin[0];
                   for (std::size_t i = 0; i < masked.size(); ++i) gx[i] += masked[i];
                 });
}

Tensor coil_expand(const Tensor& image, const Tensor& csm) {
  detail::require_same_dtype(image, csm, "coil_expand");
  if (image.ndim() != 4 || image.dim(3) != 2) {
    throw std::invalid_argument("coil_expand: image must be [T,H,W,2], got " + shape_str(image.shape()));
  }
  const auto t = image.dim(0), h = image.dim(1), w = image.dim(2);
  check_csm_shape(csm, h, w, "coil_expand");
  const auto nc = csm.dim(0);
  const auto px = h * w;
  const auto xv = image.values();
  const auto cv = csm.values();
  std::vector<double> out(static_cast<std::size_t>(nc * t * px * 2));
  for (std::int64_t c = 0; c < nc; ++c)
    for (std::int64_t f = 0; f < t; ++f) {
      const double* x = xv.data() + f * px * 2;
      const double* s = cv.data() + c * px * 2;
      double* o = out.data() + (c * t + f) * px * 2;
      for (std::int64_t p = 0; p < px; ++p) {
        o[2 * p] = s[2 * p] * x[2 * p] - s[2 * p + 1] * x[2 * p + 1];
        o[2 * p + 1] = s[2 * p] * x[2 * p + 1] + s[2 * p + 1] * x[2 * p];
      }
    }
  return make_op({nc, t, h, w, 2}, std::move(out), image.dtype(), {image, csm},
                 [image, csm, nc, t, px](Span, Span g, GradIn gin) {
                   const auto xv = image.values();
                   const auto cv = csm.values();
                   for (std::int64_t c = 0; c < nc; ++c)
                     for (std::int64_t f = 0; f < t; ++f) {
                       const double* x = xv.data() + f * px * 2;
                       const double* s = cv.data() + c * px * 2;
                       const double* gg = g.data() + (c * t + f) * px * 2;
                       for (std::int64_t p = 0; p < px; ++p) {
                         const double gr = gg[2 * p], gi = gg[2 * p + 1];
                         if (gin[0]) {
                           double* gx = gin[0]->data() + f * px * 2;
                           gx[2 * p] += s[2 * p] * gr + s[2 * p + 1] * gi;
                           gx[2 * p + 1] += s[2 * p] * gi - s[2 * p + 1] * gr;
                         }
                         if (gin[1]) {
                           double* gs = gin[1]->data() + c * px * 2;
                           gs[2 * p] += x[2 * p] * gr + x[2 * p + 1] * gi;
                           gs[2 * p + 1] += x[2 * p] * gi - x[2 * p + 1] * gr;
                         }
                       }
                     }
                 });
}

Tensor coil_reduce_conj(const Tensor& coil_images, const Tensor& csm) {
  detail::require_same_dtype(coil_images, csm, "coil_reduce_conj");
  if (coil_images.ndim() != 5 || coil_images.dim(4) != 2) {
    throw std::invalid_argument("coil_reduce_conj: coil images must be [Wc,T,H,W,2], got " +
                                shape_str(coil_images.shape()));
  }
  const auto nc = coil_images.dim(0), t = coil_images.dim(1), h = coil_images.dim(2), w = coil_images.dim(3);
  check_csm_shape(csm, h, w, "coil_reduce_conj");
  if (csm.dim(0) != nc) throw std::invalid_argument("coil_reduce_conj: coil count mismatch");
  const auto px = h * w;
  const auto kv = coil_images.values();
  const auto cv = csm.values();
  std::vector<double> out(static_cast<std::size_t>(t * px * 2), 0.0);
  for (std::int64_t c = 0; c < nc; ++c)
    for (std::int64_t f = 0; f < t; ++f) {
      const double* k = kv.data() + (c * t + f) * px * 2;
      const double* s = cv.data() + c * px * 2;
      double* o = out.data() + f * px * 2;
      for (std::int64_t p = 0; p < px; ++p) {
        o[2 * p] += s[2 * p] * k[2 * p] + s[2 * p + 1] * k[2 * p + 1];
        o[2 * p + 1] += s[2 * p] * k[2 * p + 1] - s[2 * p + 1] * k[2 * p];
      }
    }
  return make_op({t, h, w, 2}, std::move(out), coil_images.dtype(), {coil_images, csm},
                 [coil_images, csm, nc, t, px](Span, Span g, GradIn gin) {
                   const auto kv = coil_images.values();
                   const auto cv = csm.values();
                   for (std::int64_t c = 0; c < nc; ++c)
                     for (std::int64_t f = 0; f < t; ++f) {
                       const double* k = kv.data() + (c * t + f) * px * 2;
                       const double* s = cv.data() + c * px * 2;
                       const double* gg = g.data() + f * px * 2;
                       for (std::int64_t p = 0; p < px; ++p) {
                         const double gr = gg[2 * p], gi = gg[2 * p + 1];
                         if (gin[0]) {  // C * g
                           double* gk = gin[0]->data() + (c * t + f) * px * 2;
                           gk[2 * p] += s[2 * p] * gr - s[2 * p + 1] * gi;
                           gk[2 * p + 1] += s[2 * p] * gi + s[2 * p + 1] * gr;
                         }
                         if (gin[1]) {  // conj(g) * k
                           double* gs = gin[1]->data() + c * px * 2;
                           gs[2 * p] += gr * k[2 * p] + gi * k[2 * p + 1];
                           gs[2 * p + 1] += gr * k[2 * p + 1] - gi * k[2 * p];
                         }
                       }
                     }
                 });
}

Tensor encode(const Tensor& image, const Tensor& csm, const LineMask& mask) {
  return apply_mask(fft2c(coil_expand(image, csm)), mask);
}

Tensor encode_adjoint(const Tensor& kspace, const Tensor& csm, const LineMask& mask) {
  return coil_reduce_conj(ifft2c(apply_mask(kspace, mask)), csm);
}

KSpaceData undersample(const Tensor& full_kspace, const MaskSpec& spec) {
  if (full_kspace.ndim() != 5 || full_kspace.dim(4) != 2) {
    throw std::invalid_argument("undersample: k-space must be [Wc,T,H,W,2], got " + shape_str(full_kspace.shape()));
  }
  if (spec.width_pe != full_kspace.dim(2)) {
    throw std::invalid_argument("undersample: mask width " + std::to_string(spec.width_pe) +
                                " does not match phase-encode extent " + std::to_string(full_kspace.dim(2)));
  }
  KSpaceData out;
  out.spec = spec;
  out.mask = make_mask(spec);
  out.data = apply_mask(full_kspace, out.mask);
  return out;
}

KSpaceData scale_kspace(const KSpaceData& data, double factor, ScaleDirection direction) {
  if (!(factor > 0.0) || !std::isfinite(factor)) throw std::invalid_argument("scale_kspace: factor must be positive");
  KSpaceData out = data;
  if (direction == ScaleDirection::apply) {
    if (data.scale_applied) throw std::logic_error("scale_kspace: scaling already applied");
    out.data = scale(data.data, factor);
    out.scale_applied = true;
    out.scale_factor = factor;
  } else {
    if (!data.scale_applied) throw std::logic_error("scale_kspace: reverse requested on unscaled data");
    if (factor != data.scale_factor) throw std::invalid_argument("scale_kspace: reverse factor differs from applied factor");
    out.data = scale(data.data, 1.0 / factor);
    out.scale_applied = false;
    out.scale_factor = 1.0;
  }
  return out;
}

}  // namespace qmri
