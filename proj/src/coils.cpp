#include "qmri/coils.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>

#include "qmri/autograd.hpp"

namespace qmri {

using cd = std::complex<double>;

namespace {

// Mean over the in-bounds part of a k x k window.
std::vector<cd> box_smooth(const std::vector<cd>& img, std::int64_t h, std::int64_t w, int k) {
  const std::int64_t r = k / 2;
  // Separable: rows then columns.
  std::vector<cd> tmp(img.size()), out(img.size());
  for (std::int64_t i = 0; i < h; ++i)
    for (std::int64_t j = 0; j < w; ++j) {
      cd s = 0.0;
      const auto lo = std::max<std::int64_t>(0, j - r), hi = std::min<std::int64_t>(w - 1, j + r);
      for (auto q = lo; q <= hi; ++q) s += img[static_cast<std::size_t>(i * w + q)];
      tmp[static_cast<std::size_t>(i * w + j)] = s / double(hi - lo + 1);
    }
  for (std::int64_t i = 0; i < h; ++i)
    for (std::int64_t j = 0; j < w; ++j) {
      cd s = 0.0;
      const auto lo = std::max<std::int64_t>(0, i - r), hi = std::min<std::int64_t>(h - 1, i + r);
      for (auto q = lo; q <= hi; ++q) s += tmp[static_cast<std::size_t>(q * w + j)];
      out[static_cast<std::size_t>(i * w + j)] = s / double(hi - lo + 1);
    }
  return out;
}

void normalize_pixels(std::vector<std::vector<cd>>& v) {
  const auto px = v.front().size();
  for (std::size_t p = 0; p < px; ++p) {
    double n = 0.0;
    for (const auto& c : v) n += std::norm(c[p]);
    n = std::sqrt(n);
    for (auto& c : v) c[p] = n > 0.0 ? c[p] / n : cd(0.0);
  }
}

double norm_of(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v * v;
  return std::sqrt(s);
}

void require_finite(const Tensor& t, const char* what) {
  for (double v : t.values())
    if (!std::isfinite(v)) throw std::invalid_argument(std::string("cg_sense: non-finite value in ") + what);
}

}  // namespace

void CsmEstimateConfig::validate() const {
  if (smoothing < 1) throw std::invalid_argument("CsmEstimateConfig: smoothing must be >= 1");
  if (iters < 1) throw std::invalid_argument("CsmEstimateConfig: iters must be >= 1");
  if (!(support_threshold >= 0.0 && support_threshold < 1.0)) {
    throw std::invalid_argument("CsmEstimateConfig: support_threshold must lie in [0, 1)");
  }
}

CsmStack estimate_csm(const Tensor& kspace, std::int64_t center_lines, const CsmEstimateConfig& cfg) {
  cfg.validate();
  if (kspace.ndim() != 5 || kspace.dim(4) != 2) {
    throw std::invalid_argument("estimate_csm: k-space must be [Wc,T,H,W,2], got " + shape_str(kspace.shape()));
  }
  const auto nc = kspace.dim(0), nt = kspace.dim(1), h = kspace.dim(2), w = kspace.dim(3);
  if (center_lines < 1 || center_lines > h) throw std::invalid_argument("estimate_csm: center_lines out of range");

  NoGradGuard no_grad;
  LineMask mask(static_cast<std::size_t>(h), 0);
  const auto [start, count] = centered_block(h, center_lines);
  for (auto i = start; i < start + count; ++i) mask[static_cast<std::size_t>(i)] = 1;
  const Tensor low_res = ifft2c(apply_mask(kspace.detach(), mask));
  const auto low = low_res.values();

  const auto px = static_cast<std::size_t>(h * w);
  auto image = [&](std::int64_t c, std::int64_t t, std::size_t p) {
    const auto o = (static_cast<std::size_t>(c * nt + t) * px + p) * 2;
    return cd(low[o], low[o + 1]);
  };

  std::vector<double> energy(static_cast<std::size_t>(nt), 0.0);
  std::vector<double> rss(px, 0.0);
  for (std::int64_t c = 0; c < nc; ++c)
    for (std::int64_t t = 0; t < nt; ++t)
      for (std::size_t p = 0; p < px; ++p) {
        const double e = std::norm(image(c, t, p));
        energy[static_cast<std::size_t>(t)] += e;
        rss[p] += e;
      }
  const auto best = static_cast<std::int64_t>(std::max_element(energy.begin(), energy.end()) - energy.begin());
  if (!(energy[static_cast<std::size_t>(best)] > 0.0)) throw std::invalid_argument("estimate_csm: calibration data is all zero");

  // Start from the strongest frame so the maps inherit its (smooth) phase.
  std::vector<std::vector<cd>> v(static_cast<std::size_t>(nc), std::vector<cd>(px));
  for (std::int64_t c = 0; c < nc; ++c) {
    std::vector<cd> img(px);
    for (std::size_t p = 0; p < px; ++p) img[p] = image(c, best, p);
    v[static_cast<std::size_t>(c)] = box_smooth(img, h, w, cfg.smoothing);
  }
  normalize_pixels(v);

  std::vector<cd> rho(px);
  for (int it = 0; it < cfg.iters; ++it) {
    std::vector<std::vector<cd>> u(static_cast<std::size_t>(nc), std::vector<cd>(px, 0.0));
    for (std::int64_t t = 0; t < nt; ++t) {
      std::fill(rho.begin(), rho.end(), cd(0.0));
      for (std::int64_t c = 0; c < nc; ++c)
        for (std::size_t p = 0; p < px; ++p) rho[p] += std::conj(v[static_cast<std::size_t>(c)][p]) * image(c, t, p);
      for (std::int64_t c = 0; c < nc; ++c)
        for (std::size_t p = 0; p < px; ++p) u[static_cast<std::size_t>(c)][p] += image(c, t, p) * std::conj(rho[p]);
    }
    for (auto& c : u) c = box_smooth(c, h, w, cfg.smoothing);
    normalize_pixels(u);
    v = std::move(u);
  }

  const auto center = static_cast<std::size_t>((h / 2) * w + w / 2);
  const cd ref = v[0][center];
  const cd rot = std::abs(ref) > 0.0 ? std::conj(ref) / std::abs(ref) : cd(1.0);

  const double peak = std::sqrt(*std::max_element(rss.begin(), rss.end()));
  CsmStack out;
  out.support.assign(px, 0);
  std::vector<double> maps(static_cast<std::size_t>(nc) * px * 2, 0.0);
  for (std::size_t p = 0; p < px; ++p) {
    if (!(std::sqrt(rss[p]) > cfg.support_threshold * peak)) continue;
    out.support[p] = 1;
    for (std::int64_t c = 0; c < nc; ++c) {
      const cd z = v[static_cast<std::size_t>(c)][p] * rot;
      maps[(static_cast<std::size_t>(c) * px + p) * 2] = z.real();
      maps[(static_cast<std::size_t>(c) * px + p) * 2 + 1] = z.imag();
    }
  }
  out.maps = Tensor({nc, h, w, 2}, std::move(maps));
  return out;
}

Tensor coil_combine_conj(const Tensor& coil_images, const Tensor& csm) { return coil_reduce_conj(coil_images, csm); }

Tensor normalize_coils(const Tensor& csm, const std::vector<std::uint8_t>& support) {
  detail::require_complex(csm, "normalize_coils");
  if (csm.ndim() != 4) throw std::invalid_argument("normalize_coils: expected [Wc,H,W,2]");
  const auto nc = csm.dim(0);
  const auto px = static_cast<std::size_t>(csm.dim(1) * csm.dim(2));
  if (support.size() != px) throw std::invalid_argument("normalize_coils: support size mismatch");
  const auto x = csm.values();
  std::vector<double> norms(px, 0.0);
  std::vector<double> out(x.size(), 0.0);
  for (std::size_t p = 0; p < px; ++p) {
    if (!support[p]) continue;
    double s = 0.0;
    for (std::int64_t c = 0; c < nc; ++c) {
      const auto o = (static_cast<std::size_t>(c) * px + p) * 2;
      s += x[o] * x[o] + x[o + 1] * x[o + 1];
    }
    norms[p] = std::sqrt(s);
    if (norms[p] == 0.0) continue;
    for (std::int64_t c = 0; c < nc; ++c) {
      const auto o = (static_cast<std::size_t>(c) * px + p) * 2;
      out[o] = x[o] / norms[p];
      out[o + 1] = x[o + 1] / norms[p];
    }
  }
  return detail::make_op(csm.shape(), std::move(out), csm.dtype(), {csm},
                         [norms = std::move(norms), nc, px](std::span<const double> y, std::span<const double> g,
                                                            std::span<std::vector<double>*> gin) {
                           // d(x/|x|) = (I - y y^T) / |x|
                           auto& gx = *gin[0];
                           for (std::size_t p = 0; p < px; ++p) {
                             if (norms[p] == 0.0) continue;
                             double yg = 0.0;
                             for (std::int64_t c = 0; c < nc; ++c) {
                               const auto o = (static_cast<std::size_t>(c) * px + p) * 2;
                               yg += y[o] * g[o] + y[o + 1] * g[o + 1];
                             }
                             for (std::int64_t c = 0; c < nc; ++c) {
                               const auto o = (static_cast<std::size_t>(c) * px + p) * 2;
                               gx[o] += (g[o] - y[o] * yg) / norms[p];
                               gx[o + 1] += (g[o + 1] - y[o + 1] * yg) / norms[p];
                             }
                           }
                         });
}

void CgConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("CgConfig: lambda must be >= 0");
  if (max_iters < 1) throw std::invalid_argument("CgConfig: max_iters must be >= 1");
  if (!(tol > 0.0)) throw std::invalid_argument("CgConfig: tol must be positive");
}

Tensor normal_operator(const Tensor& x, const Tensor& csm, const LineMask& mask, double lambda) {
  Tensor ehe = encode_adjoint(encode(x, csm, mask), csm, mask);
  return lambda > 0.0 ? add(ehe, scale(x, lambda)) : ehe;
}

CgResult cg_sense(const KSpaceData& y, const Tensor& csm, const CgConfig& cfg, const Tensor& prior) {
  cfg.validate();
  if (cfg.lambda > 0.0 && !prior.defined()) throw std::invalid_argument("cg_sense: prior required when lambda > 0");
  require_finite(y.data, "k-space");
  require_finite(csm, "coil maps");
  if (prior.defined()) require_finite(prior, "prior");

  const Tensor ehy = encode_adjoint(y.data, csm, y.mask);
  if (prior.defined() && prior.shape() != ehy.shape()) {
    throw std::invalid_argument("cg_sense: prior " + shape_str(prior.shape()) + " vs image " + shape_str(ehy.shape()));
  }
  const Tensor rhs = cfg.lambda > 0.0 ? add(ehy, scale(prior, cfg.lambda)) : ehy;
  auto op = [&](const Tensor& v) { return normal_operator(v, csm, y.mask, cfg.lambda); };

  CgResult res;
  const double rhs_norm = norm_of(rhs);
  if (rhs_norm == 0.0) {
    res.x = Tensor::zeros(ehy.shape(), ehy.dtype());
    res.residuals = {0.0};
    res.converged = true;
    return res;
  }

  Tensor x = prior.defined() ? prior : ehy;
  Tensor r = sub(rhs, op(x));
  res.residuals.push_back(norm_of(r) / rhs_norm);
  res.converged = res.residuals.back() < cfg.tol;
  Tensor p = r;

  if (cfg.variant == CgVariant::conjugate_gradient) {
    Tensor rs = dot(r, r);
    for (int it = 1; it <= cfg.max_iters && !res.converged; ++it) {
      const Tensor ap = op(p);
      const Tensor pap = dot(p, ap);
      if (!(pap.item() > 0.0)) break;  // p = 0 or loss of positive definiteness
      const Tensor alpha = div(rs, pap);
      x = add(x, mul(p, alpha));
      r = sub(r, mul(ap, alpha));
      const Tensor rs_next = dot(r, r);
      res.iterations = it;
      res.residuals.push_back(std::sqrt(rs_next.item()) / rhs_norm);
      res.converged = res.residuals.back() < cfg.tol;
      p = add(r, mul(p, div(rs_next, rs)));
      rs = rs_next;
    }
  } else {
    Tensor ar = op(r);
    Tensor ap = ar;
    Tensor rar = dot(r, ar);
    for (int it = 1; it <= cfg.max_iters && !res.converged; ++it) {
      const Tensor apap = dot(ap, ap);
      if (!(apap.item() > 0.0) || !(rar.item() > 0.0)) break;
      const Tensor alpha = div(rar, apap);
      x = add(x, mul(p, alpha));
      r = sub(r, mul(ap, alpha));
      res.iterations = it;
      res.residuals.push_back(norm_of(r) / rhs_norm);
      res.converged = res.residuals.back() < cfg.tol;
      if (res.converged || it == cfg.max_iters) break;
      ar = op(r);
      const Tensor rar_next = dot(r, ar);
      const Tensor beta = div(rar_next, rar);
      p = add(r, mul(p, beta));
      ap = add(ar, mul(ap, beta));
      rar = rar_next;
    }
  }
  res.x = x;
  return res;
}

}  // namespace qmri
