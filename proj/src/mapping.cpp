#include "qmri/mapping.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>

namespace qmri {

void FitConfig::validate() const {
  if (max_iters < 1) throw std::invalid_argument("FitConfig: max_iters must be >= 1");
  if (!(damping > 0.0)) throw std::invalid_argument("FitConfig: damping must be positive");
  if (!(damping_up > 1.0)) throw std::invalid_argument("FitConfig: damping_up must exceed 1");
  if (!(damping_down > 0.0 && damping_down < 1.0)) throw std::invalid_argument("FitConfig: damping_down must lie in (0, 1)");
  if (!(param_tol > 0.0)) throw std::invalid_argument("FitConfig: param_tol must be positive");
  if (!(nonfit_threshold >= 0.0)) throw std::invalid_argument("FitConfig: nonfit_threshold must be >= 0");
  if (threads < 1) throw std::invalid_argument("FitConfig: threads must be >= 1");
}

LmResult lm_fit(const ResidualFn& residual, const JacobianFn& jacobian, const Eigen::VectorXd& x0,
                const FitConfig& cfg) {
  cfg.validate();
  constexpr double kMaxDamping = 1e20;
  LmResult out;
  Eigen::VectorXd x = x0;
  Eigen::VectorXd r = residual(x);
  double cost = r.squaredNorm();
  out.cost_history.push_back(std::sqrt(cost));
  if (!std::isfinite(cost)) {
    out.params = x;
    out.residual_norm = std::sqrt(cost);
    return out;
  }
  double mu = cfg.damping;
  const auto n = x.size();

  auto small = [&](const Eigen::VectorXd& step) { return step.norm() <= cfg.param_tol * (x.norm() + cfg.param_tol); };

  for (int iter = 0; iter < cfg.max_iters && !out.converged; ++iter) {
    if (cost == 0.0) {
      out.converged = true;
      break;
    }
    const Eigen::MatrixXd j = jacobian(x);
    const Eigen::VectorXd g = j.transpose() * r;
    const Eigen::MatrixXd h = j.transpose() * j;
    if (g.lpNorm<Eigen::Infinity>() == 0.0) {
      out.converged = true;
      break;
    }
    bool accepted = false;
    while (!accepted) {
      Eigen::LDLT<Eigen::MatrixXd> solver(h + mu * Eigen::MatrixXd::Identity(n, n));
      Eigen::VectorXd step = solver.solve(-g);
      const bool usable = solver.info() == Eigen::Success && step.allFinite();
      if (usable && small(step)) {
        out.converged = true;
        break;
      }
      if (usable) {
        const Eigen::VectorXd trial = x + step;
        const Eigen::VectorXd r_trial = residual(trial);
        const double c_trial = r_trial.squaredNorm();
        if (std::isfinite(c_trial) && c_trial < cost) {
          x = trial;
          r = r_trial;
          cost = c_trial;
          mu = std::max(mu * cfg.damping_down, 1e-300);
          ++out.accepted_steps;
          out.cost_history.push_back(std::sqrt(cost));
          accepted = true;
          if (small(step)) out.converged = true;
          continue;
        }
      }
      mu *= cfg.damping_up;
      if (mu > kMaxDamping) break;
    }
    if (!accepted) break;
  }
  out.params = x;
  out.residual_norm = std::sqrt(cost);
  return out;
}

Eigen::VectorXd molli_model(const Eigen::VectorXd& p, std::span<const double> times) {
  Eigen::VectorXd s(static_cast<Eigen::Index>(times.size()));
  for (std::size_t i = 0; i < times.size(); ++i) s(static_cast<Eigen::Index>(i)) = p(0) - p(1) * std::exp(-times[i] / p(2));
  return s;
}

Eigen::MatrixXd molli_jacobian(const Eigen::VectorXd& p, std::span<const double> times) {
  Eigen::MatrixXd j(static_cast<Eigen::Index>(times.size()), 3);
  for (std::size_t i = 0; i < times.size(); ++i) {
    const double e = std::exp(-times[i] / p(2));
    const auto k = static_cast<Eigen::Index>(i);
    j(k, 0) = 1.0;
    j(k, 1) = -e;
    j(k, 2) = -p(1) * e * times[i] / (p(2) * p(2));
  }
  return j;
}

Eigen::VectorXd t2_model(const Eigen::VectorXd& p, std::span<const double> times) {
  Eigen::VectorXd s(static_cast<Eigen::Index>(times.size()));
  for (std::size_t i = 0; i < times.size(); ++i) s(static_cast<Eigen::Index>(i)) = p(0) * std::exp(-times[i] / p(1));
  return s;
}

Eigen::MatrixXd t2_jacobian(const Eigen::VectorXd& p, std::span<const double> times) {
  Eigen::MatrixXd j(static_cast<Eigen::Index>(times.size()), 2);
  for (std::size_t i = 0; i < times.size(); ++i) {
    const double e = std::exp(-times[i] / p(1));
    const auto k = static_cast<Eigen::Index>(i);
    j(k, 0) = e;
    j(k, 1) = p(0) * e * times[i] / (p(1) * p(1));
  }
  return j;
}

namespace {

Eigen::VectorXd as_vector(std::span<const double> v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

void check_times(std::span<const double> signal, std::span<const double> times, std::size_t min_points, const char* who) {
  if (signal.size() != times.size()) throw std::invalid_argument(std::string(who) + ": signal/time length mismatch");
  if (times.size() < min_points) {
    throw std::invalid_argument(std::string(who) + ": needs at least " + std::to_string(min_points) + " time points");
  }
  for (std::size_t i = 1; i < times.size(); ++i)
    if (!(times[i] > times[i - 1])) throw std::invalid_argument(std::string(who) + ": times must be increasing");
}

}  // namespace

PixelFit fit_t1_pixel(std::span<const double> signal, std::span<const double> times, const FitConfig& cfg) {
  check_times(signal, times, 3, "fit_t1_pixel");
  PixelFit best;
  // Fit on peak-normalized data so the fixed damping sees the same problem at any
  // signal scale; amplitudes and the residual are scaled back afterwards.
  Eigen::VectorXd data = as_vector(signal);
  const double peak = data.cwiseAbs().maxCoeff();
  if (!(peak > 0.0)) return best;
  data /= peak;

  std::vector<double> sorted(times.begin(), times.end());
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<long>(sorted.size() / 2), sorted.end());
  Eigen::VectorXd x0(3);
  x0 << 1.0, 2.0, sorted[sorted.size() / 2];

  // Candidate j negates the first j samples; j = 0 keeps the data as given.
  const std::size_t candidates = cfg.magnitude_fit && cfg.polarity_restoration ? times.size() + 1 : 1;
  double best_norm = std::numeric_limits<double>::infinity();
  for (std::size_t flip = 0; flip < candidates; ++flip) {
    Eigen::VectorXd y = data;
    for (std::size_t i = 0; i < flip; ++i) y(static_cast<Eigen::Index>(i)) = -y(static_cast<Eigen::Index>(i));
    auto res = lm_fit([&](const Eigen::VectorXd& p) { return Eigen::VectorXd(molli_model(p, times) - y); },
                      [&](const Eigen::VectorXd& p) { return molli_jacobian(p, times); }, x0, cfg);
    if (!(res.residual_norm < best_norm)) continue;
    best_norm = res.residual_norm;
    best.params = res.params;
    best.residual_norm = res.residual_norm;
    best.converged = res.converged;
  }
  best.fitted = true;
  best.params(0) *= peak;
  best.params(1) *= peak;
  best.residual_norm *= peak;
  const double a = best.params(0), b = best.params(1), t1_star = best.params(2);
  const double t1 = t1_star * (b / a - 1.0);
  if (std::isfinite(t1) && t1 > 0.0 && t1_star > 0.0) {
    best.value = t1;
  } else {
    best.value = 0.0;
    best.converged = false;
  }
  return best;
}

PixelFit fit_t2_pixel(std::span<const double> signal, std::span<const double> times, const FitConfig& cfg) {
  check_times(signal, times, 2, "fit_t2_pixel");
  PixelFit out;
  double peak = 0.0;
  for (double v : signal) peak = std::max(peak, std::abs(v));
  if (!(peak > 0.0)) return out;
  const Eigen::VectorXd y = as_vector(signal) / peak;
  // Log-linear least squares over the positive samples.
  double st = 0, sl = 0, stt = 0, stl = 0;
  int n = 0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (!(y(static_cast<Eigen::Index>(i)) > 0.0)) continue;
    const double l = std::log(y(static_cast<Eigen::Index>(i)));
    st += times[i];
    sl += l;
    stt += times[i] * times[i];
    stl += times[i] * l;
    ++n;
  }
  if (n < 2) return out;
  const double denom = n * stt - st * st;
  const double slope = denom != 0.0 ? (n * stl - st * sl) / denom : 0.0;
  const double intercept = (sl - slope * st) / n;
  Eigen::VectorXd x0(2);
  x0 << std::exp(intercept), slope < 0.0 ? -1.0 / slope : 1e4;

  auto res = lm_fit([&](const Eigen::VectorXd& p) { return Eigen::VectorXd(t2_model(p, times) - y); },
                    [&](const Eigen::VectorXd& p) { return t2_jacobian(p, times); }, x0, cfg);
  out.fitted = true;
  out.params = res.params;
  out.params(0) *= peak;
  out.residual_norm = res.residual_norm * peak;
  out.converged = res.converged;
  if (std::isfinite(res.params(1)) && res.params(1) > 0.0) {
    out.value = res.params(1);
  } else {
    out.converged = false;
  }
  return out;
}

namespace {

using PixelFitter = PixelFit (*)(std::span<const double>, std::span<const double>, const FitConfig&);

ParamMap fit_map(const Tensor& frames, std::span<const double> times, const FitConfig& cfg, PixelFitter fitter,
                 bool molli) {
  cfg.validate();
  if (frames.ndim() != 4 || frames.dim(3) != 2) {
    throw std::invalid_argument("fit: frames must be [T,H,W,2], got " + shape_str(frames.shape()));
  }
  const auto nt = frames.dim(0), h = frames.dim(1), w = frames.dim(2);
  if (static_cast<std::size_t>(nt) != times.size()) throw std::invalid_argument("fit: frame count differs from time count");
  const auto px = static_cast<std::size_t>(h * w);
  const auto v = frames.values();
  auto sample = [&](std::int64_t t, std::size_t p) {
    const auto o = (static_cast<std::size_t>(t) * px + p) * 2;
    return std::complex<double>(v[o], v[o + 1]);
  };

  double image_max = 0.0;
  for (std::int64_t t = 0; t < nt; ++t)
    for (std::size_t p = 0; p < px; ++p) image_max = std::max(image_max, std::abs(sample(t, p)));

  std::vector<double> value(px, 0.0), resid(px, 0.0), pa(px, 0.0), pb(px, 0.0), pts(px, 0.0);
  std::vector<std::uint8_t> converged(px, 0), fitted(px, 0);

  auto work = [&](std::size_t begin, std::size_t end) {
    std::vector<double> s(static_cast<std::size_t>(nt));
    for (std::size_t p = begin; p < end; ++p) {
      double mean_mag = 0.0;
      std::size_t strongest = 0;
      for (std::int64_t t = 0; t < nt; ++t) {
        const double m = std::abs(sample(t, p));
        mean_mag += m / static_cast<double>(nt);
        if (m > std::abs(sample(static_cast<std::int64_t>(strongest), p))) strongest = static_cast<std::size_t>(t);
      }
      if (!(mean_mag > cfg.nonfit_threshold * image_max) || mean_mag == 0.0) continue;
      const auto ref = sample(static_cast<std::int64_t>(strongest), p);
      const auto rot = std::conj(ref) / std::abs(ref);
      for (std::int64_t t = 0; t < nt; ++t) {
        const auto z = sample(t, p);
        s[static_cast<std::size_t>(t)] = cfg.magnitude_fit ? std::abs(z) : (z * rot).real();
      }
      const PixelFit f = fitter(s, times, cfg);
      fitted[p] = f.fitted;
      converged[p] = f.converged;
      value[p] = f.converged ? f.value : 0.0;
      resid[p] = f.residual_norm;
      if (molli && f.fitted) {
        pa[p] = f.params(0);
        pb[p] = f.params(1);
        pts[p] = f.params(2);
      }
    }
  };

  const auto nthreads = static_cast<std::size_t>(std::max(1, std::min<int>(cfg.threads, static_cast<int>(px))));
  if (nthreads == 1) {
    work(0, px);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (px + nthreads - 1) / nthreads;
    for (std::size_t k = 0; k < nthreads; ++k) pool.emplace_back(work, k * chunk, std::min(px, (k + 1) * chunk));
    for (auto& th : pool) th.join();
  }

  ParamMap out;
  out.value = Tensor({h, w}, std::move(value));
  out.residual_norm = Tensor({h, w}, std::move(resid));
  out.converged = std::move(converged);
  out.fitted = std::move(fitted);
  if (molli) {
    out.a = Tensor({h, w}, std::move(pa));
    out.b = Tensor({h, w}, std::move(pb));
    out.t1_star = Tensor({h, w}, std::move(pts));
  }
  return out;
}

}  // namespace

ParamMap fit_t1_molli(const Tensor& frames, std::span<const double> times, const FitConfig& cfg) {
  return fit_map(frames, times, cfg, &fit_t1_pixel, true);
}

ParamMap fit_t2(const Tensor& frames, std::span<const double> times, const FitConfig& cfg) {
  return fit_map(frames, times, cfg, &fit_t2_pixel, false);
}

}  // namespace qmri
