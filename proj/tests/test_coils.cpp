#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "dense_oracle.hpp"
#include "qmri/coils.hpp"
#include "qmri/grad_check.hpp"
#include "qmri/phantom.hpp"

using namespace qmri;
using cd = std::complex<double>;

namespace {

double norm2(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v * v;
  return std::sqrt(s);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.values().size(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

Tensor unit_coil(std::int64_t h, std::int64_t w) {
  std::vector<double> v(static_cast<std::size_t>(h * w * 2), 0.0);
  for (std::size_t i = 0; i < v.size(); i += 2) v[i] = 1.0;
  return Tensor({1, h, w, 2}, v);
}

Tensor full_kspace(const Tensor& frames, const Tensor& csm) { return fft2c(coil_expand(frames, csm)); }

KSpaceData sampled(const Tensor& frames, const Tensor& csm, MaskSpec spec) {
  return undersample(full_kspace(frames, csm), spec);
}

// Max over support of | sum_w |C_w|^2 - 1 |.
double sos_error(const CsmStack& s) {
  const auto nc = s.maps.dim(0);
  const auto px = s.support.size();
  double worst = 0.0;
  for (std::size_t p = 0; p < px; ++p) {
    if (!s.support[p]) continue;
    double sos = 0.0;
    for (std::int64_t c = 0; c < nc; ++c) {
      const auto o = (static_cast<std::size_t>(c) * px + p) * 2;
      sos += s.maps.values()[o] * s.maps.values()[o] + s.maps.values()[o + 1] * s.maps.values()[o + 1];
    }
    worst = std::max(worst, std::abs(sos - 1.0));
  }
  return worst;
}

}  // namespace

TEST_CASE("coil_combine_conj matches direct summation") {
  std::mt19937_64 rng(1);
  Tensor x = randn({3, 1, 4, 4, 2}, rng);
  Tensor c = randn({3, 4, 4, 2}, rng);
  Tensor out = coil_combine_conj(x, c);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      cd want = 0.0;
      for (int w = 0; w < 3; ++w)
        want += std::conj(cd(c.at({w, i, j, 0}), c.at({w, i, j, 1}))) * cd(x.at({w, 0, i, j, 0}), x.at({w, 0, i, j, 1}));
      CHECK(out.at({0, i, j, 0}) == want.real());
      CHECK(out.at({0, i, j, 1}) == want.imag());
    }
}

TEST_CASE("coil_combine_conj of consistent data returns the image") {
  std::mt19937_64 rng(2);
  Tensor z = randn({2, 6, 5, 2}, rng);
  Tensor csm = simulate_coils(4, 6, 5, 3);
  CHECK(max_abs_diff(coil_combine_conj(coil_expand(z, csm), csm), z) < 1e-12);
  Tensor one = unit_coil(6, 5);
  CHECK(max_abs_diff(coil_combine_conj(coil_expand(z, one), one), z) == 0.0);
}

TEST_CASE("normalize_coils: unit sum of squares on support, zero elsewhere, differentiable") {
  std::mt19937_64 rng(3);
  Tensor c = randn({3, 4, 5, 2}, rng);
  std::vector<std::uint8_t> support(20, 1);
  support[0] = support[7] = 0;
  CsmStack s{normalize_coils(c, support), support};
  CHECK(sos_error(s) < 1e-14);
  for (int w = 0; w < 3; ++w) CHECK(s.maps.at({w, 1, 2, 1}) == 0.0);
  Tensor probe = randn({3, 4, 5, 2}, rng);
  CHECK(grad_check([&](const Tensor& t) { return dot(normalize_coils(t, support), probe); }, c, 1e-6) < 1e-6);
}

TEST_CASE("estimate_csm: single constant coil gives unit maps") {
  auto maps = generate_phantom(cardiac_phantom(32, 32));
  auto frames = simulate_frames(maps, SequenceSpec::t2prep());
  auto est = estimate_csm(full_kspace(frames.frames, unit_coil(32, 32)), 24);
  double worst = 0.0;
  for (std::size_t p = 0; p < est.support.size(); ++p) {
    if (!est.support[p]) continue;
    const auto v = est.maps.values();
    worst = std::max(worst, std::abs(std::hypot(v[2 * p], v[2 * p + 1]) - 1.0));
  }
  CHECK(worst < 1e-6);
  // Global phase is fixed at the image center.
  CHECK(std::abs(est.maps.at({0, 16, 16, 1})) < 1e-12);
  CHECK(est.maps.at({0, 16, 16, 0}) == doctest::Approx(1.0));
}

TEST_CASE("estimate_csm recovers simulated 4-coil maps") {
  auto maps = generate_phantom(cardiac_phantom(64, 64));
  auto frames = simulate_frames(maps, SequenceSpec::t2prep(), PhaseSpec::none());
  Tensor truth = simulate_coils(4, 64, 64, 11);
  auto est = estimate_csm(full_kspace(frames.frames, truth), 64);
  CHECK(sos_error(est) < 1e-6);

  // Compare up to one global phase, on the estimated support.
  const auto a = oracle::to_complex(est.maps), b = oracle::to_complex(truth);
  const std::size_t px = 64 * 64;
  cd corr = 0.0;
  double norm_b = 0.0;
  for (int c = 0; c < 4; ++c)
    for (std::size_t p = 0; p < px; ++p) {
      if (!est.support[p]) continue;
      const auto i = static_cast<Eigen::Index>(c * px + p);
      corr += std::conj(a(i)) * b(i);
      norm_b += std::norm(b(i));
    }
  const cd rot = corr / std::abs(corr);
  double err = 0.0;
  for (int c = 0; c < 4; ++c)
    for (std::size_t p = 0; p < px; ++p) {
      if (!est.support[p]) continue;
      const auto i = static_cast<Eigen::Index>(c * px + p);
      err += std::norm(a(i) * rot - b(i));
    }
  const double nrmse = std::sqrt(err / norm_b);
  MESSAGE("csm nrmse " << nrmse);
  CHECK(nrmse < 0.05);

  // Default 24-line calibration on the undersampled grid also normalizes.
  auto low = estimate_csm(sampled(frames.frames, truth, {64, 4, 1, 24}).data, 24);
  CHECK(sos_error(low) < 1e-6);
}

TEST_CASE("estimate_csm rejects empty calibration") {
  CHECK_THROWS_AS(estimate_csm(Tensor::zeros({2, 1, 8, 8, 2}), 4), std::invalid_argument);
  CHECK_THROWS_AS(estimate_csm(Tensor::zeros({2, 8, 8, 2}), 4), std::invalid_argument);
}

TEST_CASE("cg_sense: full mask, single unit coil, lambda 0 inverts the FFT") {
  std::mt19937_64 rng(4);
  Tensor y = randn({1, 2, 8, 6, 2}, rng);
  KSpaceData d;
  d.data = y;
  d.mask = make_mask({8, 1, 0, 0});
  auto res = cg_sense(d, unit_coil(8, 6), {0.0, 10, 1e-12});
  CHECK(max_abs_diff(res.x, reshape(ifft2c(y), {2, 8, 6, 2})) < 1e-10);
}

TEST_CASE("cg_sense: huge lambda returns the prior") {
  std::mt19937_64 rng(5);
  Tensor x = randn({1, 8, 8, 2}, rng);
  Tensor csm = simulate_coils(3, 8, 8, 1);
  Tensor prior = randn({1, 8, 8, 2}, rng);
  auto d = sampled(x, csm, {8, 2, 0, 2});
  auto res = cg_sense(d, csm, {1e8, 10, 1e-6}, prior);
  CHECK(norm2(sub(res.x, prior)) / norm2(prior) < 1e-6);
}

TEST_CASE("cg_sense matches a dense direct solve") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const int h = 8, w = 8;
    Tensor csm = randn({3, h, w, 2}, rng);
    Tensor prior = randn({1, h, w, 2}, rng);
    KSpaceData d;
    d.mask = make_mask(random_mask({h, 2, 0, 2}, seed));
    d.data = apply_mask(randn({3, 1, h, w, 2}, rng), d.mask);
    const double lambda = 0.05;
    auto cr = cg_sense(d, csm, {lambda, 500, 1e-14}, prior);
    auto cg = cg_sense(d, csm, {lambda, 500, 1e-14, CgVariant::conjugate_gradient}, prior);

    const Eigen::MatrixXcd e = oracle::dense_encoding(csm, d.mask, h, w);
    const Eigen::MatrixXcd a = e.adjoint() * e + lambda * Eigen::MatrixXcd::Identity(h * w, h * w);
    const Eigen::VectorXcd rhs = e.adjoint() * oracle::to_complex(d.data) + lambda * oracle::to_complex(prior);
    const Eigen::VectorXcd want = a.partialPivLu().solve(rhs);
    CHECK((oracle::to_complex(cr.x) - want).norm() / want.norm() < 1e-8);
    CHECK((oracle::to_complex(cg.x) - want).norm() / want.norm() < 1e-8);
  }
}

TEST_CASE("cg_sense: optimality, residual history and data consistency") {
  auto maps = generate_phantom(cardiac_phantom(32, 32));
  auto frames = simulate_frames(maps, SequenceSpec::molli());
  Tensor csm = simulate_coils(6, 32, 32, 2);
  auto d = sampled(frames.frames, csm, {32, 3, 1, 8});
  std::mt19937_64 rng(6);
  Tensor prior = add(frames.frames, randn(frames.frames.shape(), rng, 0.05));

  const CgConfig cfg{0.05, 100, 1e-6};
  auto res = cg_sense(d, csm, cfg, prior);
  CHECK(res.converged);
  CHECK(res.residuals.size() == static_cast<std::size_t>(res.iterations) + 1);
  for (std::size_t i = 1; i < res.residuals.size(); ++i) CHECK(res.residuals[i] <= res.residuals[i - 1]);

  Tensor grad = add(encode_adjoint(sub(encode(res.x, csm, d.mask), d.data), csm, d.mask),
                    scale(sub(res.x, prior), cfg.lambda));
  CHECK(norm2(grad) / norm2(encode_adjoint(d.data, csm, d.mask)) < 10 * cfg.tol);

  // lambda = 0 with data that some image explains exactly.
  auto dc = cg_sense(d, csm, {0.0, 200, 1e-10});
  Tensor resid = sub(encode(dc.x, csm, d.mask), d.data);
  CHECK(norm2(resid) / norm2(d.data) < 1e-6);
}

TEST_CASE("cg_sense: argument validation and non-convergence flag") {
  std::mt19937_64 rng(7);
  Tensor csm = simulate_coils(2, 8, 8, 0);
  auto d = sampled(randn({1, 8, 8, 2}, rng), csm, {8, 4, 0, 2});
  CHECK_THROWS_AS(cg_sense(d, csm, {0.05, 10, 1e-6}), std::invalid_argument);
  CHECK_THROWS_AS(cg_sense(d, csm, {0.0, 0, 1e-6}), std::invalid_argument);
  KSpaceData bad = d;
  auto v = d.data.to_vector();
  v[3] = std::nan("");
  bad.data = Tensor(d.data.shape(), v);
  CHECK_THROWS_AS(cg_sense(bad, csm, {0.0, 10, 1e-6}), std::invalid_argument);

  auto res = cg_sense(d, csm, {0.0, 1, 1e-14});
  CHECK_FALSE(res.converged);
  CHECK(res.iterations == 1);
}

TEST_CASE("cg_sense is differentiable through the unrolled iterations") {
  std::mt19937_64 rng(8);
  Tensor csm = simulate_coils(2, 4, 4, 0);
  Tensor x = randn({1, 4, 4, 2}, rng);
  auto d = sampled(x, csm, {4, 2, 0, 2});
  Tensor prior = randn({1, 4, 4, 2}, rng);
  Tensor probe = randn({1, 4, 4, 2}, rng);
  auto f_prior = [&](const Tensor& p) { return dot(cg_sense(d, csm, {0.1, 4, 1e-12}, p).x, probe); };
  CHECK(grad_check(f_prior, prior, 1e-6) < 1e-5);
  std::vector<std::uint8_t> support(16, 1);
  auto f_csm = [&](const Tensor& c) {
    return dot(cg_sense(d, normalize_coils(c, support), {0.1, 4, 1e-12}, prior).x, probe);
  };
  CHECK(grad_check(f_csm, csm, 1e-6) < 1e-5);
}
