#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>

#include "qmri/grad_check.hpp"
#include "qmri/network.hpp"
#include "qmri/phantom.hpp"

using namespace qmri;
namespace fs = std::filesystem;

namespace {

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.values().size(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

// Reference LT block written with plain loops: per pixel, per head.
std::vector<double> naive_lt(const Tensor& x, const ParamStore& p, const std::string& prefix, const LTConfig& cfg) {
  const auto T = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto d = C / cfg.heads;
  std::vector<double> out(x.values().begin(), x.values().end());
  auto at = [&](std::int64_t t, std::int64_t c, std::int64_t i, std::int64_t j) -> double& {
    return out[static_cast<std::size_t>(((t * C + c) * H + i) * W + j)];
  };
  for (std::int64_t i = 0; i < H; ++i)
    for (std::int64_t j = 0; j < W; ++j)
      for (int l = 0; l < cfg.layers_per_block; ++l) {
        const std::string n = prefix + "layer" + std::to_string(l) + ".";
        std::vector<std::vector<double>> z(T, std::vector<double>(C));
        for (std::int64_t t = 0; t < T; ++t) {
          for (std::int64_t c = 0; c < C; ++c) z[t][c] = at(t, c, i, j) + (cfg.positional_embedding ? p.get(prefix + "pos").at({t, c}) : 0.0);
          if (cfg.pre_norm) {
            double mu = 0, var = 0;
            for (auto v : z[t]) mu += v;
            mu /= C;
            for (auto v : z[t]) var += (v - mu) * (v - mu);
            var /= C;
            for (std::int64_t c = 0; c < C; ++c)
              z[t][c] = (z[t][c] - mu) / std::sqrt(var + 1e-5) * p.get(n + "ln.g").at({c}) + p.get(n + "ln.b").at({c});
          }
        }
        auto proj = [&](const std::string& m, std::int64_t t, std::int64_t c) {
          double s = 0;
          for (std::int64_t k = 0; k < C; ++k) s += z[t][k] * p.get(n + m).at({k, c});
          return s;
        };
        std::vector<std::vector<double>> o(T, std::vector<double>(C, 0.0));
        for (int h = 0; h < cfg.heads; ++h)
          for (std::int64_t t = 0; t < T; ++t) {
            std::vector<double> s(T);
            double mx = -1e300;
            for (std::int64_t u = 0; u < T; ++u) {
              s[u] = 0;
              for (std::int64_t e = h * d; e < (h + 1) * d; ++e) s[u] += proj("wq", t, e) * proj("wk", u, e);
              s[u] /= std::sqrt(double(d));
              mx = std::max(mx, s[u]);
            }
            double zsum = 0;
            for (auto& v : s) zsum += (v = std::exp(v - mx));
            for (std::int64_t e = h * d; e < (h + 1) * d; ++e)
              for (std::int64_t u = 0; u < T; ++u) o[t][e] += s[u] / zsum * proj("wv", u, e);
          }
        for (std::int64_t t = 0; t < T; ++t)
          for (std::int64_t c = 0; c < C; ++c) {
            double s = 0;
            for (std::int64_t k = 0; k < C; ++k) s += o[t][k] * p.get(n + "wo").at({k, c});
            at(t, c, i, j) += s;
          }
      }
  return out;
}

Tensor permute_frames(const Tensor& x, const std::vector<std::int64_t>& order) {
  std::vector<Tensor> parts;
  for (auto t : order) parts.push_back(slice(x, 0, t, 1));
  return concat(parts, 0);
}

std::vector<std::uint8_t> bytes_of(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("lt block is the identity at initialization") {
  std::mt19937_64 rng(1);
  const Tensor x = randn({5, 8, 3, 4}, rng);
  LTConfig cfg;
  ParamStore p;
  init_lt_block(p, "b.", 8, cfg, 3);
  CHECK(max_abs_diff(lt_block_forward(x, p, "b.", cfg), x) == 0.0);
}

TEST_CASE("lt block matches a loop implementation") {
  std::mt19937_64 rng(2);
  const Tensor x = randn({4, 8, 2, 3}, rng);
  for (bool pos : {false, true})
    for (bool norm : {false, true}) {
      LTConfig cfg;
      cfg.zero_init_out = false;
      cfg.positional_embedding = pos;
      cfg.pre_norm = norm;
      cfg.max_frames = 6;
      ParamStore p;
      init_lt_block(p, "b.", 8, cfg, 5);
      const auto ref = naive_lt(x, p, "b.", cfg);
      const Tensor got = lt_block_forward(x, p, "b.", cfg);
      CHECK(max_abs_diff(got, Tensor(x.shape(), ref)) < 1e-12);
    }
}

TEST_CASE("scalar attention worked by hand") {
  // T=2, C=1, one head, q=0.5x, k=x, v=2x, out weight 1, x=(1, 2):
  // frame 0 logits (0.5, 1), frame 1 logits (1, 2), values (2, 4).
  LTConfig cfg;
  cfg.heads = 1;
  cfg.layers_per_block = 1;
  cfg.pre_norm = false;
  ParamStore p;
  p.add("layer0.wq", Tensor({1, 1}, {0.5}));
  p.add("layer0.wk", Tensor({1, 1}, {1.0}));
  p.add("layer0.wv", Tensor({1, 1}, {2.0}));
  p.add("layer0.wo", Tensor({1, 1}, {1.0}));
  const Tensor y = lt_block_forward(Tensor({2, 1, 1, 1}, {1.0, 2.0}), p, "", cfg);
  const double a0 = 1.0 / (1.0 + std::exp(0.5));  // softmax weight on frame 0 for query 0
  const double a1 = 1.0 / (1.0 + std::exp(1.0));
  CHECK(y.values()[0] == doctest::Approx(1.0 + 2.0 * a0 + 4.0 * (1 - a0)).epsilon(1e-14));
  CHECK(y.values()[1] == doctest::Approx(2.0 + 2.0 * a1 + 4.0 * (1 - a1)).epsilon(1e-14));
  CHECK(y.values()[0] == doctest::Approx(4.2449186624).epsilon(1e-9));
  CHECK(y.values()[1] == doctest::Approx(5.4621171573).epsilon(1e-9));
}

TEST_CASE("identical frames give identical outputs") {
  std::mt19937_64 rng(3);
  const Tensor one = randn({1, 8, 2, 2}, rng);
  const Tensor x = concat({one, one, one}, 0);
  LTConfig cfg;
  cfg.zero_init_out = false;
  ParamStore p;
  init_lt_block(p, "", 8, cfg, 9);
  const Tensor y = lt_block_forward(x, p, "", cfg);
  CHECK(max_abs_diff(slice(y, 0, 0, 1), slice(y, 0, 1, 1)) == 0.0);
  CHECK(max_abs_diff(slice(y, 0, 0, 1), slice(y, 0, 2, 1)) == 0.0);
}

TEST_CASE("lt validation") {
  LTConfig cfg;
  cfg.heads = 3;
  ParamStore p;
  CHECK_THROWS_AS(init_lt_block(p, "", 8, cfg, 0), std::invalid_argument);
  cfg.heads = 2;
  init_lt_block(p, "", 8, cfg, 0);
  cfg.heads = 3;
  CHECK_THROWS_AS(lt_block_forward(Tensor::zeros({2, 8, 1, 1}), p, "", cfg), std::invalid_argument);
}

TEST_CASE("unet shapes and identity at initialization") {
  std::mt19937_64 rng(4);
  const Tensor x = randn({9, 2, 32, 32}, rng);
  const UNetConfig u;
  const LTConfig l;
  const ParamStore p = init_unet(u, l, true, 1);
  const Tensor y = unet_forward(x, p, u, l, true);
  CHECK(y.shape() == x.shape());
  CHECK(max_abs_diff(y, x) == 0.0);
  CHECK_THROWS_AS(unet_forward(randn({2, 2, 30, 32}, rng), p, u, l, true), std::invalid_argument);
  CHECK_THROWS_AS(unet_forward(randn({2, 3, 32, 32}, rng), p, u, l, true), std::invalid_argument);
}

TEST_CASE("zero-initialized lt equals the lt-free network exactly") {
  std::mt19937_64 rng(5);
  const Tensor x = randn({4, 2, 16, 16}, rng);
  UNetConfig u;
  u.zero_init_out = false;
  const LTConfig l;
  const ParamStore with = init_unet(u, l, true, 7);
  const ParamStore without = init_unet(u, l, false, 7);
  CHECK(with.size() > without.size());
  const Tensor a = unet_forward(x, with, u, l, true);
  const Tensor b = unet_forward(x, without, u, l, false);
  CHECK(max_abs_diff(a, x) > 0.0);
  CHECK(max_abs_diff(a, b) == 0.0);
}

TEST_CASE("frame permutation equivariance") {
  std::mt19937_64 rng(6);
  const Tensor x = randn({5, 2, 8, 8}, rng);
  UNetConfig u;
  u.zero_init_out = false;
  LTConfig l;
  l.zero_init_out = false;
  const ParamStore p = init_unet(u, l, true, 8);
  const std::vector<std::int64_t> order = {3, 0, 4, 1, 2};
  const Tensor a = permute_frames(unet_forward(x, p, u, l, true), order);
  const Tensor b = unet_forward(permute_frames(x, order), p, u, l, true);
  CHECK(max_abs_diff(a, b) < 1e-10);
}

TEST_CASE("frames are independent without lt and coupled with it") {
  std::mt19937_64 rng(7);
  const Tensor x = randn({3, 2, 8, 8}, rng);
  std::vector<double> v = x.to_vector();
  for (std::size_t i = 0; i < 128; ++i) v[i] += 0.5;  // frame 0 only
  const Tensor x2(x.shape(), v);
  UNetConfig u;
  u.zero_init_out = false;
  LTConfig l;
  l.zero_init_out = false;
  const ParamStore p = init_unet(u, l, true, 9);
  const ParamStore q = init_unet(u, l, false, 9);
  const Tensor a = unet_forward(x, q, u, l, false), b = unet_forward(x2, q, u, l, false);
  CHECK(max_abs_diff(slice(a, 0, 1, 2), slice(b, 0, 1, 2)) == 0.0);
  CHECK(max_abs_diff(slice(a, 0, 0, 1), slice(b, 0, 0, 1)) > 0.0);
  const Tensor c = unet_forward(x, p, u, l, true), d = unet_forward(x2, p, u, l, true);
  CHECK(max_abs_diff(slice(c, 0, 1, 2), slice(d, 0, 1, 2)) > 0.0);
}

TEST_CASE("gradients of the lt block") {
  std::mt19937_64 rng(8);
  const Tensor x = randn({3, 8, 2, 2}, rng);
  const Tensor r = randn({3, 8, 2, 2}, rng);
  LTConfig cfg;
  cfg.zero_init_out = false;
  ParamStore p;
  init_lt_block(p, "", 8, cfg, 11);
  CHECK(grad_check([&](const Tensor& z) { return sum(lt_block_forward(z, p, "", cfg) * r); }, x, 1e-5) < 1e-5);
  for (const std::string name : {"layer0.wq", "layer1.wv", "layer1.wo", "layer0.ln.g"}) {
    CAPTURE(name);
    const double err = grad_check(
        [&](const Tensor& w) {
          ParamStore q = p;
          q.set(name, w);
          return sum(lt_block_forward(x, q, "", cfg) * r);
        },
        p.get(name), 1e-5);
    CHECK(err < 1e-5);
  }
}

TEST_CASE("gradients of the full network") {
  std::mt19937_64 rng(9);
  const Tensor x = randn({3, 2, 8, 8}, rng);
  const Tensor r = randn({3, 2, 8, 8}, rng);
  UNetConfig u;
  u.zero_init_out = false;
  LTConfig l;
  l.zero_init_out = false;
  const ParamStore p = init_unet(u, l, true, 12);
  auto loss = [&](const Tensor& in, const ParamStore& q) { return sum(unet_forward(in, q, u, l, true) * r); };
  CHECK(grad_check([&](const Tensor& z) { return loss(z, p); }, x, 1e-4) < 1e-5);
  for (const std::string name : {"enc0.conv0.w", "lt0.layer0.wk", "lt2.layer1.wo", "dec1.conv0.w", "out.b"}) {
    CAPTURE(name);
    const double err = grad_check(
        [&](const Tensor& w) {
          ParamStore q = p;
          q.set(name, w);
          return loss(x, q);
        },
        p.get(name), 1e-4);
    CHECK(err < 1e-5);
  }
}

TEST_CASE("csm refiner: warm start, normalization, gradients") {
  auto coils = simulate_coils(3, 8, 8, 4);
  std::vector<std::uint8_t> support(64, 1);
  support[0] = support[9] = 0;
  CsmRefinerConfig cfg;
  const ParamStore p0 = init_csm_refiner(cfg, 2);
  CHECK(p0.size() == 10);
  const Tensor same = csm_refine(coils, std::vector<std::uint8_t>(64, 1), p0, cfg);
  CHECK(max_abs_diff(same, coils) < 1e-15);

  cfg.zero_init_out = false;
  const ParamStore p = init_csm_refiner(cfg, 3);
  const Tensor refined = csm_refine(coils, support, p, cfg);
  CHECK(max_abs_diff(refined, coils) > 1e-3);
  for (std::int64_t px = 0; px < 64; ++px) {
    double ss = 0;
    for (std::int64_t c = 0; c < 3; ++c)
      for (int k = 0; k < 2; ++k) ss += std::pow(refined.at({c, px / 8, px % 8, k}), 2);
    CHECK(std::abs(ss - (support[static_cast<std::size_t>(px)] ? 1.0 : 0.0)) < 1e-6);
  }

  std::mt19937_64 rng(10);
  const Tensor r = randn(coils.shape(), rng);
  CHECK(grad_check([&](const Tensor& c) { return sum(csm_refine(c, support, p, cfg) * r); }, coils, 1e-4) < 1e-5);
  for (const std::string name : {"conv0.w", "conv2.b", "conv4.w"}) {
    CAPTURE(name);
    const double err = grad_check(
        [&](const Tensor& w) {
          ParamStore q = p;
          q.set(name, w);
          return sum(csm_refine(coils, support, q, cfg) * r);
        },
        p.get(name), 1e-4);
    CHECK(err < 1e-5);
  }
}

TEST_CASE("initialization is deterministic and name-keyed") {
  const UNetConfig u;
  LTConfig l;
  CHECK(init_unet(u, l, true, 5).equal_values(init_unet(u, l, true, 5)));
  CHECK_FALSE(init_unet(u, l, true, 5).equal_values(init_unet(u, l, true, 6)));
  const auto a = init_unet(u, l, true, 5), b = init_unet(u, l, false, 5);
  for (const auto& n : b.names()) CHECK(max_abs_diff(a.get(n), b.get(n)) == 0.0);
}

TEST_CASE("checkpoint round trip is bit exact") {
  const auto dir = fs::temp_directory_path() / "qmri_test_network";
  fs::create_directories(dir);
  UNetConfig u;
  u.zero_init_out = false;
  LTConfig l;
  l.zero_init_out = false;
  const ParamStore p = init_unet(u, l, true, 21);
  const nlohmann::json cfg = {{"unet", to_json(u)}, {"lt", to_json(l)}};
  save_checkpoint(dir / "a.ckpt", p, cfg);
  nlohmann::json back_cfg;
  const ParamStore q = load_checkpoint(dir / "a.ckpt", &back_cfg);
  CHECK(q.equal_values(p));
  CHECK(back_cfg == cfg);
  save_checkpoint(dir / "b.ckpt", q, back_cfg);
  CHECK(bytes_of(dir / "a.ckpt") == bytes_of(dir / "b.ckpt"));
}

TEST_CASE("config json is strict") {
  LTConfig l;
  from_json(nlohmann::json{{"heads", 4}}, l);
  CHECK(l.heads == 4);
  CHECK_THROWS_AS(from_json(nlohmann::json{{"head", 4}}, l), std::invalid_argument);
  UNetConfig u;
  CHECK_THROWS_AS(from_json(nlohmann::json{{"depth", 0}}, u), std::invalid_argument);
  CHECK_THROWS_AS(from_json(nlohmann::json{{"depth", "x"}}, u), std::invalid_argument);
  UNetConfig u2;
  from_json(to_json(u2), u);
  CHECK(u.depth == u2.depth);
}
