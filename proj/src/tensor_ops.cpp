#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "qmri/autograd.hpp"
#include "qmri/tensor.hpp"

namespace qmri {

using detail::make_op;
using detail::require_same_dtype;

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const MatRM>;
using MutMap = Eigen::Map<MatRM>;
using Span = std::span<const double>;
using GradIn = std::span<std::vector<double>*>;

std::size_t usize(std::int64_t v) { return static_cast<std::size_t>(v); }

// Size of the repeated block for a broadcast second operand.
std::size_t broadcast_inner(const Tensor& a, const Tensor& b, const char* op) {
  require_same_dtype(a, b, op);
  if (b.numel() == 1) return 1;
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sb.size() > sa.size() || !std::equal(sb.rbegin(), sb.rend(), sa.rbegin())) {
    throw std::invalid_argument(std::string(op) + ": cannot broadcast " + shape_str(sb) + " onto " +
                                shape_str(sa));
  }
  return usize(b.numel());
}

template <class Fwd, class Bwd>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Bwd bwd) {
  const std::size_t inner = broadcast_inner(a, b, name);
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i], bv[i % inner]);
  return make_op(a.shape(), std::move(out), a.dtype(), {a, b},
                 [a, b, inner, bwd](Span, Span g, GradIn gin) {
                   const auto av = a.values();
                   const auto bv = b.values();
                   for (std::size_t i = 0; i < g.size(); ++i) {
                     double da = 0.0;
                     double db = 0.0;
                     bwd(av[i], bv[i % inner], g[i], da, db);
                     if (gin[0]) (*gin[0])[i] += da;
                     if (gin[1]) (*gin[1])[i % inner] += db;
                   }
                 });
}

template <class Fwd, class Deriv>
Tensor unary_op(const Tensor& a, Fwd fwd, Deriv deriv) {
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  return make_op(a.shape(), std::move(out), a.dtype(), {a}, [a, deriv](Span y, Span g, GradIn gin) {
    const auto av = a.values();
    auto& ga = *gin[0];
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(av[i], y[i]);
  });
}

std::vector<std::int64_t> strides_of(const Shape& s) {
  std::vector<std::int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[usize(i)] = st[usize(i) + 1] * s[usize(i) + 1];
  return st;
}

int normalize_axis(int axis, int ndim, const char* op) {
  const int a = axis < 0 ? axis + ndim : axis;
  if (a < 0 || a >= ndim) throw std::invalid_argument(std::string(op) + ": axis out of range");
  return a;
}

// im2col for one image: col [Cin*K*K, H*W].
void im2col(const double* x, std::int64_t cin, std::int64_t h, std::int64_t w, std::int64_t k,
            double* col) {
  const std::int64_t pad = k / 2;
  for (std::int64_t c = 0; c < cin; ++c) {
    for (std::int64_t ky = 0; ky < k; ++ky) {
      for (std::int64_t kx = 0; kx < k; ++kx) {
        double* row = col + ((c * k + ky) * k + kx) * h * w;
        const double* plane = x + c * h * w;
        for (std::int64_t y = 0; y < h; ++y) {
          const std::int64_t sy = y + ky - pad;
          double* dst = row + y * w;
          if (sy < 0 || sy >= h) {
            std::fill(dst, dst + w, 0.0);
            continue;
          }
          const double* src = plane + sy * w;
          for (std::int64_t xx = 0; xx < w; ++xx) {
            const std::int64_t sx = xx + kx - pad;
            dst[xx] = (sx < 0 || sx >= w) ? 0.0 : src[sx];
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, std::int64_t cin, std::int64_t h, std::int64_t w, std::int64_t k,
                double* x) {
  const std::int64_t pad = k / 2;
  for (std::int64_t c = 0; c < cin; ++c) {
    for (std::int64_t ky = 0; ky < k; ++ky) {
      for (std::int64_t kx = 0; kx < k; ++kx) {
        const double* row = col + ((c * k + ky) * k + kx) * h * w;
        double* plane = x + c * h * w;
        for (std::int64_t y = 0; y < h; ++y) {
          const std::int64_t sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          const double* src = row + y * w;
          double* dst = plane + sy * w;
          for (std::int64_t xx = 0; xx < w; ++xx) {
            const std::int64_t sx = xx + kx - pad;
            if (sx >= 0 && sx < w) dst[sx] += src[xx];
          }
        }
      }
    }
  }
}

}  // namespace

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double g, double& da, double& db) {
        da = g;
        db = g;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double g, double& da, double& db) {
        da = g;
        db = -g;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double x, double y, double g, double& da, double& db) {
        da = g * y;
        db = g * x;
      });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double x, double y, double g, double& da, double& db) {
        da = g / y;
        db = -g * x / (y * y);
      });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor scale(const Tensor& a, double factor) {
  return unary_op(a, [factor](double x) { return factor * x; },
                  [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary_op(a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor exp(const Tensor& a) {
  return unary_op(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary_op(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
  return unary_op(a, [](double x) { return std::sqrt(x); },
                  [](double, double y) { return 0.5 / y; });
}

Tensor square(const Tensor& a) {
  return unary_op(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor relu(const Tensor& a) {
  return unary_op(a, [](double x) { return x > 0.0 ? x : 0.0; },
                  [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

// Subgradient 0 at the kink.
Tensor abs(const Tensor& a) {
  return unary_op(a, [](double x) { return std::abs(x); },
                  [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return make_op(Shape{}, {s}, a.dtype(), {a}, [](Span, Span g, GradIn gin) {
    for (auto& v : *gin[0]) v += g[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw std::invalid_argument("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor dot(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("dot: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  return sum(mul(a, b));
}

// ---- linear algebra --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_same_dtype(a, b, "matmul");
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  }
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(usize(m * n));
  MutMap(out.data(), m, n).noalias() = ConstMap(a.values().data(), m, k) * ConstMap(b.values().data(), k, n);
  return make_op({m, n}, std::move(out), a.dtype(), {a, b}, [a, b, m, k, n](Span, Span g, GradIn gin) {
    ConstMap gm(g.data(), m, n);
    if (gin[0]) MutMap(gin[0]->data(), m, k).noalias() += gm * ConstMap(b.values().data(), k, n).transpose();
    if (gin[1]) MutMap(gin[1]->data(), k, n).noalias() += ConstMap(a.values().data(), m, k).transpose() * gm;
  });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  require_same_dtype(a, b, "bmm");
  if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    throw std::invalid_argument("bmm: incompatible shapes " + shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  }
  const auto nb = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(usize(nb * m * n), 0.0);
  for (std::int64_t p = 0; p < nb; ++p) {
    const double* A = av.data() + p * m * k;
    const double* B = bv.data() + p * k * n;
    double* C = out.data() + p * m * n;
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t q = 0; q < k; ++q) {
        const double aiq = A[i * k + q];
        for (std::int64_t j = 0; j < n; ++j) C[i * n + j] += aiq * B[q * n + j];
      }
  }
  return make_op({nb, m, n}, std::move(out), a.dtype(), {a, b},
                 [a, b, nb, m, k, n](Span, Span g, GradIn gin) {
                   const auto av = a.values();
                   const auto bv = b.values();
                   for (std::int64_t p = 0; p < nb; ++p) {
                     const double* A = av.data() + p * m * k;
                     const double* B = bv.data() + p * k * n;
                     const double* G = g.data() + p * m * n;
                     if (gin[0]) {
                       double* GA = gin[0]->data() + p * m * k;
                       for (std::int64_t i = 0; i < m; ++i)
                         for (std::int64_t q = 0; q < k; ++q) {
                           double acc = 0.0;
                           for (std::int64_t j = 0; j < n; ++j) acc += G[i * n + j] * B[q * n + j];
                           GA[i * k + q] += acc;
                         }
                     }
                     if (gin[1]) {
                       double* GB = gin[1]->data() + p * k * n;
                       for (std::int64_t i = 0; i < m; ++i)
                         for (std::int64_t q = 0; q < k; ++q) {
                           const double aiq = A[i * k + q];
                           for (std::int64_t j = 0; j < n; ++j) GB[q * n + j] += aiq * G[i * n + j];
                         }
                     }
                   }
                 });
}

// ---- shape ops -------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel_of(shape) != a.numel()) {
    throw std::invalid_argument("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  return make_op(std::move(shape), a.to_vector(), a.dtype(), {a}, [](Span, Span g, GradIn gin) {
    auto& ga = *gin[0];
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Tensor permute(const Tensor& a, const std::vector<int>& axes) {
  const int nd = a.ndim();
  if (static_cast<int>(axes.size()) != nd) throw std::invalid_argument("permute: rank mismatch");
  std::vector<bool> seen(usize(nd), false);
  Shape out_shape(usize(nd));
  for (int i = 0; i < nd; ++i) {
    const int ax = axes[usize(i)];
    if (ax < 0 || ax >= nd || seen[usize(ax)]) throw std::invalid_argument("permute: invalid axes");
    seen[usize(ax)] = true;
    out_shape[usize(i)] = a.dim(ax);
  }
  const auto in_strides = strides_of(a.shape());
  // Source offset for each output element, walked with an odometer.
  const auto n = usize(a.numel());
  std::vector<std::size_t> src(n);
  std::vector<std::int64_t> idx(usize(nd), 0);
  std::int64_t off = 0;
  for (std::size_t o = 0; o < n; ++o) {
    src[o] = usize(off);
    for (int d = nd - 1; d >= 0; --d) {
      const auto ax = usize(axes[usize(d)]);
      if (++idx[usize(d)] < out_shape[usize(d)]) {
        off += in_strides[ax];
        break;
      }
      off -= in_strides[ax] * (out_shape[usize(d)] - 1);
      idx[usize(d)] = 0;
    }
  }
  const auto av = a.values();
  std::vector<double> out(n);
  for (std::size_t o = 0; o < n; ++o) out[o] = av[src[o]];
  return make_op(std::move(out_shape), std::move(out), a.dtype(), {a},
                 [src = std::move(src)](Span, Span g, GradIn gin) {
                   auto& ga = *gin[0];
                   for (std::size_t o = 0; o < g.size(); ++o) ga[src[o]] += g[o];
                 });
}

Tensor slice(const Tensor& a, int axis, std::int64_t start, std::int64_t length) {
  const int ax = normalize_axis(axis, a.ndim(), "slice");
  const auto extent = a.dim(ax);
  if (start < 0 || length < 0 || start + length > extent) {
    throw std::invalid_argument("slice: range [" + std::to_string(start) + ", " +
                                std::to_string(start + length) + ") out of extent " + std::to_string(extent));
  }
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= a.dim(i);
  for (int i = ax + 1; i < a.ndim(); ++i) inner *= a.dim(i);
  Shape shape = a.shape();
  shape[usize(ax)] = length;
  const auto av = a.values();
  std::vector<double> out(usize(outer * length * inner));
  for (std::int64_t o = 0; o < outer; ++o) {
    std::copy_n(av.data() + (o * extent + start) * inner, length * inner, out.data() + o * length * inner);
  }
  return make_op(std::move(shape), std::move(out), a.dtype(), {a},
                 [outer, extent, start, length, inner](Span, Span g, GradIn gin) {
                   auto& ga = *gin[0];
                   for (std::int64_t o = 0; o < outer; ++o)
                     for (std::int64_t i = 0; i < length * inner; ++i)
                       ga[usize((o * extent + start) * inner + i)] += g[usize(o * length * inner + i)];
                 });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const int nd = parts.front().ndim();
  const int ax = normalize_axis(axis, nd, "concat");
  Shape shape = parts.front().shape();
  std::int64_t total = 0;
  for (const auto& p : parts) {
    require_same_dtype(parts.front(), p, "concat");
    if (p.ndim() != nd) throw std::invalid_argument("concat: rank mismatch");
    for (int i = 0; i < nd; ++i) {
      if (i != ax && p.dim(i) != shape[usize(i)]) {
        throw std::invalid_argument("concat: extent mismatch " + shape_str(p.shape()) + " vs " + shape_str(shape));
      }
    }
    total += p.dim(ax);
  }
  shape[usize(ax)] = total;
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= shape[usize(i)];
  for (int i = ax + 1; i < nd; ++i) inner *= shape[usize(i)];

  std::vector<std::int64_t> extents;
  for (const auto& p : parts) extents.push_back(p.dim(ax));
  std::vector<double> out(usize(numel_of(shape)));
  std::int64_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pv = parts[k].values();
    const auto len = extents[k] * inner;
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy_n(pv.data() + o * len, len, out.data() + o * total * inner + offset * inner);
    }
    offset += extents[k];
  }
  return make_op(std::move(shape), std::move(out), parts.front().dtype(), parts,
                 [extents, outer, inner, total](Span, Span g, GradIn gin) {
                   std::int64_t offset = 0;
                   for (std::size_t k = 0; k < extents.size(); ++k) {
                     const auto len = extents[k] * inner;
                     if (gin[k]) {
                       auto& gk = *gin[k];
                       for (std::int64_t o = 0; o < outer; ++o)
                         for (std::int64_t i = 0; i < len; ++i)
                           gk[usize(o * len + i)] += g[usize(o * total * inner + offset * inner + i)];
                     }
                     offset += extents[k];
                   }
                 });
}

// ---- convolution and resampling --------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_same_dtype(x, weight, "conv2d");
  if (x.ndim() != 4 || weight.ndim() != 4 || weight.dim(1) != x.dim(1) || weight.dim(2) != weight.dim(3) ||
      weight.dim(2) % 2 == 0) {
    throw std::invalid_argument("conv2d: bad shapes x " + shape_str(x.shape()) + " w " +
                                shape_str(weight.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && (bias.ndim() != 1 || bias.dim(0) != weight.dim(0))) {
    throw std::invalid_argument("conv2d: bias shape " + shape_str(bias.shape()));
  }
  const auto n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto cout = weight.dim(0), k = weight.dim(2);
  const auto hw = h * w;
  const auto ckk = cin * k * k;

  std::vector<double> out(usize(n * cout * hw));
  std::vector<double> col(usize(ckk * hw));
  ConstMap wm(weight.values().data(), cout, ckk);
  for (std::int64_t b = 0; b < n; ++b) {
    im2col(x.values().data() + b * cin * hw, cin, h, w, k, col.data());
    MutMap om(out.data() + b * cout * hw, cout, hw);
    om.noalias() = wm * ConstMap(col.data(), ckk, hw);
    if (has_bias) {
      const auto bv = bias.values();
      for (std::int64_t c = 0; c < cout; ++c) om.row(c).array() += bv[usize(c)];
    }
  }

  std::vector<Tensor> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_op({n, cout, h, w}, std::move(out), x.dtype(), inputs,
                 [x, weight, has_bias, n, cin, h, w, cout, k, hw, ckk](Span, Span g, GradIn gin) {
                   std::vector<double> col(usize(ckk * hw));
                   ConstMap wm(weight.values().data(), cout, ckk);
                   for (std::int64_t b = 0; b < n; ++b) {
                     ConstMap gm(g.data() + b * cout * hw, cout, hw);
                     if (gin[1]) {
                       im2col(x.values().data() + b * cin * hw, cin, h, w, k, col.data());
                       MutMap(gin[1]->data(), cout, ckk).noalias() += gm * ConstMap(col.data(), ckk, hw).transpose();
                     }
                     if (gin[0]) {
                       MutMap(col.data(), ckk, hw).noalias() = wm.transpose() * gm;
                       col2im_add(col.data(), cin, h, w, k, gin[0]->data() + b * cin * hw);
                     }
                     if (has_bias && gin[2]) {
                       auto& gb = *gin[2];
                       for (std::int64_t c = 0; c < cout; ++c) gb[usize(c)] += gm.row(c).sum();
                     }
                   }
                 });
}

Tensor avg_pool2(const Tensor& x) {
  if (x.ndim() != 4 || x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0) {
    throw std::invalid_argument("avg_pool2: needs [N,C,H,W] with even H, W, got " + shape_str(x.shape()));
  }
  const auto planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto ho = h / 2, wo = w / 2;
  const auto xv = x.values();
  std::vector<double> out(usize(planes * ho * wo));
  for (std::int64_t p = 0; p < planes; ++p)
    for (std::int64_t i = 0; i < ho; ++i)
      for (std::int64_t j = 0; j < wo; ++j) {
        const double* s = xv.data() + p * h * w + 2 * i * w + 2 * j;
        out[usize((p * ho + i) * wo + j)] = 0.25 * (s[0] + s[1] + s[w] + s[w + 1]);
      }
  return make_op({x.dim(0), x.dim(1), ho, wo}, std::move(out), x.dtype(), {x},
                 [planes, h, w, ho, wo](Span, Span g, GradIn gin) {
                   auto& gx = *gin[0];
                   for (std::int64_t p = 0; p < planes; ++p)
                     for (std::int64_t i = 0; i < ho; ++i)
                       for (std::int64_t j = 0; j < wo; ++j) {
                         const double v = 0.25 * g[usize((p * ho + i) * wo + j)];
                         double* d = gx.data() + p * h * w + 2 * i * w + 2 * j;
                         d[0] += v;
                         d[1] += v;
                         d[w] += v;
                         d[w + 1] += v;
                       }
                 });
}

Tensor upsample2(const Tensor& x) {
  if (x.ndim() != 4) throw std::invalid_argument("upsample2: needs [N,C,H,W], got " + shape_str(x.shape()));
  const auto planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto ho = 2 * h, wo = 2 * w;
  const auto xv = x.values();
  std::vector<double> out(usize(planes * ho * wo));
  for (std::int64_t p = 0; p < planes; ++p)
    for (std::int64_t i = 0; i < ho; ++i)
      for (std::int64_t j = 0; j < wo; ++j) out[usize((p * ho + i) * wo + j)] = xv[usize(p * h * w + (i / 2) * w + j / 2)];
  return make_op({x.dim(0), x.dim(1), ho, wo}, std::move(out), x.dtype(), {x},
                 [planes, h, w, ho, wo](Span, Span g, GradIn gin) {
                   auto& gx = *gin[0];
                   for (std::int64_t p = 0; p < planes; ++p)
                     for (std::int64_t i = 0; i < ho; ++i)
                       for (std::int64_t j = 0; j < wo; ++j)
                         gx[usize(p * h * w + (i / 2) * w + j / 2)] += g[usize((p * ho + i) * wo + j)];
                 });
}

// ---- normalization ---------------------------------------------------------

Tensor softmax(const Tensor& a) {
  if (a.ndim() < 1 || a.dim(-1) == 0) throw std::invalid_argument("softmax: empty last axis");
  const auto n = usize(a.dim(-1));
  const auto rows = usize(a.numel()) / n;
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * n;
    double* y = out.data() + r * n;
    const double mx = *std::max_element(x, x + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < n; ++j) y[j] /= z;
  }
  return make_op(a.shape(), std::move(out), a.dtype(), {a}, [rows, n](Span y, Span g, GradIn gin) {
    auto& ga = *gin[0];
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += g[r * n + j] * y[r * n + j];
      for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += y[r * n + j] * (g[r * n + j] - s);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_same_dtype(x, gamma, "layer_norm");
  require_same_dtype(x, beta, "layer_norm");
  const auto c = x.dim(-1);
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw std::invalid_argument("layer_norm: affine parameters must have shape [" + std::to_string(c) + "]");
  }
  const auto n = usize(c);
  const auto rows = usize(x.numel()) / n;
  const auto xv = x.values();
  const auto gv = gamma.values();
  const auto bv = beta.values();
  std::vector<double> out(xv.size());
  std::vector<double> xhat(xv.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xr[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[r * n + j] = (xr[j] - mu) * inv_std[r];
      out[r * n + j] = xhat[r * n + j] * gv[j] + bv[j];
    }
  }
  return make_op(x.shape(), std::move(out), x.dtype(), {x, gamma, beta},
                 [gamma, rows, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Span, Span g, GradIn gin) {
                   const auto gv = gamma.values();
                   const double inv_n = 1.0 / static_cast<double>(n);
                   for (std::size_t r = 0; r < rows; ++r) {
                     const double* gr = g.data() + r * n;
                     const double* xh = xhat.data() + r * n;
                     if (gin[0]) {
                       double m1 = 0.0, m2 = 0.0;
                       for (std::size_t j = 0; j < n; ++j) {
                         const double gg = gr[j] * gv[j];
                         m1 += gg;
                         m2 += gg * xh[j];
                       }
                       m1 *= inv_n;
                       m2 *= inv_n;
                       for (std::size_t j = 0; j < n; ++j)
                         (*gin[0])[r * n + j] += inv_std[r] * (gr[j] * gv[j] - m1 - xh[j] * m2);
                     }
                     for (std::size_t j = 0; j < n; ++j) {
                       if (gin[1]) (*gin[1])[j] += gr[j] * xh[j];
                       if (gin[2]) (*gin[2])[j] += gr[j];
                     }
                   }
                 });
}

// ---- complex ---------------------------------------------------------------

Tensor cmul(const Tensor& a, const Tensor& b) {
  detail::require_complex(a, "cmul");
  detail::require_complex(b, "cmul");
  const std::size_t inner = broadcast_inner(a, b, "cmul");
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); i += 2) {
    const std::size_t j = i % inner;
    out[i] = av[i] * bv[j] - av[i + 1] * bv[j + 1];
    out[i + 1] = av[i] * bv[j + 1] + av[i + 1] * bv[j];
  }
  return make_op(a.shape(), std::move(out), a.dtype(), {a, b}, [a, b, inner](Span, Span g, GradIn gin) {
    const auto av = a.values();
    const auto bv = b.values();
    for (std::size_t i = 0; i < g.size(); i += 2) {
      const std::size_t j = i % inner;
      // Real transpose of complex multiplication is multiplication by the conjugate.
      if (gin[0]) {
        (*gin[0])[i] += g[i] * bv[j] + g[i + 1] * bv[j + 1];
        (*gin[0])[i + 1] += -g[i] * bv[j + 1] + g[i + 1] * bv[j];
      }
      if (gin[1]) {
        (*gin[1])[j] += g[i] * av[i] + g[i + 1] * av[i + 1];
        (*gin[1])[j + 1] += -g[i] * av[i + 1] + g[i + 1] * av[i];
      }
    }
  });
}

Tensor conj(const Tensor& a) {
  detail::require_complex(a, "conj");
  auto out = a.to_vector();
  for (std::size_t i = 1; i < out.size(); i += 2) out[i] = -out[i];
  return make_op(a.shape(), std::move(out), a.dtype(), {a}, [](Span, Span g, GradIn gin) {
    auto& ga = *gin[0];
    for (std::size_t i = 0; i < g.size(); i += 2) {
      ga[i] += g[i];
      ga[i + 1] -= g[i + 1];
    }
  });
}

}  // namespace qmri
