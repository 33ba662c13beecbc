#include "qmri/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace qmri {

RoiWindow roi_window(std::int64_t height, std::int64_t width) {
  if (height < 2 || width < 3) throw std::invalid_argument("crop_roi: image must be at least 2x3");
  const std::int64_t rows = height / 2;
  const auto cols = static_cast<std::int64_t>(std::llround(static_cast<double>(width) / 3.0));
  return {height / 2 - rows / 2, rows, width / 2 - cols / 2, cols};
}

Tensor crop_roi(const Tensor& image) {
  if (image.ndim() < 2) throw std::invalid_argument("crop_roi: needs [..., H, W]");
  const auto h = image.dim(-2), w = image.dim(-1);
  const auto roi = roi_window(h, w);
  return slice(slice(image, -2, roi.row0, roi.rows), -1, roi.col0, roi.cols);
}

std::vector<std::uint8_t> crop_roi(const std::vector<std::uint8_t>& mask, std::int64_t height, std::int64_t width) {
  if (static_cast<std::int64_t>(mask.size()) != height * width) throw std::invalid_argument("crop_roi: mask size mismatch");
  const auto roi = roi_window(height, width);
  std::vector<std::uint8_t> out;
  out.reserve(static_cast<std::size_t>(roi.rows * roi.cols));
  for (auto i = roi.row0; i < roi.row0 + roi.rows; ++i)
    for (auto j = roi.col0; j < roi.col0 + roi.cols; ++j) out.push_back(mask[static_cast<std::size_t>(i * width + j)]);
  return out;
}

namespace {

// Half-sample symmetric extension: d c b a | a b c d | d c b a.
std::int64_t reflect(std::int64_t i, std::int64_t n) {
  const std::int64_t period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

std::vector<double> gaussian_kernel(double sigma, double truncate) {
  const auto radius = static_cast<std::int64_t>(truncate * sigma + 0.5);
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (std::int64_t x = -radius; x <= radius; ++x) {
    const double v = std::exp(-0.5 * double(x * x) / (sigma * sigma));
    k[static_cast<std::size_t>(x + radius)] = v;
    total += v;
  }
  for (auto& v : k) v /= total;
  return k;
}

std::vector<double> filter2(const std::vector<double>& img, std::int64_t h, std::int64_t w, const std::vector<double>& k) {
  const auto r = static_cast<std::int64_t>(k.size() / 2);
  std::vector<double> tmp(img.size()), out(img.size());
  for (std::int64_t i = 0; i < h; ++i)
    for (std::int64_t j = 0; j < w; ++j) {
      double s = 0.0;
      for (std::int64_t d = -r; d <= r; ++d) s += k[static_cast<std::size_t>(d + r)] * img[static_cast<std::size_t>(i * w + reflect(j + d, w))];
      tmp[static_cast<std::size_t>(i * w + j)] = s;
    }
  for (std::int64_t i = 0; i < h; ++i)
    for (std::int64_t j = 0; j < w; ++j) {
      double s = 0.0;
      for (std::int64_t d = -r; d <= r; ++d) s += k[static_cast<std::size_t>(d + r)] * tmp[static_cast<std::size_t>(reflect(i + d, h) * w + j)];
      out[static_cast<std::size_t>(i * w + j)] = s;
    }
  return out;
}

std::vector<double> ssim_map(const std::vector<double>& x, const std::vector<double>& y, std::int64_t h, std::int64_t w,
                             double range, const MetricOptions& o) {
  const auto k = gaussian_kernel(o.sigma, o.truncate);
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto ux = filter2(x, h, w, k), uy = filter2(y, h, w, k);
  const auto uxx = filter2(xx, h, w, k), uyy = filter2(yy, h, w, k), uxy = filter2(xy, h, w, k);
  const double c1 = (o.k1 * range) * (o.k1 * range), c2 = (o.k2 * range) * (o.k2 * range);
  std::vector<double> s(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double vx = uxx[i] - ux[i] * ux[i];
    const double vy = uyy[i] - uy[i] * uy[i];
    const double vxy = uxy[i] - ux[i] * uy[i];
    s[i] = ((2 * ux[i] * uy[i] + c1) * (2 * vxy + c2)) / ((ux[i] * ux[i] + uy[i] * uy[i] + c1) * (vx + vy + c2));
  }
  return s;
}

void check_pair(const Tensor& ref, const Tensor& test) {
  if (ref.ndim() != 2) throw std::invalid_argument("metrics: expected [H, W], got " + shape_str(ref.shape()));
  if (ref.shape() != test.shape()) {
    throw std::invalid_argument("metrics: shape mismatch " + shape_str(ref.shape()) + " vs " + shape_str(test.shape()));
  }
}

ImageMetrics metrics_impl(const Tensor& ref, const Tensor& test, const std::vector<std::uint8_t>* mask,
                          const MetricOptions& opts) {
  check_pair(ref, test);
  const auto h = ref.dim(0), w = ref.dim(1);
  const auto n = static_cast<std::size_t>(h * w);
  if (mask && mask->size() != n) throw std::invalid_argument("metrics: mask size mismatch");
  auto in = [&](std::size_t p) { return !mask || (*mask)[p]; };

  std::vector<double> x(n, 0.0), y(n, 0.0);
  double sq_err = 0.0, sq_ref = 0.0, peak = -std::numeric_limits<double>::infinity();
  std::size_t count = 0;
  for (std::size_t p = 0; p < n; ++p) {
    if (!in(p)) continue;
    x[p] = ref.values()[p];
    y[p] = test.values()[p];
    sq_err += (x[p] - y[p]) * (x[p] - y[p]);
    sq_ref += x[p] * x[p];
    peak = std::max(peak, x[p]);
    ++count;
  }
  if (count == 0) throw std::invalid_argument("metrics: no pixels to compare");
  if (sq_ref == 0.0) throw std::invalid_argument("metrics: reference is identically zero");
  const double range = opts.data_range > 0.0 ? opts.data_range : peak;
  if (!(range > 0.0)) throw std::invalid_argument("metrics: data range must be positive");

  ImageMetrics m;
  m.rmse = std::sqrt(sq_err / static_cast<double>(count));
  m.nmse = sq_err / sq_ref;
  m.psnr = m.rmse == 0.0 ? std::numeric_limits<double>::infinity() : 20.0 * std::log10(range / m.rmse);

  const auto s = ssim_map(x, y, h, w, range, opts);
  const auto pad = static_cast<std::int64_t>(opts.truncate * opts.sigma + 0.5);
  double total = 0.0;
  std::size_t used = 0;
  for (std::int64_t i = pad; i < h - pad; ++i)
    for (std::int64_t j = pad; j < w - pad; ++j) {
      const auto p = static_cast<std::size_t>(i * w + j);
      if (!in(p)) continue;
      total += s[p];
      ++used;
    }
  if (used == 0) {  // grid smaller than the window: fall back to every compared pixel
    for (std::size_t p = 0; p < n; ++p)
      if (in(p)) {
        total += s[p];
        ++used;
      }
  }
  m.ssim = total / static_cast<double>(used);
  return m;
}

ImageMetrics mean_of(const std::vector<ImageMetrics>& all) {
  ImageMetrics m;
  for (const auto& a : all) {
    m.psnr += a.psnr;
    m.ssim += a.ssim;
    m.nmse += a.nmse;
    m.rmse += a.rmse;
  }
  const auto n = static_cast<double>(all.size());
  m.psnr /= n;
  m.ssim /= n;
  m.nmse /= n;
  m.rmse /= n;
  return m;
}

nlohmann::json number_or_inf(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

double number_from(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw std::invalid_argument("metrics json: unexpected string " + s);
  }
  return j.get<double>();
}

}  // namespace

ImageMetrics compute_metrics(const Tensor& ref, const Tensor& test, const MetricOptions& opts) {
  return metrics_impl(ref, test, nullptr, opts);
}

ImageMetrics compute_masked_metrics(const Tensor& ref, const Tensor& test, const std::vector<std::uint8_t>& mask,
                                    const MetricOptions& opts) {
  return metrics_impl(ref, test, &mask, opts);
}

Tensor magnitude(const Tensor& complex) {
  if (complex.ndim() < 1 || complex.dim(-1) != 2) throw std::invalid_argument("magnitude: expected trailing complex axis");
  Shape shape(complex.shape().begin(), complex.shape().end() - 1);
  const auto v = complex.values();
  std::vector<double> out(v.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::hypot(v[2 * i], v[2 * i + 1]);
  return Tensor(std::move(shape), std::move(out));
}

ImageMetrics frame_metrics(const Tensor& ref_frames, const Tensor& test_frames, const MetricOptions& opts) {
  if (ref_frames.ndim() != 4 || ref_frames.shape() != test_frames.shape()) {
    throw std::invalid_argument("frame_metrics: frames must be matching [T,H,W,2]");
  }
  const Tensor ref = crop_roi(magnitude(ref_frames));
  const Tensor test = crop_roi(magnitude(test_frames));
  const auto t = ref.dim(0), h = ref.dim(1), w = ref.dim(2);
  std::vector<ImageMetrics> per;
  for (std::int64_t f = 0; f < t; ++f) {
    per.push_back(compute_metrics(reshape(slice(ref, 0, f, 1), {h, w}), reshape(slice(test, 0, f, 1), {h, w}), opts));
  }
  return mean_of(per);
}

ImageMetrics map_metrics(const Tensor& ref_map, const Tensor& test_map, const std::vector<std::uint8_t>& ref_support,
                         const std::vector<std::uint8_t>& test_valid, const MetricOptions& opts) {
  check_pair(ref_map, test_map);
  const auto h = ref_map.dim(0), w = ref_map.dim(1);
  const auto n = static_cast<std::size_t>(h * w);
  if (ref_support.size() != n || test_valid.size() != n) throw std::invalid_argument("map_metrics: mask size mismatch");
  std::vector<std::uint8_t> both(n);
  for (std::size_t p = 0; p < n; ++p) both[p] = ref_support[p] && test_valid[p];
  return compute_masked_metrics(crop_roi(ref_map), crop_roi(test_map), crop_roi(both, h, w), opts);
}

nlohmann::json to_json(const ImageMetrics& m) {
  return {{"psnr", number_or_inf(m.psnr)}, {"ssim", m.ssim}, {"nmse", m.nmse}, {"rmse", m.rmse}};
}

nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json j = {{"images", to_json(r.images)}, {"data_range_policy", r.data_range_policy}};
  if (r.has_maps) j["maps"] = to_json(r.maps);
  return j;
}

ImageMetrics image_metrics_from_json(const nlohmann::json& j) {
  return {number_from(j.at("psnr")), number_from(j.at("ssim")), number_from(j.at("nmse")), number_from(j.at("rmse"))};
}

}  // namespace qmri
