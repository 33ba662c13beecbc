#pragma once

// Evaluation protocol: central ROI crop and PSNR / SSIM / NMSE / RMSE for
// image frames and parameter maps.

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "qmri/tensor.hpp"

namespace qmri {

// Row and column blocks kept by crop_roi: floor-centered H/2 rows and round(W/3) columns.
struct RoiWindow {
  std::int64_t row0, rows, col0, cols;
};
RoiWindow roi_window(std::int64_t height, std::int64_t width);

// [..., H, W] -> [..., rows, cols].
Tensor crop_roi(const Tensor& image);
std::vector<std::uint8_t> crop_roi(const std::vector<std::uint8_t>& mask, std::int64_t height, std::int64_t width);

struct MetricOptions {
  double data_range = 0.0;  // 0: max of the reference
  double sigma = 1.5;       // Gaussian SSIM window
  double truncate = 3.5;    // window radius = int(truncate * sigma + 0.5)
  double k1 = 0.01;
  double k2 = 0.03;
};

struct ImageMetrics {
  double psnr = 0.0;  // +inf for identical inputs
  double ssim = 0.0;
  double nmse = 0.0;
  double rmse = 0.0;
};

// Metrics between two real [H, W] arrays, no cropping. SSIM is the mean of the
// local SSIM map over pixels at least one window radius from the border, with
// the Gaussian window applied in reflect mode and population covariances.
ImageMetrics compute_metrics(const Tensor& ref, const Tensor& test, const MetricOptions& opts = {});

// Same, restricted to pixels where mask is set (SSIM averaged over masked
// interior pixels; other pixels are zeroed in both inputs first).
ImageMetrics compute_masked_metrics(const Tensor& ref, const Tensor& test, const std::vector<std::uint8_t>& mask,
                                    const MetricOptions& opts = {});

// Pixel magnitude of a complex [..., 2] tensor.
Tensor magnitude(const Tensor& complex);

// Frames [T, H, W, 2]: crop, magnitude, metrics per frame, mean over frames.
ImageMetrics frame_metrics(const Tensor& ref_frames, const Tensor& test_frames, const MetricOptions& opts = {});

// Maps [H, W]: crop, then metrics over pixels valid in both support masks.
ImageMetrics map_metrics(const Tensor& ref_map, const Tensor& test_map, const std::vector<std::uint8_t>& ref_support,
                         const std::vector<std::uint8_t>& test_valid, const MetricOptions& opts = {});

struct MetricReport {
  ImageMetrics images;
  ImageMetrics maps;
  bool has_maps = false;
  std::string data_range_policy = "reference-max";
};

// PSNR +inf is written as the string "inf".
nlohmann::json to_json(const ImageMetrics& m);
nlohmann::json to_json(const MetricReport& r);
ImageMetrics image_metrics_from_json(const nlohmann::json& j);

}  // namespace qmri
