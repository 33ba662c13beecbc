#pragma once

// On-disk formats: the QTNS tensor container, 8-bit grayscale PNG, JSON files.
//
// QTNS layout: "QTNS", u32 little-endian header length, UTF-8 JSON header
// {version, dtype, shape, layout, complex[, manifest]}, little-endian payload.
// For complex tensors the header shape omits the trailing real/imag axis.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "qmri/tensor.hpp"

namespace qmri {

struct TensorFile {
  Tensor tensor;             // complex data keeps its trailing size-2 axis
  bool complex = false;
  nlohmann::json manifest;   // optional free-form metadata; null when absent
};

std::vector<std::uint8_t> encode_tensor_file(const TensorFile& file);
TensorFile decode_tensor_file(const std::vector<std::uint8_t>& bytes);

void write_tensor_file(const std::filesystem::path& path, const TensorFile& file);
TensorFile read_tensor_file(const std::filesystem::path& path);

// Shorthands for the common case.
void save_tensor(const std::filesystem::path& path, const Tensor& t, bool complex);
Tensor load_tensor(const std::filesystem::path& path);

// Row-major 8-bit grayscale image.
struct GrayImage {
  std::int64_t height = 0, width = 0;
  std::vector<std::uint8_t> pixels;
};

// Linear window [lo, hi] -> [0, 255], clamped. lo == hi maps everything to 0.
GrayImage to_gray(const Tensor& image, double lo, double hi);
// Min-max window over the image.
GrayImage to_gray(const Tensor& image);
// Panels placed left to right with a 2-pixel black gutter; heights must match.
GrayImage hstack(const std::vector<GrayImage>& panels);
// Rows top to bottom, same gutter; widths must match.
GrayImage vstack(const std::vector<GrayImage>& rows);

void write_png(const std::filesystem::path& path, const GrayImage& image);
GrayImage read_png(const std::filesystem::path& path);

nlohmann::json read_json(const std::filesystem::path& path);
// Pretty-printed with sorted keys and a trailing newline, so equal values give equal bytes.
void write_json(const std::filesystem::path& path, const nlohmann::json& value);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace qmri
