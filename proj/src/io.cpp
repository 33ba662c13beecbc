#include "qmri/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>
#include <stdexcept>

namespace qmri {

namespace {

constexpr char kMagic[4] = {'Q', 'T', 'N', 'S'};
constexpr int kVersion = 1;

static_assert(std::endian::native == std::endian::little, "payload encoding assumes a little-endian host");

template <typename T>
void append_raw(std::vector<std::uint8_t>& out, T value) {
  std::uint8_t buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

template <typename T>
T read_raw(const std::uint8_t* p) {
  T value;
  std::memcpy(&value, p, sizeof(T));
  return value;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& path, const void* data, std::size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace

std::vector<std::uint8_t> encode_tensor_file(const TensorFile& file) {
  const Tensor& t = file.tensor;
  if (!t.defined()) throw std::invalid_argument("tensor file: undefined tensor");
  Shape shape = t.shape();
  if (file.complex) {
    if (shape.empty() || shape.back() != 2) throw std::invalid_argument("tensor file: complex data needs a trailing axis of 2");
    shape.pop_back();
  }
  nlohmann::json header = {{"version", kVersion},
                           {"dtype", dtype_name(t.dtype())},
                           {"shape", shape},
                           {"layout", "row-major"},
                           {"complex", file.complex}};
  if (!file.manifest.is_null()) header["manifest"] = file.manifest;
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  append_raw(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  const auto v = t.values();
  if (t.dtype() == DType::f32) {
    out.reserve(out.size() + v.size() * 4);
    for (double x : v) append_raw(out, static_cast<float>(x));
  } else {
    out.reserve(out.size() + v.size() * 8);
    for (double x : v) append_raw(out, x);
  }
  return out;
}

TensorFile decode_tensor_file(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || !std::equal(kMagic, kMagic + 4, bytes.begin())) {
    throw std::invalid_argument("tensor file: bad magic");
  }
  const auto header_len = read_raw<std::uint32_t>(bytes.data() + 4);
  if (bytes.size() < 8 + std::size_t{header_len}) throw std::invalid_argument("tensor file: truncated header");
  const auto header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + header_len);

  for (const auto& [key, _] : header.items()) {
    if (key != "version" && key != "dtype" && key != "shape" && key != "layout" && key != "complex" && key != "manifest") {
      throw std::invalid_argument("tensor file: unknown header key " + key);
    }
  }
  if (header.at("version").get<int>() != kVersion) throw std::invalid_argument("tensor file: unsupported version");
  if (header.at("layout").get<std::string>() != "row-major") throw std::invalid_argument("tensor file: unsupported layout");
  const auto dtype_str = header.at("dtype").get<std::string>();
  DType dtype;
  std::size_t width;
  if (dtype_str == "f64") {
    dtype = DType::f64;
    width = 8;
  } else if (dtype_str == "f32") {
    dtype = DType::f32;
    width = 4;
  } else {
    throw std::invalid_argument("tensor file: unsupported dtype " + dtype_str);
  }

  TensorFile file;
  file.complex = header.at("complex").get<bool>();
  Shape shape = header.at("shape").get<Shape>();
  for (auto d : shape)
    if (d < 0) throw std::invalid_argument("tensor file: negative extent");
  if (file.complex) shape.push_back(2);
  const auto n = static_cast<std::size_t>(numel_of(shape));
  const std::size_t offset = 8 + header_len;
  if (bytes.size() - offset != n * width) {
    throw std::invalid_argument("tensor file: payload is " + std::to_string(bytes.size() - offset) + " bytes, expected " +
                                std::to_string(n * width));
  }
  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* p = bytes.data() + offset + i * width;
    values[i] = dtype == DType::f32 ? static_cast<double>(read_raw<float>(p)) : read_raw<double>(p);
  }
  file.tensor = Tensor(std::move(shape), std::move(values), dtype);
  if (header.contains("manifest")) file.manifest = header["manifest"];
  return file;
}

void write_tensor_file(const std::filesystem::path& path, const TensorFile& file) {
  const auto bytes = encode_tensor_file(file);
  write_bytes(path, bytes.data(), bytes.size());
}

TensorFile read_tensor_file(const std::filesystem::path& path) { return decode_tensor_file(read_bytes(path)); }

void save_tensor(const std::filesystem::path& path, const Tensor& t, bool complex) {
  write_tensor_file(path, {t, complex, nullptr});
}

Tensor load_tensor(const std::filesystem::path& path) { return read_tensor_file(path).tensor; }

GrayImage to_gray(const Tensor& image, double lo, double hi) {
  if (image.ndim() != 2) throw std::invalid_argument("to_gray: expected [H, W], got " + shape_str(image.shape()));
  GrayImage g{image.dim(0), image.dim(1), {}};
  const auto v = image.values();
  g.pixels.resize(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double u = hi > lo ? (v[i] - lo) / (hi - lo) : 0.0;
    if (!std::isfinite(u)) u = 0.0;
    g.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(u, 0.0, 1.0) * 255.0));
  }
  return g;
}

GrayImage to_gray(const Tensor& image) {
  const auto v = image.values();
  if (v.empty()) throw std::invalid_argument("to_gray: empty image");
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return to_gray(image, *lo, *hi);
}

GrayImage hstack(const std::vector<GrayImage>& panels) {
  if (panels.empty()) throw std::invalid_argument("hstack: no panels");
  constexpr std::int64_t gutter = 2;
  GrayImage out{panels[0].height, 0, {}};
  for (const auto& p : panels) {
    if (p.height != out.height) throw std::invalid_argument("hstack: panel heights differ");
    out.width += p.width;
  }
  out.width += gutter * static_cast<std::int64_t>(panels.size() - 1);
  out.pixels.assign(static_cast<std::size_t>(out.height * out.width), 0);
  std::int64_t col = 0;
  for (const auto& p : panels) {
    for (std::int64_t i = 0; i < p.height; ++i)
      std::copy_n(p.pixels.begin() + i * p.width, p.width, out.pixels.begin() + i * out.width + col);
    col += p.width + gutter;
  }
  return out;
}

GrayImage vstack(const std::vector<GrayImage>& rows) {
  if (rows.empty()) throw std::invalid_argument("vstack: no rows");
  constexpr std::int64_t gutter = 2;
  GrayImage out{0, rows[0].width, {}};
  for (const auto& r : rows) {
    if (r.width != out.width) throw std::invalid_argument("vstack: row widths differ");
    out.pixels.insert(out.pixels.end(), r.pixels.begin(), r.pixels.end());
    out.height += r.height;
    if (&r != &rows.back()) {
      out.pixels.insert(out.pixels.end(), static_cast<std::size_t>(gutter * out.width), 0);
      out.height += gutter;
    }
  }
  return out;
}

void write_png(const std::filesystem::path& path, const GrayImage& image) {
  if (image.height <= 0 || image.width <= 0 ||
      image.pixels.size() != static_cast<std::size_t>(image.height * image.width)) {
    throw std::invalid_argument("write_png: inconsistent image");
  }
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw std::runtime_error("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("write_png: libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("write_png: libpng error on " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::int64_t i = 0; i < image.height; ++i) {
    png_write_row(png, const_cast<png_bytep>(image.pixels.data() + i * image.width));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

GrayImage read_png(const std::filesystem::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!fp) throw std::runtime_error("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("read_png: libpng init failed");
  }
  GrayImage out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_png: libpng error on " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  if (png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY || png_get_bit_depth(png, info) != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_png: only 8-bit grayscale is supported");
  }
  out.width = png_get_image_width(png, info);
  out.height = png_get_image_height(png, info);
  out.pixels.resize(static_cast<std::size_t>(out.width * out.height));
  for (std::int64_t i = 0; i < out.height; ++i) png_read_row(png, out.pixels.data() + i * out.width, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const nlohmann::json& value) { write_text(path, value.dump(2) + "\n"); }

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_bytes(path, text.data(), text.size());
}

}  // namespace qmri
