#include "qmri/network.hpp"

#include <cmath>
#include <cstring>
#include <random>
#include <stdexcept>

#include "qmri/coils.hpp"
#include "qmri/io.hpp"
#include "qmri/json_fields.hpp"

namespace qmri {

void UNetConfig::validate() const {
  if (depth < 1 || depth > 6) throw std::invalid_argument("unet: depth must be in [1, 6]");
  if (base_channels < 1) throw std::invalid_argument("unet: base_channels must be positive");
}

void LTConfig::validate() const {
  if (heads < 1) throw std::invalid_argument("lt: heads must be positive");
  if (layers_per_block < 1) throw std::invalid_argument("lt: layers_per_block must be positive");
  if (max_frames < 1) throw std::invalid_argument("lt: max_frames must be positive");
}

void CsmRefinerConfig::validate() const {
  if (hidden < 1) throw std::invalid_argument("csm refiner: hidden must be positive");
}

// ---- ParamStore -------------------------------------------------------------

void ParamStore::add(const std::string& name, Tensor value) {
  if (!value.defined()) throw std::invalid_argument("param " + name + ": undefined tensor");
  if (!params_.emplace(name, std::move(value)).second) throw std::invalid_argument("param " + name + " already exists");
}

const Tensor& ParamStore::get(const std::string& name) const {
  const auto it = params_.find(name);
  if (it == params_.end()) throw std::invalid_argument("missing parameter " + name);
  return it->second;
}

void ParamStore::set(const std::string& name, Tensor value) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::invalid_argument("missing parameter " + name);
  if (it->second.shape() != value.shape()) {
    throw std::invalid_argument("param " + name + ": shape " + shape_str(value.shape()) + " != " +
                                shape_str(it->second.shape()));
  }
  it->second = std::move(value);
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  for (const auto& [k, _] : params_) out.push_back(k);
  return out;
}

std::vector<Tensor> ParamStore::tensors() const {
  std::vector<Tensor> out;
  for (const auto& [_, v] : params_) out.push_back(v);
  return out;
}

std::int64_t ParamStore::numel() const {
  std::int64_t n = 0;
  for (const auto& [_, v] : params_) n += v.numel();
  return n;
}

void ParamStore::set_requires_grad(bool flag) {
  for (auto& [_, v] : params_) v.set_requires_grad(flag);
}

void ParamStore::zero_grad() {
  for (auto& [_, v] : params_) v.zero_grad();
}

ParamStore ParamStore::clone() const {
  ParamStore out;
  for (const auto& [k, v] : params_) out.params_.emplace(k, Tensor(v.shape(), v.to_vector(), v.dtype()));
  return out;
}

void ParamStore::merge(const ParamStore& other, const std::string& prefix) {
  for (const auto& [k, v] : other.params_) add(prefix + k, v);
}

ParamStore ParamStore::with_prefix(const std::string& prefix) const {
  ParamStore out;
  for (const auto& [k, v] : params_)
    if (k.compare(0, prefix.size(), prefix) == 0) out.params_.emplace(k.substr(prefix.size()), v);
  return out;
}

bool ParamStore::equal_values(const ParamStore& other) const {
  if (names() != other.names()) return false;
  for (const auto& [k, v] : params_) {
    const auto& o = other.get(k);
    if (v.shape() != o.shape()) return false;
    const auto a = v.values(), b = o.values();
    for (std::size_t i = 0; i < a.size(); ++i)
      if (std::memcmp(&a[i], &b[i], sizeof(double)) != 0) return false;
  }
  return true;
}

// ---- initialization ---------------------------------------------------------

std::uint64_t param_seed(std::uint64_t seed, const std::string& name) {
  std::uint64_t h = 1469598103934665603ULL ^ seed;  // FNV-1a
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

namespace {

Tensor normal_init(Shape shape, std::uint64_t seed, const std::string& name, double stddev) {
  std::mt19937_64 rng(param_seed(seed, name));
  return randn(std::move(shape), rng, stddev);
}

void add_conv(ParamStore& s, const std::string& name, int cin, int cout, std::uint64_t seed, bool zero = false) {
  const double stddev = std::sqrt(2.0 / (cin * 9.0));
  s.add(name + ".w", zero ? Tensor::zeros({cout, cin, 3, 3}) : normal_init({cout, cin, 3, 3}, seed, name + ".w", stddev));
  s.add(name + ".b", Tensor::zeros({cout}));
}

Tensor conv(const Tensor& x, const ParamStore& p, const std::string& name) {
  return conv2d(x, p.get(name + ".w"), p.get(name + ".b"));
}

Tensor conv_relu(const Tensor& x, const ParamStore& p, const std::string& name) { return relu(conv(x, p, name)); }

std::string lt_prefix(int level) { return "lt" + std::to_string(level) + "."; }

}  // namespace

void init_lt_block(ParamStore& store, const std::string& prefix, int channels, const LTConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (channels % cfg.heads != 0) {
    throw std::invalid_argument("lt: channels " + std::to_string(channels) + " not divisible by heads " +
                                std::to_string(cfg.heads));
  }
  const double stddev = 1.0 / std::sqrt(static_cast<double>(channels));
  if (cfg.positional_embedding) store.add(prefix + "pos", normal_init({cfg.max_frames, channels}, seed, prefix + "pos", 0.1));
  for (int l = 0; l < cfg.layers_per_block; ++l) {
    const std::string p = prefix + "layer" + std::to_string(l) + ".";
    if (cfg.pre_norm) {
      store.add(p + "ln.g", Tensor::full({channels}, 1.0));
      store.add(p + "ln.b", Tensor::zeros({channels}));
    }
    for (const char* m : {"wq", "wk", "wv"}) store.add(p + m, normal_init({channels, channels}, seed, p + m, stddev));
    store.add(p + "wo", cfg.zero_init_out ? Tensor::zeros({channels, channels})
                                          : normal_init({channels, channels}, seed, p + "wo", stddev));
  }
}

ParamStore init_unet(const UNetConfig& ucfg, const LTConfig& ltcfg, bool with_lt, std::uint64_t seed) {
  ucfg.validate();
  ParamStore s;
  for (int l = 0; l < ucfg.depth; ++l) {
    const int c = ucfg.channels(l);
    const std::string e = "enc" + std::to_string(l);
    add_conv(s, e + ".conv0", l == 0 ? 2 : ucfg.channels(l - 1), c, seed);
    add_conv(s, e + ".conv1", c, c, seed);
    if (with_lt) init_lt_block(s, lt_prefix(l), c, ltcfg, seed);

    const std::string d = "dec" + std::to_string(l);
    if (l == ucfg.depth - 1) {
      add_conv(s, d + ".conv0", 2 * c, c, seed);
    } else {
      add_conv(s, d + ".conv0", ucfg.channels(l + 1) + 2 * c, c, seed);
      add_conv(s, d + ".conv1", c, c, seed);
    }
  }
  add_conv(s, "out", ucfg.channels(0), 2, seed, ucfg.zero_init_out);
  return s;
}

ParamStore init_csm_refiner(const CsmRefinerConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamStore s;
  for (int l = 0; l < 4; ++l) add_conv(s, "conv" + std::to_string(l), l == 0 ? 2 : cfg.hidden, cfg.hidden, seed);
  add_conv(s, "conv4", cfg.hidden, 2, seed, cfg.zero_init_out);
  return s;
}

// ---- forward passes ---------------------------------------------------------

Tensor lt_block_forward(const Tensor& latents, const ParamStore& params, const std::string& prefix,
                        const LTConfig& cfg) {
  cfg.validate();
  if (latents.ndim() != 4) throw std::invalid_argument("lt: expected [T, C, h, w], got " + shape_str(latents.shape()));
  const auto t = latents.dim(0), c = latents.dim(1), h = latents.dim(2), w = latents.dim(3);
  if (c % cfg.heads != 0) {
    throw std::invalid_argument("lt: channels " + std::to_string(c) + " not divisible by heads " +
                                std::to_string(cfg.heads));
  }
  const auto p = h * w, heads = static_cast<std::int64_t>(cfg.heads), d = c / heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  Tensor tok = reshape(permute(latents, {2, 3, 0, 1}), {p * t, c});
  Tensor pos;
  if (cfg.positional_embedding) {
    const Tensor& table = params.get(prefix + "pos");
    if (t > table.dim(0)) throw std::invalid_argument("lt: more frames than positional table rows");
    pos = slice(table, 0, 0, t);
  }

  auto split_heads = [&](const Tensor& x, bool transpose) {  // [P*T, C] -> [P*H, T, d] or [P*H, d, T]
    const Tensor x4 = reshape(x, {p, t, heads, d});
    return transpose ? reshape(permute(x4, {0, 2, 3, 1}), {p * heads, d, t})
                     : reshape(permute(x4, {0, 2, 1, 3}), {p * heads, t, d});
  };

  for (int l = 0; l < cfg.layers_per_block; ++l) {
    const std::string n = prefix + "layer" + std::to_string(l) + ".";
    Tensor z = tok;
    if (pos.defined()) z = reshape(reshape(z, {p, t, c}) + pos, {p * t, c});
    if (cfg.pre_norm) z = layer_norm(z, params.get(n + "ln.g"), params.get(n + "ln.b"));
    const Tensor q = split_heads(matmul(z, params.get(n + "wq")), false);
    const Tensor k = split_heads(matmul(z, params.get(n + "wk")), true);
    const Tensor v = split_heads(matmul(z, params.get(n + "wv")), false);
    const Tensor attn = softmax(scale(bmm(q, k), inv_sqrt_d));
    const Tensor o = reshape(permute(reshape(bmm(attn, v), {p, heads, t, d}), {0, 2, 1, 3}), {p * t, c});
    tok = tok + matmul(o, params.get(n + "wo"));
  }
  return permute(reshape(tok, {h, w, t, c}), {2, 3, 0, 1});
}

Tensor unet_forward(const Tensor& frames, const ParamStore& params, const UNetConfig& ucfg, const LTConfig& ltcfg,
                    bool with_lt) {
  ucfg.validate();
  if (frames.ndim() != 4 || frames.dim(1) != 2) {
    throw std::invalid_argument("unet: expected [T, 2, H, W], got " + shape_str(frames.shape()));
  }
  const std::int64_t div = std::int64_t{1} << (ucfg.depth - 1);
  if (frames.dim(2) % div != 0 || frames.dim(3) % div != 0) {
    throw std::invalid_argument("unet: spatial extents of " + shape_str(frames.shape()) + " must be divisible by " +
                                std::to_string(div));
  }

  std::vector<Tensor> skips;
  Tensor x = frames;
  for (int l = 0; l < ucfg.depth; ++l) {
    if (l > 0) x = avg_pool2(x);
    const std::string e = "enc" + std::to_string(l);
    x = conv_relu(conv_relu(x, params, e + ".conv0"), params, e + ".conv1");
    const Tensor mixed = with_lt ? lt_block_forward(x, params, lt_prefix(l), ltcfg) : x;
    skips.push_back(concat({x, mixed}, 1));
  }

  Tensor y;
  for (int l = ucfg.depth - 1; l >= 0; --l) {
    const std::string d = "dec" + std::to_string(l);
    if (l == ucfg.depth - 1) {
      y = conv_relu(skips[static_cast<std::size_t>(l)], params, d + ".conv0");
    } else {
      y = concat({upsample2(y), skips[static_cast<std::size_t>(l)]}, 1);
      y = conv_relu(conv_relu(y, params, d + ".conv0"), params, d + ".conv1");
    }
  }
  return frames + conv(y, params, "out");
}

Tensor csm_refine(const Tensor& csm, const std::vector<std::uint8_t>& support, const ParamStore& params,
                  const CsmRefinerConfig& cfg) {
  cfg.validate();
  if (csm.ndim() != 4 || csm.dim(3) != 2) throw std::invalid_argument("csm_refine: expected [Wc, H, W, 2]");
  Tensor x = frames_to_channels(csm);
  Tensor y = x;
  for (int l = 0; l < 4; ++l) y = conv_relu(y, params, "conv" + std::to_string(l));
  y = x + conv(y, params, "conv4");
  return normalize_coils(channels_to_frames(y), support);
}

Tensor frames_to_channels(const Tensor& frames) {
  if (frames.ndim() != 4 || frames.dim(3) != 2) {
    throw std::invalid_argument("expected complex [T, H, W, 2], got " + shape_str(frames.shape()));
  }
  return permute(frames, {0, 3, 1, 2});
}

Tensor channels_to_frames(const Tensor& x) {
  if (x.ndim() != 4 || x.dim(1) != 2) throw std::invalid_argument("expected [T, 2, H, W], got " + shape_str(x.shape()));
  return permute(x, {0, 2, 3, 1});
}

// ---- serialization ----------------------------------------------------------

nlohmann::json to_json(const UNetConfig& c) {
  return {{"depth", c.depth}, {"base_channels", c.base_channels}, {"zero_init_out", c.zero_init_out}};
}

nlohmann::json to_json(const LTConfig& c) {
  return {{"heads", c.heads},
          {"layers_per_block", c.layers_per_block},
          {"pre_norm", c.pre_norm},
          {"positional_embedding", c.positional_embedding},
          {"max_frames", c.max_frames},
          {"zero_init_out", c.zero_init_out}};
}

nlohmann::json to_json(const CsmRefinerConfig& c) { return {{"hidden", c.hidden}, {"zero_init_out", c.zero_init_out}}; }

void from_json(const nlohmann::json& j, UNetConfig& c) {
  JsonFields f(j, "unet");
  f.get("depth", c.depth);
  f.get("base_channels", c.base_channels);
  f.get("zero_init_out", c.zero_init_out);
  f.finish();
  c.validate();
}

void from_json(const nlohmann::json& j, LTConfig& c) {
  JsonFields f(j, "lt");
  f.get("heads", c.heads);
  f.get("layers_per_block", c.layers_per_block);
  f.get("pre_norm", c.pre_norm);
  f.get("positional_embedding", c.positional_embedding);
  f.get("max_frames", c.max_frames);
  f.get("zero_init_out", c.zero_init_out);
  f.finish();
  c.validate();
}

void from_json(const nlohmann::json& j, CsmRefinerConfig& c) {
  JsonFields f(j, "csm_refiner");
  f.get("hidden", c.hidden);
  f.get("zero_init_out", c.zero_init_out);
  f.finish();
  c.validate();
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params, const nlohmann::json& config) {
  nlohmann::json entries = nlohmann::json::array();
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(params.numel()));
  for (const auto& name : params.names()) {
    const Tensor& t = params.get(name);
    entries.push_back({{"name", name}, {"shape", t.shape()}});
    const auto v = t.values();
    flat.insert(flat.end(), v.begin(), v.end());
  }
  const auto n = static_cast<std::int64_t>(flat.size());
  nlohmann::json manifest = {{"format", "qmri-checkpoint"}, {"format_version", 1}, {"params", entries}, {"config", config}};
  write_tensor_file(path, {Tensor({n}, std::move(flat)), false, manifest});
}

ParamStore load_checkpoint(const std::filesystem::path& path, nlohmann::json* config) {
  const TensorFile file = read_tensor_file(path);
  const auto& m = file.manifest;
  if (!m.is_object() || m.value("format", "") != "qmri-checkpoint" || m.value("format_version", 0) != 1) {
    throw std::invalid_argument(path.string() + ": not a checkpoint");
  }
  const auto all = file.tensor.values();
  ParamStore store;
  std::size_t offset = 0;
  for (const auto& e : m.at("params")) {
    Shape shape = e.at("shape").get<Shape>();
    const auto n = static_cast<std::size_t>(numel_of(shape));
    if (offset + n > all.size()) throw std::invalid_argument(path.string() + ": payload shorter than manifest");
    store.add(e.at("name").get<std::string>(),
              Tensor(std::move(shape), std::vector<double>(all.begin() + static_cast<std::ptrdiff_t>(offset),
                                                           all.begin() + static_cast<std::ptrdiff_t>(offset + n))));
    offset += n;
  }
  if (offset != all.size()) throw std::invalid_argument(path.string() + ": payload longer than manifest");
  if (config) *config = m.at("config");
  return store;
}

}  // namespace qmri
