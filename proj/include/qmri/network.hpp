#pragma once

// Learned components: a shared-weight per-frame U-Net whose skip connections
// carry Latent Transformer (LT) blocks attending across frames pixel by pixel,
// and a small convolutional refiner for coil sensitivity maps.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "qmri/tensor.hpp"

namespace qmri {

struct UNetConfig {
  int depth = 3;
  int base_channels = 8;  // doubles per level
  bool zero_init_out = true;  // final conv starts at zero: the network is the identity

  int channels(int level) const { return base_channels << level; }
  void validate() const;
};

struct LTConfig {
  int heads = 2;
  int layers_per_block = 2;
  bool pre_norm = true;
  bool positional_embedding = false;
  int max_frames = 16;  // rows of the positional table
  bool zero_init_out = true;

  void validate() const;
};

struct CsmRefinerConfig {
  int hidden = 16;
  bool zero_init_out = true;

  void validate() const;
};

// Named learnable tensors. Copying a store copies handles, not values.
class ParamStore {
 public:
  void add(const std::string& name, Tensor value);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  void set(const std::string& name, Tensor value);  // replaces the handle, shape must match

  std::vector<std::string> names() const;
  std::vector<Tensor> tensors() const;
  std::int64_t numel() const;
  std::size_t size() const { return params_.size(); }

  void set_requires_grad(bool flag);
  void zero_grad();
  ParamStore clone() const;  // deep copy of the values, no graph history
  // Adds every tensor of `other` under `prefix` + name.
  void merge(const ParamStore& other, const std::string& prefix);
  ParamStore with_prefix(const std::string& prefix) const;  // entries under prefix, prefix stripped

  bool equal_values(const ParamStore& other) const;

 private:
  std::map<std::string, Tensor> params_;
};

// Deterministic per-tensor initialization: the generator for each tensor is
// seeded from a hash of (seed, name), so adding or removing other tensors does
// not change it.
std::uint64_t param_seed(std::uint64_t seed, const std::string& name);

ParamStore init_unet(const UNetConfig& ucfg, const LTConfig& ltcfg, bool with_lt, std::uint64_t seed);
void init_lt_block(ParamStore& store, const std::string& prefix, int channels, const LTConfig& cfg, std::uint64_t seed);
ParamStore init_csm_refiner(const CsmRefinerConfig& cfg, std::uint64_t seed);

// latents [T, C, h, w] -> [T, C, h, w]. Tokens are the T channel vectors at each
// pixel; each layer adds multi-head self-attention of the (optionally
// normalized) tokens to the residual stream.
Tensor lt_block_forward(const Tensor& latents, const ParamStore& params, const std::string& prefix,
                        const LTConfig& cfg);

// frames [T, 2, H, W] -> [T, 2, H, W]. Without LT parameters every skip passes
// the encoder latent twice, which is what a zero-initialized LT produces.
Tensor unet_forward(const Tensor& frames, const ParamStore& params, const UNetConfig& ucfg, const LTConfig& ltcfg,
                    bool with_lt);

// csm [Wc, H, W, 2] -> refined csm with unit sum-of-squares on support.
Tensor csm_refine(const Tensor& csm, const std::vector<std::uint8_t>& support, const ParamStore& params,
                  const CsmRefinerConfig& cfg);

// [T, H, W, 2] <-> [T, 2, H, W].
Tensor frames_to_channels(const Tensor& frames);
Tensor channels_to_frames(const Tensor& x);

nlohmann::json to_json(const UNetConfig& c);
nlohmann::json to_json(const LTConfig& c);
nlohmann::json to_json(const CsmRefinerConfig& c);
// Strict: unknown keys throw std::invalid_argument.
void from_json(const nlohmann::json& j, UNetConfig& c);
void from_json(const nlohmann::json& j, LTConfig& c);
void from_json(const nlohmann::json& j, CsmRefinerConfig& c);

// Checkpoint: one tensor file holding every parameter back to back (f64), with
// a manifest of names, shapes and the caller's config block.
void save_checkpoint(const std::filesystem::path& path, const ParamStore& params, const nlohmann::json& config);
ParamStore load_checkpoint(const std::filesystem::path& path, nlohmann::json* config = nullptr);

}  // namespace qmri
