#pragma once

// Vision transformer with frozen weights, per-layer bottleneck adapters and
// per-task linear heads.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "adapool/tensor.hpp"

namespace adapool {

struct BackboneConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 4;
  std::size_t channels = 3;
  std::size_t num_layers = 2;
  std::size_t hidden_dim = 64;
  std::size_t num_heads = 4;
  double mlp_ratio = 4.0;
  std::size_t num_registers = 1;
  /// Bottleneck width m used for adapters built from this config.
  std::size_t adapter_dim = 8;

  static BackboneConfig tiny();
  static BackboneConfig vitb_shape();
  /// "tiny" or "vitb-shape"; throws ConfigError otherwise.
  static BackboneConfig preset(const std::string& name);

  /// Throws ConfigError on an inconsistent configuration.
  void validate() const;

  std::size_t patches_per_side() const { return image_size / patch_size; }
  std::size_t num_patches() const { return patches_per_side() * patches_per_side(); }
  std::size_t num_tokens() const { return num_patches() + num_registers; }
  std::size_t patch_dim() const { return channels * patch_size * patch_size; }
  std::size_t mlp_dim() const;
  std::size_t image_numel() const { return channels * image_size * image_size; }

  bool operator==(const BackboneConfig&) const = default;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
/// Ordered parameter list; names are unique within a list.
using ParamList = std::vector<NamedTensor>;

std::vector<Tensor> tensors_of(const ParamList& params);
void set_trainable(const ParamList& params, bool on);
std::size_t numel_of(const ParamList& params);

struct LayerParams {
  Tensor ln1_g, ln1_b;
  Tensor qkv_w, qkv_b;
  Tensor proj_w, proj_b;
  Tensor ln2_g, ln2_b;
  Tensor fc1_w, fc1_b;
  Tensor fc2_w, fc2_b;
};

/// Θ. Frozen unless set_trainable(named(), true) is called on it.
struct BackboneParams {
  BackboneConfig config;
  Tensor patch_w, patch_b;
  Tensor cls;
  Tensor pos;
  std::vector<LayerParams> layers;
  Tensor ln_g, ln_b;

  ParamList named() const;
  /// Independent copy with the same values; frozen.
  BackboneParams clone() const;
};

struct Bottleneck {
  Tensor down_w, down_b;
  Tensor up_w, up_b;
};

struct AdapterLayer {
  Bottleneck attn;
  Bottleneck mlp;
};

/// Φ: two residual bottlenecks per layer, after the attention and the MLP
/// sub-blocks.
struct Adapter {
  std::size_t bottleneck_dim = 0;
  std::vector<AdapterLayer> layers;

  ParamList named() const;
  Adapter clone() const;
  /// Zeroes every up-projection weight and bias, making the adapter the
  /// identity map.
  void zero_up_projections();
};

/// Linear map d -> out_dim without bias.
struct Head {
  Tensor w;

  std::size_t out_dim() const { return w.cols(); }
  bool binary() const { return out_dim() == 1; }
  ParamList named(const std::string& prefix = "head") const;
  Head clone() const;
};

BackboneParams build_backbone(const BackboneConfig& config, std::uint64_t seed);
/// Fresh adapter; bottleneck_dim 0 means config.adapter_dim.
Adapter build_adapter(const BackboneConfig& config, std::uint64_t seed,
                      std::size_t bottleneck_dim = 0);
Head build_head(const BackboneConfig& config, std::size_t out_dim, std::uint64_t seed);

/// uint8 images [n x C x H x W] mapped to floats in [-1, 1] with shape
/// {n, C, H, W}.
Tensor images_to_tensor(const BackboneConfig& config, std::span<const std::uint8_t> pixels,
                        std::size_t count);

/// Final-LN class-token representation [b x d]. adapter may be null.
Tensor extract_features(Tape& tape, const BackboneParams& theta, const Adapter* adapter,
                        const Tensor& images);
Tensor apply_head(Tape& tape, const Head& head, const Tensor& features);
/// Logits [b x out_dim].
Tensor forward(Tape& tape, const BackboneParams& theta, const Adapter* adapter, const Head& head,
               const Tensor& images);

// ---------------------------------------------------------------------------
// Parameter accounting

std::uint64_t count_backbone(const BackboneConfig& config);
std::uint64_t count_adapter(const BackboneConfig& config, std::size_t bottleneck_dim);
std::uint64_t count_head(const BackboneConfig& config, std::size_t out_dim);

struct MethodCounts {
  std::uint64_t trainable = 0;
  std::uint64_t inference = 0;
  std::uint64_t total = 0;
};

struct MethodCountQuery {
  std::string method;  // ada-leep, ada-transrate, ada-k1, b1, b2, adapters, er, ewc
  std::size_t n_tasks = 1;
  std::size_t pool_size = 4;
  std::size_t head_out_dim = 1;
  /// Number of adapters fused at inference for the adapters row.
  std::size_t fused = 1;
  /// Off reproduces the table layout, which leaves heads out and groups B1
  /// with the fine-tuning methods.
  bool include_heads = true;
  std::size_t bottleneck_dim = 0;  // 0 means config.adapter_dim
};

/// Trainable / inference / stored parameter totals after n_tasks tasks.
/// Throws QueryError for an unknown method.
MethodCounts method_counts(const BackboneConfig& config, const MethodCountQuery& query);

struct ParamQuery {
  enum class Kind { backbone, adapter, head, method_total };
  Kind kind = Kind::backbone;
  std::size_t bottleneck_dim = 0;
  std::size_t out_dim = 1;
  MethodCountQuery method;

  static ParamQuery backbone() { return {}; }
  static ParamQuery adapter(std::size_t m) { return {Kind::adapter, m, 1, {}}; }
  static ParamQuery head(std::size_t out) { return {Kind::head, 0, out, {}}; }
  static ParamQuery method_total(MethodCountQuery q) { return {Kind::method_total, 0, 1, std::move(q)}; }
};

std::uint64_t count_params(const BackboneConfig& config, const ParamQuery& query);

constexpr std::uint64_t kBytesPerParam = 4;

}  // namespace adapool
