#include "adapool/backbone.hpp"

#include <algorithm>
#include <cmath>

#include "adapool/error.hpp"
#include "adapool/rng.hpp"

namespace adapool {

namespace {

constexpr float kInitStd = 0.02f;

// Seed-stream tags, one per kind of parameter block.
enum : std::uint64_t { kTagBackbone = 0xb0, kTagAdapter = 0xad, kTagHead = 0x4e };

Tensor trunc_normal(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (float& v : t.data()) v = static_cast<float>(rng.truncated_normal(kInitStd));
  return t;
}

Tensor filled(Shape shape, float value) {
  Tensor t(std::move(shape));
  std::fill(t.data().begin(), t.data().end(), value);
  return t;
}

Bottleneck build_bottleneck(std::size_t d, std::size_t m, Rng& rng) {
  Bottleneck b;
  b.down_w = trunc_normal({d, m}, rng);
  b.down_b = Tensor({m});
  b.up_w = trunc_normal({m, d}, rng);
  b.up_b = Tensor({d});
  return b;
}

Bottleneck clone_bottleneck(const Bottleneck& b) {
  return {b.down_w.clone(), b.down_b.clone(), b.up_w.clone(), b.up_b.clone()};
}

void add_bottleneck(ParamList& out, const std::string& prefix, const Bottleneck& b) {
  out.push_back({prefix + ".down_w", b.down_w});
  out.push_back({prefix + ".down_b", b.down_b});
  out.push_back({prefix + ".up_w", b.up_w});
  out.push_back({prefix + ".up_b", b.up_b});
}

Tensor apply_bottleneck(Tape& tape, const Bottleneck& b, const Tensor& h) {
  const Tensor inner = gelu(tape, linear(tape, h, b.down_w, b.down_b));
  return add(tape, h, linear(tape, inner, b.up_w, b.up_b));
}

// [b x C x H x W] images to [b * P x C * p * p] patch rows, channel-major
// within each patch.
Tensor patchify(const BackboneConfig& cfg, const Tensor& images) {
  if (images.rank() != 4 || images.dim(1) != cfg.channels || images.dim(2) != cfg.image_size ||
      images.dim(3) != cfg.image_size)
    throw ShapeError("forward: images " + shape_str(images.shape()) + " do not match a " +
                     std::to_string(cfg.channels) + "x" + std::to_string(cfg.image_size) + "x" +
                     std::to_string(cfg.image_size) + " backbone");
  const std::size_t batch = images.dim(0);
  const std::size_t side = cfg.patches_per_side();
  const std::size_t p = cfg.patch_size;
  const std::size_t hw = cfg.image_size;
  Tensor out({batch * cfg.num_patches(), cfg.patch_dim()});
  auto src = images.data();
  auto dst = out.data();
  std::size_t k = 0;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t py = 0; py < side; ++py)
      for (std::size_t px = 0; px < side; ++px)
        for (std::size_t c = 0; c < cfg.channels; ++c)
          for (std::size_t y = 0; y < p; ++y) {
            const float* row = src.data() + ((b * cfg.channels + c) * hw + py * p + y) * hw + px * p;
            for (std::size_t x = 0; x < p; ++x) dst[k++] = row[x];
          }
  return out;
}

void check_adapter(const BackboneConfig& cfg, const Adapter& a) {
  if (a.layers.size() != cfg.num_layers)
    throw ShapeError("adapter has " + std::to_string(a.layers.size()) + " layers, backbone has " +
                     std::to_string(cfg.num_layers));
  if (!a.layers.empty() && a.layers.front().attn.down_w.dim(0) != cfg.hidden_dim)
    throw ShapeError("adapter width does not match backbone hidden_dim");
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

BackboneConfig BackboneConfig::tiny() { return BackboneConfig{}; }

BackboneConfig BackboneConfig::vitb_shape() {
  BackboneConfig c;
  c.image_size = 224;
  c.patch_size = 16;
  c.channels = 3;
  c.num_layers = 12;
  c.hidden_dim = 768;
  c.num_heads = 12;
  c.mlp_ratio = 4.0;
  c.num_registers = 1;
  c.adapter_dim = 48;
  return c;
}

BackboneConfig BackboneConfig::preset(const std::string& name) {
  if (name == "tiny") return tiny();
  if (name == "vitb-shape") return vitb_shape();
  throw ConfigError("unknown backbone preset '" + name + "' (expected tiny or vitb-shape)");
}

std::size_t BackboneConfig::mlp_dim() const {
  return static_cast<std::size_t>(std::llround(mlp_ratio * static_cast<double>(hidden_dim)));
}

void BackboneConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("backbone config: " + msg); };
  if (image_size == 0 || patch_size == 0 || channels == 0 || num_layers == 0 || hidden_dim == 0 ||
      num_heads == 0 || num_registers == 0)
    fail("sizes must be positive");
  if (image_size % patch_size != 0) fail("image_size must be divisible by patch_size");
  if (hidden_dim % num_heads != 0) fail("hidden_dim must be divisible by num_heads");
  if (!(mlp_ratio > 0.0) || mlp_dim() == 0) fail("mlp_ratio must be positive");
  if (adapter_dim == 0) fail("adapter_dim must be positive");
}

// ---------------------------------------------------------------------------
// Parameter containers

std::vector<Tensor> tensors_of(const ParamList& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

void set_trainable(const ParamList& params, bool on) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.set_requires_grad(on);
  }
}

std::size_t numel_of(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

ParamList BackboneParams::named() const {
  ParamList out{{"patch_w", patch_w}, {"patch_b", patch_b}, {"cls", cls}, {"pos", pos}};
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const LayerParams& L = layers[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    for (auto [name, t] : {std::pair<const char*, const Tensor*>{"ln1_g", &L.ln1_g},
                           {"ln1_b", &L.ln1_b},
                           {"qkv_w", &L.qkv_w},
                           {"qkv_b", &L.qkv_b},
                           {"proj_w", &L.proj_w},
                           {"proj_b", &L.proj_b},
                           {"ln2_g", &L.ln2_g},
                           {"ln2_b", &L.ln2_b},
                           {"fc1_w", &L.fc1_w},
                           {"fc1_b", &L.fc1_b},
                           {"fc2_w", &L.fc2_w},
                           {"fc2_b", &L.fc2_b}})
      out.push_back({p + name, *t});
  }
  out.push_back({"ln_g", ln_g});
  out.push_back({"ln_b", ln_b});
  return out;
}

BackboneParams BackboneParams::clone() const {
  BackboneParams c;
  c.config = config;
  c.patch_w = patch_w.clone();
  c.patch_b = patch_b.clone();
  c.cls = cls.clone();
  c.pos = pos.clone();
  for (const LayerParams& L : layers) {
    c.layers.push_back({L.ln1_g.clone(), L.ln1_b.clone(), L.qkv_w.clone(), L.qkv_b.clone(),
                        L.proj_w.clone(), L.proj_b.clone(), L.ln2_g.clone(), L.ln2_b.clone(),
                        L.fc1_w.clone(), L.fc1_b.clone(), L.fc2_w.clone(), L.fc2_b.clone()});
  }
  c.ln_g = ln_g.clone();
  c.ln_b = ln_b.clone();
  return c;
}

ParamList Adapter::named() const {
  ParamList out;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "adapter.layer" + std::to_string(l);
    add_bottleneck(out, p + ".attn", layers[l].attn);
    add_bottleneck(out, p + ".mlp", layers[l].mlp);
  }
  return out;
}

Adapter Adapter::clone() const {
  Adapter c;
  c.bottleneck_dim = bottleneck_dim;
  for (const AdapterLayer& l : layers)
    c.layers.push_back({clone_bottleneck(l.attn), clone_bottleneck(l.mlp)});
  return c;
}

void Adapter::zero_up_projections() {
  for (AdapterLayer& l : layers) {
    for (Bottleneck* b : {&l.attn, &l.mlp}) {
      std::fill(b->up_w.data().begin(), b->up_w.data().end(), 0.0f);
      std::fill(b->up_b.data().begin(), b->up_b.data().end(), 0.0f);
    }
  }
}

ParamList Head::named(const std::string& prefix) const { return {{prefix + ".w", w}}; }

Head Head::clone() const { return {w.clone()}; }

// ---------------------------------------------------------------------------
// Construction

BackboneParams build_backbone(const BackboneConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(derive_seed(seed, {kTagBackbone}));
  const std::size_t d = config.hidden_dim;
  const std::size_t f = config.mlp_dim();
  BackboneParams th;
  th.config = config;
  th.patch_w = trunc_normal({config.patch_dim(), d}, rng);
  th.patch_b = Tensor({d});
  th.cls = trunc_normal({config.num_registers, d}, rng);
  th.pos = trunc_normal({config.num_tokens(), d}, rng);
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    LayerParams L;
    L.ln1_g = filled({d}, 1.0f);
    L.ln1_b = Tensor({d});
    L.qkv_w = trunc_normal({d, 3 * d}, rng);
    L.qkv_b = Tensor({3 * d});
    L.proj_w = trunc_normal({d, d}, rng);
    L.proj_b = Tensor({d});
    L.ln2_g = filled({d}, 1.0f);
    L.ln2_b = Tensor({d});
    L.fc1_w = trunc_normal({d, f}, rng);
    L.fc1_b = Tensor({f});
    L.fc2_w = trunc_normal({f, d}, rng);
    L.fc2_b = Tensor({d});
    th.layers.push_back(std::move(L));
  }
  th.ln_g = filled({d}, 1.0f);
  th.ln_b = Tensor({d});
  return th;
}

Adapter build_adapter(const BackboneConfig& config, std::uint64_t seed,
                      std::size_t bottleneck_dim) {
  config.validate();
  const std::size_t m = bottleneck_dim == 0 ? config.adapter_dim : bottleneck_dim;
  Rng rng(derive_seed(seed, {kTagAdapter}));
  Adapter a;
  a.bottleneck_dim = m;
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    AdapterLayer layer;
    layer.attn = build_bottleneck(config.hidden_dim, m, rng);
    layer.mlp = build_bottleneck(config.hidden_dim, m, rng);
    a.layers.push_back(std::move(layer));
  }
  return a;
}

Head build_head(const BackboneConfig& config, std::size_t out_dim, std::uint64_t seed) {
  if (out_dim == 0) throw ConfigError("head out_dim must be positive");
  Rng rng(derive_seed(seed, {kTagHead}));
  return {trunc_normal({config.hidden_dim, out_dim}, rng)};
}

Tensor images_to_tensor(const BackboneConfig& config, std::span<const std::uint8_t> pixels,
                        std::size_t count) {
  const std::size_t per = config.image_numel();
  if (pixels.size() != count * per)
    throw ShapeError("images_to_tensor: " + std::to_string(pixels.size()) + " bytes for " +
                     std::to_string(count) + " images of " + std::to_string(per));
  Tensor t({count, config.channels, config.image_size, config.image_size});
  auto dst = t.data();
  for (std::size_t i = 0; i < pixels.size(); ++i)
    dst[i] = (static_cast<float>(pixels[i]) - 127.5f) / 127.5f;
  return t;
}

// ---------------------------------------------------------------------------
// Forward

Tensor extract_features(Tape& tape, const BackboneParams& theta, const Adapter* adapter,
                        const Tensor& images) {
  const BackboneConfig& cfg = theta.config;
  if (adapter) check_adapter(cfg, *adapter);
  const std::size_t batch = images.rank() == 4 ? images.dim(0) : 0;
  const Tensor patches = patchify(cfg, images);
  Tensor x = embed_tokens(tape, linear(tape, patches, theta.patch_w, theta.patch_b), theta.cls,
                          theta.pos, batch);
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const LayerParams& L = theta.layers[l];
    Tensor h = layer_norm(tape, x, L.ln1_g, L.ln1_b);
    h = self_attention(tape, linear(tape, h, L.qkv_w, L.qkv_b), batch, cfg.num_heads);
    h = linear(tape, h, L.proj_w, L.proj_b);
    if (adapter) h = apply_bottleneck(tape, adapter->layers[l].attn, h);
    x = add(tape, x, h);

    Tensor m = layer_norm(tape, x, L.ln2_g, L.ln2_b);
    m = linear(tape, gelu(tape, linear(tape, m, L.fc1_w, L.fc1_b)), L.fc2_w, L.fc2_b);
    if (adapter) m = apply_bottleneck(tape, adapter->layers[l].mlp, m);
    x = add(tape, x, m);
  }
  // Layer norm is row-wise, so selecting the class rows first is equivalent.
  const Tensor cls_rows = select_rows(tape, x, cfg.num_tokens(), 0);
  return layer_norm(tape, cls_rows, theta.ln_g, theta.ln_b);
}

Tensor apply_head(Tape& tape, const Head& head, const Tensor& features) {
  return matmul(tape, features, head.w);
}

Tensor forward(Tape& tape, const BackboneParams& theta, const Adapter* adapter, const Head& head,
               const Tensor& images) {
  return apply_head(tape, head, extract_features(tape, theta, adapter, images));
}

// ---------------------------------------------------------------------------
// Accounting

std::uint64_t count_backbone(const BackboneConfig& c) {
  c.validate();
  const std::uint64_t d = c.hidden_dim;
  const std::uint64_t f = c.mlp_dim();
  const std::uint64_t embed = c.patch_dim() * d + d + c.num_registers * d + c.num_tokens() * d;
  const std::uint64_t layer = 2 * d                // ln1
                              + d * 3 * d + 3 * d  // qkv
                              + d * d + d          // proj
                              + 2 * d              // ln2
                              + d * f + f          // fc1
                              + f * d + d;         // fc2
  return embed + c.num_layers * layer + 2 * d;
}

std::uint64_t count_adapter(const BackboneConfig& c, std::size_t m) {
  c.validate();
  const std::uint64_t d = c.hidden_dim;
  return c.num_layers * 2 * (2 * d * m + m + d);
}

std::uint64_t count_head(const BackboneConfig& c, std::size_t out_dim) {
  return static_cast<std::uint64_t>(c.hidden_dim) * out_dim;
}

MethodCounts method_counts(const BackboneConfig& config, const MethodCountQuery& q) {
  const std::uint64_t B = count_backbone(config);
  const std::uint64_t A =
      count_adapter(config, q.bottleneck_dim == 0 ? config.adapter_dim : q.bottleneck_dim);
  const std::uint64_t n = q.n_tasks;
  const std::uint64_t h = q.include_heads ? count_head(config, q.head_out_dim) : 0;
  const std::uint64_t heads = n * h;

  const std::string& m = q.method;
  if (m == "b1") {
    if (!q.include_heads) return {B, B, B};
    return {h, B + h, B + heads};
  }
  if (m == "b2" || m == "ewc") return {B + h, B + h, B + heads};
  if (m == "adapters") return {A + h, B + q.fused * A + h, B + n * A + heads};
  if (m == "er") return {A + h, B + A + h, B + A + heads};
  if (m == "ada-leep" || m == "ada-transrate" || m == "ada-k1") {
    const std::uint64_t K = m == "ada-k1" ? 1 : q.pool_size;
    if (K == 0) throw QueryError("method_counts: pool size must be positive");
    const bool consolidating = n > K;
    const std::uint64_t stored = std::min(n, K) + (consolidating ? 1 : 0);
    return {(consolidating ? 2 : 1) * A + h, B + A + h, B + stored * A + heads};
  }
  throw QueryError("count_params: unknown method '" + m + "'");
}

std::uint64_t count_params(const BackboneConfig& config, const ParamQuery& query) {
  switch (query.kind) {
    case ParamQuery::Kind::backbone:
      return count_backbone(config);
    case ParamQuery::Kind::adapter:
      return count_adapter(config, query.bottleneck_dim == 0 ? config.adapter_dim
                                                             : query.bottleneck_dim);
    case ParamQuery::Kind::head:
      return count_head(config, query.out_dim);
    case ParamQuery::Kind::method_total:
      return method_counts(config, query.method).total;
  }
  throw QueryError("count_params: unknown query kind");
}

}  // namespace adapool
