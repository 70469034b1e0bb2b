#include "adapool/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cmath>
#include <numeric>
#include <sstream>

#include "adapool/error.hpp"
#include "adapool/kernels.hpp"

namespace adapool {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, bool requires_grad) : s_(std::make_shared<Storage>()) {
  s_->data.assign(shape_numel(shape), 0.0f);
  s_->shape = std::move(shape);
  s_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<float> values, bool requires_grad)
    : s_(std::make_shared<Storage>()) {
  if (values.size() != shape_numel(shape))
    throw ShapeError("Tensor: " + std::to_string(values.size()) + " values for shape " +
                     shape_str(shape));
  s_->shape = std::move(shape);
  s_->data = std::move(values);
  s_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(float value) { return Tensor({1}, std::vector<float>{value}); }

const Shape& Tensor::shape() const {
  if (!s_) throw ContractError("use of undefined tensor");
  return s_->shape;
}

std::size_t Tensor::dim(std::size_t i) const {
  if (i >= rank()) throw ShapeError("dim index out of range for " + shape_str(shape()));
  return s_->shape[i];
}

std::size_t Tensor::numel() const { return shape().empty() ? 0 : s_->data.size(); }

std::size_t Tensor::rows() const {
  if (rank() == 1) return 1;
  if (rank() != 2) throw ShapeError("expected rank 1 or 2, got " + shape_str(shape()));
  return s_->shape[0];
}

std::size_t Tensor::cols() const {
  if (rank() == 1) return s_->shape[0];
  if (rank() != 2) throw ShapeError("expected rank 1 or 2, got " + shape_str(shape()));
  return s_->shape[1];
}

std::span<float> Tensor::data() {
  shape();
  return s_->data;
}

std::span<const float> Tensor::data() const {
  shape();
  return s_->data;
}

float Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return s_->data[0];
}

bool Tensor::requires_grad() const { return s_ && s_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  shape();
  s_->requires_grad = on;
  if (!on) clear_grad();
}

bool Tensor::has_grad() const { return s_ && s_->has_grad; }

std::span<const float> Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor " + shape_str(shape()) + " has no gradient");
  return s_->grad;
}

std::span<float> Tensor::grad_buffer() const {
  shape();
  if (!s_->has_grad) {
    s_->grad.assign(s_->data.size(), 0.0f);
    s_->has_grad = true;
  }
  return s_->grad;
}

void Tensor::clear_grad() const {
  if (!s_) return;
  s_->grad.clear();
  s_->grad.shrink_to_fit();
  s_->has_grad = false;
}

Tensor Tensor::clone() const { return Tensor(shape(), s_->data, false); }

// ---------------------------------------------------------------------------
// Tape

Tape Tape::no_grad() {
  Tape t;
  t.recording_ = false;
  return t;
}

void Tape::record(const Tensor& output, std::function<void()> backward) {
  nodes_.push_back({output, std::move(backward)});
}

void Tape::backward(Tensor loss) {
  if (loss.numel() != 1)
    throw ContractError("backward: loss must be a scalar, got " + shape_str(loss.shape()));
  const bool on_tape = std::any_of(nodes_.rbegin(), nodes_.rend(),
                                   [&](const Node& n) { return n.output.same_storage(loss); });
  if (!on_tape) throw ContractError("backward: loss was not produced on this tape");
  loss.grad_buffer()[0] = 1.0f;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output.has_grad()) it->backward();
  }
  nodes_.clear();
}

// ---------------------------------------------------------------------------
// Op helpers

namespace {

bool wants_grad(const Tape& tape, std::initializer_list<const Tensor*> inputs) {
  if (!tape.recording()) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->defined() && t->requires_grad(); });
}

void check_finite(const Tensor& t, const char* op) {
  // Exponent all ones means inf or nan; the branch-free form vectorises.
  std::uint32_t bad = 0;
  for (float v : t.data()) bad |= (std::bit_cast<std::uint32_t>(v) & 0x7f800000u) == 0x7f800000u;
  if (bad) throw NumericError(std::string(op) + ": non-finite value in output");
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2)
    throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

// Destination for one op's gradient contribution to `t`. The first
// contribution is written straight into a fresh zero buffer; later ones are
// formed in a scratch buffer and added on destruction, so a tensor with
// several consumers receives exactly the sum of their contributions.
class GradSlot {
 public:
  explicit GradSlot(const Tensor& t) {
    if (!t.defined() || !t.requires_grad()) return;
    active_ = true;
    if (t.has_grad()) {
      target_ = t.grad_buffer();
      scratch_.assign(target_.size(), 0.0f);
      out_ = scratch_;
    } else {
      out_ = t.grad_buffer();
    }
  }
  GradSlot(const GradSlot&) = delete;
  GradSlot& operator=(const GradSlot&) = delete;
  ~GradSlot() {
    for (std::size_t i = 0; i < scratch_.size(); ++i) target_[i] += scratch_[i];
  }
  bool active() const { return active_; }
  std::span<float> span() const { return out_; }

 private:
  bool active_ = false;
  std::span<float> target_;
  std::vector<float> scratch_;
  std::span<float> out_;
};

}  // namespace

// ---------------------------------------------------------------------------
// Ops

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw ShapeError("matmul: inner dimensions " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  const bool grad = wants_grad(tape, {&a, &b});
  Tensor out({m, n}, grad);
  kernels::gemm(a.data(), b.data(), out.data(), m, k, n, false);
  check_finite(out, "matmul");
  if (grad) {
    tape.record(out, [a, b, out, m, k, n]() mutable {
      if (GradSlot da(a); da.active()) kernels::gemm_nt(out.grad(), b.data(), da.span(), m, n, k, true);
      if (GradSlot db(b); db.active()) kernels::gemm_tn(a.data(), out.grad(), db.span(), m, k, n, true);
    });
  }
  return out;
}

Tensor linear(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_rank2(x, "linear");
  require_rank2(w, "linear");
  const std::size_t m = x.dim(0), k = x.dim(1), n = w.dim(1);
  if (w.dim(0) != k)
    throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " +
                     shape_str(w.shape()));
  if (bias.defined() && bias.numel() != n)
    throw ShapeError("linear: bias " + shape_str(bias.shape()) + " for " + std::to_string(n) +
                     " outputs");
  const bool grad = wants_grad(tape, {&x, &w, &bias});
  Tensor out({m, n}, grad);
  kernels::gemm(x.data(), w.data(), out.data(), m, k, n, false);
  if (bias.defined()) kernels::add_row_bias(out.data(), bias.data(), m, n);
  check_finite(out, "linear");
  if (grad) {
    tape.record(out, [x, w, bias, out, m, k, n]() mutable {
      if (GradSlot dx(x); dx.active()) kernels::gemm_nt(out.grad(), w.data(), dx.span(), m, n, k, true);
      if (GradSlot dw(w); dw.active()) kernels::gemm_tn(x.data(), out.grad(), dw.span(), m, k, n, true);
      if (GradSlot db(bias); db.active()) kernels::column_sums(out.grad(), db.span(), m, n, true);
    });
  }
  return out;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const bool grad = wants_grad(tape, {&a, &b});
  Tensor out(a.shape(), grad);
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  check_finite(out, "add");
  if (grad) {
    tape.record(out, [a, b, out]() mutable {
      auto g = out.grad();
      for (const Tensor* t : {&a, &b}) {
        GradSlot slot(*t);
        if (!slot.active()) continue;
        auto dst = slot.span();
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
      }
    });
  }
  return out;
}

Tensor scale(Tape& tape, const Tensor& x, float factor) {
  const bool grad = wants_grad(tape, {&x});
  Tensor out(x.shape(), grad);
  auto o = out.data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[i] * factor;
  check_finite(out, "scale");
  if (grad) {
    tape.record(out, [x, out, factor]() mutable {
      auto g = out.grad();
      GradSlot slot(x);
      auto dst = slot.span();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * factor;
    });
  }
  return out;
}

Tensor sum(Tape& tape, const Tensor& x) {
  const bool grad = wants_grad(tape, {&x});
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  Tensor out({1}, {static_cast<float>(acc)}, grad);
  check_finite(out, "sum");
  if (grad) {
    tape.record(out, [x, out]() mutable {
      const float g = out.grad()[0];
      GradSlot slot(x);
      for (float& d : slot.span()) d += g;
    });
  }
  return out;
}

Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  require_rank2(x, "layer_norm");
  const std::size_t rows = x.dim(0), d = x.dim(1);
  if (d < 1) throw ShapeError("layer_norm: empty feature dimension");
  if (gamma.numel() != d || beta.numel() != d)
    throw ShapeError("layer_norm: scale/shift size does not match " + shape_str(x.shape()));
  const bool grad = wants_grad(tape, {&x, &gamma, &beta});
  Tensor out(x.shape(), grad);
  auto mean = std::make_shared<std::vector<float>>(rows);
  auto rstd = std::make_shared<std::vector<float>>(rows);
  kernels::layer_norm_forward(x.data(), gamma.data(), beta.data(), out.data(), *mean, *rstd, rows,
                              d, eps);
  check_finite(out, "layer_norm");
  if (grad) {
    tape.record(out, [x, gamma, beta, out, mean, rstd, rows, d]() mutable {
      GradSlot dx(x), dg(gamma), db(beta);
      kernels::layer_norm_backward(out.grad(), x.data(), gamma.data(), *mean, *rstd, dx.span(),
                                   dg.span(), db.span(), rows, d);
    });
  }
  return out;
}

Tensor gelu(Tape& tape, const Tensor& x) {
  const bool grad = wants_grad(tape, {&x});
  Tensor out(x.shape(), grad);
  kernels::gelu_forward(x.data(), out.data());
  check_finite(out, "gelu");
  if (grad) {
    tape.record(out, [x, out]() mutable {
      GradSlot dx(x);
      kernels::gelu_backward(x.data(), out.grad(), dx.span());
    });
  }
  return out;
}

Tensor softmax(Tape& tape, const Tensor& x) {
  const std::size_t rows = x.rows(), cols = x.cols();
  const bool grad = wants_grad(tape, {&x});
  Tensor out(x.shape(), grad);
  kernels::softmax_rows(x.data(), out.data(), rows, cols);
  check_finite(out, "softmax");
  if (grad) {
    tape.record(out, [x, out, rows, cols]() mutable {
      auto g = out.grad();
      auto y = out.data();
      GradSlot slot(x);
      auto dx = slot.span();
      for (std::size_t i = 0; i < rows; ++i) {
        float dot = 0.0f;
        for (std::size_t j = 0; j < cols; ++j) dot += g[i * cols + j] * y[i * cols + j];
        for (std::size_t j = 0; j < cols; ++j)
          dx[i * cols + j] += y[i * cols + j] * (g[i * cols + j] - dot);
      }
    });
  }
  return out;
}

Tensor sigmoid(Tape& tape, const Tensor& x) {
  const bool grad = wants_grad(tape, {&x});
  Tensor out(x.shape(), grad);
  auto o = out.data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = 1.0f / (1.0f + std::exp(-in[i]));
  check_finite(out, "sigmoid");
  if (grad) {
    tape.record(out, [x, out]() mutable {
      auto g = out.grad();
      auto y = out.data();
      GradSlot slot(x);
      auto dx = slot.span();
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * y[i] * (1.0f - y[i]);
    });
  }
  return out;
}

Tensor softmax_cross_entropy(Tape& tape, const Tensor& logits, std::span<const int> labels) {
  require_rank2(logits, "softmax_cross_entropy");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (labels.size() != n)
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for logits " + shape_str(logits.shape()));
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= c)
      throw ShapeError("softmax_cross_entropy: label " + std::to_string(y) + " outside [0, " +
                       std::to_string(c) + ")");
  auto z = logits.data();
  auto probs = std::make_shared<std::vector<float>>(n * c);
  kernels::softmax_rows(z, *probs, n, c);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = z.data() + i * c;
    const float mx = *std::max_element(row, row + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(static_cast<double>(row[j] - mx));
    total += std::log(s) + mx - row[labels[i]];
  }
  const bool grad = wants_grad(tape, {&logits});
  Tensor out({1}, {static_cast<float>(total / static_cast<double>(n))}, grad);
  check_finite(out, "softmax_cross_entropy");
  if (grad) {
    std::vector<int> y(labels.begin(), labels.end());
    tape.record(out, [logits, out, probs, y = std::move(y), n, c]() mutable {
      const float g = out.grad()[0] / static_cast<float>(n);
      GradSlot slot(logits);
      auto dz = slot.span();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) {
          const float onehot = static_cast<int>(j) == y[i] ? 1.0f : 0.0f;
          dz[i * c + j] += g * ((*probs)[i * c + j] - onehot);
        }
    });
  }
  return out;
}

Tensor sigmoid_bce(Tape& tape, const Tensor& logits, std::span<const float> targets) {
  if (targets.size() != logits.numel())
    throw ShapeError("sigmoid_bce: " + std::to_string(targets.size()) + " targets for logits " +
                     shape_str(logits.shape()));
  auto z = logits.data();
  const std::size_t n = z.size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double zi = z[i];
    total += std::max(zi, 0.0) - zi * targets[i] + std::log1p(std::exp(-std::abs(zi)));
  }
  const bool grad = wants_grad(tape, {&logits});
  Tensor out({1}, {static_cast<float>(total / static_cast<double>(n))}, grad);
  check_finite(out, "sigmoid_bce");
  if (grad) {
    std::vector<float> t(targets.begin(), targets.end());
    tape.record(out, [logits, out, t = std::move(t), n]() mutable {
      const float g = out.grad()[0] / static_cast<float>(n);
      auto z = logits.data();
      GradSlot slot(logits);
      auto dz = slot.span();
      for (std::size_t i = 0; i < n; ++i) {
        const float p = 1.0f / (1.0f + std::exp(-z[i]));
        dz[i] += g * (p - t[i]);
      }
    });
  }
  return out;
}

Tensor mse(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse");
  auto x = a.data();
  auto y = b.data();
  const std::size_t n = x.size();
  if (n == 0) throw ShapeError("mse: empty input");
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double diff = static_cast<double>(x[i]) - static_cast<double>(y[i]);
    total += diff * diff;
  }
  const bool grad = wants_grad(tape, {&a, &b});
  Tensor out({1}, {static_cast<float>(total / static_cast<double>(n))}, grad);
  check_finite(out, "mse");
  if (grad) {
    tape.record(out, [a, b, out, n]() mutable {
      const float g = 2.0f * out.grad()[0] / static_cast<float>(n);
      auto x = a.data();
      auto y = b.data();
      if (GradSlot slot(a); slot.active()) {
        auto da = slot.span();
        for (std::size_t i = 0; i < n; ++i) da[i] += g * (x[i] - y[i]);
      }
      if (GradSlot slot(b); slot.active()) {
        auto db = slot.span();
        for (std::size_t i = 0; i < n; ++i) db[i] += g * (y[i] - x[i]);
      }
    });
  }
  return out;
}

Tensor concat_cols(Tape& tape, std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t rows = parts.front().rows();
  std::size_t total = 0;
  bool grad = false;
  for (const Tensor& p : parts) {
    if (p.rows() != rows)
      throw ShapeError("concat_cols: row count mismatch " + shape_str(p.shape()));
    total += p.cols();
    grad = grad || p.requires_grad();
  }
  grad = grad && tape.recording();
  Tensor out({rows, total}, grad);
  auto o = out.data();
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t c = p.cols();
    auto src = p.data();
    for (std::size_t i = 0; i < rows; ++i)
      std::copy_n(src.data() + i * c, c, o.data() + i * total + offset);
    offset += c;
  }
  if (grad) {
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    tape.record(out, [inputs, out, rows, total]() mutable {
      auto g = out.grad();
      std::size_t offset = 0;
      for (Tensor& p : inputs) {
        const std::size_t c = p.cols();
        if (GradSlot slot(p); slot.active()) {
          auto dst = slot.span();
          for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < c; ++j) dst[i * c + j] += g[i * total + offset + j];
        }
        offset += c;
      }
    });
  }
  return out;
}

Tensor select_rows(Tape& tape, const Tensor& x, std::size_t stride, std::size_t offset) {
  require_rank2(x, "select_rows");
  const std::size_t rows = x.dim(0), d = x.dim(1);
  if (stride == 0 || rows % stride != 0 || offset >= stride)
    throw ShapeError("select_rows: stride " + std::to_string(stride) + " / offset " +
                     std::to_string(offset) + " invalid for " + shape_str(x.shape()));
  const std::size_t n = rows / stride;
  const bool grad = wants_grad(tape, {&x});
  Tensor out({n, d}, grad);
  auto src = x.data();
  auto o = out.data();
  for (std::size_t r = 0; r < n; ++r)
    std::copy_n(src.data() + (offset + r * stride) * d, d, o.data() + r * d);
  if (grad) {
    tape.record(out, [x, out, n, d, stride, offset]() mutable {
      auto g = out.grad();
      GradSlot slot(x);
      auto dst = slot.span();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < d; ++j) dst[(offset + r * stride) * d + j] += g[r * d + j];
    });
  }
  return out;
}

Tensor embed_tokens(Tape& tape, const Tensor& patches, const Tensor& cls, const Tensor& pos,
                    std::size_t batch) {
  require_rank2(patches, "embed_tokens");
  require_rank2(cls, "embed_tokens");
  require_rank2(pos, "embed_tokens");
  const std::size_t d = patches.dim(1);
  const std::size_t regs = cls.dim(0);
  if (batch == 0 || patches.dim(0) % batch != 0)
    throw ShapeError("embed_tokens: patch rows not divisible by batch");
  const std::size_t np = patches.dim(0) / batch;
  const std::size_t tokens = regs + np;
  if (cls.dim(1) != d || pos.dim(1) != d || pos.dim(0) != tokens)
    throw ShapeError("embed_tokens: cls " + shape_str(cls.shape()) + " / pos " +
                     shape_str(pos.shape()) + " do not fit " + std::to_string(np) +
                     " patches of width " + std::to_string(d));
  const bool grad = wants_grad(tape, {&patches, &cls, &pos});
  Tensor out({batch * tokens, d}, grad);
  auto o = out.data();
  auto pe = patches.data();
  auto c = cls.data();
  auto p = pos.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < tokens; ++t) {
      float* dst = o.data() + (b * tokens + t) * d;
      const float* src = t < regs ? c.data() + t * d : pe.data() + (b * np + t - regs) * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] = src[j] + p[t * d + j];
    }
  }
  check_finite(out, "embed_tokens");
  if (grad) {
    tape.record(out, [patches, cls, pos, out, batch, tokens, regs, np, d]() mutable {
      auto g = out.grad();
      GradSlot patch_slot(patches), cls_slot(cls), pos_slot(pos);
      auto dpe = patch_slot.span();
      auto dc = cls_slot.span();
      auto dp = pos_slot.span();
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t t = 0; t < tokens; ++t) {
          const float* src = g.data() + (b * tokens + t) * d;
          if (!dp.empty())
            for (std::size_t j = 0; j < d; ++j) dp[t * d + j] += src[j];
          if (t < regs) {
            if (!dc.empty())
              for (std::size_t j = 0; j < d; ++j) dc[t * d + j] += src[j];
          } else if (!dpe.empty()) {
            for (std::size_t j = 0; j < d; ++j) dpe[(b * np + t - regs) * d + j] += src[j];
          }
        }
      }
    });
  }
  return out;
}

Tensor self_attention(Tape& tape, const Tensor& qkv, std::size_t batch, std::size_t heads) {
  require_rank2(qkv, "self_attention");
  const std::size_t width = qkv.dim(1);
  if (batch == 0 || heads == 0 || qkv.dim(0) % batch != 0 || width % (3 * heads) != 0)
    throw ShapeError("self_attention: cannot split " + shape_str(qkv.shape()) + " into " +
                     std::to_string(batch) + " sequences and " + std::to_string(heads) + " heads");
  const std::size_t tokens = qkv.dim(0) / batch;
  const std::size_t d = width / 3;
  const std::size_t head_dim = d / heads;
  const bool grad = wants_grad(tape, {&qkv});
  Tensor out({batch * tokens, d}, grad);
  auto probs = std::make_shared<std::vector<float>>(batch * heads * tokens * tokens);
  kernels::attention_forward(qkv.data(), out.data(), *probs, batch, tokens, heads, head_dim);
  check_finite(out, "self_attention");
  if (grad) {
    tape.record(out, [qkv, out, probs, batch, tokens, heads, head_dim]() mutable {
      GradSlot slot(qkv);
      kernels::attention_backward(qkv.data(), *probs, out.grad(), slot.span(), batch, tokens, heads,
                                  head_dim);
    });
  }
  return out;
}

Tensor weighted_sq_distance(Tape& tape, const Tensor& theta, std::span<const float> anchor,
                            std::span<const float> weights) {
  const std::size_t n = theta.numel();
  if (anchor.size() != n || weights.size() != n)
    throw ShapeError("weighted_sq_distance: anchor/weights do not match " +
                     shape_str(theta.shape()));
  auto x = theta.data();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double diff = static_cast<double>(x[i]) - anchor[i];
    total += weights[i] * diff * diff;
  }
  const bool grad = wants_grad(tape, {&theta});
  Tensor out({1}, {static_cast<float>(total)}, grad);
  check_finite(out, "weighted_sq_distance");
  if (grad) {
    tape.record(out, [theta, out, anchor, weights, n]() mutable {
      const float g = out.grad()[0];
      auto x = theta.data();
      GradSlot slot(theta);
      auto dx = slot.span();
      for (std::size_t i = 0; i < n; ++i) dx[i] += g * 2.0f * weights[i] * (x[i] - anchor[i]);
    });
  }
  return out;
}

}  // namespace adapool
