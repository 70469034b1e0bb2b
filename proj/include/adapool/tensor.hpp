#pragma once

// Dense float32 tensors with a reverse-mode gradient tape.
//
// A Tensor is a shared handle: copies alias the same storage, `clone()` makes
// an independent copy. Ops take the Tape they record on as first argument.
// An op records a backward closure only when the tape is recording and at
// least one input requires a gradient; its output then requires a gradient
// too. Gradient buffers are allocated lazily, so tensors that never receive
// a gradient (frozen parameters, inputs) never own one.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace adapool {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  /// Zero-filled tensor.
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<float> values, bool requires_grad = false);
  Tensor(Shape shape, std::initializer_list<float> values, bool requires_grad = false)
      : Tensor(std::move(shape), std::vector<float>(values), requires_grad) {}

  static Tensor scalar(float value);

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t numel() const;
  /// Rows and columns of a rank-2 tensor; a rank-1 tensor is one row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<float> data();
  std::span<const float> data() const;
  float item() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);

  bool has_grad() const;
  std::span<const float> grad() const;
  /// Gradient buffer, zero-allocated on first use.
  std::span<float> grad_buffer() const;
  void clear_grad() const;

  /// Deep copy of shape and values; the copy has no gradient and does not
  /// require one.
  Tensor clone() const;
  bool same_storage(const Tensor& other) const { return s_ == other.s_; }
  const void* id() const { return s_.get(); }

 private:
  struct Storage {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad;
    bool requires_grad = false;
    bool has_grad = false;
  };
  std::shared_ptr<Storage> s_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  /// A tape that never records; ops on it produce plain values.
  static Tape no_grad();

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  void record(const Tensor& output, std::function<void()> backward);

  /// Seeds d(loss)/d(loss) = 1 and runs the recorded closures in exact
  /// reverse order. `loss` must be a scalar produced on this tape.
  void backward(Tensor loss);

 private:
  struct Node {
    Tensor output;
    std::function<void()> backward;
  };
  std::vector<Node> nodes_;
  bool recording_ = true;
};

// ---------------------------------------------------------------------------
// Ops. Rank-2 inputs unless stated otherwise; scalars have shape {1}.

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
/// x[m x k] * w[k x n] + bias[n]; bias may be undefined.
Tensor linear(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& bias = {});
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& x, float factor);
Tensor sum(Tape& tape, const Tensor& x);

Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  float eps = 1e-5f);
Tensor gelu(Tape& tape, const Tensor& x);
/// Row-wise softmax.
Tensor softmax(Tape& tape, const Tensor& x);
Tensor sigmoid(Tape& tape, const Tensor& x);

/// Mean over rows of -log softmax(logits)[label]; log-sum-exp stabilised.
Tensor softmax_cross_entropy(Tape& tape, const Tensor& logits, std::span<const int> labels);
/// Mean over entries of the logistic loss against targets in [0, 1].
Tensor sigmoid_bce(Tape& tape, const Tensor& logits, std::span<const float> targets);
/// Mean over all entries of (a - b)^2.
Tensor mse(Tape& tape, const Tensor& a, const Tensor& b);

Tensor concat_cols(Tape& tape, std::span<const Tensor> parts);
/// Rows offset, offset + stride, offset + 2 * stride, ...
Tensor select_rows(Tape& tape, const Tensor& x, std::size_t stride, std::size_t offset);

/// Builds the token sequence [cls rows | patch rows] + position embedding for
/// each image. patches: [batch * P x d], cls: [R x d], pos: [(R + P) x d].
Tensor embed_tokens(Tape& tape, const Tensor& patches, const Tensor& cls, const Tensor& pos,
                    std::size_t batch);
/// Multi-head scaled dot-product self-attention over packed q|k|v rows.
Tensor self_attention(Tape& tape, const Tensor& qkv, std::size_t batch, std::size_t heads);

/// sum_k weights[k] * (theta[k] - anchor[k])^2. anchor and weights are not
/// copied; they must outlive the backward pass.
Tensor weighted_sq_distance(Tape& tape, const Tensor& theta, std::span<const float> anchor,
                            std::span<const float> weights);

}  // namespace adapool
