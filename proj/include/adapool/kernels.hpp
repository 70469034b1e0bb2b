#pragma once

// Dense float32 kernels behind the autodiff ops.
//
// Every kernel in `adapool::kernels` parallelises over independent output
// rows (or attention heads) with OpenMP. Each output element is produced by a
// single thread with a fixed accumulation order, so results are bitwise
// independent of the thread count. `adapool::kernels::serial` holds plain
// loop versions used as the test reference and the benchmark baseline.
//
// All matrices are row-major. `accumulate == true` adds into the output.

#include <cstddef>
#include <span>

namespace adapool::kernels {

int max_threads();
void set_num_threads(int n);

/// C[m x n] (+)= A[m x k] * B[k x n]
void gemm(std::span<const float> a, std::span<const float> b, std::span<float> c, std::size_t m,
          std::size_t k, std::size_t n, bool accumulate);
/// C[m x n] (+)= A[m x k] * B[n x k]^T
void gemm_nt(std::span<const float> a, std::span<const float> b, std::span<float> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate);
/// C[k x n] (+)= A[m x k]^T * B[m x n]
void gemm_tn(std::span<const float> a, std::span<const float> b, std::span<float> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate);

void transpose(std::span<const float> a, std::span<float> out, std::size_t rows, std::size_t cols);

/// y[i, :] += bias
void add_row_bias(std::span<float> y, std::span<const float> bias, std::size_t rows, std::size_t cols);
/// out[j] (+)= sum_i g[i, j]
void column_sums(std::span<const float> g, std::span<float> out, std::size_t rows, std::size_t cols,
                 bool accumulate);

void layer_norm_forward(std::span<const float> x, std::span<const float> gamma,
                        std::span<const float> beta, std::span<float> y, std::span<float> mean,
                        std::span<float> rstd, std::size_t rows, std::size_t d, float eps);
/// dx is accumulated; dgamma / dbeta are accumulated when non-empty.
void layer_norm_backward(std::span<const float> dy, std::span<const float> x,
                         std::span<const float> gamma, std::span<const float> mean,
                         std::span<const float> rstd, std::span<float> dx, std::span<float> dgamma,
                         std::span<float> dbeta, std::size_t rows, std::size_t d);

void gelu_forward(std::span<const float> x, std::span<float> y);
/// dx += dy * gelu'(x)
void gelu_backward(std::span<const float> x, std::span<const float> dy, std::span<float> dx);

void softmax_rows(std::span<const float> x, std::span<float> y, std::size_t rows, std::size_t cols);

/// Multi-head self-attention over packed [q | k | v] rows.
/// qkv: [batch*tokens x 3*heads*head_dim]; out: [batch*tokens x heads*head_dim];
/// probs: [batch*heads x tokens x tokens] (saved for backward).
void attention_forward(std::span<const float> qkv, std::span<float> out, std::span<float> probs,
                       std::size_t batch, std::size_t tokens, std::size_t heads,
                       std::size_t head_dim);
/// dqkv is accumulated.
void attention_backward(std::span<const float> qkv, std::span<const float> probs,
                        std::span<const float> dout, std::span<float> dqkv, std::size_t batch,
                        std::size_t tokens, std::size_t heads, std::size_t head_dim);

namespace serial {

void gemm(std::span<const float> a, std::span<const float> b, std::span<float> c, std::size_t m,
          std::size_t k, std::size_t n, bool accumulate);
void gemm_nt(std::span<const float> a, std::span<const float> b, std::span<float> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate);
void gemm_tn(std::span<const float> a, std::span<const float> b, std::span<float> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate);
void layer_norm_forward(std::span<const float> x, std::span<const float> gamma,
                        std::span<const float> beta, std::span<float> y, std::span<float> mean,
                        std::span<float> rstd, std::size_t rows, std::size_t d, float eps);
void layer_norm_backward(std::span<const float> dy, std::span<const float> x,
                         std::span<const float> gamma, std::span<const float> mean,
                         std::span<const float> rstd, std::span<float> dx, std::span<float> dgamma,
                         std::span<float> dbeta, std::size_t rows, std::size_t d);
void gelu_forward(std::span<const float> x, std::span<float> y);
void gelu_backward(std::span<const float> x, std::span<const float> dy, std::span<float> dx);
void softmax_rows(std::span<const float> x, std::span<float> y, std::size_t rows, std::size_t cols);
void attention_forward(std::span<const float> qkv, std::span<float> out, std::span<float> probs,
                       std::size_t batch, std::size_t tokens, std::size_t heads,
                       std::size_t head_dim);
void attention_backward(std::span<const float> qkv, std::span<const float> probs,
                        std::span<const float> dout, std::span<float> dqkv, std::size_t batch,
                        std::size_t tokens, std::size_t heads, std::size_t head_dim);

}  // namespace serial

}  // namespace adapool::kernels
