// Straightforward single-threaded kernels. Kept as the reference the parallel
// kernels are tested against and as the benchmark baseline.

#include <algorithm>
#include <cmath>
#include <vector>

#include "adapool/kernels.hpp"
#include "kernel_math.hpp"

namespace adapool::kernels::serial {

void gemm(std::span<const float> a, std::span<const float> b, std::span<float> c, std::size_t m,
          std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      float s = 0.0f;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
  }
}

void gemm_nt(std::span<const float> a, std::span<const float> b, std::span<float> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      float s = 0.0f;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
  }
}

void gemm_tn(std::span<const float> a, std::span<const float> b, std::span<float> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t j = 0; j < n; ++j) {
      float s = 0.0f;
      for (std::size_t i = 0; i < m; ++i) s += a[i * k + p] * b[i * n + j];
      c[p * n + j] = accumulate ? c[p * n + j] + s : s;
    }
  }
}

void layer_norm_forward(std::span<const float> x, std::span<const float> gamma,
                        std::span<const float> beta, std::span<float> y, std::span<float> mean,
                        std::span<float> rstd, std::size_t rows, std::size_t d, float eps) {
  for (std::size_t i = 0; i < rows; ++i) {
    float mu = 0.0f;
    for (std::size_t j = 0; j < d; ++j) mu += x[i * d + j];
    mu /= static_cast<float>(d);
    float var = 0.0f;
    for (std::size_t j = 0; j < d; ++j) var += (x[i * d + j] - mu) * (x[i * d + j] - mu);
    var /= static_cast<float>(d);
    const float rs = 1.0f / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j)
      y[i * d + j] = (x[i * d + j] - mu) * rs * gamma[j] + beta[j];
    mean[i] = mu;
    rstd[i] = rs;
  }
}

void layer_norm_backward(std::span<const float> dy, std::span<const float> x,
                         std::span<const float> gamma, std::span<const float> mean,
                         std::span<const float> rstd, std::span<float> dx, std::span<float> dgamma,
                         std::span<float> dbeta, std::size_t rows, std::size_t d) {
  for (std::size_t i = 0; i < rows; ++i) {
    float mean_g = 0.0f;
    float mean_gx = 0.0f;
    for (std::size_t j = 0; j < d; ++j) {
      const float xhat = (x[i * d + j] - mean[i]) * rstd[i];
      const float g = dy[i * d + j] * gamma[j];
      mean_g += g;
      mean_gx += g * xhat;
      if (!dgamma.empty()) dgamma[j] += dy[i * d + j] * xhat;
      if (!dbeta.empty()) dbeta[j] += dy[i * d + j];
    }
    mean_g /= static_cast<float>(d);
    mean_gx /= static_cast<float>(d);
    if (dx.empty()) continue;
    for (std::size_t j = 0; j < d; ++j) {
      const float xhat = (x[i * d + j] - mean[i]) * rstd[i];
      dx[i * d + j] += rstd[i] * (dy[i * d + j] * gamma[j] - mean_g - xhat * mean_gx);
    }
  }
}

void gelu_forward(std::span<const float> x, std::span<float> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = detail::gelu(x[i]);
}

void gelu_backward(std::span<const float> x, std::span<const float> dy, std::span<float> dx) {
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] += dy[i] * detail::gelu_grad(x[i]);
}

void softmax_rows(std::span<const float> x, std::span<float> y, std::size_t rows, std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) {
    float mx = x[i * cols];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[i * cols + j]);
    float sum = 0.0f;
    for (std::size_t j = 0; j < cols; ++j) sum += std::exp(x[i * cols + j] - mx);
    for (std::size_t j = 0; j < cols; ++j) y[i * cols + j] = std::exp(x[i * cols + j] - mx) / sum;
  }
}

void attention_forward(std::span<const float> qkv, std::span<float> out, std::span<float> probs,
                       std::size_t batch, std::size_t tokens, std::size_t heads,
                       std::size_t head_dim) {
  const std::size_t d = heads * head_dim;
  const float scale = 1.0f / std::sqrt(static_cast<float>(head_dim));
  auto at = [&](std::size_t b, std::size_t t, std::size_t part, std::size_t h, std::size_t e) {
    return qkv[(b * tokens + t) * 3 * d + part * d + h * head_dim + e];
  };
  std::vector<float> scores(tokens);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      float* p = probs.data() + (b * heads + h) * tokens * tokens;
      for (std::size_t i = 0; i < tokens; ++i) {
        for (std::size_t j = 0; j < tokens; ++j) {
          float s = 0.0f;
          for (std::size_t e = 0; e < head_dim; ++e) s += at(b, i, 0, h, e) * at(b, j, 1, h, e);
          scores[j] = s * scale;
        }
        softmax_rows(scores, std::span<float>(p + i * tokens, tokens), 1, tokens);
        for (std::size_t e = 0; e < head_dim; ++e) {
          float s = 0.0f;
          for (std::size_t j = 0; j < tokens; ++j) s += p[i * tokens + j] * at(b, j, 2, h, e);
          out[(b * tokens + i) * d + h * head_dim + e] = s;
        }
      }
    }
  }
}

void attention_backward(std::span<const float> qkv, std::span<const float> probs,
                        std::span<const float> dout, std::span<float> dqkv, std::size_t batch,
                        std::size_t tokens, std::size_t heads, std::size_t head_dim) {
  const std::size_t d = heads * head_dim;
  const float scale = 1.0f / std::sqrt(static_cast<float>(head_dim));
  auto idx = [&](std::size_t b, std::size_t t, std::size_t part, std::size_t h, std::size_t e) {
    return (b * tokens + t) * 3 * d + part * d + h * head_dim + e;
  };
  std::vector<float> dp(tokens * tokens);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const float* p = probs.data() + (b * heads + h) * tokens * tokens;
      for (std::size_t i = 0; i < tokens; ++i)
        for (std::size_t j = 0; j < tokens; ++j) {
          float s = 0.0f;
          for (std::size_t e = 0; e < head_dim; ++e)
            s += dout[(b * tokens + i) * d + h * head_dim + e] * qkv[idx(b, j, 2, h, e)];
          dp[i * tokens + j] = s;
        }
      // dV
      for (std::size_t j = 0; j < tokens; ++j)
        for (std::size_t e = 0; e < head_dim; ++e) {
          float s = 0.0f;
          for (std::size_t i = 0; i < tokens; ++i)
            s += p[i * tokens + j] * dout[(b * tokens + i) * d + h * head_dim + e];
          dqkv[idx(b, j, 2, h, e)] += s;
        }
      // dS, then dQ and dK
      for (std::size_t i = 0; i < tokens; ++i) {
        float dot = 0.0f;
        for (std::size_t j = 0; j < tokens; ++j) dot += dp[i * tokens + j] * p[i * tokens + j];
        for (std::size_t j = 0; j < tokens; ++j)
          dp[i * tokens + j] = p[i * tokens + j] * (dp[i * tokens + j] - dot) * scale;
      }
      for (std::size_t i = 0; i < tokens; ++i)
        for (std::size_t e = 0; e < head_dim; ++e) {
          float sq = 0.0f;
          float sk = 0.0f;
          for (std::size_t j = 0; j < tokens; ++j) {
            sq += dp[i * tokens + j] * qkv[idx(b, j, 1, h, e)];
            sk += dp[j * tokens + i] * qkv[idx(b, j, 0, h, e)];
          }
          dqkv[idx(b, i, 0, h, e)] += sq;
          dqkv[idx(b, i, 1, h, e)] += sk;
        }
    }
  }
}

}  // namespace adapool::kernels::serial
