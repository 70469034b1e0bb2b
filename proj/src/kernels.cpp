#include "adapool/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "kernel_math.hpp"

namespace adapool::kernels {

namespace {

constexpr std::size_t kBlockRows = 6;
constexpr std::size_t kBlockCols = 32;

// B repacked into column panels of kBlockCols, each stored as k contiguous
// rows and zero-padded on the right, so the inner loop streams through memory.
std::vector<float> pack_panels(const float* b, std::size_t k, std::size_t n) {
  const std::size_t panels = (n + kBlockCols - 1) / kBlockCols;
  std::vector<float> packed(panels * k * kBlockCols, 0.0f);
  for (std::size_t q = 0; q < panels; ++q) {
    const std::size_t j0 = q * kBlockCols;
    const std::size_t width = std::min(kBlockCols, n - j0);
    float* dst = packed.data() + q * k * kBlockCols;
    for (std::size_t p = 0; p < k; ++p)
      std::memcpy(dst + p * kBlockCols, b + p * n + j0, width * sizeof(float));
  }
  return packed;
}

using v16 = float __attribute__((vector_size(64)));
constexpr std::size_t kLanes = 16;
constexpr std::size_t kVecs = kBlockCols / kLanes;

inline v16 load16(const float* p) {
  v16 v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

// Register tile: ROWS rows of C times one panel, reduced over the full inner
// dimension before touching C.
template <std::size_t ROWS>
void gemm_tile(const float* a, const float* panels, float* c, std::size_t i0, std::size_t k,
               std::size_t n, bool accumulate) {
  const std::size_t count = (n + kBlockCols - 1) / kBlockCols;
  for (std::size_t q = 0; q < count; ++q) {
    const float* panel = panels + q * k * kBlockCols;
    v16 acc[ROWS][kVecs];
    for (std::size_t r = 0; r < ROWS; ++r)
      for (std::size_t v = 0; v < kVecs; ++v) acc[r][v] = v16{};
    for (std::size_t p = 0; p < k; ++p) {
      v16 bv[kVecs];
      for (std::size_t v = 0; v < kVecs; ++v) bv[v] = load16(panel + p * kBlockCols + v * kLanes);
      for (std::size_t r = 0; r < ROWS; ++r) {
        const float av = a[(i0 + r) * k + p];
        for (std::size_t v = 0; v < kVecs; ++v) acc[r][v] += av * bv[v];
      }
    }
    const std::size_t j0 = q * kBlockCols;
    const std::size_t width = std::min(kBlockCols, n - j0);
    for (std::size_t r = 0; r < ROWS; ++r) {
      float out[kBlockCols];
      std::memcpy(out, acc[r], sizeof out);
      float* crow = c + (i0 + r) * n + j0;
      if (accumulate) {
        for (std::size_t jj = 0; jj < width; ++jj) crow[jj] += out[jj];
      } else {
        std::memcpy(crow, out, width * sizeof(float));
      }
    }
  }
}

void gemm_rows_tail(const float* a, const float* panels, float* c, std::size_t i0,
                    std::size_t rows, std::size_t k, std::size_t n, bool accumulate) {
  switch (rows) {
    case 0: return;
    case 1: return gemm_tile<1>(a, panels, c, i0, k, n, accumulate);
    case 2: return gemm_tile<2>(a, panels, c, i0, k, n, accumulate);
    case 3: return gemm_tile<3>(a, panels, c, i0, k, n, accumulate);
    case 4: return gemm_tile<4>(a, panels, c, i0, k, n, accumulate);
    default: return gemm_tile<5>(a, panels, c, i0, k, n, accumulate);
  }
}

void gemm_raw(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
              std::size_t n, bool accumulate, bool parallel = true) {
  if (m == 0 || n == 0) return;
  const std::vector<float> panels = pack_panels(b, k, n);
  const auto full_blocks = static_cast<std::ptrdiff_t>(m / kBlockRows);
#pragma omp parallel for schedule(static) if (parallel && full_blocks > 1)
  for (std::ptrdiff_t blk = 0; blk < full_blocks; ++blk) {
    gemm_tile<kBlockRows>(a, panels.data(), c, static_cast<std::size_t>(blk) * kBlockRows, k, n,
                          accumulate);
  }
  const std::size_t done = static_cast<std::size_t>(full_blocks) * kBlockRows;
  gemm_rows_tail(a, panels.data(), c, done, m - done, k, n, accumulate);
}

// C[m x n] = A[m x k] * B^T with B stored [n x k], single-threaded.
void gemm_nt_raw(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
                 std::size_t n) {
  std::vector<float> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  gemm_raw(a, bt.data(), c, m, k, n, false, false);
}

// C[k x n] = A^T * B with A stored [m x k], single-threaded.
void gemm_tn_raw(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
                 std::size_t n) {
  std::vector<float> at(k * m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) at[p * m + i] = a[i * k + p];
  gemm_raw(at.data(), b, c, k, m, n, false, false);
}

}  // namespace

int max_threads() { return omp_get_max_threads(); }
void set_num_threads(int n) { omp_set_num_threads(std::max(1, n)); }

void gemm(std::span<const float> a, std::span<const float> b, std::span<float> c, std::size_t m,
          std::size_t k, std::size_t n, bool accumulate) {
  gemm_raw(a.data(), b.data(), c.data(), m, k, n, accumulate);
}

void gemm_nt(std::span<const float> a, std::span<const float> b, std::span<float> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
  std::vector<float> bt(k * n);
  transpose(b, bt, n, k);
  gemm_raw(a.data(), bt.data(), c.data(), m, k, n, accumulate);
}

void gemm_tn(std::span<const float> a, std::span<const float> b, std::span<float> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
  std::vector<float> at(k * m);
  transpose(a, at, m, k);
  gemm_raw(at.data(), b.data(), c.data(), k, m, n, accumulate);
}

void transpose(std::span<const float> a, std::span<float> out, std::size_t rows, std::size_t cols) {
  constexpr std::size_t kTile = 32;
  const auto row_tiles = static_cast<std::ptrdiff_t>((rows + kTile - 1) / kTile);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t rt = 0; rt < row_tiles; ++rt) {
    const std::size_t r0 = static_cast<std::size_t>(rt) * kTile;
    const std::size_t r1 = std::min(rows, r0 + kTile);
    for (std::size_t c0 = 0; c0 < cols; c0 += kTile) {
      const std::size_t c1 = std::min(cols, c0 + kTile);
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t c = c0; c < c1; ++c) out[c * rows + r] = a[r * cols + c];
    }
  }
}

void add_row_bias(std::span<float> y, std::span<const float> bias, std::size_t rows,
                  std::size_t cols) {
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(rows); ++i) {
    float* row = y.data() + static_cast<std::size_t>(i) * cols;
    for (std::size_t j = 0; j < cols; ++j) row[j] += bias[j];
  }
}

void column_sums(std::span<const float> g, std::span<float> out, std::size_t rows, std::size_t cols,
                 bool accumulate) {
  // Rows are summed in order into a local buffer; a single thread owns it.
  std::vector<float> acc(cols, 0.0f);
  for (std::size_t i = 0; i < rows; ++i) {
    const float* row = g.data() + i * cols;
    for (std::size_t j = 0; j < cols; ++j) acc[j] += row[j];
  }
  for (std::size_t j = 0; j < cols; ++j) out[j] = accumulate ? out[j] + acc[j] : acc[j];
}

void layer_norm_forward(std::span<const float> x, std::span<const float> gamma,
                        std::span<const float> beta, std::span<float> y, std::span<float> mean,
                        std::span<float> rstd, std::size_t rows, std::size_t d, float eps) {
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(rows); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const float* xr = x.data() + i * d;
    float* yr = y.data() + i * d;
    float sum = 0.0f;
    for (std::size_t j = 0; j < d; ++j) sum += xr[j];
    const float mu = sum / static_cast<float>(d);
    float sq = 0.0f;
    for (std::size_t j = 0; j < d; ++j) {
      const float c = xr[j] - mu;
      sq += c * c;
    }
    const float rs = 1.0f / std::sqrt(sq / static_cast<float>(d) + eps);
    for (std::size_t j = 0; j < d; ++j) yr[j] = (xr[j] - mu) * rs * gamma[j] + beta[j];
    mean[i] = mu;
    rstd[i] = rs;
  }
}

void layer_norm_backward(std::span<const float> dy, std::span<const float> x,
                         std::span<const float> gamma, std::span<const float> mean,
                         std::span<const float> rstd, std::span<float> dx, std::span<float> dgamma,
                         std::span<float> dbeta, std::size_t rows, std::size_t d) {
  if (!dx.empty()) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(rows); ++ii) {
      const auto i = static_cast<std::size_t>(ii);
      const float* xr = x.data() + i * d;
      const float* gr = dy.data() + i * d;
      float* dxr = dx.data() + i * d;
      const float mu = mean[i];
      const float rs = rstd[i];
      float sum_g = 0.0f;
      float sum_gx = 0.0f;
      for (std::size_t j = 0; j < d; ++j) {
        const float g = gr[j] * gamma[j];
        sum_g += g;
        sum_gx += g * (xr[j] - mu) * rs;
      }
      const float inv_d = 1.0f / static_cast<float>(d);
      for (std::size_t j = 0; j < d; ++j) {
        const float xhat = (xr[j] - mu) * rs;
        const float g = gr[j] * gamma[j];
        dxr[j] += rs * (g - sum_g * inv_d - xhat * sum_gx * inv_d);
      }
    }
  }
  if (!dgamma.empty() || !dbeta.empty()) {
    std::vector<float> acc_gamma(d, 0.0f);
    std::vector<float> acc_beta(d, 0.0f);
    for (std::size_t i = 0; i < rows; ++i) {
      const float* xr = x.data() + i * d;
      const float* gr = dy.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) {
        acc_gamma[j] += gr[j] * (xr[j] - mean[i]) * rstd[i];
        acc_beta[j] += gr[j];
      }
    }
    if (!dgamma.empty())
      for (std::size_t j = 0; j < d; ++j) dgamma[j] += acc_gamma[j];
    if (!dbeta.empty())
      for (std::size_t j = 0; j < d; ++j) dbeta[j] += acc_beta[j];
  }
}

namespace {

constexpr std::size_t kLaneChunk = 4096;

template <class F>
void parallel_lanes(std::size_t n, F&& f) {
  const auto chunks = static_cast<std::ptrdiff_t>((n + kLaneChunk - 1) / kLaneChunk);
#pragma omp parallel for schedule(static) if (chunks > 1)
  for (std::ptrdiff_t c = 0; c < chunks; ++c) {
    const std::size_t begin = static_cast<std::size_t>(c) * kLaneChunk;
    detail::for_lanes(begin, std::min(n, begin + kLaneChunk), f);
  }
}

template <class T>
T load_lanes(const float* p) {
  T v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

template <class T>
void store_lanes(float* p, const T& v) {
  std::memcpy(p, &v, sizeof v);
}

}  // namespace

void gelu_forward(std::span<const float> x, std::span<float> y) {
  parallel_lanes(x.size(), [&]<class T, class I>(std::size_t i) {
    const T v = load_lanes<T>(x.data() + i);
    T cdf, pdf;
    detail::normal_cdf_pdf<T, I>(v, cdf, pdf);
    store_lanes(y.data() + i, T(v * cdf));
  });
}

void gelu_backward(std::span<const float> x, std::span<const float> dy, std::span<float> dx) {
  parallel_lanes(x.size(), [&]<class T, class I>(std::size_t i) {
    const T v = load_lanes<T>(x.data() + i);
    T cdf, pdf;
    detail::normal_cdf_pdf<T, I>(v, cdf, pdf);
    const T g = load_lanes<T>(dy.data() + i);
    const T acc = load_lanes<T>(dx.data() + i);
    store_lanes(dx.data() + i, T(acc + g * (cdf + v * pdf)));
  });
}

void softmax_rows(std::span<const float> x, std::span<float> y, std::size_t rows, std::size_t cols) {
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(rows); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const float* xr = x.data() + i * cols;
    float* yr = y.data() + i * cols;
    float mx = xr[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
    float sum = 0.0f;
    for (std::size_t j = 0; j < cols; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    const float inv = 1.0f / sum;
    for (std::size_t j = 0; j < cols; ++j) yr[j] *= inv;
  }
}

namespace {

// One (sequence, head) slice of packed q|k|v rows copied into a dense
// [tokens x head_dim] matrix.
void gather_head(const float* base, std::size_t stride, std::size_t offset, std::size_t tokens,
                 std::size_t head_dim, float* dst) {
  for (std::size_t t = 0; t < tokens; ++t)
    std::memcpy(dst + t * head_dim, base + t * stride + offset, head_dim * sizeof(float));
}

void scatter_add_head(const float* src, std::size_t tokens, std::size_t head_dim, float* base,
                      std::size_t stride, std::size_t offset) {
  for (std::size_t t = 0; t < tokens; ++t) {
    float* dst = base + t * stride + offset;
    for (std::size_t e = 0; e < head_dim; ++e) dst[e] += src[t * head_dim + e];
  }
}

}  // namespace

void attention_forward(std::span<const float> qkv, std::span<float> out, std::span<float> probs,
                       std::size_t batch, std::size_t tokens, std::size_t heads,
                       std::size_t head_dim) {
  const std::size_t d = heads * head_dim;
  const std::size_t stride = 3 * d;
  const float scale = 1.0f / std::sqrt(static_cast<float>(head_dim));
  const auto pairs = static_cast<std::ptrdiff_t>(batch * heads);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t bh = 0; bh < pairs; ++bh) {
    const std::size_t b = static_cast<std::size_t>(bh) / heads;
    const std::size_t h = static_cast<std::size_t>(bh) % heads;
    const float* base = qkv.data() + b * tokens * stride;
    float* p = probs.data() + static_cast<std::size_t>(bh) * tokens * tokens;
    const std::size_t slice = tokens * head_dim;
    std::vector<float> q(slice), kt(slice), v(slice), o(slice);
    gather_head(base, stride, h * head_dim, tokens, head_dim, q.data());
    gather_head(base, stride, d + h * head_dim, tokens, head_dim, o.data());
    gather_head(base, stride, 2 * d + h * head_dim, tokens, head_dim, v.data());
    for (float& x : q) x *= scale;
    for (std::size_t t = 0; t < tokens; ++t)
      for (std::size_t e = 0; e < head_dim; ++e) kt[e * tokens + t] = o[t * head_dim + e];

    gemm_raw(q.data(), kt.data(), p, tokens, head_dim, tokens, false, false);
    for (std::size_t i = 0; i < tokens; ++i) {
      float* prow = p + i * tokens;
      const float mx = *std::max_element(prow, prow + tokens);
      detail::exp_shifted(prow, tokens, mx);
      float sum = 0.0f;
      for (std::size_t j = 0; j < tokens; ++j) sum += prow[j];
      const float inv = 1.0f / sum;
      for (std::size_t j = 0; j < tokens; ++j) prow[j] *= inv;
    }
    gemm_raw(p, v.data(), o.data(), tokens, tokens, head_dim, false, false);
    for (std::size_t t = 0; t < tokens; ++t)
      std::memcpy(out.data() + (b * tokens + t) * d + h * head_dim, o.data() + t * head_dim,
                  head_dim * sizeof(float));
  }
}

void attention_backward(std::span<const float> qkv, std::span<const float> probs,
                        std::span<const float> dout, std::span<float> dqkv, std::size_t batch,
                        std::size_t tokens, std::size_t heads, std::size_t head_dim) {
  const std::size_t d = heads * head_dim;
  const std::size_t stride = 3 * d;
  const float scale = 1.0f / std::sqrt(static_cast<float>(head_dim));
  const auto pairs = static_cast<std::ptrdiff_t>(batch * heads);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t bh = 0; bh < pairs; ++bh) {
    const std::size_t b = static_cast<std::size_t>(bh) / heads;
    const std::size_t h = static_cast<std::size_t>(bh) % heads;
    const float* base = qkv.data() + b * tokens * stride;
    float* gbase = dqkv.data() + b * tokens * stride;
    const float* p = probs.data() + static_cast<std::size_t>(bh) * tokens * tokens;
    const std::size_t slice = tokens * head_dim;
    std::vector<float> q(slice), k(slice), v(slice), go(slice), grad(slice);
    std::vector<float> ds(tokens * tokens);
    gather_head(base, stride, h * head_dim, tokens, head_dim, q.data());
    gather_head(base, stride, d + h * head_dim, tokens, head_dim, k.data());
    gather_head(base, stride, 2 * d + h * head_dim, tokens, head_dim, v.data());
    gather_head(dout.data() + b * tokens * d, d, h * head_dim, tokens, head_dim, go.data());

    // dP = dO V^T, then the softmax Jacobian row by row.
    gemm_nt_raw(go.data(), v.data(), ds.data(), tokens, head_dim, tokens);
    for (std::size_t i = 0; i < tokens; ++i) {
      const float* prow = p + i * tokens;
      float* srow = ds.data() + i * tokens;
      float dot = 0.0f;
      for (std::size_t j = 0; j < tokens; ++j) dot += srow[j] * prow[j];
      for (std::size_t j = 0; j < tokens; ++j) srow[j] = prow[j] * (srow[j] - dot) * scale;
    }
    gemm_raw(ds.data(), k.data(), grad.data(), tokens, tokens, head_dim, false, false);
    scatter_add_head(grad.data(), tokens, head_dim, gbase, stride, h * head_dim);
    gemm_tn_raw(ds.data(), q.data(), grad.data(), tokens, tokens, head_dim);
    scatter_add_head(grad.data(), tokens, head_dim, gbase, stride, d + h * head_dim);
    gemm_tn_raw(p, go.data(), grad.data(), tokens, tokens, head_dim);
    scatter_add_head(grad.data(), tokens, head_dim, gbase, stride, 2 * d + h * head_dim);
  }
}

}  // namespace adapool::kernels
