#include "adapool/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "adapool/error.hpp"

namespace adapool {

ScoreMethod parse_score_method(const std::string& name) {
  if (name == "leep") return ScoreMethod::leep;
  if (name == "transrate") return ScoreMethod::transrate;
  throw ConfigError("unknown transferability score '" + name + "' (expected leep or transrate)");
}

std::string score_method_name(ScoreMethod m) { return m == ScoreMethod::leep ? "leep" : "transrate"; }

DummyDistribution dummy_from_logits(std::span<const Tensor> head_logits) {
  if (head_logits.empty()) throw ContractError("dummy distribution needs at least one head");
  const std::size_t n = head_logits.front().rows();
  std::size_t cols = 0;
  for (const Tensor& t : head_logits) {
    if (t.rank() != 2 || t.rows() != n)
      throw ShapeError("dummy distribution: head logits must all be [n x out] with n = " +
                       std::to_string(n));
    cols += t.cols() == 1 ? 2 : t.cols();
  }
  DummyDistribution d{n, cols, std::vector<double>(n * cols)};
  std::vector<double> row(cols);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t k = 0;
    for (const Tensor& t : head_logits) {
      const auto v = t.data().subspan(i * t.cols(), t.cols());
      if (t.cols() == 1) row[k++] = 0.0;
      for (float x : v) row[k++] = x;
    }
    const double top = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double& x : row) total += (x = std::exp(x - top));
    for (std::size_t z = 0; z < cols; ++z) d.p[i * cols + z] = row[z] / total;
  }
  return d;
}

double leep_score(const DummyDistribution& dummy, std::span<const int> labels) {
  const std::size_t n = dummy.rows;
  const std::size_t nz = dummy.cols;
  if (n == 0 || nz == 0) throw ContractError("leep_score: empty input");
  if (labels.size() != n || dummy.p.size() != n * nz)
    throw ContractError("leep_score: " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(n) + " rows");
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t z = 0; z < nz; ++z) {
      const double v = dummy.at(i, z);
      if (!(v >= 0.0)) throw ContractError("leep_score: negative or NaN probability");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-6)
      throw ContractError("leep_score: row " + std::to_string(i) + " sums to " + std::to_string(s));
  }

  std::map<int, std::size_t> ids;
  for (int y : labels) ids.emplace(y, ids.size());
  const std::size_t ny = ids.size();
  std::vector<std::size_t> y_of(n);
  for (std::size_t i = 0; i < n; ++i) y_of[i] = ids.at(labels[i]);

  std::vector<double> joint(ny * nz, 0.0);
  std::vector<double> marginal(nz, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t z = 0; z < nz; ++z) {
      joint[y_of[i] * nz + z] += dummy.at(i, z) / static_cast<double>(n);
      marginal[z] += dummy.at(i, z) / static_cast<double>(n);
    }

  double score = 0.0;
  std::vector<double> terms;
  for (std::size_t i = 0; i < n; ++i) {
    terms.clear();
    for (std::size_t z = 0; z < nz; ++z) {
      if (marginal[z] <= 0.0) continue;
      terms.push_back(joint[y_of[i] * nz + z] / marginal[z] * dummy.at(i, z));
    }
    // Summing in sorted order makes the score independent of column order.
    std::sort(terms.begin(), terms.end());
    double eep = 0.0;
    for (double t : terms) eep += t;
    score += std::log(eep);
  }
  return std::min(0.0, score / static_cast<double>(n));
}

double logdet_spd(std::vector<double> a, std::size_t n) {
  if (a.size() != n * n) throw ShapeError("logdet_spd: matrix is not n x n");
  double logdet = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    double diag = a[j * n + j];
    for (std::size_t k = 0; k < j; ++k) diag -= a[j * n + k] * a[j * n + k];
    if (!(diag > 0.0)) throw NumericError("logdet_spd: matrix is not positive definite");
    const double l = std::sqrt(diag);
    a[j * n + j] = l;
    logdet += 2.0 * std::log(l);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
      a[i * n + j] = s / l;
    }
  }
  return logdet;
}

double coding_rate(std::span<const double> z, std::size_t n, std::size_t d, double eps) {
  if (n == 0) return 0.0;
  const double alpha = static_cast<double>(d) / (static_cast<double>(n) * eps * eps);
  // det(I_d + a Z^T Z) = det(I_n + a Z Z^T).
  const bool feature_side = d <= n;
  const std::size_t m = feature_side ? d : n;
  std::vector<double> g(m * m, 0.0);
  if (feature_side) {
    for (std::size_t i = 0; i < n; ++i) {
      const double* row = z.data() + i * d;
      for (std::size_t p = 0; p < d; ++p)
        for (std::size_t q = 0; q <= p; ++q) g[p * m + q] += row[p] * row[q];
    }
  } else {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j <= i; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) s += z[i * d + k] * z[j * d + k];
        g[i * m + j] = s;
      }
  }
  for (std::size_t p = 0; p < m; ++p)
    for (std::size_t q = 0; q <= p; ++q) {
      const double v = alpha * g[p * m + q] + (p == q ? 1.0 : 0.0);
      g[p * m + q] = v;
      g[q * m + p] = v;
    }
  return 0.5 * logdet_spd(std::move(g), m);
}

namespace {

std::vector<double> centred(std::span<const float> x, std::span<const std::size_t> rows,
                            std::size_t d) {
  std::vector<double> mean(d, 0.0);
  for (std::size_t r : rows)
    for (std::size_t k = 0; k < d; ++k) mean[k] += x[r * d + k];
  for (double& m : mean) m /= static_cast<double>(rows.size());
  std::vector<double> out(rows.size() * d);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t k = 0; k < d; ++k) out[i * d + k] = x[rows[i] * d + k] - mean[k];
  return out;
}

}  // namespace

double transrate_score(std::span<const float> features, std::size_t n, std::size_t d,
                       std::span<const int> labels, double eps) {
  if (n < 2) throw ContractError("transrate_score: need at least 2 examples");
  if (d == 0 || features.size() != n * d) throw ContractError("transrate_score: features are not n x d");
  if (labels.size() != n) throw ContractError("transrate_score: label count mismatch");
  if (!(eps > 0.0)) throw ContractError("transrate_score: eps must be positive");

  std::map<int, std::vector<std::size_t>> classes;
  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) {
    all[i] = i;
    classes[labels[i]].push_back(i);
  }
  const double marginal = coding_rate(centred(features, all, d), n, d, eps);
  double conditional = 0.0;
  for (const auto& [label, rows] : classes) {
    const double weight = static_cast<double>(rows.size()) / static_cast<double>(n);
    conditional += weight * coding_rate(centred(features, rows, d), rows.size(), d, eps);
  }
  const double score = marginal - conditional;
  if (score < -1e-9)
    throw NumericError("transrate_score: negative score " + std::to_string(score));
  return std::max(score, 0.0);
}

}  // namespace adapool
