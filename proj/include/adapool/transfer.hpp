#pragma once

// Transferability scores: LEEP over a source model's output distribution and
// TransRate over extracted features.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "adapool/tensor.hpp"

namespace adapool {

enum class ScoreMethod { leep, transrate };

ScoreMethod parse_score_method(const std::string& name);
std::string score_method_name(ScoreMethod m);

/// Row-major n x z probability table, one row per target example.
struct DummyDistribution {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> p;

  double at(std::size_t i, std::size_t z) const { return p[i * cols + z]; }
};

/// Softmax over the concatenated logits of several heads evaluated on the
/// same n examples. A one-logit head contributes the pair [0, z], whose
/// softmax alone is [1 - sigmoid(z), sigmoid(z)].
DummyDistribution dummy_from_logits(std::span<const Tensor> head_logits);

/// (1/n) sum_i log sum_z P(y_i | z) dummy_i[z] with the empirical joint
/// P(y, z) = (1/n) sum_i dummy_i[z] [y_i = y]. Columns with P(z) = 0 are
/// skipped. Throws ContractError for empty input, a label count mismatch, or
/// rows that are not distributions within 1e-6.
double leep_score(const DummyDistribution& dummy, std::span<const int> labels);

/// log det of a symmetric positive-definite n x n matrix (row-major) by
/// Cholesky factorisation. Throws NumericError if a pivot is not positive.
double logdet_spd(std::vector<double> a, std::size_t n);

/// Coding rate 1/2 logdet(I + d / (n eps^2) Z^T Z) of rows already centred,
/// evaluated on the smaller of the d x d and n x n Gram forms.
double coding_rate(std::span<const double> z, std::size_t n, std::size_t d, double eps);

/// Coding rate of the globally centred features minus the class-weighted
/// coding rates of the per-class centred features. Results in [-1e-9, 0) are
/// reported as 0; anything lower throws NumericError. Throws ContractError
/// for n < 2, mismatched labels or eps <= 0.
double transrate_score(std::span<const float> features, std::size_t n, std::size_t d,
                       std::span<const int> labels, double eps = 1.0);

}  // namespace adapool
