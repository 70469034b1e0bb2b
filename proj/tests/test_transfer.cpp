#include <cmath>
#include <array>
#include <numeric>

#include "adapool/error.hpp"
#include "adapool/rng.hpp"
#include "adapool/transfer.hpp"
#include "doctest.h"
#include "transfer_oracle.hpp"

using namespace adapool;
using namespace adapool::testing;

TEST_CASE("LEEP boundary cases") {
  // One-hot columns in bijection with the labels.
  const std::vector<std::vector<double>> aligned = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {0, 1, 0}};
  CHECK(leep_score(to_dummy(aligned), std::vector<int>{7, 3, 5, 3}) == 0.0);

  const std::vector<std::vector<double>> uniform(6, std::vector<double>{0.25, 0.25, 0.25, 0.25});
  CHECK(std::abs(leep_score(to_dummy(uniform), std::vector<int>{0, 1, 0, 1, 1, 0}) + std::log(2.0)) <= 1e-9);
}

TEST_CASE("LEEP hand example") {
  const std::vector<std::vector<double>> rows = {{0.8, 0.2}, {0.3, 0.7}, {0.5, 0.5}};
  const std::vector<int> y = {0, 1, 0};
  CHECK(std::abs(leep_score(to_dummy(rows), y) - -0.5365606942887581) <= 1e-9);
  CHECK(std::abs(leep_score(to_dummy(rows), y) - leep_direct(rows, y)) <= 1e-12);
}

TEST_CASE("LEEP matches the direct formula on random instances") {
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(30);
    const std::size_t nz = 1 + rng.below(5);
    const std::size_t ny = 1 + rng.below(4);
    const auto rows = random_rows(rng, n, nz);
    std::vector<int> y(n);
    for (int& v : y) v = static_cast<int>(rng.below(ny));
    const double s = leep_score(to_dummy(rows), y);
    CAPTURE(trial);
    CHECK(std::abs(s - leep_direct(rows, y)) <= 1e-9);
    CHECK(s <= 0.0);
  }
}

TEST_CASE("LEEP permutation invariance") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 5 + rng.below(20), nz = 2 + rng.below(4);
    const auto rows = random_rows(rng, n, nz);
    std::vector<int> y(n);
    for (int& v : y) v = static_cast<int>(rng.below(3));
    const double base = leep_score(to_dummy(rows), y);

    std::vector<int> relabelled(n);
    for (std::size_t i = 0; i < n; ++i) relabelled[i] = std::array<int, 3>{9, -4, 2}[y[i]];
    CHECK(leep_score(to_dummy(rows), relabelled) == base);

    std::vector<std::size_t> perm(nz);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(perm));
    auto permuted = rows;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t z = 0; z < nz; ++z) permuted[i][z] = rows[i][perm[z]];
    CHECK(leep_score(to_dummy(permuted), y) == base);
  }
}

TEST_CASE("LEEP contract errors") {
  CHECK_THROWS_AS(leep_score(DummyDistribution{}, {}), ContractError);
  const auto d = to_dummy({{0.5, 0.5}, {0.2, 0.8}});
  CHECK_THROWS_AS(leep_score(d, std::vector<int>{0}), ContractError);
  CHECK_THROWS_AS(leep_score(to_dummy({{0.5, 0.6}}), std::vector<int>{0}), ContractError);
  CHECK_THROWS_AS(leep_score(to_dummy({{1.5, -0.5}}), std::vector<int>{0}), ContractError);
}

TEST_CASE("dummy distribution from head logits") {
  const Tensor binary({3, 1}, {0.0f, 2.0f, -1.0f});
  const Tensor binaries[] = {binary};
  const DummyDistribution b = dummy_from_logits(binaries);
  REQUIRE(b.cols == 2);
  for (std::size_t i = 0; i < 3; ++i) {
    const double p = 1.0 / (1.0 + std::exp(-static_cast<double>(binary.data()[i])));
    CHECK(b.at(i, 1) == doctest::Approx(p).epsilon(1e-12));
    CHECK(b.at(i, 0) == doctest::Approx(1.0 - p).epsilon(1e-12));
  }
  const Tensor multi({3, 3}, {1, 2, 3, 0, 0, 0, -5, 5, 0});
  const Tensor both[] = {binary, multi};
  const DummyDistribution c = dummy_from_logits(both);
  REQUIRE(c.cols == 5);
  for (std::size_t i = 0; i < 3; ++i) {
    double s = 0.0;
    for (std::size_t z = 0; z < 5; ++z) s += c.at(i, z);
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }
  // Row 1: logits [0, 2, 0, 0, 0].
  const double denom = 4.0 + std::exp(2.0);
  CHECK(c.at(1, 1) == doctest::Approx(std::exp(2.0) / denom).epsilon(1e-12));
  CHECK(c.at(1, 3) == doctest::Approx(1.0 / denom).epsilon(1e-12));
  const Tensor mismatched[] = {binary, Tensor({2, 3})};
  CHECK_THROWS_AS(dummy_from_logits(mismatched), ShapeError);
  CHECK_THROWS_AS(dummy_from_logits({}), ContractError);
}

TEST_CASE("log determinant") {
  CHECK(logdet_spd({4, 2, 2, 3}, 2) == doctest::Approx(std::log(8.0)).epsilon(1e-14));
  CHECK(logdet_spd({2, 0, 0, 0, 3, 0, 0, 0, 5}, 3) == doctest::Approx(std::log(30.0)).epsilon(1e-14));
  CHECK_THROWS_AS(logdet_spd({1, 2, 2, 1}, 2), NumericError);
}

TEST_CASE("coding rate agrees on both Gram forms") {
  Rng rng(3);
  for (auto [n, d] : {std::pair<std::size_t, std::size_t>{3, 7}, {7, 3}, {5, 5}}) {
    std::vector<double> z(n * d);
    for (double& v : z) v = rng.normal();
    // Explicit d x d form.
    const double a = static_cast<double>(d) / static_cast<double>(n);
    std::vector<double> m(d * d, 0.0);
    for (std::size_t p = 0; p < d; ++p)
      for (std::size_t q = 0; q < d; ++q) {
        for (std::size_t i = 0; i < n; ++i) m[p * d + q] += a * z[i * d + p] * z[i * d + q];
        if (p == q) m[p * d + q] += 1.0;
      }
    CHECK(coding_rate(z, n, d, 1.0) == doctest::Approx(0.5 * logdet_spd(m, d)).epsilon(1e-12));
  }
}

TEST_CASE("TransRate hand case and degenerate inputs") {
  const std::vector<float> f = {1, 1, -1, -1};
  CHECK(std::abs(transrate_score(f, 4, 1, std::vector<int>{0, 0, 1, 1}, 1.0) - 0.5 * std::log(2.0)) <= 1e-6);

  Rng rng(1);
  const auto x = random_features(rng, 12, 4);
  CHECK(std::abs(transrate_score(x, 12, 4, std::vector<int>(12, 3))) <= 1e-6);
  CHECK(transrate_score(std::vector<float>(24, 0.0f), 6, 4, std::vector<int>{0, 1, 0, 1, 2, 2}) == 0.0);

  // Two classes carrying the same rows in different orders.
  std::vector<float> twin(x.begin(), x.begin() + 24);
  for (std::size_t i = 0; i < 6; ++i)
    twin.insert(twin.end(), x.begin() + (5 - i) * 4, x.begin() + (6 - i) * 4);
  CHECK(std::abs(transrate_score(twin, 12, 4, std::vector<int>{0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1})) <= 1e-6);
}

TEST_CASE("TransRate is rotation invariant and non-negative") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 4 + rng.below(30), d = 1 + rng.below(8);
    const auto x = random_features(rng, n, d);
    std::vector<int> y(n);
    for (int& v : y) v = static_cast<int>(rng.below(3));
    const auto q = random_rotation(rng, d);
    const auto r = rotate_rows(x, q, n, d);
    CHECK(std::abs(transrate_score(x, n, d, y) - transrate_score(r, n, d, y)) <= 1e-6);
  }
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng.below(20), d = 1 + rng.below(6);
    const auto x = random_features(rng, n, d);
    std::vector<int> y(n);
    for (int& v : y) v = static_cast<int>(rng.below(4));
    CHECK(transrate_score(x, n, d, y, 0.5 + rng.uniform()) >= -1e-9);
  }
}

TEST_CASE("TransRate contract errors") {
  const std::vector<float> f = {1, 2, 3, 4};
  CHECK_THROWS_AS(transrate_score(f, 1, 4, std::vector<int>{0}), ContractError);
  CHECK_THROWS_AS(transrate_score(f, 2, 2, std::vector<int>{0}), ContractError);
  CHECK_THROWS_AS(transrate_score(f, 2, 2, std::vector<int>{0, 1}, 0.0), ContractError);
  CHECK_THROWS_AS(transrate_score(f, 3, 2, std::vector<int>{0, 1, 1}), ContractError);
}

TEST_CASE("score method names") {
  CHECK(parse_score_method("leep") == ScoreMethod::leep);
  CHECK(score_method_name(parse_score_method("transrate")) == "transrate");
  CHECK_THROWS_AS(parse_score_method("nce"), ConfigError);
}
