#include <cmath>
#include <filesystem>
#include <numeric>

#include "adapool/baselines.hpp"
#include "adapool/error.hpp"
#include "doctest.h"
#include "grad_oracle.hpp"
#include "stream_fixture.hpp"

using namespace adapool;
using testing::same_values;
using testing::snapshot;

namespace {

std::vector<std::vector<int>> all_predictions(const Learner& l, const std::vector<TaskData>& tasks) {
  std::vector<std::vector<int>> out;
  for (std::size_t i = 0; i < l.tasks_seen(); ++i) out.push_back(l.predict(tasks[i].id(), tasks[i].test_x));
  return out;
}

ReplayItem item(std::size_t task) { return {task, 0, {static_cast<std::uint8_t>(task)}}; }

}  // namespace

TEST_CASE("reservoir memory never exceeds its capacity and fills exactly") {
  ReplayMemory memory(500);
  Rng rng(1);
  for (std::size_t t = 1; t <= 20; ++t) {
    for (std::size_t i = 0; i < 250; ++i) {
      memory.offer(item(t), rng);
      REQUIRE(memory.size() <= 500);
    }
  }
  CHECK(memory.size() == 500);
  CHECK(memory.offered() == 5000);
  CHECK_THROWS_AS(ReplayMemory(0), ConfigError);
}

TEST_CASE("reservoir composition is proportional to the offers") {
  // Each stored slot holds any given offer with probability capacity / total,
  // so the count from a task of n_t offers is hypergeometric with mean
  // capacity * n_t / total.
  const std::size_t capacity = 500;
  const std::vector<std::size_t> offers = {250, 250, 100, 400, 250};
  const double total = std::accumulate(offers.begin(), offers.end(), 0.0);
  const std::size_t trials = 100;
  std::vector<double> mean(offers.size(), 0.0);
  for (std::size_t trial = 0; trial < trials; ++trial) {
    ReplayMemory memory(capacity);
    Rng rng(derive_seed(77, {trial}));
    for (std::size_t t = 0; t < offers.size(); ++t)
      for (std::size_t i = 0; i < offers[t]; ++i) memory.offer(item(t), rng);
    for (const ReplayItem& it : memory.items()) mean[it.task_id] += 1.0 / trials;
  }
  for (std::size_t t = 0; t < offers.size(); ++t) {
    const double p = offers[t] / total;
    const double expected = capacity * p;
    const double var = capacity * p * (1 - p) * (total - capacity) / (total - 1);
    const double sigma_of_mean = std::sqrt(var / trials);
    CHECK(std::abs(mean[t] - expected) <= 3.0 * sigma_of_mean);
  }
}

TEST_CASE("replay sampling returns distinct stored items") {
  ReplayMemory memory(10);
  Rng rng(2);
  CHECK(memory.sample(4, rng).empty());
  for (std::size_t i = 0; i < 3; ++i) memory.offer(item(i), rng);
  auto s = memory.sample(8, rng);
  std::sort(s.begin(), s.end());
  CHECK(s == std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("EWC penalty is zero at the anchor and has the analytic gradient") {
  Tensor a({2, 3}, {0.1f, -0.2f, 0.3f, 0.4f, -0.5f, 0.6f});
  Tensor b({4}, {1.0f, 2.0f, -1.0f, 0.5f});
  const std::vector<Tensor> params = {a, b};
  FisherAnchor anchor;
  anchor.theta = {{0.1f, -0.2f, 0.3f, 0.4f, -0.5f, 0.6f}, {1.0f, 2.0f, -1.0f, 0.5f}};
  anchor.fisher = {{0.5f, 0.0f, 2.0f, 1.0f, 0.25f, 3.0f}, {1.0f, 0.1f, 0.0f, 4.0f}};
  std::vector<FisherAnchor> anchors = {anchor, anchor};
  Tape tape = Tape::no_grad();
  CHECK(ewc_penalty(tape, params, anchors, 100.0f).item() == 0.0f);

  a.data()[0] += 0.3f;
  b.data()[3] -= 0.2f;
  // Two identical anchors: lambda/2 * 2 * sum F d^2.
  const double expected = 100.0 * (0.5 * 0.09 + 4.0 * 0.04);
  CHECK(ewc_penalty(tape, params, anchors, 100.0f).item() == doctest::Approx(expected).epsilon(1e-5));

  a.data()[4] -= 0.7f;
  std::vector<Tensor> live = params;
  for (Tensor& p : live) p.set_requires_grad(true);
  const auto report = testing::check_gradients(
      [&](Tape& t) { return ewc_penalty(t, live, anchors, 100.0f); }, live, {.h = 1e-2f});
  CHECK(report.max_rel < 1e-3);
  Tape rec;
  rec.backward(ewc_penalty(rec, live, anchors, 100.0f));
  // d/dθ = λ F (θ - θ*) summed over both anchors.
  CHECK(a.grad()[0] == doctest::Approx(2 * 100.0 * 0.5 * 0.3).epsilon(1e-4));
  CHECK(a.grad()[1] == 0.0f);
  CHECK(b.grad()[3] == doctest::Approx(2 * 100.0 * 4.0 * -0.2).epsilon(1e-4));

  CHECK_THROWS_AS(ewc_penalty(tape, params, anchors, -1.0f), ConfigError);
  const std::vector<Tensor> short_params = {a};
  CHECK_THROWS_AS(ewc_penalty(tape, short_params, anchors, 1.0f), ShapeError);
}

TEST_CASE("Fisher diagonal is the mean squared gradient of the predicted label's log-likelihood") {
  const auto s = testing::mini_stream(1, 3);
  const TaskData& task = s.tasks[0];
  const Head head = build_head(s.config, 1, 5);
  const BackboneParams theta = s.theta.clone();
  const std::vector<Tensor> params = tensors_of(theta.named());
  const FisherAnchor anchor = fisher_diagonal(theta, head, task, params);
  REQUIRE(anchor.fisher.size() == params.size());

  // Independent reference: the log-likelihood written out through sigmoid.
  std::vector<std::vector<double>> expected(params.size());
  for (std::size_t k = 0; k < params.size(); ++k) expected[k].assign(params[k].numel(), 0.0);
  std::vector<Tensor> live = params;
  for (Tensor& p : live) p.set_requires_grad(true);
  for (std::size_t i = 0; i < task.train_y.size(); ++i) {
    const std::size_t row[] = {i};
    Tape tape;
    const Tensor z = forward(tape, theta, nullptr, head, take_rows(task.train_x, row));
    const bool positive = z.item() > 0.0f;
    const Tensor p = sigmoid(tape, positive ? z : scale(tape, z, -1.0f));
    tape.backward(p);
    const double inv_p = 1.0 / p.item();
    for (std::size_t k = 0; k < live.size(); ++k) {
      if (!live[k].has_grad()) continue;
      for (std::size_t e = 0; e < live[k].numel(); ++e) {
        const double g = live[k].grad()[e] * inv_p;
        expected[k][e] += g * g / static_cast<double>(task.train_y.size());
      }
      live[k].clear_grad();
    }
  }
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double scale = *std::max_element(expected[k].begin(), expected[k].end()) + 1e-30;
    for (std::size_t e = 0; e < expected[k].size(); ++e) {
      CHECK(anchor.fisher[k][e] >= 0.0f);
      worst = std::max(worst, std::abs(anchor.fisher[k][e] - expected[k][e]) / scale);
    }
    CHECK(anchor.theta[k] == std::vector<float>(params[k].data().begin(), params[k].data().end()));
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("B1 trains only heads and B2 works on a private backbone") {
  const auto s = testing::mini_stream(2);
  const ParamList theta_before = snapshot(s.theta.named());
  auto b1 = make_learner(testing::quick_method("b1"), s.theta, 1);
  auto b2 = make_learner(testing::quick_method("b2"), s.theta, 1);
  run_stream(*b1, s.tasks, 1);
  run_stream(*b2, s.tasks, 1);
  CHECK(same_values(s.theta.named(), theta_before));
  const auto& ft = dynamic_cast<const FineTuneLearner&>(*b2);
  CHECK_FALSE(same_values(ft.backbone().named(), theta_before));
  CHECK(ft.anchors().empty());
  for (const auto& p : ft.backbone().named()) CHECK_FALSE(p.tensor.requires_grad());
}

TEST_CASE("EWC with lambda zero reproduces B2 bitwise") {
  const auto s = testing::mini_stream(3);
  MethodConfig cfg = testing::quick_method("ewc");
  cfg.ewc_lambda = 0.0f;
  FineTuneLearner ewc(cfg, s.theta, 2);
  FineTuneLearner b2(testing::quick_method("b2"), s.theta, 2);
  run_stream(ewc, s.tasks, 2);
  run_stream(b2, s.tasks, 2);
  CHECK(ewc.anchors().size() == 3);
  CHECK(same_values(ewc.backbone().named(), b2.backbone().named()));
  CHECK(all_predictions(ewc, s.tasks) == all_predictions(b2, s.tasks));

  cfg.ewc_lambda = -1.0f;
  CHECK_THROWS_AS(FineTuneLearner(cfg, s.theta, 2), ConfigError);
}

TEST_CASE("a large EWC penalty pins the backbone to the anchor") {
  const auto s = testing::mini_stream(2);
  MethodConfig cfg = testing::quick_method("ewc", 3);
  cfg.ewc_lambda = 1e9f;
  cfg.train.lr = 1e-4f;
  FineTuneLearner ewc(cfg, s.theta, 3);
  ewc.learn(s.tasks[0]);
  const FisherAnchor anchor = ewc.anchors().front();
  ewc.learn(s.tasks[1]);
  cfg.method = "b2";
  FineTuneLearner b2(cfg, s.theta, 3);
  b2.learn(s.tasks[0]);
  const ParamList after_first = snapshot(b2.backbone().named());
  b2.learn(s.tasks[1]);

  // ||θ - θ*|| / ||θ*|| over the entries with positive Fisher weight.
  auto relative_move = [&](const ParamList& now, const std::vector<std::vector<float>>& star) {
    double moved = 0.0, norm = 0.0;
    for (std::size_t k = 0; k < now.size(); ++k) {
      for (std::size_t e = 0; e < now[k].tensor.numel(); ++e) {
        if (anchor.fisher[k][e] <= 0.0f) continue;
        const double d = now[k].tensor.data()[e] - star[k][e];
        moved += d * d;
        norm += static_cast<double>(star[k][e]) * star[k][e];
      }
    }
    return std::sqrt(moved / norm);
  };
  std::vector<std::vector<float>> b2_star;
  for (const auto& p : after_first) b2_star.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  const double pinned = relative_move(ewc.backbone().named(), anchor.theta);
  const double free = relative_move(b2.backbone().named(), b2_star);
  MESSAGE("relative move with penalty " << pinned << ", without " << free);
  CHECK(pinned <= 1e-3);
  CHECK(free > 5 * pinned);
}

TEST_CASE("per-task adapters never forget") {
  const auto s = testing::mini_stream(4);
  AdaptersLearner adapters(testing::quick_method("adapters"), s.theta, 4);
  std::vector<std::vector<int>> first_seen;
  run_stream(adapters, s.tasks, 4, {.on_predictions = [&](std::size_t n, const std::vector<std::vector<int>>& p) {
               REQUIRE(p.size() == n);
               first_seen.push_back(p.back());
               for (std::size_t i = 0; i < n; ++i) CHECK(p[i] == first_seen[i]);
             }});
  CHECK(first_seen.size() == 4);
}

TEST_CASE("experience replay trains old heads and keeps a bounded memory") {
  const auto s = testing::mini_stream(3, 10);
  MethodConfig cfg = testing::quick_method("er");
  cfg.memory_capacity = 12;
  ReplayLearner er(cfg, s.theta, 5);
  er.learn(s.tasks[0]);
  CHECK(er.memory().size() == 12);
  CHECK(er.memory().offered() == 20);
  for (const ReplayItem& it : er.memory().items()) {
    CHECK(it.task_id == 1);
    CHECK(it.pixels.size() == s.config.image_numel());
  }
  const Tensor z1 = er.logits(1, s.tasks[0].test_x);
  er.learn(s.tasks[1]);
  CHECK_FALSE(same_values(z1, er.logits(1, s.tasks[0].test_x)));
  er.learn(s.tasks[2]);
  CHECK(er.memory().size() == 12);
  CHECK(er.memory().offered() == 60);
  std::size_t from_three = 0;
  for (const ReplayItem& it : er.memory().items()) from_three += it.task_id == 3;
  CHECK(from_three > 0);
  CHECK_THROWS_AS(er.logits(4, s.tasks[0].test_x), LookupError);
}

TEST_CASE("baseline state survives a save and load") {
  const auto s = testing::mini_stream(3);
  const auto dir = std::filesystem::temp_directory_path() / "adapool_test_baseline_state";
  for (const char* method : {"b1", "b2", "ewc", "adapters", "er"}) {
    CAPTURE(method);
    MethodConfig cfg = testing::quick_method(method);
    cfg.ewc_lambda = 10.0f;
    cfg.memory_capacity = 5;
    auto straight = make_learner(cfg, s.theta, 8);
    run_stream(*straight, s.tasks, 8);

    std::filesystem::remove_all(dir);
    auto first = make_learner(cfg, s.theta, 8);
    run_stream(*first, std::span<const TaskData>(s.tasks.data(), 2), 8);
    first->save_state(dir);
    auto resumed = make_learner(cfg, s.theta, 8);
    resumed->load_state(dir, std::vector<TaskData>(s.tasks.begin(), s.tasks.begin() + 2));
    const auto rest = run_stream(*resumed, s.tasks, 8, {}, 2);
    REQUIRE(rest.size() == 1);
    CHECK(all_predictions(*resumed, s.tasks) == all_predictions(*straight, s.tasks));
    for (std::size_t id = 1; id <= 3; ++id)
      CHECK(same_values(resumed->logits(id, s.tasks[id - 1].test_x), straight->logits(id, s.tasks[id - 1].test_x)));

    auto wrong = make_learner(cfg, s.theta, 8);
    CHECK_THROWS(wrong->load_state(dir, std::vector<TaskData>(s.tasks.begin(), s.tasks.begin() + 1)));
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("parameter counts follow the method layout") {
  const auto s = testing::mini_stream(2);
  const std::uint64_t B = count_backbone(s.config);
  const std::uint64_t A = count_adapter(s.config, s.config.adapter_dim);
  const std::uint64_t h = count_head(s.config, 1);
  for (const char* method : {"b1", "b2", "adapters", "er"}) {
    auto l = make_learner(testing::quick_method(method), s.theta, 1);
    run_stream(*l, s.tasks, 1);
    const MethodCounts c = l->counts();
    const std::string m = method;
    if (m == "b1") CHECK(c.trainable == h);
    if (m == "b2") CHECK(c.trainable == B + h);
    if (m == "adapters") CHECK(c.total == B + 2 * A + 2 * h);
    if (m == "er") CHECK(c.total == B + A + 2 * h);
  }
}

TEST_CASE("fine-tuning forgets the first of two disjoint tasks") {
  // Two-class tasks over disjoint class pairs on a narrow backbone, trained
  // hard enough for the second task to repurpose the shared features.
  std::size_t drops = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = testing::mini_stream(2, 20, seed, true);
    MethodConfig cfg = testing::quick_method("b2", 20);
    cfg.train.lr = 2e-2f;
    FineTuneLearner b2(cfg, s.theta, seed);
    const auto records = run_stream(b2, s.tasks, seed);
    const double before = records[0].per_task[0], after = records[1].per_task[0];
    MESSAGE("seed " << seed << ": task-1 accuracy " << before << " -> " << after);
    drops += after < before;
  }
  CHECK(drops >= 9);
}
