#include <cmath>

#include "adapool/error.hpp"
#include "adapool/training.hpp"
#include "doctest.h"
#include "stream_fixture.hpp"

using namespace adapool;
using testing::same_values;

TEST_CASE("take_rows and stack_rows") {
  const Tensor x({3, 2}, {1, 2, 3, 4, 5, 6});
  const std::size_t idx[] = {2, 0, 2};
  const Tensor t = take_rows(x, idx);
  CHECK(t.shape() == Shape{3, 2});
  CHECK(std::vector<float>(t.data().begin(), t.data().end()) == std::vector<float>{5, 6, 1, 2, 5, 6});
  const std::size_t bad[] = {3};
  CHECK_THROWS_AS(take_rows(x, bad), LookupError);

  const Tensor parts[] = {x, t};
  const Tensor s = stack_rows(parts);
  CHECK(s.shape() == Shape{6, 2});
  CHECK(s.data()[6] == 5.0f);
  const Tensor mismatched[] = {x, Tensor({1, 3})};
  CHECK_THROWS_AS(stack_rows(mismatched), ShapeError);
}

TEST_CASE("predictions threshold one-logit heads at zero and take the first argmax otherwise") {
  const Tensor binary({4, 1}, {0.5f, -0.5f, 0.0f, 3.0f});
  CHECK(predict_labels(binary) == std::vector<int>{1, 0, 0, 1});
  const Tensor multi({3, 3}, {0, 2, 1, 5, 5, 1, -1, -3, -2});
  CHECK(predict_labels(multi) == std::vector<int>{1, 0, 0});
  const int truth[] = {1, 0, 1, 1};
  const auto p = predict_labels(binary);
  CHECK(accuracy(p, truth) == doctest::Approx(0.75));
  CHECK_THROWS_AS(accuracy(p, std::span<const int>(truth, 2)), ContractError);
}

TEST_CASE("task loss picks the loss by head width") {
  Tape tape = Tape::no_grad();
  const int labels[] = {1, 0};
  const Tensor z({2, 1}, {0.0f, 0.0f});
  CHECK(task_loss(tape, z, labels).item() == doctest::Approx(std::log(2.0)));
  const Tensor m({2, 2}, {0.0f, 0.0f, 0.0f, 0.0f});
  CHECK(task_loss(tape, m, labels).item() == doctest::Approx(std::log(2.0)));
  const Tensor confident({2, 1}, {20.0f, -20.0f});
  CHECK(task_loss(tape, confident, labels).item() < 1e-6);
}

TEST_CASE("batched evaluation matches a single pass") {
  const auto s = testing::mini_stream(1);
  const Head head = build_head(s.config, 1, 7);
  const Tensor& x = s.tasks[0].test_x;
  Tape tape = Tape::no_grad();
  const Tensor whole = forward(tape, s.theta, nullptr, head, x);
  const Tensor chunked = batched_eval(x, [&](Tape& t, const Tensor& b) { return forward(t, s.theta, nullptr, head, b); }, 3);
  CHECK(same_values(whole, chunked));
}

TEST_CASE("train_loop fits a separable problem and is reproducible") {
  const auto s = testing::mini_stream(1, 12);
  const TaskData& task = s.tasks[0];
  auto run = [&](std::uint64_t seed) {
    return train_adapter_task(s.theta, task, {.lr = 1e-3f, .epochs = 60, .batch_size = 8}, seed);
  };
  const AdapterAndHead a = run(5);
  const AdapterAndHead b = run(5);
  CHECK(same_values(a.adapter.named(), b.adapter.named()));
  CHECK(same_values(a.head.w, b.head.w));
  const AdapterAndHead c = run(6);
  CHECK_FALSE(same_values(a.head.w, c.head.w));

  Tape tape = Tape::no_grad();
  const auto p = predict_labels(forward(tape, s.theta, &a.adapter, a.head, task.train_x));
  CHECK(accuracy(p, task.train_y) >= 0.75);
  // Θ is never trained here.
  for (const auto& t : s.theta.named()) CHECK_FALSE(t.tensor.has_grad());
}

TEST_CASE("train_loop rejects empty data and zero batch size") {
  Tensor w({1}, {0.0f});
  const BatchLoss loss = [&](Tape& t, std::span<const std::size_t>) { return sum(t, w); };
  CHECK_THROWS_AS(train_loop({w}, 0, {}, 0, loss), ContractError);
  CHECK_THROWS_AS(train_loop({w}, 4, {.lr = 1e-3f, .epochs = 1, .batch_size = 0}, 0, loss), ConfigError);
}

TEST_CASE("materialize rejects mismatched image geometry") {
  const auto ds = testing::mini_dataset();
  const auto tasks = make_binary_scenario(ds, 1, 4, 0);
  CHECK_THROWS_AS(materialize(BackboneConfig::tiny(), ds, tasks[0]), ShapeError);
  const TaskData d = materialize(testing::mini_config(), ds, tasks[0]);
  CHECK(d.train_x.shape() == Shape{8, 3, 8, 8});
  CHECK(d.train_pixels.size() == 8 * 192);
}

TEST_CASE("tiny preset fits a high-signal binary task within 20 epochs") {
  const BackboneParams theta = build_backbone(BackboneConfig::tiny(), 0);
  const BackboneParams before = theta.clone();
  SyntheticOptions so;
  so.num_classes = 2;
  so.per_class = 100;
  so.signal = 120.0;
  so.sigma = 20.0;
  so.seed = 77;
  const LabeledDataset ds = synthetic_dataset(so);
  const TaskData task = materialize(theta.config, ds, make_binary_scenario(ds, 1, 50, 0)[0]);
  const AdapterAndHead ah = train_adapter_task(theta, task, {.lr = 1e-3f, .epochs = 20, .batch_size = 8}, 3);
  Tape tape = Tape::no_grad();
  const auto p = predict_labels(forward(tape, theta, &ah.adapter, ah.head, task.train_x));
  CHECK(accuracy(p, task.train_y) >= 0.95);
  CHECK(same_values(theta.named(), before.named()));
}
