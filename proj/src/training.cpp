#include "adapool/training.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>

#include "adapool/error.hpp"
#include "adapool/rng.hpp"

namespace adapool {

TaskData materialize(const BackboneConfig& config, const LabeledDataset& ds, const Task& task) {
  if (ds.channels != config.channels || ds.image_size != config.image_size)
    throw ShapeError("dataset images are " + std::to_string(ds.channels) + "x" +
                     std::to_string(ds.image_size) + "x" + std::to_string(ds.image_size) +
                     ", backbone expects " + std::to_string(config.channels) + "x" +
                     std::to_string(config.image_size) + "x" + std::to_string(config.image_size));
  TaskData d;
  d.task = task;
  d.train_pixels = gather_pixels(ds, task.train.indices);
  d.train_x = images_to_tensor(config, d.train_pixels, task.train.indices.size());
  d.train_y = task.train.labels;
  d.test_x = images_to_tensor(config, gather_pixels(ds, task.test.indices), task.test.indices.size());
  d.test_y = task.test.labels;
  return d;
}

Tensor take_rows(const Tensor& stack, std::span<const std::size_t> idx) {
  if (stack.rank() == 0) throw ShapeError("take_rows: scalar input");
  Shape shape = stack.shape();
  const std::size_t n = shape[0];
  const std::size_t row = n == 0 ? 0 : stack.numel() / n;
  shape[0] = idx.size();
  Tensor out(shape);
  auto src = stack.data();
  auto dst = out.data();
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] >= n) throw LookupError("take_rows: row " + std::to_string(idx[k]) + " of " + std::to_string(n));
    std::memcpy(dst.data() + k * row, src.data() + idx[k] * row, row * sizeof(float));
  }
  return out;
}

Tensor stack_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("stack_rows: nothing to stack");
  Shape shape = parts.front().shape();
  std::size_t rows = 0;
  for (const Tensor& p : parts) {
    Shape s = p.shape();
    s[0] = shape[0];
    if (s != shape) throw ShapeError("stack_rows: trailing shapes differ");
    rows += p.dim(0);
  }
  shape[0] = rows;
  Tensor out(shape);
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(offset));
    offset += p.numel();
  }
  return out;
}

Tensor task_loss(Tape& tape, const Tensor& logits, std::span<const int> labels) {
  if (logits.cols() == 1) {
    std::vector<float> targets(labels.begin(), labels.end());
    return sigmoid_bce(tape, logits, targets);
  }
  return softmax_cross_entropy(tape, logits, labels);
}

std::vector<int> predict_labels(const Tensor& logits) {
  const std::size_t n = logits.rows();
  const std::size_t c = logits.cols();
  std::vector<int> out(n);
  auto v = logits.data();
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = v.data() + i * c;
    if (c == 1) {
      out[i] = row[0] > 0.0f ? 1 : 0;
    } else {
      out[i] = static_cast<int>(std::max_element(row, row + c) - row);
    }
  }
  return out;
}

double accuracy(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size() || truth.empty())
    throw ContractError("accuracy: prediction and label counts differ or are empty");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

Tensor batched_eval(const Tensor& images, const std::function<Tensor(Tape&, const Tensor&)>& f,
                    std::size_t chunk) {
  const std::size_t n = images.dim(0);
  std::vector<Tensor> parts;
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    idx.resize(std::min(chunk, n - begin));
    std::iota(idx.begin(), idx.end(), begin);
    Tape tape = Tape::no_grad();
    parts.push_back(f(tape, take_rows(images, idx)));
  }
  return stack_rows(parts);
}

double train_loop(std::vector<Tensor> params, std::size_t n, const TrainConfig& config,
                  std::uint64_t seed, const BatchLoss& loss) {
  if (n == 0) throw ContractError("train_loop: empty training set");
  if (config.batch_size == 0) throw ConfigError("batch size must be positive");
  for (Tensor& p : params) p.set_requires_grad(true);
  AdamState adam({.lr = config.lr});
  std::vector<std::size_t> order(n);
  double last_epoch = 0.0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, {epoch}));
    rng.shuffle(std::span<std::size_t>(order));
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < n; begin += config.batch_size) {
      const std::span<const std::size_t> batch(order.data() + begin,
                                               std::min(config.batch_size, n - begin));
      Tape tape;
      const Tensor l = loss(tape, batch);
      tape.backward(l);
      adam_step(params, adam);
      total += l.item();
      ++batches;
    }
    last_epoch = total / static_cast<double>(batches);
  }
  for (Tensor& p : params) p.set_requires_grad(false);
  return last_epoch;
}

AdapterAndHead train_adapter_task(const BackboneParams& theta, const TaskData& task,
                                  const TrainConfig& config, std::uint64_t seed) {
  if (task.train_y.empty()) throw ContractError("task " + std::to_string(task.id()) + " has no training data");
  AdapterAndHead out{build_adapter(theta.config, derive_seed(seed, {kSeedAdapterInit, task.id()})),
                     build_head(theta.config, task.out_dim(), derive_seed(seed, {kSeedHeadInit, task.id()}))};
  ParamList params = out.adapter.named();
  for (auto& p : out.head.named()) params.push_back(p);
  std::vector<int> labels;
  train_loop(tensors_of(params), task.train_y.size(), config,
             derive_seed(seed, {kSeedBatches, task.id()}),
             [&](Tape& tape, std::span<const std::size_t> batch) {
               labels.clear();
               for (std::size_t i : batch) labels.push_back(task.train_y[i]);
               return task_loss(tape, forward(tape, theta, &out.adapter, out.head, take_rows(task.train_x, batch)),
                                labels);
             });
  return out;
}

}  // namespace adapool
