#pragma once

// Shared training and evaluation machinery: task tensors, mini-batch loops,
// per-head-type losses and predictions.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "adapool/backbone.hpp"
#include "adapool/optim.hpp"
#include "adapool/taskstream.hpp"

namespace adapool {

struct TrainConfig {
  float lr = 1e-3f;
  std::size_t epochs = 20;
  std::size_t batch_size = 8;
};

/// A task with its images converted to model input.
struct TaskData {
  Task task;
  Tensor train_x;  // [n x C x H x W]
  std::vector<int> train_y;
  std::vector<std::uint8_t> train_pixels;
  Tensor test_x;
  std::vector<int> test_y;

  std::size_t id() const { return task.id; }
  bool binary() const { return task.binary(); }
  std::size_t out_dim() const { return task.head_out_dim; }
};

TaskData materialize(const BackboneConfig& config, const LabeledDataset& ds, const Task& task);

/// Rows `idx` of a stack of images (or any tensor, along its first axis).
Tensor take_rows(const Tensor& stack, std::span<const std::size_t> idx);
/// Concatenation along the first axis.
Tensor stack_rows(std::span<const Tensor> parts);

/// Sigmoid BCE against 0/1 labels for a one-logit head, softmax cross-entropy
/// otherwise.
Tensor task_loss(Tape& tape, const Tensor& logits, std::span<const int> labels);

/// Logit > 0 for one-logit heads, first argmax otherwise.
std::vector<int> predict_labels(const Tensor& logits);
double accuracy(std::span<const int> predicted, std::span<const int> truth);

/// Evaluates f over consecutive row chunks of `images` on a no-grad tape and
/// stacks the outputs.
Tensor batched_eval(const Tensor& images, const std::function<Tensor(Tape&, const Tensor&)>& f,
                    std::size_t chunk = 64);

using BatchLoss = std::function<Tensor(Tape&, std::span<const std::size_t>)>;

/// Adam over `params` for config.epochs passes of shuffled mini-batches of
/// [0, n). Each epoch's order comes from derive_seed(seed, {epoch}). Returns
/// the mean batch loss of the last epoch.
double train_loop(std::vector<Tensor> params, std::size_t n, const TrainConfig& config,
                  std::uint64_t seed, const BatchLoss& loss);

/// Fresh adapter and head for one task, trained with Θ frozen. Adapter and
/// head initialisation and batch order derive from (seed, task id) only.
struct AdapterAndHead {
  Adapter adapter;
  Head head;
};
AdapterAndHead train_adapter_task(const BackboneParams& theta, const TaskData& task,
                                  const TrainConfig& config, std::uint64_t seed);

/// Seed tags shared by the learners.
enum SeedTag : std::uint64_t {
  kSeedAdapterInit = 11,
  kSeedHeadInit = 12,
  kSeedBatches = 13,
  kSeedBuffer = 14,
  kSeedDistill = 15,
  kSeedReplay = 16,
  kSeedSharedAdapter = 17,
};

}  // namespace adapool
