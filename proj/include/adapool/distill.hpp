#pragma once

// Merging two adapters into one by regressing a fresh student adapter onto
// the concatenated logits of both teachers over an unlabelled buffer.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "adapool/training.hpp"

namespace adapool {

/// Unlabelled inputs retained from every task seen so far.
class DistillationBuffer {
 public:
  /// Adds the rows `positions` of task.train_x. Labels are not kept.
  void add(const TaskData& task, std::span<const std::size_t> positions);

  std::size_t size() const { return task_ids_.size(); }
  bool empty() const { return task_ids_.empty(); }
  /// All stored images stacked, in insertion order.
  const Tensor& images() const;
  std::span<const std::size_t> task_ids() const { return task_ids_; }
  /// Dataset index of each stored image.
  std::span<const std::size_t> dataset_indices() const { return dataset_indices_; }
  std::size_t count_for(std::size_t task_id) const;

 private:
  std::vector<Tensor> parts_;
  mutable Tensor stacked_;
  std::vector<std::size_t> task_ids_;
  std::vector<std::size_t> dataset_indices_;
};

/// min(cap, |train|) distinct positions of the task's training split drawn
/// uniformly without replacement.
std::vector<std::size_t> sample_distillation_data(const TaskData& task, std::size_t cap,
                                                  std::uint64_t seed);

/// An adapter together with the heads it serves, in ascending task order.
struct AdapterModel {
  const Adapter* adapter = nullptr;
  std::vector<const Head*> heads;
};

/// Concatenated logits [n x sum of head widths] of the heads over the
/// features of Θ + adapter.
Tensor collect_logits(Tape& tape, const BackboneParams& theta, const Adapter& adapter,
                      std::span<const Head* const> heads, const Tensor& images);

/// Mean over all entries of (y - y_hat)^2.
Tensor double_distillation_loss(Tape& tape, const Tensor& y, const Tensor& y_hat);

struct DistillConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 8;
  /// Learning rate; zero means the task learning rate.
  float lr = 0.0f;
  /// Per-task cap on buffered inputs.
  std::size_t buffer_cap = 50;
  /// Keep the student's head copies fixed.
  bool freeze_heads = false;
  /// Warn when the final loss exceeds this fraction of the initial loss.
  double convergence_ratio = 0.1;
};

struct DistillResult {
  Adapter adapter;
  /// Copies of the old teacher's heads followed by the new teacher's heads,
  /// tuned jointly with the adapter unless frozen.
  std::vector<Head> heads;
  /// Full-buffer loss before the first and after the last update.
  double initial_loss = 0.0;
  double final_loss = 0.0;
  bool converged = true;
  std::string warning;
};

/// Trains a fresh adapter (and copies of the teacher heads) so that its
/// logits match [old teacher | new teacher] on the buffer. The teachers are
/// only read.
DistillResult distillation(const BackboneParams& theta, const AdapterModel& old_teacher,
                           const AdapterModel& new_teacher, const DistillationBuffer& buffer,
                           const DistillConfig& config, float task_lr, std::uint64_t seed);

}  // namespace adapool
