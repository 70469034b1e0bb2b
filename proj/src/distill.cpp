#include "adapool/distill.hpp"

#include <algorithm>

#include "adapool/error.hpp"
#include "adapool/rng.hpp"

namespace adapool {

void DistillationBuffer::add(const TaskData& task, std::span<const std::size_t> positions) {
  if (positions.empty()) return;
  parts_.push_back(take_rows(task.train_x, positions));
  stacked_ = {};
  for (std::size_t p : positions) {
    task_ids_.push_back(task.id());
    dataset_indices_.push_back(task.task.train.indices[p]);
  }
}

const Tensor& DistillationBuffer::images() const {
  if (parts_.empty()) throw ContractError("distillation buffer is empty");
  if (!stacked_.defined()) stacked_ = stack_rows(parts_);
  return stacked_;
}

std::size_t DistillationBuffer::count_for(std::size_t task_id) const {
  return static_cast<std::size_t>(std::count(task_ids_.begin(), task_ids_.end(), task_id));
}

std::vector<std::size_t> sample_distillation_data(const TaskData& task, std::size_t cap,
                                                  std::uint64_t seed) {
  const std::size_t n = task.train_y.size();
  Rng rng(derive_seed(seed, {kSeedBuffer, task.id()}));
  return rng.sample_without_replacement(n, std::min(cap, n));
}

Tensor collect_logits(Tape& tape, const BackboneParams& theta, const Adapter& adapter,
                      std::span<const Head* const> heads, const Tensor& images) {
  if (heads.empty()) throw ContractError("collect_logits: no heads");
  const Tensor features = extract_features(tape, theta, &adapter, images);
  std::vector<Tensor> parts;
  parts.reserve(heads.size());
  for (const Head* h : heads) parts.push_back(apply_head(tape, *h, features));
  return parts.size() == 1 ? parts.front() : concat_cols(tape, parts);
}

Tensor double_distillation_loss(Tape& tape, const Tensor& y, const Tensor& y_hat) {
  return mse(tape, y, y_hat);
}

namespace {

Tensor teacher_targets(const BackboneParams& theta, const AdapterModel& old_teacher,
                       const AdapterModel& new_teacher, const Tensor& images) {
  const Tensor a = batched_eval(images, [&](Tape& t, const Tensor& x) {
    return collect_logits(t, theta, *old_teacher.adapter, old_teacher.heads, x);
  });
  const Tensor b = batched_eval(images, [&](Tape& t, const Tensor& x) {
    return collect_logits(t, theta, *new_teacher.adapter, new_teacher.heads, x);
  });
  Tape tape = Tape::no_grad();
  const Tensor parts[] = {a, b};
  return concat_cols(tape, parts);
}

double buffer_loss(const BackboneParams& theta, const Adapter& adapter, std::span<const Head* const> heads,
                   const Tensor& images, const Tensor& targets) {
  const Tensor y_hat = batched_eval(images, [&](Tape& t, const Tensor& x) {
    return collect_logits(t, theta, adapter, heads, x);
  });
  Tape tape = Tape::no_grad();
  return double_distillation_loss(tape, targets, y_hat).item();
}

}  // namespace

DistillResult distillation(const BackboneParams& theta, const AdapterModel& old_teacher,
                           const AdapterModel& new_teacher, const DistillationBuffer& buffer,
                           const DistillConfig& config, float task_lr, std::uint64_t seed) {
  if (!old_teacher.adapter || !new_teacher.adapter || old_teacher.heads.empty() ||
      new_teacher.heads.empty())
    throw ContractError("distillation: each teacher needs an adapter and at least one head");
  if (buffer.empty()) throw ContractError("distillation: empty buffer");
  const Tensor& images = buffer.images();
  const Tensor targets = teacher_targets(theta, old_teacher, new_teacher, images);

  DistillResult out;
  out.adapter = build_adapter(theta.config, derive_seed(seed, {kSeedDistill, 0}),
                              old_teacher.adapter->bottleneck_dim);
  for (const Head* h : old_teacher.heads) out.heads.push_back(h->clone());
  for (const Head* h : new_teacher.heads) out.heads.push_back(h->clone());
  std::vector<const Head*> student_heads;
  for (const Head& h : out.heads) student_heads.push_back(&h);

  out.initial_loss = buffer_loss(theta, out.adapter, student_heads, images, targets);

  std::vector<Tensor> params = tensors_of(out.adapter.named());
  if (!config.freeze_heads)
    for (const Head& h : out.heads) params.push_back(h.w);
  const TrainConfig train{.lr = config.lr > 0.0f ? config.lr : task_lr,
                          .epochs = config.epochs,
                          .batch_size = config.batch_size};
  train_loop(params, buffer.size(), train, derive_seed(seed, {kSeedDistill, 1}),
             [&](Tape& tape, std::span<const std::size_t> batch) {
               const Tensor y_hat = collect_logits(tape, theta, out.adapter, student_heads,
                                                   take_rows(images, batch));
               return double_distillation_loss(tape, take_rows(targets, batch), y_hat);
             });

  out.final_loss = buffer_loss(theta, out.adapter, student_heads, images, targets);
  if (out.final_loss > config.convergence_ratio * out.initial_loss) {
    out.converged = false;
    out.warning = "distillation did not converge: loss " + std::to_string(out.final_loss) +
                  " > " + std::to_string(config.convergence_ratio) + " x initial " +
                  std::to_string(out.initial_loss);
  }
  return out;
}

}  // namespace adapool
