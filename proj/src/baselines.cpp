#include "adapool/baselines.hpp"

#include <algorithm>
#include <map>
#include <numeric>

#include "adapool/error.hpp"
#include "state_io.hpp"

namespace adapool {

namespace {

MethodCounts counts_for(const BackboneConfig& config, const std::string& method, std::size_t n_tasks,
                        const std::vector<Head>& heads) {
  MethodCountQuery q;
  q.method = method;
  q.n_tasks = std::max<std::size_t>(1, n_tasks);
  q.head_out_dim = heads.empty() ? 1 : heads.front().out_dim();
  return method_counts(config, q);
}

void check_next(std::size_t seen, const TaskData& task) {
  if (task.id() != seen + 1)
    throw ContractError("expected task " + std::to_string(seen + 1) + ", got task " + std::to_string(task.id()));
}

const Head& head_for(const std::vector<Head>& heads, std::size_t task_id) {
  if (task_id == 0 || task_id > heads.size())
    throw LookupError("task " + std::to_string(task_id) + " has not been learned");
  return heads[task_id - 1];
}

Tensor eval_logits(const BackboneParams& theta, const Adapter* adapter, const Head& head, const Tensor& images) {
  return batched_eval(images, [&](Tape& t, const Tensor& x) { return forward(t, theta, adapter, head, x); });
}

void add_heads(ParamList& params, const std::vector<Head>& heads) {
  for (std::size_t i = 0; i < heads.size(); ++i)
    params.push_back(heads[i].named("head" + std::to_string(i + 1)).front());
}

std::vector<Head> blank_heads(const BackboneConfig& config, const std::vector<TaskData>& seen) {
  std::vector<Head> heads;
  for (const TaskData& t : seen) heads.push_back(build_head(config, t.out_dim(), 0));
  return heads;
}

nlohmann::json checked_meta(const std::filesystem::path& dir, const std::string& method, std::size_t seen) {
  nlohmann::json meta = detail::load_state_meta(dir);
  if (meta.at("method") != method) throw ContractError("state belongs to method " + meta.at("method").dump());
  if (meta.at("tasks").get<std::size_t>() != seen)
    throw ContractError("state covers " + meta.at("tasks").dump() + " tasks, " + std::to_string(seen) + " supplied");
  return meta;
}

}  // namespace

// ---------------------------------------------------------------------------
// B1

HeadOnlyLearner::HeadOnlyLearner(const MethodConfig& config, const BackboneParams& theta, std::uint64_t seed)
    : config_(config), theta_(theta), seed_(seed) {
  validate(config_);
}

void HeadOnlyLearner::learn(const TaskData& task) {
  check_next(heads_.size(), task);
  const Tensor features = batched_eval(task.train_x, [&](Tape& t, const Tensor& x) {
    return extract_features(t, theta_, nullptr, x);
  });
  Head head = build_head(theta_.config, task.out_dim(), derive_seed(seed_, {kSeedHeadInit, task.id()}));
  std::vector<int> labels;
  train_loop({head.w}, task.train_y.size(), config_.train, derive_seed(seed_, {kSeedBatches, task.id()}),
             [&](Tape& tape, std::span<const std::size_t> batch) {
               labels.clear();
               for (std::size_t i : batch) labels.push_back(task.train_y[i]);
               return task_loss(tape, apply_head(tape, head, take_rows(features, batch)), labels);
             });
  heads_.push_back(std::move(head));
}

Tensor HeadOnlyLearner::logits(std::size_t task_id, const Tensor& images) const {
  return eval_logits(theta_, nullptr, head_for(heads_, task_id), images);
}

MethodCounts HeadOnlyLearner::counts() const { return counts_for(theta_.config, "b1", heads_.size(), heads_); }

void HeadOnlyLearner::save_state(const std::filesystem::path& dir) const {
  ParamList params;
  add_heads(params, heads_);
  detail::save_state_files(dir, params, {{"method", "b1"}, {"tasks", heads_.size()}});
}

void HeadOnlyLearner::load_state(const std::filesystem::path& dir, const std::vector<TaskData>& seen) {
  checked_meta(dir, "b1", seen.size());
  heads_ = blank_heads(theta_.config, seen);
  ParamList params;
  add_heads(params, heads_);
  detail::load_state_params(dir, params);
}

// ---------------------------------------------------------------------------
// EWC pieces

FisherAnchor fisher_diagonal(const BackboneParams& theta, const Head& head, const TaskData& task,
                             std::span<const Tensor> params) {
  const std::size_t n = task.train_y.size();
  if (n == 0) throw ContractError("fisher_diagonal: empty training split");
  FisherAnchor anchor;
  std::vector<Tensor> live(params.begin(), params.end());
  for (Tensor& p : live) {
    anchor.fisher.emplace_back(p.numel(), 0.0f);
    anchor.theta.emplace_back(p.data().begin(), p.data().end());
    p.set_requires_grad(true);
  }
  std::vector<double> acc;
  std::vector<std::vector<double>> sums(live.size());
  for (std::size_t k = 0; k < live.size(); ++k) sums[k].assign(live[k].numel(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t row[] = {i};
    Tape tape;
    const Tensor z = forward(tape, theta, nullptr, head, take_rows(task.train_x, row));
    const int predicted[] = {predict_labels(z).front()};
    // Negative log-likelihood; squaring removes the sign.
    tape.backward(task_loss(tape, z, predicted));
    for (std::size_t k = 0; k < live.size(); ++k) {
      if (!live[k].has_grad()) continue;
      auto g = live[k].grad();
      for (std::size_t e = 0; e < g.size(); ++e) sums[k][e] += static_cast<double>(g[e]) * g[e];
      live[k].clear_grad();
    }
  }
  for (std::size_t k = 0; k < live.size(); ++k) {
    for (std::size_t e = 0; e < sums[k].size(); ++e)
      anchor.fisher[k][e] = static_cast<float>(sums[k][e] / static_cast<double>(n));
    live[k].set_requires_grad(false);
  }
  return anchor;
}

Tensor ewc_penalty(Tape& tape, std::span<const Tensor> params, std::span<const FisherAnchor> anchors,
                   float lambda) {
  if (lambda < 0.0f) throw ConfigError("ewc lambda must be non-negative");
  Tensor total = Tensor::scalar(0.0f);
  for (const FisherAnchor& a : anchors) {
    if (a.fisher.size() != params.size() || a.theta.size() != params.size())
      throw ShapeError("ewc_penalty: anchor covers " + std::to_string(a.fisher.size()) + " tensors, " +
                       std::to_string(params.size()) + " given");
    for (std::size_t k = 0; k < params.size(); ++k)
      total = add(tape, total, weighted_sq_distance(tape, params[k], a.theta[k], a.fisher[k]));
  }
  return scale(tape, total, 0.5f * lambda);
}

// ---------------------------------------------------------------------------
// B2 / EWC

FineTuneLearner::FineTuneLearner(const MethodConfig& config, const BackboneParams& theta, std::uint64_t seed)
    : config_(config), theta_(theta.clone()), seed_(seed) {
  validate(config_);
  if (config_.method != "b2" && config_.method != "ewc")
    throw ConfigError("FineTuneLearner cannot run method '" + config_.method + "'");
}

void FineTuneLearner::learn(const TaskData& task) {
  check_next(heads_.size(), task);
  Head head = build_head(theta_.config, task.out_dim(), derive_seed(seed_, {kSeedHeadInit, task.id()}));
  const std::vector<Tensor> backbone = tensors_of(theta_.named());
  std::vector<Tensor> params = backbone;
  params.push_back(head.w);
  const bool penalise = config_.method == "ewc" && config_.ewc_lambda > 0.0f && !anchors_.empty();
  std::vector<int> labels;
  train_loop(params, task.train_y.size(), config_.train, derive_seed(seed_, {kSeedBatches, task.id()}),
             [&](Tape& tape, std::span<const std::size_t> batch) {
               labels.clear();
               for (std::size_t i : batch) labels.push_back(task.train_y[i]);
               Tensor loss = task_loss(tape, forward(tape, theta_, nullptr, head, take_rows(task.train_x, batch)), labels);
               if (penalise) loss = add(tape, loss, ewc_penalty(tape, backbone, anchors_, config_.ewc_lambda));
               return loss;
             });
  if (config_.method == "ewc") anchors_.push_back(fisher_diagonal(theta_, head, task, backbone));
  heads_.push_back(std::move(head));
}

Tensor FineTuneLearner::logits(std::size_t task_id, const Tensor& images) const {
  return eval_logits(theta_, nullptr, head_for(heads_, task_id), images);
}

MethodCounts FineTuneLearner::counts() const {
  return counts_for(theta_.config, config_.method, heads_.size(), heads_);
}

void FineTuneLearner::save_state(const std::filesystem::path& dir) const {
  ParamList params = detail::prefixed(theta_.named(), "theta");
  add_heads(params, heads_);
  for (std::size_t a = 0; a < anchors_.size(); ++a) {
    for (std::size_t k = 0; k < anchors_[a].fisher.size(); ++k) {
      const std::string tag = "anchor" + std::to_string(a) + "." + std::to_string(k);
      const auto& f = anchors_[a].fisher[k];
      const auto& t = anchors_[a].theta[k];
      params.push_back({tag + ".fisher", Tensor({f.size()}, f)});
      params.push_back({tag + ".theta", Tensor({t.size()}, t)});
    }
  }
  detail::save_state_files(dir, params,
                           {{"method", config_.method}, {"tasks", heads_.size()}, {"anchors", anchors_.size()}});
}

void FineTuneLearner::load_state(const std::filesystem::path& dir, const std::vector<TaskData>& seen) {
  const nlohmann::json meta = checked_meta(dir, config_.method, seen.size());
  heads_ = blank_heads(theta_.config, seen);
  ParamList params = detail::prefixed(theta_.named(), "theta");
  add_heads(params, heads_);
  const std::vector<Tensor> backbone = tensors_of(theta_.named());
  const std::size_t n_anchors = meta.at("anchors").get<std::size_t>();
  std::vector<std::pair<Tensor, Tensor>> stored;
  for (std::size_t a = 0; a < n_anchors; ++a) {
    for (std::size_t k = 0; k < backbone.size(); ++k) {
      const std::string tag = "anchor" + std::to_string(a) + "." + std::to_string(k);
      stored.emplace_back(Tensor({backbone[k].numel()}), Tensor({backbone[k].numel()}));
      params.push_back({tag + ".fisher", stored.back().first});
      params.push_back({tag + ".theta", stored.back().second});
    }
  }
  detail::load_state_params(dir, params);
  anchors_.assign(n_anchors, {});
  for (std::size_t a = 0; a < n_anchors; ++a) {
    for (std::size_t k = 0; k < backbone.size(); ++k) {
      const auto& [f, t] = stored[a * backbone.size() + k];
      anchors_[a].fisher.emplace_back(f.data().begin(), f.data().end());
      anchors_[a].theta.emplace_back(t.data().begin(), t.data().end());
    }
  }
}

// ---------------------------------------------------------------------------
// Per-task adapters

AdaptersLearner::AdaptersLearner(const MethodConfig& config, const BackboneParams& theta, std::uint64_t seed)
    : config_(config), theta_(theta), seed_(seed) {
  validate(config_);
}

void AdaptersLearner::learn(const TaskData& task) {
  check_next(heads_.size(), task);
  AdapterAndHead trained = train_adapter_task(theta_, task, config_.train, seed_);
  adapters_.push_back(std::move(trained.adapter));
  heads_.push_back(std::move(trained.head));
}

Tensor AdaptersLearner::logits(std::size_t task_id, const Tensor& images) const {
  const Head& head = head_for(heads_, task_id);
  return eval_logits(theta_, &adapters_[task_id - 1], head, images);
}

MethodCounts AdaptersLearner::counts() const {
  return counts_for(theta_.config, "adapters", heads_.size(), heads_);
}

void AdaptersLearner::save_state(const std::filesystem::path& dir) const {
  ParamList params;
  for (std::size_t i = 0; i < adapters_.size(); ++i)
    for (auto& p : detail::prefixed(adapters_[i].named(), "task" + std::to_string(i + 1))) params.push_back(p);
  add_heads(params, heads_);
  detail::save_state_files(dir, params, {{"method", "adapters"}, {"tasks", heads_.size()}});
}

void AdaptersLearner::load_state(const std::filesystem::path& dir, const std::vector<TaskData>& seen) {
  checked_meta(dir, "adapters", seen.size());
  heads_ = blank_heads(theta_.config, seen);
  adapters_.clear();
  ParamList params;
  for (std::size_t i = 0; i < seen.size(); ++i) {
    adapters_.push_back(build_adapter(theta_.config, 0));
    for (auto& p : detail::prefixed(adapters_[i].named(), "task" + std::to_string(i + 1))) params.push_back(p);
  }
  add_heads(params, heads_);
  detail::load_state_params(dir, params);
}

// ---------------------------------------------------------------------------
// Experience replay

ReplayMemory::ReplayMemory(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ConfigError("replay memory capacity must be positive");
}

void ReplayMemory::offer(ReplayItem item, Rng& rng) {
  if (items_.size() < capacity_) {
    items_.push_back(std::move(item));
  } else {
    const std::uint64_t j = rng.below(offered_ + 1);
    if (j < capacity_) items_[j] = std::move(item);
  }
  ++offered_;
}

std::vector<std::size_t> ReplayMemory::sample(std::size_t k, Rng& rng) const {
  return rng.sample_without_replacement(items_.size(), std::min(k, items_.size()));
}

void ReplayMemory::restore(std::vector<ReplayItem> items, std::uint64_t offered) {
  if (items.size() > capacity_ || items.size() > offered)
    throw ContractError("replay memory state is inconsistent");
  items_ = std::move(items);
  offered_ = offered;
}

ReplayLearner::ReplayLearner(const MethodConfig& config, const BackboneParams& theta, std::uint64_t seed)
    : config_(config),
      theta_(theta),
      seed_(seed),
      adapter_(build_adapter(theta.config, derive_seed(seed, {kSeedSharedAdapter}))),
      memory_(config.memory_capacity) {
  validate(config_);
}

void ReplayLearner::learn(const TaskData& task) {
  check_next(heads_.size(), task);
  const std::size_t n = task.train_y.size();
  if (n == 0) throw ContractError("task " + std::to_string(task.id()) + " has no training data");
  heads_.push_back(build_head(theta_.config, task.out_dim(), derive_seed(seed_, {kSeedHeadInit, task.id()})));
  const std::vector<Tensor> adapter_params = tensors_of(adapter_.named());

  AdamState adam({.lr = config_.train.lr});
  Rng replay_rng(derive_seed(seed_, {kSeedReplay, task.id(), 0}));
  const std::uint64_t batch_seed = derive_seed(seed_, {kSeedBatches, task.id()});
  std::vector<std::size_t> order(n);
  std::vector<int> labels;
  for (std::size_t epoch = 0; epoch < config_.train.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(batch_seed, {epoch}));
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t begin = 0; begin < n; begin += config_.train.batch_size) {
      const std::span<const std::size_t> batch(order.data() + begin, std::min(config_.train.batch_size, n - begin));
      std::vector<Tensor> params = adapter_params;
      params.push_back(heads_.back().w);
      std::map<std::size_t, std::vector<std::size_t>> groups;
      if (memory_.size() > 0)
        for (std::size_t m : memory_.sample(config_.replay_batch, replay_rng))
          groups[memory_.items()[m].task_id].push_back(m);
      for (const auto& [t, members] : groups) params.push_back(heads_[t - 1].w);
      for (Tensor& p : params) p.set_requires_grad(true);

      Tape tape;
      labels.clear();
      for (std::size_t i : batch) labels.push_back(task.train_y[i]);
      Tensor loss = task_loss(tape, forward(tape, theta_, &adapter_, heads_.back(), take_rows(task.train_x, batch)),
                              labels);
      if (!groups.empty()) {
        std::size_t replayed = 0;
        for (const auto& [t, members] : groups) replayed += members.size();
        Tensor replay = Tensor::scalar(0.0f);
        for (const auto& [t, members] : groups) {
          std::vector<std::uint8_t> pixels;
          labels.clear();
          for (std::size_t m : members) {
            const ReplayItem& item = memory_.items()[m];
            pixels.insert(pixels.end(), item.pixels.begin(), item.pixels.end());
            labels.push_back(item.label);
          }
          const Tensor x = images_to_tensor(theta_.config, pixels, members.size());
          const Tensor part = task_loss(tape, forward(tape, theta_, &adapter_, heads_[t - 1], x), labels);
          replay = add(tape, replay,
                       scale(tape, part, static_cast<float>(members.size()) / static_cast<float>(replayed)));
        }
        loss = add(tape, loss, replay);
      }
      tape.backward(loss);
      adam_step(params, adam);
      for (Tensor& p : params) p.set_requires_grad(false);
    }
  }

  Rng offer_rng(derive_seed(seed_, {kSeedReplay, task.id(), 1}));
  const std::size_t numel = theta_.config.image_numel();
  for (std::size_t i = 0; i < n; ++i) {
    const auto first = task.train_pixels.begin() + static_cast<std::ptrdiff_t>(i * numel);
    memory_.offer({task.id(), task.train_y[i], std::vector<std::uint8_t>(first, first + static_cast<std::ptrdiff_t>(numel))},
                  offer_rng);
  }
}

Tensor ReplayLearner::logits(std::size_t task_id, const Tensor& images) const {
  return eval_logits(theta_, &adapter_, head_for(heads_, task_id), images);
}

MethodCounts ReplayLearner::counts() const { return counts_for(theta_.config, "er", heads_.size(), heads_); }

void ReplayLearner::save_state(const std::filesystem::path& dir) const {
  ParamList params = adapter_.named();
  add_heads(params, heads_);
  std::vector<std::size_t> tasks;
  std::vector<int> labels;
  std::vector<std::uint8_t> pixels;
  for (const ReplayItem& item : memory_.items()) {
    tasks.push_back(item.task_id);
    labels.push_back(item.label);
    pixels.insert(pixels.end(), item.pixels.begin(), item.pixels.end());
  }
  detail::save_state_files(dir, params,
                           {{"method", "er"},
                            {"tasks", heads_.size()},
                            {"memory_tasks", tasks},
                            {"memory_labels", labels},
                            {"memory_offered", memory_.offered()}});
  detail::save_bytes(dir / "memory.bin", pixels);
}

void ReplayLearner::load_state(const std::filesystem::path& dir, const std::vector<TaskData>& seen) {
  const nlohmann::json meta = checked_meta(dir, "er", seen.size());
  heads_ = blank_heads(theta_.config, seen);
  ParamList params = adapter_.named();
  add_heads(params, heads_);
  detail::load_state_params(dir, params);
  const auto tasks = meta.at("memory_tasks").get<std::vector<std::size_t>>();
  const auto labels = meta.at("memory_labels").get<std::vector<int>>();
  const std::vector<std::uint8_t> pixels = detail::load_bytes(dir / "memory.bin");
  const std::size_t numel = theta_.config.image_numel();
  if (labels.size() != tasks.size() || pixels.size() != tasks.size() * numel)
    throw PersistenceError(PersistenceError::Kind::truncated_blob, "replay memory file does not match its index");
  std::vector<ReplayItem> items;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto first = pixels.begin() + static_cast<std::ptrdiff_t>(i * numel);
    items.push_back({tasks[i], labels[i], std::vector<std::uint8_t>(first, first + static_cast<std::ptrdiff_t>(numel))});
  }
  memory_.restore(std::move(items), meta.at("memory_offered").get<std::uint64_t>());
}

// ---------------------------------------------------------------------------

}  // namespace adapool
