#pragma once

// Miniature backbone and task streams for learner tests.

#include <algorithm>
#include <cstring>
#include <vector>

#include "adapool/learner.hpp"

namespace adapool::testing {

inline BackboneConfig mini_config() {
  BackboneConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.num_layers = 1;
  c.hidden_dim = 16;
  c.num_heads = 2;
  c.adapter_dim = 4;
  return c;
}

inline LabeledDataset mini_dataset(std::size_t classes = 8, std::size_t per_class = 40, std::uint64_t seed = 3) {
  SyntheticOptions o;
  o.num_classes = classes;
  o.per_class = per_class;
  o.image_size = 8;
  o.cell = 2;
  o.seed = seed;
  return synthetic_dataset(o);
}

struct MiniStream {
  BackboneConfig config = mini_config();
  LabeledDataset dataset;
  BackboneParams theta;
  std::vector<TaskData> tasks;
};

inline MiniStream mini_stream(std::size_t num_tasks, std::size_t per_class = 8, std::uint64_t seed = 0,
                              bool multiclass = false) {
  MiniStream s;
  s.dataset = mini_dataset();
  s.theta = build_backbone(s.config, 100 + seed);
  const auto tasks = multiclass ? make_multiclass_scenario(s.dataset, num_tasks, 2, per_class, seed)
                                : make_binary_scenario(s.dataset, num_tasks, per_class, seed);
  for (const Task& t : tasks) s.tasks.push_back(materialize(s.config, s.dataset, t));
  return s;
}

inline MethodConfig quick_method(const std::string& method, std::size_t epochs = 2) {
  MethodConfig m;
  m.method = method;
  m.train.epochs = epochs;
  m.pool_size = 2;
  m.distill.epochs = 3;
  m.distill.buffer_cap = 6;
  return m;
}

inline bool same_values(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  auto x = a.data();
  auto y = b.data();
  return std::equal(x.begin(), x.end(), y.begin(), y.end(),
                    [](float p, float q) { return std::memcmp(&p, &q, sizeof p) == 0; });
}

inline bool same_values(const ParamList& a, const ParamList& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].name != b[i].name || !same_values(a[i].tensor, b[i].tensor)) return false;
  return true;
}

inline ParamList snapshot(const ParamList& params) {
  ParamList out;
  for (const auto& p : params) out.push_back({p.name, p.tensor.clone()});
  return out;
}

}  // namespace adapool::testing
