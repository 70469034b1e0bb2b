#include "adapool/taskstream.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "adapool/error.hpp"
#include "adapool/rng.hpp"
#include "json.hpp"

namespace adapool {

using nlohmann::json;

std::span<const std::uint8_t> LabeledDataset::image(std::size_t i) const {
  if (i >= size()) throw LookupError("image index " + std::to_string(i) + " out of range");
  return {pixels.data() + i * image_numel(), image_numel()};
}

std::vector<std::size_t> LabeledDataset::indices_of(int c) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == c) out.push_back(i);
  return out;
}

// ---------------------------------------------------------------------------
// CIFAR-100

LabeledDataset parse_cifar100_binary(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % kCifarRecordBytes != 0)
    throw FormatError("CIFAR-100 data of " + std::to_string(bytes.size()) +
                      " bytes is not a whole number of " + std::to_string(kCifarRecordBytes) +
                      "-byte records");
  LabeledDataset ds;
  ds.num_classes = kCifarClasses;
  const std::size_t n = bytes.size() / kCifarRecordBytes;
  ds.labels.resize(n);
  ds.pixels.resize(n * ds.image_numel());
  for (std::size_t r = 0; r < n; ++r) {
    const std::uint8_t* rec = bytes.data() + r * kCifarRecordBytes;
    if (rec[1] >= kCifarClasses)
      throw CorruptionError("record " + std::to_string(r) + " has fine label " +
                            std::to_string(rec[1]));
    ds.labels[r] = rec[1];
    std::copy(rec + 2, rec + kCifarRecordBytes, ds.pixels.begin() + r * ds.image_numel());
  }
  return ds;
}

LabeledDataset load_cifar100_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LookupError("cannot open dataset " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  return parse_cifar100_binary(bytes);
}

// ---------------------------------------------------------------------------
// Synthetic blobs

LabeledDataset synthetic_dataset(const SyntheticOptions& o) {
  if (o.num_classes == 0 || o.image_size == 0 || o.channels == 0 || o.cell == 0)
    throw ConfigError("synthetic dataset: sizes must be positive");
  if (o.sigma < 0.0) throw ConfigError("synthetic dataset: sigma must be non-negative");
  LabeledDataset ds;
  ds.channels = o.channels;
  ds.image_size = o.image_size;
  ds.num_classes = o.num_classes;
  const std::size_t numel = ds.image_numel();
  ds.labels.reserve(o.num_classes * o.per_class);
  ds.pixels.reserve(o.num_classes * o.per_class * numel);
  const std::size_t cells = (o.image_size + o.cell - 1) / o.cell;
  std::vector<double> mean(numel);
  for (std::size_t c = 0; c < o.num_classes; ++c) {
    Rng pattern(derive_seed(o.seed, {1, c}));
    std::vector<double> grid(o.channels * cells * cells);
    for (double& g : grid) g = 2.0 * pattern.uniform() - 1.0;
    for (std::size_t ch = 0; ch < o.channels; ++ch)
      for (std::size_t y = 0; y < o.image_size; ++y)
        for (std::size_t x = 0; x < o.image_size; ++x)
          mean[(ch * o.image_size + y) * o.image_size + x] =
              127.5 + o.signal * grid[(ch * cells + y / o.cell) * cells + x / o.cell];
    Rng noise(derive_seed(o.seed, {2, c}));
    for (std::size_t k = 0; k < o.per_class; ++k) {
      for (std::size_t i = 0; i < numel; ++i) {
        const double v = mean[i] + (o.sigma > 0.0 ? o.sigma * noise.normal() : 0.0);
        ds.pixels.push_back(static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)));
      }
      ds.labels.push_back(static_cast<int>(c));
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Scenarios

Scenario parse_scenario(const std::string& name) {
  if (name == "binary") return Scenario::binary;
  if (name == "multiclass") return Scenario::multiclass;
  throw ConfigError("unknown scenario '" + name + "' (expected binary or multiclass)");
}

std::string scenario_name(Scenario s) { return s == Scenario::binary ? "binary" : "multiclass"; }

namespace {

std::vector<std::vector<std::size_t>> by_class(const LabeledDataset& ds) {
  std::vector<std::vector<std::size_t>> out(ds.num_classes);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const int c = ds.labels[i];
    if (c < 0 || static_cast<std::size_t>(c) >= ds.num_classes)
      throw CorruptionError("label " + std::to_string(c) + " outside the dataset's classes");
    out[c].push_back(i);
  }
  return out;
}

// 2k distinct items of `pool`: the first k for training, the rest for test.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> draw_split(
    const std::vector<std::size_t>& pool, std::size_t k, Rng& rng, const std::string& what) {
  if (pool.size() < 2 * k)
    throw GenerationError(what + ": need " + std::to_string(2 * k) + " images, have " +
                          std::to_string(pool.size()));
  const auto pick = rng.sample_without_replacement(pool.size(), 2 * k);
  std::vector<std::size_t> train, test;
  for (std::size_t j = 0; j < k; ++j) train.push_back(pool[pick[j]]);
  for (std::size_t j = k; j < 2 * k; ++j) test.push_back(pool[pick[j]]);
  return {train, test};
}

void append(Split& s, const std::vector<std::size_t>& idx, int label) {
  s.indices.insert(s.indices.end(), idx.begin(), idx.end());
  s.labels.insert(s.labels.end(), idx.size(), label);
}

}  // namespace

std::vector<Task> make_binary_scenario(const LabeledDataset& ds, std::size_t num_tasks,
                                       std::size_t per_class, std::uint64_t seed) {
  if (num_tasks == 0 || per_class == 0)
    throw GenerationError("binary scenario: num_tasks and per_class must be positive");
  if (ds.num_classes < num_tasks + 1)
    throw GenerationError("binary scenario: " + std::to_string(num_tasks) + " tasks need at least " +
                          std::to_string(num_tasks + 1) + " classes, dataset has " +
                          std::to_string(ds.num_classes));
  const auto classes = by_class(ds);
  Rng rng(derive_seed(seed, {0xb1}));
  std::vector<int> order(ds.num_classes);
  for (std::size_t c = 0; c < order.size(); ++c) order[c] = static_cast<int>(c);
  rng.shuffle(std::span<int>(order));

  std::vector<Task> tasks;
  for (std::size_t t = 0; t < num_tasks; ++t) {
    const int positive = order[t];
    std::vector<int> negative_classes;
    if (t == 0) {
      for (std::size_t c = 0; c < ds.num_classes; ++c)
        if (static_cast<int>(c) != positive) negative_classes.push_back(static_cast<int>(c));
    } else {
      negative_classes.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(t));
      std::sort(negative_classes.begin(), negative_classes.end());
    }
    std::vector<std::size_t> negative_pool;
    for (int c : negative_classes)
      negative_pool.insert(negative_pool.end(), classes[c].begin(), classes[c].end());
    std::sort(negative_pool.begin(), negative_pool.end());

    Task task;
    task.id = t + 1;
    task.head_out_dim = 1;
    task.classes.push_back(positive);
    task.classes.insert(task.classes.end(), negative_classes.begin(), negative_classes.end());
    const std::string what = "binary task " + std::to_string(t + 1);
    const auto [pos_train, pos_test] = draw_split(classes[positive], per_class, rng, what);
    const auto [neg_train, neg_test] = draw_split(negative_pool, per_class, rng, what);
    append(task.train, pos_train, 1);
    append(task.train, neg_train, 0);
    append(task.test, pos_test, 1);
    append(task.test, neg_test, 0);
    tasks.push_back(std::move(task));
  }
  return tasks;
}

std::vector<Task> make_multiclass_scenario(const LabeledDataset& ds, std::size_t num_tasks,
                                           std::size_t classes_per_task, std::size_t per_class,
                                           std::uint64_t seed) {
  if (num_tasks == 0 || classes_per_task < 2 || per_class == 0)
    throw GenerationError("multiclass scenario: need tasks, at least 2 classes per task and per_class > 0");
  if (num_tasks * classes_per_task > ds.num_classes)
    throw GenerationError("multiclass scenario: " + std::to_string(num_tasks) + " x " +
                          std::to_string(classes_per_task) + " classes exceed the dataset's " +
                          std::to_string(ds.num_classes));
  const auto classes = by_class(ds);
  Rng rng(derive_seed(seed, {0x3c}));
  std::vector<int> order(ds.num_classes);
  for (std::size_t c = 0; c < order.size(); ++c) order[c] = static_cast<int>(c);
  rng.shuffle(std::span<int>(order));

  std::vector<Task> tasks;
  for (std::size_t t = 0; t < num_tasks; ++t) {
    Task task;
    task.id = t + 1;
    task.head_out_dim = classes_per_task;
    for (std::size_t j = 0; j < classes_per_task; ++j) {
      const int c = order[t * classes_per_task + j];
      task.classes.push_back(c);
      const auto [train, test] =
          draw_split(classes[c], per_class, rng, "multiclass task " + std::to_string(t + 1));
      append(task.train, train, static_cast<int>(j));
      append(task.test, test, static_cast<int>(j));
    }
    tasks.push_back(std::move(task));
  }
  return tasks;
}

std::vector<std::uint8_t> gather_pixels(const LabeledDataset& ds,
                                        std::span<const std::size_t> indices) {
  std::vector<std::uint8_t> out;
  out.reserve(indices.size() * ds.image_numel());
  for (std::size_t i : indices) {
    const auto img = ds.image(i);
    out.insert(out.end(), img.begin(), img.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

json split_json(const Split& s) { return {{"indices", s.indices}, {"labels", s.labels}}; }

Split split_from(const json& j) {
  Split s;
  s.indices = j.at("indices").get<std::vector<std::size_t>>();
  s.labels = j.at("labels").get<std::vector<int>>();
  if (s.indices.size() != s.labels.size())
    throw FormatError("task manifest: indices and labels differ in length");
  return s;
}

}  // namespace

std::string tasks_to_json(const std::vector<Task>& tasks) {
  json arr = json::array();
  for (const Task& t : tasks)
    arr.push_back({{"id", t.id},
                   {"classes", t.classes},
                   {"head_out_dim", t.head_out_dim},
                   {"train", split_json(t.train)},
                   {"test", split_json(t.test)}});
  return json{{"tasks", arr}}.dump();
}

std::vector<Task> tasks_from_json(const std::string& text) {
  std::vector<Task> tasks;
  try {
    const json doc = json::parse(text);
    for (const json& j : doc.at("tasks")) {
      Task t;
      t.id = j.at("id").get<std::size_t>();
      t.classes = j.at("classes").get<std::vector<int>>();
      t.head_out_dim = j.at("head_out_dim").get<std::size_t>();
      t.train = split_from(j.at("train"));
      t.test = split_from(j.at("test"));
      tasks.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("task manifest: ") + e.what());
  }
  return tasks;
}

void save_task_manifest(const std::vector<Task>& tasks, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  out << tasks_to_json(tasks) << '\n';
  if (!out) throw PersistenceError(PersistenceError::Kind::io, "cannot write " + path.string());
}

std::vector<Task> load_task_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LookupError("cannot open task manifest " + path.string());
  return tasks_from_json(std::string((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>()));
}

}  // namespace adapool
