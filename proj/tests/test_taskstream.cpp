#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "adapool/error.hpp"
#include "adapool/taskstream.hpp"
#include "cifar_fixture.hpp"
#include "doctest.h"

using namespace adapool;
using testing::two_record_fixture;

namespace {

LabeledDataset blobs(std::size_t classes, std::size_t per_class, std::uint64_t seed = 1) {
  SyntheticOptions o;
  o.num_classes = classes;
  o.per_class = per_class;
  o.image_size = 8;
  o.seed = seed;
  return synthetic_dataset(o);
}

void check_split_disjoint(const Task& t) {
  std::set<std::size_t> train(t.train.indices.begin(), t.train.indices.end());
  CHECK(train.size() == t.train.indices.size());
  std::set<std::size_t> test(t.test.indices.begin(), t.test.indices.end());
  CHECK(test.size() == t.test.indices.size());
  for (std::size_t i : test) CHECK(train.count(i) == 0);
}

}  // namespace

TEST_CASE("CIFAR-100 records parse exactly") {
  const auto bytes = two_record_fixture();
  REQUIRE(bytes.size() == 2 * kCifarRecordBytes);
  const LabeledDataset ds = parse_cifar100_binary(bytes);
  REQUIRE(ds.size() == 2);
  CHECK(ds.num_classes == 100);
  CHECK(ds.labels == std::vector<int>{42, 99});
  for (std::size_t i = 0; i < 3072; ++i) {
    REQUIRE(ds.image(0)[i] == i % 256);
    REQUIRE(ds.image(1)[i] == 255 - i % 251);
  }
  CHECK(parse_cifar100_binary({}).size() == 0);
}

TEST_CASE("CIFAR-100 malformed input") {
  auto bytes = two_record_fixture();
  auto truncated = bytes;
  truncated.pop_back();
  CHECK_THROWS_AS(parse_cifar100_binary(truncated), FormatError);
  auto padded = bytes;
  padded.push_back(0);
  CHECK_THROWS_AS(parse_cifar100_binary(padded), FormatError);
  auto bad = bytes;
  bad[kCifarRecordBytes + 1] = 100;
  CHECK_THROWS_AS(parse_cifar100_binary(bad), CorruptionError);
  bad[kCifarRecordBytes + 1] = 255;
  CHECK_THROWS_AS(parse_cifar100_binary(bad), CorruptionError);
}

TEST_CASE("CIFAR-100 file loading") {
  const auto path = std::filesystem::temp_directory_path() / "adapool_cifar_fixture.bin";
  const auto bytes = two_record_fixture();
  {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  const LabeledDataset ds = load_cifar100_binary(path);
  CHECK(ds.pixels == parse_cifar100_binary(bytes).pixels);
  std::filesystem::resize_file(path, bytes.size() - 10);
  CHECK_THROWS_AS(load_cifar100_binary(path), FormatError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_cifar100_binary(path), LookupError);
}

TEST_CASE("synthetic blobs") {
  SyntheticOptions o;
  o.num_classes = 4;
  o.per_class = 6;
  o.image_size = 8;
  o.sigma = 0.0;
  const LabeledDataset flat = synthetic_dataset(o);
  REQUIRE(flat.size() == 24);
  for (int c = 0; c < 4; ++c) {
    const auto idx = flat.indices_of(c);
    CHECK(idx.size() == 6);
    for (std::size_t i : idx)
      CHECK(std::equal(flat.image(i).begin(), flat.image(i).end(), flat.image(idx[0]).begin()));
  }
  CHECK_FALSE(std::equal(flat.image(0).begin(), flat.image(0).end(), flat.image(6).begin()));

  o.sigma = 30.0;
  const LabeledDataset noisy = synthetic_dataset(o);
  CHECK(noisy.pixels == synthetic_dataset(o).pixels);
  CHECK_FALSE(std::equal(noisy.image(0).begin(), noisy.image(0).end(), noisy.image(1).begin()));
  std::map<int, int> hist;
  for (int l : noisy.labels) ++hist[l];
  CHECK(hist.size() == 4);
  for (auto [c, n] : hist) CHECK(n == 6);

  o.sigma = -1.0;
  CHECK_THROWS_AS(synthetic_dataset(o), ConfigError);
}

TEST_CASE("binary scenario") {
  const LabeledDataset ds = blobs(30, 120);
  const auto tasks = make_binary_scenario(ds, 20, 50, 7);
  REQUIRE(tasks.size() == 20);
  std::set<int> positives;
  for (const Task& t : tasks) {
    CAPTURE(t.id);
    CHECK(t.binary());
    CHECK(t.head_out_dim == 1);
    const int pos = t.classes.front();
    CHECK(positives.insert(pos).second);
    for (const Split* s : {&t.train, &t.test}) {
      REQUIRE(s->indices.size() == 100);
      CHECK(std::count(s->labels.begin(), s->labels.end(), 1) == 50);
      CHECK(std::count(s->labels.begin(), s->labels.end(), 0) == 50);
      for (std::size_t k = 0; k < s->indices.size(); ++k) {
        const int c = ds.labels[s->indices[k]];
        if (s->labels[k] == 1) {
          CHECK(c == pos);
        } else if (t.id == 1) {
          CHECK(c != pos);
        } else {
          bool earlier = false;
          for (std::size_t j = 0; j + 1 < t.id; ++j) earlier |= tasks[j].classes.front() == c;
          CHECK(earlier);
        }
      }
    }
    check_split_disjoint(t);
  }
  CHECK(positives.size() == 20);

  const auto again = make_binary_scenario(ds, 20, 50, 7);
  CHECK(tasks_to_json(again) == tasks_to_json(tasks));
  const auto prefix = make_binary_scenario(ds, 5, 50, 7);
  for (std::size_t i = 0; i < 5; ++i) CHECK(prefix[i].classes.front() == tasks[i].classes.front());
  CHECK(tasks_to_json(make_binary_scenario(ds, 20, 50, 8)) != tasks_to_json(tasks));

  CHECK_THROWS_AS(make_binary_scenario(ds, 30, 50, 7), GenerationError);
  CHECK_THROWS_AS(make_binary_scenario(ds, 5, 61, 7), GenerationError);
}

TEST_CASE("multiclass scenario") {
  const LabeledDataset ds = blobs(100, 100);
  const auto tasks = make_multiclass_scenario(ds, 20, 5, 50, 3);
  REQUIRE(tasks.size() == 20);
  std::multiset<int> seen;
  for (const Task& t : tasks) {
    CAPTURE(t.id);
    CHECK(t.head_out_dim == 5);
    CHECK(t.classes.size() == 5);
    seen.insert(t.classes.begin(), t.classes.end());
    CHECK(t.train.indices.size() == 250);
    CHECK(t.test.indices.size() == 250);
    for (const Split* s : {&t.train, &t.test}) {
      for (int j = 0; j < 5; ++j) CHECK(std::count(s->labels.begin(), s->labels.end(), j) == 50);
      for (std::size_t k = 0; k < s->indices.size(); ++k)
        CHECK(ds.labels[s->indices[k]] == t.classes[s->labels[k]]);
    }
    check_split_disjoint(t);
  }
  CHECK(seen.size() == 100);
  CHECK(std::set<int>(seen.begin(), seen.end()).size() == 100);
  CHECK(tasks_to_json(make_multiclass_scenario(ds, 20, 5, 50, 3)) == tasks_to_json(tasks));
  CHECK_THROWS_AS(make_multiclass_scenario(ds, 21, 5, 50, 3), GenerationError);
  CHECK_THROWS_AS(make_multiclass_scenario(blobs(100, 60), 2, 5, 50, 3), GenerationError);
}

TEST_CASE("task manifest round trip") {
  const LabeledDataset ds = blobs(10, 40);
  const auto tasks = make_binary_scenario(ds, 4, 10, 1);
  const auto path = std::filesystem::temp_directory_path() / "adapool_tasks" / "tasks.json";
  save_task_manifest(tasks, path);
  const auto loaded = load_task_manifest(path);
  CHECK(tasks_to_json(loaded) == tasks_to_json(tasks));
  REQUIRE(loaded.size() == 4);
  CHECK(loaded[2].train.indices == tasks[2].train.indices);
  CHECK_THROWS_AS(tasks_from_json("{\"tasks\": [{\"id\": 1}]}"), FormatError);
  CHECK_THROWS_AS(tasks_from_json("not json"), FormatError);
  std::filesystem::remove_all(path.parent_path());
}

TEST_CASE("scenario names") {
  CHECK(parse_scenario("binary") == Scenario::binary);
  CHECK(scenario_name(parse_scenario("multiclass")) == "multiclass");
  CHECK_THROWS_AS(parse_scenario("domain"), ConfigError);
}
