#pragma once

// Datasets and the two task-incremental scenarios built from them.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace adapool {

struct LabeledDataset {
  std::size_t channels = 3;
  std::size_t image_size = 32;
  std::size_t num_classes = 0;
  /// n images of channels * image_size^2 bytes, planar RGB.
  std::vector<std::uint8_t> pixels;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t image_numel() const { return channels * image_size * image_size; }
  std::span<const std::uint8_t> image(std::size_t i) const;
  /// Indices of every image of class c, ascending.
  std::vector<std::size_t> indices_of(int c) const;
};

inline constexpr std::size_t kCifarRecordBytes = 3074;
inline constexpr std::size_t kCifarClasses = 100;

/// Parses CIFAR-100 binary records: coarse label, fine label, 3072 pixel
/// bytes. Throws FormatError if the size is not a whole number of records and
/// CorruptionError for a fine label outside [0, 100).
LabeledDataset parse_cifar100_binary(std::span<const std::uint8_t> bytes);
LabeledDataset load_cifar100_binary(const std::filesystem::path& path);

struct SyntheticOptions {
  std::size_t num_classes = 20;
  std::size_t per_class = 100;
  std::size_t image_size = 32;
  std::size_t channels = 3;
  /// Amplitude of the class mean pattern around mid grey, in pixel units.
  double signal = 60.0;
  /// Per-pixel noise standard deviation, in pixel units.
  double sigma = 40.0;
  /// Side of the square cells over which a class pattern is constant.
  std::size_t cell = 4;
  std::uint64_t seed = 0;
};

/// Class-conditional Gaussian blobs: every class has its own random blocky
/// mean image; samples add independent pixel noise and are clamped to
/// [0, 255]. Images are stored class by class.
LabeledDataset synthetic_dataset(const SyntheticOptions& options);

struct Split {
  std::vector<std::size_t> indices;  // into the dataset
  std::vector<int> labels;           // task-local labels
};

struct Task {
  std::size_t id = 0;  // 1-based
  /// Dataset classes; for binary tasks the first entry is the positive class
  /// and the rest are the classes negatives were drawn from.
  std::vector<int> classes;
  Split train;
  Split test;
  /// 1 for binary tasks, the class count otherwise.
  std::size_t head_out_dim = 1;

  bool binary() const { return head_out_dim == 1; }
};

enum class Scenario { binary, multiclass };

Scenario parse_scenario(const std::string& name);
std::string scenario_name(Scenario s);

/// One binary task per fresh positive class, taken in the order of a seeded
/// permutation of the class ids. Negatives come uniformly from the images of
/// earlier tasks' positive classes; task 1 draws them from every class other
/// than its positive. per_class positives and per_class negatives in each
/// split, with the splits disjoint. Throws GenerationError when the dataset
/// is too small.
std::vector<Task> make_binary_scenario(const LabeledDataset& ds, std::size_t num_tasks,
                                       std::size_t per_class, std::uint64_t seed);

/// Disjoint groups of classes_per_task classes, per_class images per class
/// in each split.
std::vector<Task> make_multiclass_scenario(const LabeledDataset& ds, std::size_t num_tasks,
                                           std::size_t classes_per_task, std::size_t per_class,
                                           std::uint64_t seed);

/// Pixels of the given images, concatenated.
std::vector<std::uint8_t> gather_pixels(const LabeledDataset& ds,
                                        std::span<const std::size_t> indices);

/// Task sequence serialised as JSON, for reuse across methods.
std::string tasks_to_json(const std::vector<Task>& tasks);
std::vector<Task> tasks_from_json(const std::string& text);
void save_task_manifest(const std::vector<Task>& tasks, const std::filesystem::path& path);
std::vector<Task> load_task_manifest(const std::filesystem::path& path);

}  // namespace adapool
