#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "opsense/tensor.hpp"

namespace opsense {

// Inputs [N, ...] with one integer label per row.
struct Batch {
  Tensor x;
  std::vector<int> y;

  std::size_t size() const { return y.size(); }
};

enum class TaskGenerator {
  gaussian_blobs,  // one random mean pattern per class plus unit noise
  random_teacher,  // labels from quantile bins of a random two-layer teacher
  random_labels,   // inputs independent of labels
  first_sign,      // two classes, label = (first input coordinate > 0)
};

std::string_view generator_name(TaskGenerator g);
TaskGenerator parse_generator(std::string_view name);

struct TaskConfig {
  TaskGenerator generator = TaskGenerator::gaussian_blobs;
  std::size_t n_train = 512;
  std::size_t n_test = 256;
  Shape input_shape{3, 8, 8};  // one sample
  std::size_t num_classes = 4;
  double separation = 0.5;  // std of the class-mean pattern entries (gaussian_blobs)
  std::uint64_t seed = 0;

  void validate() const;
};

struct Dataset {
  Tensor x;
  std::vector<int> y;

  std::size_t size() const { return y.size(); }
  Batch rows(std::span<const std::size_t> indices) const;
  Batch head(std::size_t n) const;
};

/// Train and test sets drawn from disjoint RNG streams of the task seed.
/// Labels are balanced: every class gets floor or ceil of n / num_classes rows.
struct SyntheticTask {
  TaskConfig config;
  Dataset train;
  Dataset test;

  static SyntheticTask generate(const TaskConfig& config);
};

// `n` labels, uniform over classes, from `seed`.
std::vector<int> random_labels(std::size_t n, std::size_t num_classes, std::uint64_t seed);

// All-ones input batch of one sample with the given sample shape.
Tensor ones_input(const Shape& sample_shape);

}  // namespace opsense
