#include "opsense/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "opsense/error.hpp"
#include "opsense/rng.hpp"

namespace opsense {

namespace {

constexpr std::uint64_t kMeansStream = 10;
constexpr std::uint64_t kTrainStream = 11;
constexpr std::uint64_t kTestStream = 12;
constexpr std::uint64_t kTeacherStream = 13;

std::vector<int> balanced_labels(std::size_t n, std::size_t classes, Rng& rng) {
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<int>(i % classes);
  std::shuffle(y.begin(), y.end(), rng.engine());
  return y;
}

Shape batch_shape(std::size_t n, const Shape& sample) {
  Shape s{n};
  s.insert(s.end(), sample.begin(), sample.end());
  return s;
}

struct Teacher {
  std::vector<double> w1;  // [d, hidden]
  std::vector<double> w2;  // [hidden]
  std::size_t d = 0;
  std::size_t hidden = 0;

  double operator()(std::span<const double> x) const {
    double out = 0.0;
    for (std::size_t h = 0; h < hidden; ++h) {
      double pre = 0.0;
      for (std::size_t i = 0; i < d; ++i) pre += x[i] * w1[i * hidden + h];
      out += std::max(pre, 0.0) * w2[h];
    }
    return out;
  }
};

Dataset draw_split(const TaskConfig& cfg, std::size_t n, std::uint64_t stream, const std::vector<double>& means,
                   const Teacher& teacher, const std::vector<double>& thresholds) {
  Rng rng(cfg.seed, stream);
  const std::size_t d = numel(cfg.input_shape);
  Dataset ds{Tensor(batch_shape(n, cfg.input_shape)), {}};
  auto data = ds.x.data();
  switch (cfg.generator) {
    case TaskGenerator::gaussian_blobs:
    case TaskGenerator::random_labels: {
      ds.y = balanced_labels(n, cfg.num_classes, rng);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
          double v = rng.normal();
          if (cfg.generator == TaskGenerator::gaussian_blobs) v += means[static_cast<std::size_t>(ds.y[i]) * d + j];
          data[i * d + j] = v;
        }
      }
      break;
    }
    case TaskGenerator::random_teacher: {
      for (auto& v : data) v = rng.normal();
      ds.y.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double t = teacher(data.subspan(i * d, d));
        ds.y[i] = static_cast<int>(std::upper_bound(thresholds.begin(), thresholds.end(), t) - thresholds.begin());
      }
      break;
    }
    case TaskGenerator::first_sign: {
      // Draw the label first, then a first coordinate of matching sign, so
      // classes stay balanced.
      ds.y = balanced_labels(n, 2, rng);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) data[i * d + j] = rng.normal();
        const double mag = std::abs(data[i * d]) + 1e-3;
        data[i * d] = ds.y[i] == 1 ? mag : -mag;
      }
      break;
    }
  }
  return ds;
}

}  // namespace

std::string_view generator_name(TaskGenerator g) {
  switch (g) {
    case TaskGenerator::gaussian_blobs: return "gaussian_blobs";
    case TaskGenerator::random_teacher: return "random_teacher";
    case TaskGenerator::random_labels: return "random_labels";
    case TaskGenerator::first_sign: return "first_sign";
  }
  return "?";
}

TaskGenerator parse_generator(std::string_view name) {
  for (auto g : {TaskGenerator::gaussian_blobs, TaskGenerator::random_teacher, TaskGenerator::random_labels,
                 TaskGenerator::first_sign}) {
    if (generator_name(g) == name) return g;
  }
  throw ParseError("unknown task generator '" + std::string(name) + "'");
}

void TaskConfig::validate() const {
  if (n_train == 0 || n_test == 0) throw ConfigError("task: n_train and n_test must be positive");
  if (input_shape.empty() || numel(input_shape) == 0) throw ConfigError("task: input shape must be nonempty");
  if (num_classes < 2) throw ConfigError("task: num_classes must be at least 2");
  if (generator == TaskGenerator::first_sign && num_classes != 2) {
    throw ConfigError("task: first_sign requires num_classes = 2");
  }
  if (!(separation >= 0.0) || !std::isfinite(separation)) throw ConfigError("task: separation must be >= 0");
}

Batch Dataset::rows(std::span<const std::size_t> indices) const {
  const std::size_t d = x.size() / size();
  Shape s = x.shape();
  s[0] = indices.size();
  Batch b{Tensor(s), {}};
  b.y.reserve(indices.size());
  auto out = b.x.data();
  const auto in = x.data();
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const std::size_t i = indices[r];
    if (i >= size()) throw ShapeError("dataset: row index " + std::to_string(i) + " out of range");
    std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(i * d), d, out.begin() + static_cast<std::ptrdiff_t>(r * d));
    b.y.push_back(y[i]);
  }
  return b;
}

Batch Dataset::head(std::size_t n) const {
  std::vector<std::size_t> idx(std::min(n, size()));
  std::iota(idx.begin(), idx.end(), 0);
  return rows(idx);
}

SyntheticTask SyntheticTask::generate(const TaskConfig& config) {
  config.validate();
  const std::size_t d = numel(config.input_shape);
  std::vector<double> means;
  Teacher teacher;
  std::vector<double> thresholds;
  if (config.generator == TaskGenerator::gaussian_blobs) {
    Rng rng(config.seed, kMeansStream);
    means.resize(config.num_classes * d);
    for (auto& m : means) m = config.separation * rng.normal();
  }
  if (config.generator == TaskGenerator::random_teacher) {
    Rng rng(config.seed, kTeacherStream);
    teacher.d = d;
    teacher.hidden = 32;
    teacher.w1.resize(d * teacher.hidden);
    teacher.w2.resize(teacher.hidden);
    for (auto& w : teacher.w1) w = rng.normal() / std::sqrt(static_cast<double>(d));
    for (auto& w : teacher.w2) w = rng.normal();
    // Class boundaries at quantiles of the teacher output on a reference draw.
    std::vector<double> ref(4096);
    std::vector<double> x(d);
    for (auto& r : ref) {
      for (auto& v : x) v = rng.normal();
      r = teacher(x);
    }
    std::sort(ref.begin(), ref.end());
    for (std::size_t c = 1; c < config.num_classes; ++c) {
      thresholds.push_back(ref[c * ref.size() / config.num_classes]);
    }
  }
  SyntheticTask task;
  task.config = config;
  task.train = draw_split(config, config.n_train, kTrainStream, means, teacher, thresholds);
  task.test = draw_split(config, config.n_test, kTestStream, means, teacher, thresholds);
  return task;
}

std::vector<int> random_labels(std::size_t n, std::size_t num_classes, std::uint64_t seed) {
  if (num_classes == 0) throw ConfigError("random_labels: num_classes must be positive");
  Rng rng(seed, 20);
  std::vector<int> y(n);
  for (auto& v : y) v = static_cast<int>(rng.index(num_classes));
  return y;
}

Tensor ones_input(const Shape& sample_shape) { return Tensor::ones(batch_shape(1, sample_shape)); }

}  // namespace opsense
