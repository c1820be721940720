#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bnnvi/model.hpp"
#include "bnnvi/rng.hpp"

namespace bnnvi {

struct NormalizationRecord {
  bool applied = false;
  std::vector<double> mean;  // per feature column
  std::vector<double> scale;
};

// Supervised dataset: either class labels (1-based) or real targets.
struct Dataset {
  std::string name;
  int d_x = 0;
  int d_y = 0;        // target width for regression, n_classes for classification
  int n_classes = 0;  // 0 for regression
  std::vector<double> features;  // p x d_x, row-major
  std::vector<int> labels;       // length p when classification
  std::vector<double> targets;   // p x d_y when regression
  NormalizationRecord norm;

  std::size_t size() const { return d_x > 0 ? features.size() / d_x : 0; }
  bool classification() const { return n_classes > 0; }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(features).subspan(i * d_x, d_x);
  }
  Target target(std::size_t i) const;
  void validate() const;
};

// IDX (MNIST-style) ingestion. Pixels scaled to [0,1]; labels mapped 1-based.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// Numeric CSV with a header row. Named target columns become the regression
// target; the rest become features, z-scored per column (constant columns are
// centered with scale 1).
Dataset load_csv_regression(const std::string& path, const std::vector<std::string>& target_columns);

std::vector<double> normalize_row(const NormalizationRecord& norm, std::span<const double> x);
std::vector<double> denormalize_row(const NormalizationRecord& norm, std::span<const double> x);

// Fixed two-layer teacher network used to synthesize a known data distribution.
struct TeacherSpec {
  int n_teacher = 8;
  int d_x = 4;
  int d_y = 1;
  Activation activation = Activation::ReLU;
  double weight_scale = 1.0;
  double noise_std = 0.1;
  std::uint64_t seed = 0;
};

// Re-drawable sampler for the data distribution pi.
using PairSampler = std::function<std::pair<std::vector<double>, Target>(Rng&)>;

class TeacherSampler {
 public:
  TeacherSampler(const TeacherSpec& spec, double input_scale);
  std::pair<std::vector<double>, Target> draw(Rng& rng) const;
  const WeightSample& weights() const { return weights_; }
  PairSampler as_pair_sampler() const;

 private:
  TeacherSpec spec_;
  double input_scale_;
  WeightSample weights_;
};

Dataset synth_teacher_regression(const TeacherSpec& spec, std::size_t p, double input_scale, const Rng& rng);

// Gaussian blobs around axis-aligned centers scaled by `separation`.
Dataset synth_blobs(int per_class, int n_classes, int d_x, double separation, const Rng& rng);

// Row subset as a standalone dataset.
Dataset subset(const Dataset& data, std::span<const std::size_t> rows, const std::string& name);

// Seeded shuffle split into (train, test); `fraction` is the train share.
std::pair<Dataset, Dataset> split(const Dataset& data, double fraction, const Rng& rng);

// Seeded partition of {0..p-1} into `batch_count` cells, sizes differing by <= 1.
std::vector<std::vector<std::size_t>> batches(std::size_t p, int batch_count, const Rng& rng);

}  // namespace bnnvi
