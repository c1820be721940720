#include "bnnvi/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace bnnvi {

Target Dataset::target(std::size_t i) const {
  if (classification()) return Target::of_label(labels[i]);
  std::vector<double> v(targets.begin() + i * d_y, targets.begin() + (i + 1) * d_y);
  return Target::of_values(std::move(v));
}

void Dataset::validate() const {
  if (d_x < 1) throw std::invalid_argument("dataset: d_x must be >= 1");
  const std::size_t p = size();
  if (p < 1) throw std::invalid_argument("dataset: need at least one row");
  if (features.size() != p * static_cast<std::size_t>(d_x)) {
    throw std::invalid_argument("dataset: feature matrix shape mismatch");
  }
  for (double v : features) {
    if (!std::isfinite(v)) throw std::invalid_argument("dataset: non-finite feature");
  }
  if (classification()) {
    if (labels.size() != p) throw std::invalid_argument("dataset: label count mismatch");
    for (int c : labels) {
      if (c < 1 || c > n_classes) throw std::invalid_argument("dataset: label out of range");
    }
  } else {
    if (targets.size() != p * static_cast<std::size_t>(d_y)) {
      throw std::invalid_argument("dataset: target matrix shape mismatch");
    }
    for (double v : targets) {
      if (!std::isfinite(v)) throw std::invalid_argument("dataset: non-finite target");
    }
  }
}

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803u;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801u;

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return std::vector<unsigned char>((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
}

std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t offset,
                        const std::string& path) {
  if (offset + 4 > buf.size()) {
    throw std::runtime_error(path + ": truncated, need 4 bytes at offset " +
                             std::to_string(offset) + ", file has " + std::to_string(buf.size()));
  }
  return (std::uint32_t(buf[offset]) << 24) | (std::uint32_t(buf[offset + 1]) << 16) |
         (std::uint32_t(buf[offset + 2]) << 8) | std::uint32_t(buf[offset + 3]);
}

std::string hex32(std::uint32_t v) {
  char s[11];
  std::snprintf(s, sizeof(s), "0x%08x", v);
  return s;
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const std::vector<unsigned char> img = read_file(images_path);
  const std::vector<unsigned char> lab = read_file(labels_path);

  const std::uint32_t img_magic = read_be32(img, 0, images_path);
  if (img_magic != kIdxImagesMagic) {
    throw std::runtime_error(images_path + ": bad magic at byte offset 0, expected " +
                             hex32(kIdxImagesMagic) + ", found " + hex32(img_magic));
  }
  const std::uint32_t lab_magic = read_be32(lab, 0, labels_path);
  if (lab_magic != kIdxLabelsMagic) {
    throw std::runtime_error(labels_path + ": bad magic at byte offset 0, expected " +
                             hex32(kIdxLabelsMagic) + ", found " + hex32(lab_magic));
  }

  const std::uint32_t n_images = read_be32(img, 4, images_path);
  const std::uint32_t rows = read_be32(img, 8, images_path);
  const std::uint32_t cols = read_be32(img, 12, images_path);
  const std::uint32_t n_labels = read_be32(lab, 4, labels_path);
  if (n_images != n_labels) {
    throw std::runtime_error("image/label count mismatch: " + std::to_string(n_images) +
                             " images vs " + std::to_string(n_labels) + " labels");
  }
  const std::size_t pixels = std::size_t(rows) * cols;
  const std::size_t img_need = 16 + std::size_t(n_images) * pixels;
  if (img.size() < img_need) {
    throw std::runtime_error(images_path + ": truncated, need " + std::to_string(img_need) +
                             " bytes, have " + std::to_string(img.size()));
  }
  const std::size_t lab_need = 8 + n_labels;
  if (lab.size() < lab_need) {
    throw std::runtime_error(labels_path + ": truncated, need " + std::to_string(lab_need) +
                             " bytes, have " + std::to_string(lab.size()));
  }

  Dataset data;
  data.name = "idx";
  data.d_x = static_cast<int>(pixels);
  // Pixel scaling to [0,1] recorded so the preprocessing is self-describing.
  data.norm.applied = true;
  data.norm.mean.assign(pixels, 0.0);
  data.norm.scale.assign(pixels, 255.0);
  data.features.resize(std::size_t(n_images) * pixels);
  data.labels.resize(n_images);
  int max_label = 0;
  for (std::uint32_t i = 0; i < n_images; ++i) {
    for (std::size_t k = 0; k < pixels; ++k) {
      data.features[i * pixels + k] = img[16 + i * pixels + k] / 255.0;
    }
    const int raw = lab[8 + i];
    data.labels[i] = raw + 1;  // file labels are 0-based
    max_label = std::max(max_label, data.labels[i]);
  }
  data.n_classes = std::max(max_label, 10);
  data.d_y = data.n_classes;
  data.validate();
  return data;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    // trim surrounding whitespace
    const auto begin = cell.find_first_not_of(" \t\r");
    const auto end = cell.find_last_not_of(" \t\r");
    cells.push_back(begin == std::string::npos ? "" : cell.substr(begin, end - begin + 1));
  }
  if (!line.empty() && line.back() == ',') cells.push_back("");
  return cells;
}

}  // namespace

Dataset load_csv_regression(const std::string& path, const std::vector<std::string>& target_columns) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");
  const std::vector<std::string> header = split_csv_line(line);

  std::vector<std::size_t> target_idx;
  for (const std::string& name : target_columns) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
      throw std::runtime_error(path + ": target column '" + name + "' not found in header");
    }
    target_idx.push_back(static_cast<std::size_t>(it - header.begin()));
  }
  if (target_idx.empty()) throw std::runtime_error(path + ": no target columns named");

  std::vector<std::size_t> feature_idx;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (std::find(target_idx.begin(), target_idx.end(), c) == target_idx.end()) {
      feature_idx.push_back(c);
    }
  }

  Dataset data;
  data.name = path;
  data.d_x = static_cast<int>(feature_idx.size());
  data.d_y = static_cast<int>(target_idx.size());

  std::size_t row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    if (line.empty()) continue;
    const std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw std::runtime_error(path + ": row " + std::to_string(row_no) + " has " +
                               std::to_string(cells.size()) + " cells, header has " +
                               std::to_string(header.size()));
    }
    auto parse = [&](std::size_t c) {
      try {
        std::size_t pos = 0;
        const double v = std::stod(cells[c], &pos);
        if (pos != cells[c].size()) throw std::invalid_argument("trailing characters");
        return v;
      } catch (const std::exception&) {
        throw std::runtime_error(path + ": non-numeric cell at row " + std::to_string(row_no) +
                                 ", column '" + header[c] + "'");
      }
    };
    for (std::size_t c : feature_idx) data.features.push_back(parse(c));
    for (std::size_t c : target_idx) data.targets.push_back(parse(c));
  }
  if (data.features.empty()) throw std::runtime_error(path + ": no data rows");

  // Per-column z-score of the features, recorded for round-tripping.
  const std::size_t p = data.size();
  data.norm.applied = true;
  data.norm.mean.assign(data.d_x, 0.0);
  data.norm.scale.assign(data.d_x, 1.0);
  for (int c = 0; c < data.d_x; ++c) {
    double mean = 0.0;
    for (std::size_t i = 0; i < p; ++i) mean += data.features[i * data.d_x + c];
    mean /= static_cast<double>(p);
    double var = 0.0;
    for (std::size_t i = 0; i < p; ++i) {
      const double d = data.features[i * data.d_x + c] - mean;
      var += d * d;
    }
    const double sd = std::sqrt(var / static_cast<double>(p));
    data.norm.mean[c] = mean;
    data.norm.scale[c] = sd > 0.0 ? sd : 1.0;
    for (std::size_t i = 0; i < p; ++i) {
      double& v = data.features[i * data.d_x + c];
      v = (v - mean) / data.norm.scale[c];
    }
  }
  data.validate();
  return data;
}

std::vector<double> normalize_row(const NormalizationRecord& norm, std::span<const double> x) {
  std::vector<double> out(x.begin(), x.end());
  if (!norm.applied) return out;
  for (std::size_t c = 0; c < out.size(); ++c) out[c] = (out[c] - norm.mean[c]) / norm.scale[c];
  return out;
}

std::vector<double> denormalize_row(const NormalizationRecord& norm, std::span<const double> x) {
  std::vector<double> out(x.begin(), x.end());
  if (!norm.applied) return out;
  for (std::size_t c = 0; c < out.size(); ++c) out[c] = out[c] * norm.scale[c] + norm.mean[c];
  return out;
}

TeacherSampler::TeacherSampler(const TeacherSpec& spec, double input_scale)
    : spec_(spec), input_scale_(input_scale) {
  if (spec.n_teacher < 1 || spec.d_x < 1 || spec.d_y < 1) {
    throw std::invalid_argument("TeacherSpec: dimensions must be >= 1");
  }
  if (!(spec.weight_scale > 0.0) || spec.noise_std < 0.0) {
    throw std::invalid_argument("TeacherSpec: bad scale parameters");
  }
  weights_.d_x = spec.d_x;
  weights_.d_y = spec.d_y;
  Rng wstream = Rng(spec.seed).sub(0x7eu);
  weights_.neurons.resize(spec.n_teacher);
  for (WeightPair& n : weights_.neurons) {
    n.b.resize(spec.d_x);
    n.a.resize(spec.d_y);
    for (double& v : n.b) v = spec.weight_scale * wstream.normal();
    for (double& v : n.a) v = spec.weight_scale * wstream.normal();
  }
}

std::pair<std::vector<double>, Target> TeacherSampler::draw(Rng& rng) const {
  std::vector<double> x(spec_.d_x);
  for (double& v : x) v = input_scale_ * rng.normal();
  std::vector<double> y = forward(weights_, x, spec_.activation);
  for (double& v : y) v += spec_.noise_std * rng.normal();
  return {std::move(x), Target::of_values(std::move(y))};
}

PairSampler TeacherSampler::as_pair_sampler() const {
  return [this](Rng& rng) { return draw(rng); };
}

Dataset synth_teacher_regression(const TeacherSpec& spec, std::size_t p, double input_scale,
                                 const Rng& rng) {
  if (p < 1) throw std::invalid_argument("synth_teacher_regression: p must be >= 1");
  const TeacherSampler sampler(spec, input_scale);
  Dataset data;
  data.name = "teacher";
  data.d_x = spec.d_x;
  data.d_y = spec.d_y;
  data.features.reserve(p * spec.d_x);
  data.targets.reserve(p * spec.d_y);
  Rng stream = rng.sub(0xdau);
  for (std::size_t i = 0; i < p; ++i) {
    auto [x, y] = sampler.draw(stream);
    data.features.insert(data.features.end(), x.begin(), x.end());
    data.targets.insert(data.targets.end(), y.values.begin(), y.values.end());
  }
  data.validate();
  return data;
}

Dataset synth_blobs(int per_class, int n_classes, int d_x, double separation, const Rng& rng) {
  if (per_class < 1 || n_classes < 2 || d_x < 1) {
    throw std::invalid_argument("synth_blobs: need per_class >= 1, n_classes >= 2, d_x >= 1");
  }
  if (!(separation > 0.0)) throw std::invalid_argument("synth_blobs: separation must be > 0");
  Dataset data;
  data.name = "blobs";
  data.d_x = d_x;
  data.n_classes = n_classes;
  data.d_y = n_classes;
  Rng stream = rng.sub(0xb1u);
  for (int c = 0; c < n_classes; ++c) {
    // Centers cycle over the axes, flipping sign on each wrap.
    const int axis = c % d_x;
    const double sign = (c / d_x) % 2 == 0 ? 1.0 : -1.0;
    for (int i = 0; i < per_class; ++i) {
      for (int k = 0; k < d_x; ++k) {
        const double center = k == axis ? sign * separation : 0.0;
        data.features.push_back(center + stream.normal());
      }
      data.labels.push_back(c + 1);
    }
  }
  data.validate();
  return data;
}

Dataset subset(const Dataset& data, std::span<const std::size_t> rows, const std::string& name) {
  Dataset out;
  out.name = name;
  out.d_x = data.d_x;
  out.d_y = data.d_y;
  out.n_classes = data.n_classes;
  out.norm = data.norm;
  for (std::size_t i : rows) {
    const auto r = data.row(i);
    out.features.insert(out.features.end(), r.begin(), r.end());
    if (data.classification()) {
      out.labels.push_back(data.labels[i]);
    } else {
      out.targets.insert(out.targets.end(), data.targets.begin() + i * data.d_y,
                         data.targets.begin() + (i + 1) * data.d_y);
    }
  }
  return out;
}

std::pair<Dataset, Dataset> split(const Dataset& data, double fraction, const Rng& rng) {
  if (!(fraction > 0.0) || !(fraction < 1.0)) {
    throw std::domain_error("split: fraction must be in (0, 1)");
  }
  const std::size_t p = data.size();
  const std::size_t n_train = static_cast<std::size_t>(std::llround(fraction * p));
  if (n_train == 0 || n_train == p) throw std::domain_error("split: degenerate split sizes");
  std::vector<std::size_t> order = iota_indices(p);
  Rng stream = rng.sub(0x59u);
  stream.shuffle(order);
  std::vector<std::size_t> train_rows(order.begin(), order.begin() + n_train);
  std::vector<std::size_t> test_rows(order.begin() + n_train, order.end());
  return {subset(data, train_rows, data.name + "/train"), subset(data, test_rows, data.name + "/test")};
}

std::vector<std::vector<std::size_t>> batches(std::size_t p, int batch_count, const Rng& rng) {
  if (batch_count < 1 || static_cast<std::size_t>(batch_count) > p) {
    throw std::domain_error("batches: need 1 <= L <= p");
  }
  std::vector<std::size_t> order = iota_indices(p);
  Rng stream = rng.sub(0xbau);
  stream.shuffle(order);
  std::vector<std::vector<std::size_t>> cells(batch_count);
  for (std::size_t i = 0; i < p; ++i) cells[i % batch_count].push_back(order[i]);
  return cells;
}

}  // namespace bnnvi
