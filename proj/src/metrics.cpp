#include "bnnvi/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "json.hpp"

namespace bnnvi {

namespace {

constexpr double kProbFloor = 1e-12;

void require_labeled(std::span<const PredictionRecord> records, const char* what) {
  if (records.empty()) throw std::invalid_argument(std::string(what) + ": empty input");
  for (const PredictionRecord& r : records) {
    if (!r.labeled()) throw std::invalid_argument(std::string(what) + ": record without label");
  }
}

}  // namespace

PredictionRecord PredictionRecord::from_probs(std::vector<double> probs, int label) {
  if (probs.empty()) throw std::invalid_argument("PredictionRecord: empty probability vector");
  PredictionRecord r;
  r.probs = std::move(probs);
  r.label = label;
  r.predicted = 1;
  r.confidence = r.probs[0];
  for (std::size_t c = 1; c < r.probs.size(); ++c) {
    if (r.probs[c] > r.confidence) {
      r.confidence = r.probs[c];
      r.predicted = static_cast<int>(c) + 1;
    }
  }
  r.correct = label > 0 && r.predicted == label;
  return r;
}

double accuracy(std::span<const PredictionRecord> records) {
  require_labeled(records, "accuracy");
  std::size_t hits = 0;
  for (const PredictionRecord& r : records) hits += r.correct ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

double nll(std::span<const PredictionRecord> records) {
  require_labeled(records, "nll");
  double acc = 0.0;
  for (const PredictionRecord& r : records) {
    if (r.label > static_cast<int>(r.probs.size())) throw std::domain_error("nll: label out of range");
    acc -= std::log(std::max(r.probs[r.label - 1], kProbFloor));
  }
  return acc / static_cast<double>(records.size());
}

EceResult ece_detailed(std::span<const PredictionRecord> records, int bin_count) {
  require_labeled(records, "ece");
  if (bin_count < 1) throw std::invalid_argument("ece: bin count must be >= 1");
  std::vector<std::size_t> counts(bin_count, 0);
  std::vector<double> conf_sum(bin_count, 0.0);
  std::vector<std::size_t> hit_sum(bin_count, 0);
  for (const PredictionRecord& r : records) {
    // (b/B, (b+1)/B] with conf = 0 landing in the first bin.
    int b = static_cast<int>(std::ceil(r.confidence * bin_count)) - 1;
    b = std::clamp(b, 0, bin_count - 1);
    ++counts[b];
    conf_sum[b] += r.confidence;
    hit_sum[b] += r.correct ? 1 : 0;
  }
  EceResult result;
  const double p = static_cast<double>(records.size());
  for (int b = 0; b < bin_count; ++b) {
    if (counts[b] == 0) continue;
    BinStats stats;
    stats.index = b + 1;
    stats.count = counts[b];
    stats.accuracy = static_cast<double>(hit_sum[b]) / counts[b];
    stats.mean_confidence = conf_sum[b] / counts[b];
    result.ece += counts[b] / p * std::abs(stats.accuracy - stats.mean_confidence);
    result.bins.push_back(stats);
  }
  return result;
}

double ece(std::span<const PredictionRecord> records, int bin_count) {
  return ece_detailed(records, bin_count).ece;
}

double predictive_entropy(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs) {
    if (p < 0.0) throw std::invalid_argument("predictive_entropy: negative probability");
    if (p > 0.0) h -= p * std::log(p);
  }
  return std::max(0.0, h);
}

double Histogram::bin_lo(std::size_t b) const {
  return lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(counts.size());
}

double Histogram::bin_hi(std::size_t b) const {
  return lo + (hi - lo) * static_cast<double>(b + 1) / static_cast<double>(counts.size());
}

Histogram entropy_histogram(std::span<const PredictionRecord> records, int bin_count) {
  if (bin_count < 1) throw std::invalid_argument("entropy_histogram: bin count must be >= 1");
  if (records.empty()) throw std::invalid_argument("entropy_histogram: empty input");
  const std::size_t n_classes = records.front().probs.size();
  Histogram hist;
  hist.lo = 0.0;
  hist.hi = std::log(static_cast<double>(n_classes));
  hist.counts.assign(bin_count, 0);
  for (const PredictionRecord& r : records) {
    const double h = predictive_entropy(r.probs);
    int b = hist.hi > 0.0 ? static_cast<int>(std::floor(h / hist.hi * bin_count)) : 0;
    b = std::clamp(b, 0, bin_count - 1);
    ++hist.counts[b];
  }
  return hist;
}

double mean_confidence(std::span<const PredictionRecord> records) {
  if (records.empty()) throw std::invalid_argument("mean_confidence: empty input");
  double acc = 0.0;
  for (const PredictionRecord& r : records) acc += r.confidence;
  return acc / static_cast<double>(records.size());
}

std::string metrics_json(std::span<const PredictionRecord> records, int bin_count) {
  const EceResult e = ece_detailed(records, bin_count);
  nlohmann::json j;
  j["accuracy"] = accuracy(records);
  j["nll"] = nll(records);
  j["ece"] = e.ece;
  j["mean_confidence"] = mean_confidence(records);
  j["n_records"] = records.size();
  nlohmann::json bins = nlohmann::json::array();
  for (const BinStats& b : e.bins) {
    bins.push_back({{"bin", b.index},
                    {"count", b.count},
                    {"accuracy", b.accuracy},
                    {"mean_confidence", b.mean_confidence}});
  }
  j["bins"] = std::move(bins);
  return j.dump(2);
}

}  // namespace bnnvi
