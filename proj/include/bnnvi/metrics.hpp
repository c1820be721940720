#pragma once

#include <span>
#include <string>
#include <vector>

namespace bnnvi {

// One evaluated input: MC-averaged class probabilities plus bookkeeping.
struct PredictionRecord {
  std::vector<double> probs;
  int label = 0;  // 1-based; 0 = unlabeled (out-of-distribution inputs)
  double confidence = 0.0;
  int predicted = 0;  // 1-based, argmax ties broken toward the lowest class
  bool correct = false;

  bool labeled() const { return label > 0; }
  static PredictionRecord from_probs(std::vector<double> probs, int label = 0);
};

double accuracy(std::span<const PredictionRecord> records);

// -(1/p) sum log p_true, probabilities floored at 1e-12 inside the log.
double nll(std::span<const PredictionRecord> records);

struct BinStats {
  int index = 0;  // 1-based bin index
  std::size_t count = 0;
  double accuracy = 0.0;
  double mean_confidence = 0.0;
};

struct EceResult {
  double ece = 0.0;
  std::vector<BinStats> bins;
};

// Bins are (b/B, (b+1)/B], with 0 included in the first bin; empty bins
// contribute nothing.
EceResult ece_detailed(std::span<const PredictionRecord> records, int bin_count);
double ece(std::span<const PredictionRecord> records, int bin_count);

// Shannon entropy in nats, 0*log 0 := 0.
double predictive_entropy(std::span<const double> probs);

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::size_t> counts;

  double bin_lo(std::size_t b) const;
  double bin_hi(std::size_t b) const;
};

// Equal-width bins over [0, log n_l].
Histogram entropy_histogram(std::span<const PredictionRecord> records, int bin_count);

double mean_confidence(std::span<const PredictionRecord> records);

// {accuracy, nll, ece, mean_confidence, n_records, bins: [...]}
std::string metrics_json(std::span<const PredictionRecord> records, int bin_count);

}  // namespace bnnvi
