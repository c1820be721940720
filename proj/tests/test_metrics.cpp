#include "bnnvi/metrics.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "bnnvi/rng.hpp"
#include "doctest.h"

using namespace bnnvi;

namespace {

PredictionRecord record_with_confidence(double conf, bool correct, int n_classes = 4) {
  // Confidence conf on class 1, remainder spread evenly; label chosen so the
  // record is marked correct or not as requested.
  std::vector<double> probs(n_classes, (1.0 - conf) / (n_classes - 1));
  probs[0] = conf;
  return PredictionRecord::from_probs(probs, correct ? 1 : 2);
}

}  // namespace

TEST_CASE("PredictionRecord argmax and tie breaking") {
  const PredictionRecord r = PredictionRecord::from_probs({0.25, 0.25, 0.25, 0.25}, 1);
  CHECK(r.predicted == 1);  // ties break toward the lowest class index
  CHECK(r.confidence == 0.25);
  CHECK(r.correct);

  const PredictionRecord s = PredictionRecord::from_probs({0.1, 0.2, 0.7}, 2);
  CHECK(s.predicted == 3);
  CHECK_FALSE(s.correct);
  CHECK(s.confidence == 0.7);
}

TEST_CASE("accuracy") {
  std::vector<PredictionRecord> all_correct(5, record_with_confidence(0.9, true));
  CHECK(accuracy(all_correct) == 1.0);

  std::vector<PredictionRecord> all_wrong(5, record_with_confidence(0.9, false));
  CHECK(accuracy(all_wrong) == 0.0);

  std::vector<PredictionRecord> mixed = {record_with_confidence(0.9, true),
                                         record_with_confidence(0.8, true),
                                         record_with_confidence(0.7, true),
                                         record_with_confidence(0.6, false)};
  CHECK(accuracy(mixed) == doctest::Approx(0.75).epsilon(1e-15));

  CHECK_THROWS_AS(accuracy(std::vector<PredictionRecord>{}), std::invalid_argument);
}

TEST_CASE("nll") {
  SUBCASE("certain correct predictions give zero") {
    std::vector<PredictionRecord> records;
    records.push_back(PredictionRecord::from_probs({1.0, 0.0, 0.0}, 1));
    records.push_back(PredictionRecord::from_probs({0.0, 1.0, 0.0}, 2));
    CHECK(nll(records) == doctest::Approx(0.0).epsilon(1e-15));
  }

  SUBCASE("uniform probabilities give log n_l") {
    std::vector<PredictionRecord> records(3, PredictionRecord::from_probs({0.2, 0.2, 0.2, 0.2, 0.2}, 3));
    CHECK(nll(records) == doctest::Approx(std::log(5.0)).epsilon(1e-12));
  }

  SUBCASE("hand-computed two-record case") {
    std::vector<PredictionRecord> records;
    records.push_back(PredictionRecord::from_probs({0.5, 0.5}, 1));
    records.push_back(PredictionRecord::from_probs({0.25, 0.75}, 1));
    CHECK(nll(records) == doctest::Approx((std::log(2.0) + std::log(4.0)) / 2.0).epsilon(1e-12));
  }

  SUBCASE("floor keeps the value finite and monotone in the true-label mass") {
    std::vector<PredictionRecord> zero;
    zero.push_back(PredictionRecord::from_probs({0.0, 1.0}, 1));
    CHECK(std::isfinite(nll(zero)));

    std::vector<PredictionRecord> a = {PredictionRecord::from_probs({0.3, 0.7}, 1),
                                       PredictionRecord::from_probs({0.6, 0.4}, 1)};
    std::vector<PredictionRecord> b = {PredictionRecord::from_probs({0.5, 0.5}, 1),
                                       PredictionRecord::from_probs({0.6, 0.4}, 1)};
    CHECK(nll(b) < nll(a));
  }
}

TEST_CASE("ece") {
  SUBCASE("confident and correct everywhere is perfectly calibrated") {
    std::vector<PredictionRecord> records(4, PredictionRecord::from_probs({1.0, 0.0}, 1));
    CHECK(ece(records, 15) == doctest::Approx(0.0).epsilon(1e-15));
  }

  SUBCASE("confident and always wrong maximizes the error") {
    std::vector<PredictionRecord> records(4, PredictionRecord::from_probs({1.0, 0.0}, 2));
    CHECK(ece(records, 15) == doctest::Approx(1.0).epsilon(1e-15));
  }

  SUBCASE("two-bin hand example gives exactly 0.1") {
    std::vector<PredictionRecord> records;
    records.push_back(record_with_confidence(0.9, true));
    records.push_back(record_with_confidence(0.9, true));
    records.push_back(record_with_confidence(0.4, true));
    records.push_back(record_with_confidence(0.4, false));
    CHECK(ece(records, 2) == doctest::Approx(0.1).epsilon(1e-12));
    const EceResult detail = ece_detailed(records, 2);
    REQUIRE(detail.bins.size() == 2);
    CHECK(detail.bins[0].count == 2);
    CHECK(detail.bins[0].accuracy == 0.5);
    CHECK(detail.bins[1].mean_confidence == doctest::Approx(0.9).epsilon(1e-12));
  }

  SUBCASE("order invariance") {
    std::vector<PredictionRecord> records = {record_with_confidence(0.9, true),
                                             record_with_confidence(0.3, false),
                                             record_with_confidence(0.6, true)};
    const double forward_order = ece(records, 5);
    std::reverse(records.begin(), records.end());
    CHECK(ece(records, 5) == doctest::Approx(forward_order).epsilon(1e-15));
  }

  SUBCASE("range and empty input") {
    Rng rng(3);
    std::vector<PredictionRecord> records;
    for (int i = 0; i < 100; ++i) {
      records.push_back(record_with_confidence(0.25 + 0.75 * rng.uniform(), rng.uniform() < 0.5));
    }
    const double value = ece(records, 15);
    CHECK(value >= 0.0);
    CHECK(value <= 1.0);
    CHECK_THROWS_AS(ece(std::vector<PredictionRecord>{}, 15), std::invalid_argument);
  }
}

TEST_CASE("bin partition is exhaustive on boundary confidences") {
  // conf = 0.5 with B = 2 must land in exactly one bin (the lower one under
  // the right-closed convention), and counts must always sum to p.
  std::vector<PredictionRecord> records;
  records.push_back(PredictionRecord::from_probs({0.5, 0.5}, 1));        // conf 0.5
  records.push_back(PredictionRecord::from_probs({0.75, 0.25}, 1));      // conf 0.75
  records.push_back(PredictionRecord::from_probs({1.0, 0.0}, 1));        // conf 1.0
  const EceResult detail = ece_detailed(records, 2);
  std::size_t total = 0;
  for (const BinStats& b : detail.bins) total += b.count;
  CHECK(total == records.size());
  REQUIRE(detail.bins.size() == 2);
  CHECK(detail.bins[0].count == 1);  // the 0.5 record
  CHECK(detail.bins[1].count == 2);

  // Exact multiples of 1/B stay right-closed for several B.
  for (const int bins : {2, 3, 4, 5, 10}) {
    std::vector<PredictionRecord> edge;
    for (int b = 1; b <= bins; ++b) {
      const double conf = static_cast<double>(b) / bins;
      if (conf < 0.5) continue;  // two-class confidence is at least 1/2
      edge.push_back(PredictionRecord::from_probs({conf, 1.0 - conf}, 1));
    }
    const EceResult d = ece_detailed(edge, bins);
    std::size_t count = 0;
    for (const BinStats& s : d.bins) count += s.count;
    CHECK(count == edge.size());
  }
}

TEST_CASE("predictive_entropy") {
  CHECK(predictive_entropy(std::vector<double>{1.0, 0.0, 0.0}) == 0.0);
  CHECK(predictive_entropy(std::vector<double>{0.25, 0.25, 0.25, 0.25}) ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(predictive_entropy(std::vector<double>{0.5, 0.5, 0.0, 0.0}) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // Invariant under class permutation.
  CHECK(predictive_entropy(std::vector<double>{0.1, 0.2, 0.7}) ==
        doctest::Approx(predictive_entropy(std::vector<double>{0.7, 0.1, 0.2})).epsilon(1e-12));

  // Bounded by [0, log n].
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> p(6);
    double sum = 0.0;
    for (double& v : p) {
      v = rng.uniform();
      sum += v;
    }
    for (double& v : p) v /= sum;
    const double h = predictive_entropy(p);
    CHECK(h >= 0.0);
    CHECK(h <= std::log(6.0) + 1e-12);
  }
}

TEST_CASE("entropy_histogram") {
  SUBCASE("one-hot records all land in the first bin") {
    std::vector<PredictionRecord> records(7, PredictionRecord::from_probs({1.0, 0.0, 0.0}, 1));
    const Histogram h = entropy_histogram(records, 5);
    CHECK(h.counts[0] == 7);
    for (std::size_t b = 1; b < h.counts.size(); ++b) CHECK(h.counts[b] == 0);
  }

  SUBCASE("uniform records all land in the last bin") {
    std::vector<PredictionRecord> records(4, PredictionRecord::from_probs({0.25, 0.25, 0.25, 0.25}, 1));
    const Histogram h = entropy_histogram(records, 5);
    CHECK(h.counts[4] == 4);
  }

  SUBCASE("mixed set matches a direct recount") {
    Rng rng(9);
    std::vector<PredictionRecord> records;
    for (int i = 0; i < 200; ++i) {
      std::vector<double> p(3);
      double sum = 0.0;
      for (double& v : p) {
        v = rng.uniform() + 1e-3;
        sum += v;
      }
      for (double& v : p) v /= sum;
      records.push_back(PredictionRecord::from_probs(p, 1));
    }
    const int bins = 8;
    const Histogram h = entropy_histogram(records, bins);
    std::vector<std::size_t> recount(bins, 0);
    const double hi = std::log(3.0);
    for (const PredictionRecord& r : records) {
      double entropy = 0.0;
      for (double v : r.probs) {
        if (v > 0.0) entropy -= v * std::log(v);
      }
      int b = static_cast<int>(std::floor(entropy / hi * bins));
      b = std::min(std::max(b, 0), bins - 1);
      ++recount[b];
    }
    std::size_t total = 0;
    for (int b = 0; b < bins; ++b) {
      CHECK(h.counts[b] == recount[b]);
      total += h.counts[b];
    }
    CHECK(total == records.size());
    CHECK(h.bin_lo(0) == 0.0);
    CHECK(h.bin_hi(bins - 1) == doctest::Approx(hi).epsilon(1e-12));
  }
}

TEST_CASE("mean_confidence") {
  std::vector<PredictionRecord> ones(3, PredictionRecord::from_probs({1.0, 0.0}, 1));
  CHECK(mean_confidence(ones) == 1.0);

  std::vector<PredictionRecord> chance(3, PredictionRecord::from_probs({0.5, 0.5}, 1));
  CHECK(mean_confidence(chance) == doctest::Approx(0.5).epsilon(1e-15));

  std::vector<PredictionRecord> mixed = {record_with_confidence(0.9, true),
                                         record_with_confidence(0.6, false)};
  CHECK(mean_confidence(mixed) == doctest::Approx(0.75).epsilon(1e-12));

  CHECK_THROWS_AS(mean_confidence(std::vector<PredictionRecord>{}), std::invalid_argument);
}

TEST_CASE("metrics_json carries the full export schema") {
  std::vector<PredictionRecord> records = {record_with_confidence(0.9, true),
                                           record_with_confidence(0.4, false)};
  const std::string text = metrics_json(records, 4);
  CHECK(text.find("\"accuracy\"") != std::string::npos);
  CHECK(text.find("\"nll\"") != std::string::npos);
  CHECK(text.find("\"ece\"") != std::string::npos);
  CHECK(text.find("\"mean_confidence\"") != std::string::npos);
  CHECK(text.find("\"n_records\"") != std::string::npos);
  CHECK(text.find("\"bins\"") != std::string::npos);
}
