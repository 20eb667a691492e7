#pragma once
// Grey-box comparison detectors and split-level statistics: perplexity and
// Min-K% membership scores, a DEFLATE compression proxy, the winsorize/
// standardize/least-squares feature combiner, the one-sided Welch t-test and
// the pooled two-proportion z-test.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wmkit/toy_lm.hpp"

namespace wmkit {

inline constexpr int kCompressionLevel = 6; // pinned DEFLATE level
inline constexpr double kMinkDefaultFraction = 0.2;
inline constexpr double kTailFraction = 0.1; // kmin/kmax feature tails

struct SampleFeatures {
    double ppl = 0.0;
    double mean_logp = 0.0;
    double kmin_logp = 0.0; // mean of the lowest 10% token log-probs
    double kmax_logp = 0.0; // mean of the highest 10%
    double compress_ratio = 0.0;
    double length = 0.0;

    std::array<double, 6> as_array() const {
        return {ppl, mean_logp, kmin_logp, kmax_logp, compress_ratio, length};
    }
};

// Which group the one-sided alternative claims has the smaller mean (or
// proportion). The reported statistic is (that group - the other) / SE and the
// p-value is the lower tail at the statistic.
enum class Alternative { kPosLess, kNegLess };

struct SplitTestResult {
    std::string method;
    double statistic = 0.0;
    double df = 0.0; // 0 when not applicable
    double p_value = 1.0;
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;
    bool degenerate = false;     // no p emitted
    bool ridge_fallback = false; // DDI least squares fell back to ridge

    std::string to_json_string() const;
};

// Mean negative log-likelihood over the ceil(k*T) lowest-probability tokens.
double mink_score(std::span<const double> token_logprobs, double k_fraction);

// compressed length / raw length at the pinned DEFLATE level.
double compress_ratio(std::string_view bytes);

SplitTestResult welch_t_one_sided(std::span<const double> pos_scores,
                                  std::span<const double> neg_scores, Alternative alternative);

SplitTestResult two_proportion_z(std::uint64_t x_pos, std::uint64_t n_pos, std::uint64_t x_neg,
                                 std::uint64_t n_neg, Alternative alternative);

// Winsorize each feature at the 2.5%/97.5% pooled quantiles, standardize,
// split both groups into A/B halves by seeded shuffle of a canonical order,
// fit a least-squares linear score on A (suspect=0, validation=1), score B and
// run a one-sided Welch test (H1: suspect scores < validation scores).
SplitTestResult ddi_test(std::span<const SampleFeatures> suspect_features,
                         std::span<const SampleFeatures> validation_features,
                         std::uint64_t rng_seed);

SampleFeatures extract_features(const NgramModel& model, std::string_view text);

enum class MiaMethod { kPpl, kMink, kCompress };

// Per-sample scores under the model, then a one-sided Welch test with the
// loss-direction alternative (training scores < evaluation scores).
SplitTestResult mia_split_test(const NgramModel& model, std::span<const std::string> pos_texts,
                               std::span<const std::string> neg_texts, MiaMethod method);

// Per-sample score column for CSV export.
std::vector<double> mia_scores(const NgramModel& model, std::span<const std::string> texts,
                               MiaMethod method);

} // namespace wmkit
