#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "brio/candidates.hpp"
#include "brio/common.hpp"

namespace brio::metrics {

struct RougeScore {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

/// Clipped n-gram overlap. Sentinels are stripped first; an empty n-gram
/// multiset on either side scores zero.
RougeScore rouge_n(const TokenSequence& candidate, const TokenSequence& reference, std::size_t n);
/// Longest-common-subsequence ROUGE.
RougeScore rouge_l(const TokenSequence& candidate, const TokenSequence& reference);
std::size_t lcs_length(const TokenSequence& a, const TokenSequence& b);

struct RougeTriple {
    RougeScore r1, r2, rl;
};
RougeTriple rouge_all(const TokenSequence& candidate, const TokenSequence& reference);

using QualityFn = std::function<double(const TokenSequence& candidate, const TokenSequence& reference)>;

/// Named quality metrics. Built in: "rouge_mean" (mean of R-1, R-2, R-L F1,
/// the default), "rouge1", "rouge2", "rougeL".
class QualityRegistry {
public:
    QualityRegistry();
    void add(std::string name, QualityFn fn);
    const QualityFn& get(std::string_view name) const;
    std::vector<std::string> names() const;

private:
    std::map<std::string, QualityFn, std::less<>> fns_;
};

inline constexpr std::string_view kDefaultQuality = "rouge_mean";

/// Mean of ROUGE-1, ROUGE-2 and ROUGE-L F1.
double quality(const TokenSequence& candidate, const TokenSequence& reference);

/// Scores every candidate against the reference and sorts by quality
/// descending; exact ties go to higher sum_logprob, then insertion order.
/// Equal-quality runs share a tie group.
CandidateSet order_candidates(CandidateSet set, const TokenSequence& reference, const QualityFn& metric = quality);

/// Fraction of the distinct n-grams of `summary` that do not occur in `source`.
double novelty(const TokenSequence& source, const TokenSequence& summary, std::size_t n);

/// Average ranks (1-based), ties share the mean rank.
std::vector<double> average_ranks(const std::vector<double>& x);
/// Spearman rho of one example; nullopt when either side is constant.
std::optional<double> spearman(const std::vector<double>& a, const std::vector<double>& b);

struct SpearmanResult {
    double mean = 0.0;
    std::vector<double> per_example;  // one entry per used example
    std::size_t n_constant = 0;       // examples counted as rho = 0
    std::size_t n_skipped = 0;        // fewer than two candidates
};

/// Mean per-example Spearman correlation between model scores and quality.
SpearmanResult spearman_avg(const std::vector<std::pair<std::vector<double>, std::vector<double>>>& per_example);

/// Percentage of pairs with f_best > f_worst; ties count half.
double ranking_accuracy(const std::vector<std::pair<double, double>>& pairs);

/// Correct/incorrect label per hypothesis token from a unit-cost
/// Levenshtein alignment. DP ties prefer match, then substitute, delete, insert.
std::vector<bool> align_token_labels(const TokenSequence& hypothesis, const TokenSequence& reference);

struct CalibrationBucket {
    double lower = 0.0;
    double upper = 0.0;
    std::size_t count = 0;
    double accuracy = 0.0;
    double confidence = 0.0;
};

struct EceResult {
    double ece = 0.0;
    double accuracy = 0.0;
    double confidence = 0.0;
    std::size_t n = 0;
    std::vector<CalibrationBucket> buckets;
};

/// Expected calibration error over n_buckets equal-width buckets on (0, 1]
/// (a confidence of exactly 0 falls in the first bucket).
EceResult ece(const std::vector<double>& confidences, const std::vector<bool>& labels, std::size_t n_buckets);

}  // namespace brio::metrics
