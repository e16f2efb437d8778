#pragma once

#include <optional>
#include <string>
#include <vector>

#include "brio/metrics.hpp"
#include "brio/report.hpp"
#include "brio/run_config.hpp"
#include "brio/train.hpp"

namespace brio::harness {

struct Splits {
    corpus::Vocab vocab;
    corpus::Dataset train;
    corpus::Dataset valid;
    corpus::Dataset test;
};

/// Seeded synthetic train/valid/test splits over the task vocabulary.
Splits make_synthetic_splits(const DataConfig& cfg);

struct NamedCheckpoint {
    std::string name;
    model::Checkpoint checkpoint;
};

struct CandidatePool {
    std::string name;  // usually the generating model
    std::vector<CandidateSet> sets;
};

/// Beam-decodes every example; outputs follow dataset order.
std::vector<decode::Candidate> decode_split(const model::Checkpoint& ck, const corpus::Dataset& data,
                                            const decode::BeamConfig& beam, std::size_t threads = 1);

/// Mean ROUGE F1 scaled to 0..100.
struct RougeAggregate {
    double r1 = 0.0;
    double r2 = 0.0;
    double rl = 0.0;
    std::size_t n = 0;
};
RougeAggregate rouge_aggregate(const std::vector<TokenSequence>& outputs, const corpus::Dataset& data);
RougeAggregate rouge_aggregate(const std::vector<decode::Candidate>& outputs, const corpus::Dataset& data);

struct CoordinationStats {
    double spearman = 0.0;
    double ranking_accuracy = 0.0;  // percent
    std::size_t n_examples = 0;
    std::size_t n_constant = 0;     // sets whose candidates all share one quality or one score
    std::size_t n_pairs = 0;        // best/worst pairs with distinct quality
};

/// Rescores every candidate with `scorer` and relates the scores to the
/// cached quality. Ranking accuracy compares the best and worst candidate
/// of each set and skips sets whose candidates all share one quality.
CoordinationStats coordination_stats(const model::Checkpoint& scorer, const corpus::Dataset& data,
                                     const std::vector<CandidateSet>& sets, double alpha, std::size_t threads = 1);

/// Alpha from the grid with the highest Spearman mean on a validation
/// pool; the first wins ties. An empty grid yields `fallback`.
double select_alpha(const model::Checkpoint& scorer, const corpus::Dataset& valid,
                    const std::vector<CandidateSet>& valid_sets, const std::vector<double>& grid, double fallback,
                    std::size_t threads = 1);

// --- coefficient sweep --------------------------------------------------

struct SweepPoint {
    double gamma = 0.0;
    RougeAggregate rouge;
    CoordinationStats coordination;
    model::Checkpoint checkpoint;
};

/// One multi-task fine-tune per gamma from the same MLE checkpoint. The
/// list must contain 0. Coordination is measured on `test_sets`.
std::vector<SweepPoint> run_coefficient_sweep(const model::Checkpoint& mle, const corpus::Dataset& train,
                                              const std::vector<CandidateSet>& train_sets,
                                              const corpus::Dataset& test, const std::vector<CandidateSet>& test_sets,
                                              const RunConfig& cfg);
report::Report coefficient_sweep_report(const std::vector<SweepPoint>& points, const std::string& config_text);

// --- beam-width sweep ---------------------------------------------------

struct BeamSweepRow {
    std::string model;
    std::size_t width = 0;
    RougeAggregate rouge;
    /// Examples whose best cumulative log-probability fell below the value
    /// at the previous width.
    std::size_t monotone_violations = 0;
};

/// Widths must be strictly ascending.
std::vector<BeamSweepRow> run_beam_sweep(const std::vector<NamedCheckpoint>& models, const corpus::Dataset& data,
                                         const std::vector<std::size_t>& widths, const RunConfig& cfg);
report::Report beam_sweep_report(const std::vector<BeamSweepRow>& rows, const std::string& config_text);

// --- coordination ------------------------------------------------------

struct CoordinationRow {
    std::string scorer;
    std::string pool;
    double alpha = 0.0;
    CoordinationStats stats;
};

/// Every scorer against every pool. When `alpha_grid` is non-empty and a
/// validation pool is given, each scorer's alpha is chosen on it.
std::vector<CoordinationRow> run_coordination_report(const std::vector<NamedCheckpoint>& scorers,
                                                     const std::vector<CandidatePool>& pools,
                                                     const corpus::Dataset& data, const RunConfig& cfg,
                                                     const corpus::Dataset* valid = nullptr,
                                                     const std::vector<CandidateSet>* valid_sets = nullptr);
report::Report coordination_report(const std::vector<CoordinationRow>& rows, const std::string& config_text);

// --- calibration -------------------------------------------------------

struct CalibrationResult {
    std::string model;
    metrics::EceResult ece;
};

/// Beam-decodes the split and labels each generated content token (EOS
/// excluded) by alignment against the reference; confidence is the token's
/// probability.
CalibrationResult run_calibration_report(const NamedCheckpoint& model, const corpus::Dataset& data,
                                         const RunConfig& cfg);
report::Report calibration_report(const std::vector<CalibrationResult>& results, const std::string& config_text);
/// lower,upper,count,accuracy,confidence per bucket.
std::string reliability_csv(const metrics::EceResult& r);

// --- novelty -----------------------------------------------------------

struct NoveltyRow {
    std::string system;  // model name or "reference"
    double novel_1 = 0.0;
    double novel_2 = 0.0;
    std::size_t n_used_1 = 0;
    std::size_t n_used_2 = 0;
};

struct NoveltyBucket {
    double lower = 0.0;  // reference bigram novelty range
    double upper = 0.0;
    std::size_t count = 0;
    std::vector<RougeAggregate> rouge;  // one per model
};

struct NoveltyResult {
    std::vector<NoveltyRow> rows;
    std::vector<std::string> models;
    std::vector<NoveltyBucket> buckets;
    std::size_t n_skipped = 0;  // references without bigrams
};

/// Mean novel 1/2-gram ratios per model and for references, plus ROUGE per
/// equal-count bucket of reference bigram novelty.
NoveltyResult run_novelty_report(const std::vector<NamedCheckpoint>& models, const corpus::Dataset& data,
                                 const RunConfig& cfg);
report::Report novelty_report(const NoveltyResult& r, const std::string& config_text);

/// Splits n sorted items into `n_buckets` contiguous runs whose sizes
/// differ by at most one; returns run lengths.
std::vector<std::size_t> equal_count_sizes(std::size_t n, std::size_t n_buckets);

// --- desk experiment ---------------------------------------------------

struct ModelEval {
    RougeAggregate rouge;
    CoordinationStats coordination;
    double ece = 0.0;
};

struct DeskResult {
    std::uint64_t seed = 0;
    ModelEval mle;
    ModelEval brio;
    std::optional<ModelEval> loop;  // after one more generation-finetune round
};

/// Trains MLE, builds candidates, fine-tunes with the multi-task objective
/// and, when `with_loop`, runs one more round from the fine-tuned model's
/// own candidates. Coordination uses test candidates from the MLE model.
DeskResult run_desk_experiment(const RunConfig& cfg, bool with_loop);
report::Report desk_report(const std::vector<DeskResult>& results, const std::string& config_text);

}  // namespace brio::harness
