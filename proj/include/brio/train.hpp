#pragma once

#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "brio/candidates.hpp"
#include "brio/checkpoint.hpp"
#include "brio/corpus.hpp"
#include "brio/decode.hpp"

namespace brio::train {

/// lr_scale * min(step^-0.5, step * warmup^-1.5); step >= 1.
double lr_at(std::uint64_t step, std::uint64_t warmup, double lr_scale);

struct ScheduleConfig {
    double lr_scale = 2e-3;
    std::uint64_t warmup = 200;
    /// When set the rate is lr_scale at every step.
    bool constant = false;

    double lr(std::uint64_t step) const;
    bool operator==(const ScheduleConfig&) const = default;
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    bool operator==(const AdamConfig&) const = default;
};

/// One bias-corrected Adam step. Moments are created on first use; the
/// checkpoint's step counter is advanced first and drives the schedule.
void adam_step(model::Checkpoint& ck, std::span<const Tensor> grads, double lr, const AdamConfig& cfg);

struct StageConfig {
    ScheduleConfig schedule;
    std::size_t epochs = 1;
    std::size_t batch_size = 8;
    std::size_t max_steps = 0;        // 0: no cap
    bool reset_optimizer = true;      // fresh moments and step counter at stage start
    bool operator==(const StageConfig&) const = default;
};

inline constexpr double kContrastiveOnly = std::numeric_limits<double>::infinity();

struct TrainConfig {
    double beta = 0.1;       // label smoothing
    double margin = 0.001;   // lambda
    double alpha = 2.0;      // length penalty
    double gamma = 100.0;    // contrastive weight; kContrastiveOnly drops the cross-entropy term
    bool include_reference = false;
    std::string quality_metric = "rouge_mean";
    decode::BeamConfig beam;
    StageConfig mle;
    StageConfig brio;
    StageConfig few_shot{ScheduleConfig{1e-4, 1, true}, 1, 4, 0, true};
    AdamConfig adam;
    std::uint64_t seed = 1;
    std::size_t threads = 1;

    void validate() const;
    bool contrastive_only() const { return gamma == kContrastiveOnly; }
};

/// Pairwise hinge over f-scores ordered by quality descending:
/// sum over i < j outside a shared tie group of max(0, f_j - f_i + (j - i) margin).
Var contrastive_loss(std::span<const Var> f_scores, double margin, std::span<const std::size_t> tie_groups);
double contrastive_loss(std::span<const double> f_scores, double margin, std::span<const std::size_t> tie_groups);

/// L_xent + gamma * L_ctr, or L_ctr alone for gamma = kContrastiveOnly.
double multi_task_loss(double l_xent, double l_ctr, double gamma);

/// Teacher-forced f-score of a candidate on an existing model binding,
/// sharing the encoder output `memory`.
Var candidate_score(const model::BoundModel& m, Var memory, const TokenSequence& tokens, double alpha);

struct LossParts {
    double xent = 0.0;
    double ctr = 0.0;
    double total = 0.0;
};

/// Per-example objective and its gradient w.r.t. every parameter tensor.
LossParts mle_example_grad(const model::Parameters& params, const model::ModelConfig& cfg,
                           const corpus::Example& ex, double beta, std::vector<Tensor>* grads);
LossParts brio_example_grad(const model::Parameters& params, const model::ModelConfig& cfg,
                            const corpus::Example& ex, const CandidateSet& set, const TrainConfig& tc,
                            std::vector<Tensor>* grads);

struct LogRecord {
    std::string stage;
    std::size_t epoch = 0;
    std::uint64_t step = 0;
    double lr = 0.0;
    double xent = 0.0;
    double ctr = 0.0;
    double total = 0.0;
    double valid_xent = 0.0;  // NaN when no validation set
};

struct StageResult {
    model::Checkpoint checkpoint;
    std::vector<LogRecord> log;
};

/// Mean label-smoothed cross-entropy per example.
double mean_xent(const model::Parameters& params, const model::ModelConfig& cfg, const corpus::Dataset& data,
                 double beta, std::size_t threads = 1);

StageResult train_mle(const model::Checkpoint& init, const corpus::Dataset& train, const corpus::Dataset* valid,
                      const TrainConfig& tc);

/// Fine-tunes with the multi-task objective. The cache must hold one
/// candidate set per training example, in order. With gamma = 0 the
/// contrastive branch is skipped altogether.
StageResult train_brio(const model::Checkpoint& init, const corpus::Dataset& train,
                       const std::vector<CandidateSet>& cache, const corpus::Dataset* valid, const TrainConfig& tc);

/// Diverse beam search, quality scoring and ordering for every example.
std::vector<CandidateSet> build_candidate_sets(const model::Parameters& params, const model::ModelConfig& cfg,
                                               const corpus::Dataset& data, const TrainConfig& tc);

/// f-score of every candidate of a set under the given parameters.
std::vector<double> score_candidates(const model::Parameters& params, const model::ModelConfig& cfg,
                                     const TokenSequence& source, const CandidateSet& set, double alpha);

/// Index of the highest-scoring candidate per example (first on ties).
std::vector<std::size_t> rerank_select(const model::Parameters& params, const model::ModelConfig& cfg,
                                       const corpus::Dataset& data, const std::vector<CandidateSet>& cache,
                                       double alpha, std::size_t threads = 1);

struct LoopRound {
    std::filesystem::path cache_path;
    std::filesystem::path checkpoint_path;
    model::Checkpoint checkpoint;
};

/// Alternates candidate generation from the current model and multi-task
/// fine-tuning; round r writes round-<r>.candidates.jsonl and round-<r>.ckpt.
std::vector<LoopRound> loop_finetune(const model::Checkpoint& init, const corpus::Dataset& train,
                                     const TrainConfig& tc, std::size_t n_rounds,
                                     const std::filesystem::path& out_dir);

/// k distinct indices in [0, n) drawn by a seeded partial shuffle, sorted.
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k, std::uint64_t seed);

struct FewShotRepeat {
    std::vector<std::size_t> indices;
    std::map<std::string, double> metrics;
};

struct FewShotResult {
    std::vector<FewShotRepeat> repeats;
    std::map<std::string, double> mean;
    std::map<std::string, double> stddev;
};

using Evaluator = std::function<std::map<std::string, double>(const model::Checkpoint&)>;

/// Each repeat samples k training examples, builds their candidates and
/// runs train_brio; `evaluate` scores the resulting checkpoint.
FewShotResult few_shot_finetune(const model::Checkpoint& init, const corpus::Dataset& train, std::size_t k,
                                std::size_t n_repeats, const TrainConfig& tc, const Evaluator& evaluate);

}  // namespace brio::train
