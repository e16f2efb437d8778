#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "brio/corpus.hpp"
#include "brio/model.hpp"
#include "brio/train.hpp"

namespace brio {

struct DataConfig {
    corpus::SyntheticTaskSpec task;
    std::size_t n_train = 2000;
    std::size_t n_valid = 200;
    std::size_t n_test = 200;
    std::uint64_t seed = 1;
};

struct EvalConfig {
    std::size_t beam_width = 4;         // beam search used for generation metrics
    std::size_t ece_buckets = 10;
    std::size_t novelty_buckets = 4;
    std::vector<double> alpha_grid;     // empty: score with train.alpha
};

struct SweepConfig {
    std::vector<double> gammas{0.0, 1.0, 10.0, 100.0};
    std::vector<std::size_t> widths{1, 2, 4, 8};
};

struct FewShotConfig {
    std::size_t k = 50;
    std::size_t repeats = 3;
};

/// Everything a pipeline run needs besides file paths. model.vocab_size 0
/// means "take it from the vocabulary".
struct RunConfig {
    DataConfig data;
    model::ModelConfig model;
    train::TrainConfig train;
    EvalConfig eval;
    SweepConfig sweep;
    FewShotConfig few_shot;
    std::size_t loop_rounds = 2;

    RunConfig();

    /// Checks every section; vocab_size 0 is accepted.
    void validate() const;
    /// Model config with the vocabulary size filled in.
    model::ModelConfig resolved_model(std::size_t vocab_size) const;
    /// Beam settings for evaluation-time beam search.
    decode::BeamConfig eval_beam(const model::ModelConfig& m) const;
};

/// Applies "key = value" lines grouped under [section] headers. Unknown
/// sections or keys, duplicate keys and malformed values are errors that
/// name the line.
void apply_config_text(RunConfig& cfg, std::string_view text, std::string_view origin = "<config>");
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);
/// Sets one "section.key" to a textual value.
void set_config_value(RunConfig& cfg, std::string_view dotted_key, std::string_view value);
/// BRIO_SEED and BRIO_THREADS, when set.
void apply_environment(RunConfig& cfg);

/// Canonical text of every key with its resolved value, in a fixed order.
std::string render_config(const RunConfig& cfg);

struct ConfigKeyInfo {
    std::string section;
    std::string key;
    std::string default_value;
    std::string help;
};
std::vector<ConfigKeyInfo> config_keys();

}  // namespace brio
