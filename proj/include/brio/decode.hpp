#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "brio/common.hpp"
#include "brio/model.hpp"

namespace brio::decode {

/// Length-normalised sequence score sum_logprob / length^alpha.
double seq_score(double sum_logprob, std::size_t length, double alpha);

struct Candidate {
    TokenSequence tokens;               // BOS, generated tokens (EOS last when finished)
    std::vector<double> token_logprobs; // one per generated token
    double sum_logprob = 0.0;
    double f_score = 0.0;
    double alpha = 0.0;
    std::size_t group = 0;

    std::size_t length() const { return token_logprobs.size(); }
    bool operator==(const Candidate&) const = default;
};

struct BeamConfig {
    std::size_t beam_width = 16;
    std::size_t max_len = 32;           // generated tokens, EOS included
    double length_penalty = 2.0;        // alpha
    std::size_t n_groups = 16;
    double diversity_strength = 1.0;
    std::size_t n_candidates = 16;

    void validate() const;
    bool operator==(const BeamConfig&) const = default;
};

/// Step state of an autoregressive model: the distribution over the next
/// token given everything consumed so far.
struct StepState {
    virtual ~StepState() = default;
    virtual std::span<const double> log_probs() const = 0;
};

/// What a search needs from a model bound to one source document.
class StepModel {
public:
    virtual ~StepModel() = default;
    virtual std::size_t vocab_size() const = 0;
    virtual TokenId bos() const { return kBos; }
    virtual TokenId eos() const { return kEos; }
    /// Tokens the search may generate.
    virtual bool may_emit(TokenId t) const = 0;
    /// State after consuming BOS.
    virtual std::shared_ptr<const StepState> start() const = 0;
    virtual std::shared_ptr<const StepState> extend(const StepState& s, TokenId t) const = 0;
};

/// Transformer decoder over a fixed source, with cached keys and values.
/// PAD and BOS are never generated.
class TransformerStepModel final : public StepModel {
public:
    TransformerStepModel(const model::Parameters& params, const model::ModelConfig& cfg,
                         const TokenSequence& source);

    std::size_t vocab_size() const override { return cfg_.vocab_size; }
    bool may_emit(TokenId t) const override { return t != kPad && t != kBos && t < cfg_.vocab_size; }
    std::shared_ptr<const StepState> start() const override;
    std::shared_ptr<const StepState> extend(const StepState& s, TokenId t) const override;

private:
    model::ModelConfig cfg_;
    model::IncrementalDecoder decoder_;
};

/// Model defined by a function from generated prefix (BOS excluded) to a
/// log-distribution. Token ids are 0..vocab_size-1; BOS is vocab_size and is
/// never emitted.
class TableModel final : public StepModel {
public:
    using Table = std::function<std::vector<double>(const TokenSequence& prefix)>;

    TableModel(std::size_t vocab_size, TokenId eos, Table table);

    /// Each prefix gets its own log-softmax of seeded random logits.
    static TableModel random(std::size_t vocab_size, TokenId eos, std::uint64_t seed, double logit_scale = 2.0);

    std::size_t vocab_size() const override { return vocab_size_; }
    TokenId bos() const override { return static_cast<TokenId>(vocab_size_); }
    TokenId eos() const override { return eos_; }
    bool may_emit(TokenId t) const override { return t < vocab_size_; }
    std::shared_ptr<const StepState> start() const override;
    std::shared_ptr<const StepState> extend(const StepState& s, TokenId t) const override;

    /// log p(tokens[i] | tokens[<i]) summed over a generated sequence (BOS excluded).
    double sequence_logprob(const TokenSequence& generated) const;

private:
    std::size_t vocab_size_;
    TokenId eos_;
    Table table_;
};

struct BeamResult {
    /// Finished hypotheses ordered by f_score descending, at most beam_width.
    std::vector<Candidate> beam;
    /// Highest sum_logprob among all finished hypotheses.
    double best_sum_logprob = 0.0;

    const Candidate& best() const { return beam.front(); }
};

/// Standard beam search (cfg.n_groups is ignored). Every active hypothesis
/// is expanded by every emittable token and the top beam_width by
/// cumulative log-probability survive. Hypotheses ending in EOS are set
/// aside and their slot refilled; search stops once beam_width hypotheses
/// have finished or max_len tokens were generated, at which point the
/// remaining active hypotheses finish unterminated. Ties go to the lower
/// token id, then the earlier hypothesis.
BeamResult beam_search(const StepModel& model, const BeamConfig& cfg);

struct DiverseResult {
    std::vector<Candidate> candidates;  // f_score descending, distinct token sequences
    bool shortfall = false;             // fewer than n_candidates distinct hypotheses
};

/// Diverse beam search with a Hamming penalty: G groups of beam_width/G
/// hypotheses decode in turn at each step, and a group's token scores are
/// lowered by diversity_strength times the number of times earlier groups
/// chose that token at the same step. The penalty only steers selection;
/// stored log-probabilities are unpenalised.
DiverseResult diverse_beam_search(const StepModel& model, const BeamConfig& cfg);

/// Convenience wrapper: greedy decoding (beam_width 1).
Candidate greedy(const StepModel& model, std::size_t max_len, double alpha);

/// Per generated token log p under teacher forcing of the whole sequence;
/// tokens starts with BOS.
std::vector<double> teacher_forced_logprobs(const model::Parameters& params, const model::ModelConfig& cfg,
                                            const TokenSequence& source, const TokenSequence& tokens);

}  // namespace brio::decode
