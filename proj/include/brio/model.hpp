#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "brio/common.hpp"
#include "brio/rng.hpp"
#include "brio/tape.hpp"

namespace brio::model {

struct ModelConfig {
    std::size_t vocab_size = 200;
    std::size_t embed_dim = 64;
    std::size_t n_heads = 4;
    std::size_t n_enc_layers = 2;
    std::size_t n_dec_layers = 2;
    std::size_t ffn_dim = 256;
    std::size_t max_src_len = 64;
    std::size_t max_tgt_len = 32;
    double dropout_rate = 0.0;  // only applied when a forward pass asks for it

    void validate() const;
    std::size_t head_dim() const { return embed_dim / n_heads; }
    bool operator==(const ModelConfig&) const = default;
};

struct NamedTensor {
    std::string name;
    Tensor value;

    bool operator==(const NamedTensor&) const = default;
};

/// Learnable state of the encoder-decoder, in a fixed order determined by
/// the config. Input and output embeddings share the "embed" table.
struct Parameters {
    std::vector<NamedTensor> tensors;

    static Parameters init(const ModelConfig& cfg, std::uint64_t seed);

    std::size_t size() const { return tensors.size(); }
    std::size_t count_scalars() const;
    std::optional<std::size_t> find(std::string_view name) const;
    std::vector<std::string> names() const;
    bool all_finite() const;
    bool operator==(const Parameters&) const = default;
};

/// Indices of every tensor inside Parameters::tensors.
struct Layout {
    struct Attention {
        std::size_t wq, wk, wv, wo;
    };
    struct Norm {
        std::size_t gain, bias;
    };
    struct FeedForward {
        std::size_t w1, b1, w2, b2;
    };
    struct EncoderLayer {
        Norm ln_attn;
        Attention attn;
        Norm ln_ffn;
        FeedForward ffn;
    };
    struct DecoderLayer {
        Norm ln_self;
        Attention self_attn;
        Norm ln_cross;
        Attention cross_attn;
        Norm ln_ffn;
        FeedForward ffn;
    };
    std::size_t embed = 0;
    std::vector<EncoderLayer> encoder;
    Norm enc_final{};
    std::vector<DecoderLayer> decoder;
    Norm dec_final{};

    static Layout of(const ModelConfig& cfg);
};

/// (name, shape) of every parameter tensor, in storage order.
std::vector<std::pair<std::string, Shape>> parameter_specs(const ModelConfig& cfg);

/// Seeded dropout masks for a training forward pass.
struct DropoutContext {
    double rate = 0.0;
    Rng rng{0};
};

/// Parameters bound as leaves on one tape.
class BoundModel {
public:
    BoundModel(Tape& tape, const ModelConfig& cfg, const Parameters& params,
               DropoutContext* dropout = nullptr);
    /// Uses leaves already on one tape, in parameter_specs order.
    BoundModel(const ModelConfig& cfg, std::span<const Var> leaves, DropoutContext* dropout = nullptr);

    Tape& tape() const { return *tape_; }
    const ModelConfig& config() const { return cfg_; }
    std::span<const Var> leaves() const { return leaves_; }

    /// Encoder states [source length, embed_dim].
    Var encode(const TokenSequence& source) const;
    /// Log-distributions [inputs.size(), vocab] where row j conditions on inputs[0..j].
    Var decode(Var memory, std::span<const TokenId> inputs) const;

private:
    friend class IncrementalDecoder;

    Var embed(std::span<const TokenId> ids, std::size_t first_position) const;
    Var norm(Var x, const Layout::Norm& n) const;
    Var feed_forward(Var x, const Layout::FeedForward& f) const;
    Var maybe_dropout(Var x) const;
    Var project(Var x, std::size_t w) const { return matmul(x, leaves_[w]); }
    Var output_log_probs(Var h) const;

    Tape* tape_;
    ModelConfig cfg_;
    Layout layout_;
    std::vector<Var> leaves_;
    DropoutContext* dropout_;
};

/// Multi-head attention over projected queries [Tq, d], keys and values
/// [Tk, d]. With `causal`, query row i sees keys j <= i + (Tk - Tq).
Var multi_head_attention(Var q, Var k, Var v, std::size_t n_heads, bool causal);

/// Teacher-forced log-distributions for a full target [BOS, s1, ..., EOS]:
/// row j is log p(s_{j+1} | D, S_<=j), one row per predicted token.
Var forward_teacher_forced(const BoundModel& m, const TokenSequence& source, const TokenSequence& target);

/// log p(· | D, prefix) as a plain vector; prefix starts with BOS.
std::vector<double> next_token_distribution(const Parameters& params, const ModelConfig& cfg,
                                            const TokenSequence& source, const TokenSequence& prefix);

/// Probability vector of the label-smoothed target: 1 − β on gold and
/// β / (N − 1) everywhere else.
std::vector<double> smoothed_target(std::size_t vocab_size, TokenId gold, double beta);

/// −Σ_j Σ_s p_true(s) log p(s) over rows whose mask entry is true (all rows
/// when the mask is empty). `targets[j]` is the gold id for row j.
Var xent_label_smoothed(Var log_dists, std::span<const TokenId> targets, double beta,
                        const std::vector<bool>& keep_mask = {});

/// Reference-free view of a trained model for step-wise decoding. Encoder
/// output and cross-attention keys/values are computed once per source;
/// self-attention keys/values are cached per prefix.
class IncrementalDecoder {
public:
    IncrementalDecoder(const Parameters& params, const ModelConfig& cfg, const TokenSequence& source);

    struct State {
        std::vector<Tensor> self_k, self_v;  // one [t, d] pair per decoder layer
        std::size_t length = 0;              // tokens consumed so far
        std::vector<double> log_probs;       // distribution for the next token
    };

    /// State after consuming BOS.
    State start() const;
    State extend(const State& s, TokenId token) const;

private:
    const Parameters* params_;
    ModelConfig cfg_;
    Layout layout_;
    std::vector<Tensor> cross_k_, cross_v_;
};

}  // namespace brio::model
