#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "brio/common.hpp"

namespace brio::corpus {

using Words = std::vector<std::string>;

class Vocab {
public:
    /// Builds a vocabulary holding only the four specials.
    Vocab();

    /// Takes an ordered token list; the first four entries must be the specials.
    explicit Vocab(std::vector<std::string> tokens);

    std::size_t size() const { return tokens_.size(); }
    const std::string& token(TokenId id) const;
    /// Returns kUnk for unknown words.
    TokenId id_of(std::string_view word) const;
    bool contains(std::string_view word) const;
    const std::vector<std::string>& tokens() const { return tokens_; }

    static const std::vector<std::string>& special_tokens();

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> index_;
};

/// Specials first, then up to max_size - 4 words by descending frequency,
/// ties broken lexicographically.
Vocab build_vocab(const std::vector<Words>& texts, std::size_t max_size);

TokenSequence encode(const Vocab& v, const Words& words);
/// Inverse of encode: sentinels and PAD are dropped.
Words decode(const Vocab& v, const TokenSequence& seq);

struct Example {
    TokenSequence source;
    TokenSequence reference;
};

enum class Split { train, valid, test };
std::string_view split_name(Split s);
Split parse_split(std::string_view name);

struct Dataset {
    Split split = Split::train;
    std::vector<Example> examples;

    std::size_t size() const { return examples.size(); }
};

/// Checks the Example and Dataset invariants against a vocabulary size.
void validate(const Dataset& d, std::size_t vocab_size);

/// Keyword-extraction task. Sources mix salient keywords with filler words;
/// the reference lists the salient keywords in source order. A keyword that
/// has a paraphrase form and directly follows a trigger word is emitted in
/// its paraphrased form, so near-miss outputs differ by a token or two.
struct SyntheticTaskSpec {
    std::size_t n_salient = 16;
    std::size_t n_filler = 24;
    std::size_t n_triggers = 4;      // first n_triggers fillers act as triggers
    std::size_t n_paraphrased = 8;   // first n_paraphrased keywords have a paraphrase form
    std::size_t min_source_len = 8;
    std::size_t max_source_len = 14;
    double salient_rate = 0.35;
    double trigger_rate = 0.15;      // chance a filler slot is drawn from the triggers
    std::size_t max_reference_len = 6;

    void validate() const;
    /// Every word the task can emit, specials excluded.
    Words lexicon() const;
};

/// Word-level example for a synthetic task (before vocabulary mapping).
struct WordExample {
    Words source;
    Words reference;
};

/// Recomputes the reference of a synthetic source by the task rule.
Words synthetic_reference(const SyntheticTaskSpec& spec, const Words& source);

std::vector<WordExample> generate_synthetic_words(std::uint64_t seed, std::size_t n_examples,
                                                  const SyntheticTaskSpec& spec);

/// Vocabulary that covers the whole task lexicon in a fixed order.
Vocab synthetic_vocab(const SyntheticTaskSpec& spec);

Dataset generate_synthetic_dataset(std::uint64_t seed, std::size_t n_examples,
                                   const SyntheticTaskSpec& spec, const Vocab& vocab,
                                   Split split = Split::train);

// Plain-text formats.

/// One example per line: source TAB reference, tokens separated by single spaces.
std::vector<WordExample> read_text_pairs(const std::filesystem::path& path);
void write_text_pairs(const std::filesystem::path& path, const std::vector<WordExample>& rows);

Dataset load_dataset(const std::filesystem::path& path, const Vocab& vocab, Split split);
void save_dataset(const std::filesystem::path& path, const Dataset& d, const Vocab& vocab);

/// One token per line; line number is the id.
Vocab read_vocab(const std::filesystem::path& path);
void write_vocab(const std::filesystem::path& path, const Vocab& v);

Words split_whitespace(std::string_view line);

}  // namespace brio::corpus
