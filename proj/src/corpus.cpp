#include "brio/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "brio/rng.hpp"

namespace brio {

TokenSequence strip_sentinels(const TokenSequence& seq) {
    TokenSequence out;
    out.reserve(seq.size());
    for (std::size_t i = 0; i < seq.size(); ++i) {
        const TokenId t = seq[i];
        if (t == kPad) {
            continue;
        }
        if (i == 0 && t == kBos) {
            continue;
        }
        if (t == kEos && i + 1 == seq.size()) {
            continue;
        }
        out.push_back(t);
    }
    return out;
}

}  // namespace brio

namespace brio::corpus {

const std::vector<std::string>& Vocab::special_tokens() {
    static const std::vector<std::string> specials = {"<pad>", "<s>", "</s>", "<unk>"};
    return specials;
}

Vocab::Vocab() : Vocab(special_tokens()) {}

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    const auto& specials = special_tokens();
    if (tokens_.size() < specials.size() ||
        !std::equal(specials.begin(), specials.end(), tokens_.begin())) {
        throw Error("vocabulary must start with <pad> <s> </s> <unk>");
    }
    index_.reserve(tokens_.size());
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        if (tokens_[i].empty()) {
            throw Error("vocabulary contains an empty token at id " + std::to_string(i));
        }
        if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
            throw Error("duplicate vocabulary token '" + tokens_[i] + "'");
        }
    }
}

const std::string& Vocab::token(TokenId id) const {
    if (id >= tokens_.size()) {
        throw Error("token id " + std::to_string(id) + " out of range");
    }
    return tokens_[id];
}

TokenId Vocab::id_of(std::string_view word) const {
    auto it = index_.find(std::string(word));
    return it == index_.end() ? kUnk : it->second;
}

bool Vocab::contains(std::string_view word) const {
    return index_.find(std::string(word)) != index_.end();
}

Vocab build_vocab(const std::vector<Words>& texts, std::size_t max_size) {
    if (texts.empty()) {
        throw Error("empty corpus");
    }
    if (max_size < kNumSpecials) {
        throw Error("max_size must leave room for the four special tokens");
    }
    const auto& specials = Vocab::special_tokens();
    std::map<std::string, std::size_t> counts;
    for (const auto& text : texts) {
        for (const auto& w : text) {
            if (std::find(specials.begin(), specials.end(), w) == specials.end()) {
                ++counts[w];
            }
        }
    }
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });

    std::vector<std::string> tokens = specials;
    for (const auto& [word, count] : ranked) {
        if (tokens.size() >= max_size) {
            break;
        }
        tokens.push_back(word);
    }
    return Vocab(std::move(tokens));
}

TokenSequence encode(const Vocab& v, const Words& words) {
    TokenSequence seq;
    seq.reserve(words.size() + 2);
    seq.push_back(kBos);
    for (const auto& w : words) {
        seq.push_back(v.id_of(w));
    }
    seq.push_back(kEos);
    return seq;
}

Words decode(const Vocab& v, const TokenSequence& seq) {
    Words out;
    for (TokenId t : strip_sentinels(seq)) {
        out.push_back(v.token(t));
    }
    return out;
}

std::string_view split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::valid: return "valid";
        case Split::test: return "test";
    }
    return "train";
}

Split parse_split(std::string_view name) {
    if (name == "train") return Split::train;
    if (name == "valid") return Split::valid;
    if (name == "test") return Split::test;
    throw Error("unknown split '" + std::string(name) + "'");
}

namespace {

void validate_sequence(const TokenSequence& seq, std::size_t vocab_size, const char* what,
                       std::size_t index) {
    auto fail = [&](const std::string& msg) {
        throw Error(std::string(what) + " of example " + std::to_string(index) + ": " + msg);
    };
    if (seq.size() < 2 || seq.front() != kBos || seq.back() != kEos) {
        fail("must start with BOS and end with EOS");
    }
    for (std::size_t i = 1; i + 1 < seq.size(); ++i) {
        if (seq[i] == kPad || seq[i] == kBos || seq[i] == kEos) {
            fail("sentinel inside content");
        }
    }
    for (TokenId t : seq) {
        if (t >= vocab_size) {
            fail("token id " + std::to_string(t) + " >= vocabulary size");
        }
    }
}

}  // namespace

void validate(const Dataset& d, std::size_t vocab_size) {
    if (d.examples.empty()) {
        throw Error("dataset split '" + std::string(split_name(d.split)) + "' is empty");
    }
    for (std::size_t i = 0; i < d.examples.size(); ++i) {
        validate_sequence(d.examples[i].source, vocab_size, "source", i);
        validate_sequence(d.examples[i].reference, vocab_size, "reference", i);
        if (d.examples[i].reference.size() < 3) {
            throw Error("reference of example " + std::to_string(i) + " has no content token");
        }
    }
}

// ---------------------------------------------------------------------------
// synthetic keyword-extraction task

namespace {

std::string keyword(std::size_t i) { return "k" + std::to_string(i); }
std::string paraphrase(std::size_t i) { return "p" + std::to_string(i); }
std::string filler(std::size_t i, std::size_t n_triggers) {
    return (i < n_triggers ? "t" : "w") + std::to_string(i);
}

// Parses "k12" style words; returns false for other prefixes.
bool parse_indexed(std::string_view word, char prefix, std::size_t& index) {
    if (word.size() < 2 || word[0] != prefix) {
        return false;
    }
    std::size_t v = 0;
    for (char c : word.substr(1)) {
        if (c < '0' || c > '9') {
            return false;
        }
        v = v * 10 + static_cast<std::size_t>(c - '0');
    }
    index = v;
    return true;
}

}  // namespace

void SyntheticTaskSpec::validate() const {
    if (n_salient == 0) {
        throw Error("invalid synthetic task: salient set is empty");
    }
    if (n_paraphrased > n_salient) {
        throw Error("invalid synthetic task: n_paraphrased exceeds n_salient");
    }
    if (n_triggers > n_filler) {
        throw Error("invalid synthetic task: n_triggers exceeds n_filler");
    }
    if (min_source_len == 0 || min_source_len > max_source_len) {
        throw Error("invalid synthetic task: source length range");
    }
    if (!(salient_rate > 0.0 && salient_rate <= 1.0) || !(trigger_rate >= 0.0 && trigger_rate <= 1.0)) {
        throw Error("invalid synthetic task: rates must lie in (0, 1] and [0, 1]");
    }
    if (salient_rate < 1.0 && n_filler == 0) {
        throw Error("invalid synthetic task: filler slots requested but no filler words");
    }
    if (max_reference_len == 0) {
        throw Error("invalid synthetic task: max_reference_len must be >= 1");
    }
}

Words SyntheticTaskSpec::lexicon() const {
    Words words;
    for (std::size_t i = 0; i < n_salient; ++i) words.push_back(keyword(i));
    for (std::size_t i = 0; i < n_paraphrased; ++i) words.push_back(paraphrase(i));
    for (std::size_t i = 0; i < n_filler; ++i) words.push_back(filler(i, n_triggers));
    return words;
}

Words synthetic_reference(const SyntheticTaskSpec& spec, const Words& source) {
    Words ref;
    for (std::size_t i = 0; i < source.size() && ref.size() < spec.max_reference_len; ++i) {
        std::size_t k = 0;
        if (!parse_indexed(source[i], 'k', k) || k >= spec.n_salient) {
            continue;
        }
        std::size_t t = 0;
        const bool triggered = i > 0 && parse_indexed(source[i - 1], 't', t) && t < spec.n_triggers;
        ref.push_back(triggered && k < spec.n_paraphrased ? paraphrase(k) : keyword(k));
    }
    return ref;
}

std::vector<WordExample> generate_synthetic_words(std::uint64_t seed, std::size_t n_examples,
                                                  const SyntheticTaskSpec& spec) {
    spec.validate();
    if (n_examples == 0) {
        throw Error("n_examples must be >= 1");
    }
    Rng rng(seed);
    const std::size_t n_plain = spec.n_filler - spec.n_triggers;
    std::vector<WordExample> out;
    out.reserve(n_examples);
    while (out.size() < n_examples) {
        const std::size_t len =
            spec.min_source_len + rng.below(spec.max_source_len - spec.min_source_len + 1);
        Words source;
        source.reserve(len);
        bool any_salient = false;
        for (std::size_t i = 0; i < len; ++i) {
            if (rng.bernoulli(spec.salient_rate)) {
                source.push_back(keyword(rng.below(spec.n_salient)));
                any_salient = true;
            } else if (spec.n_triggers > 0 && (n_plain == 0 || rng.bernoulli(spec.trigger_rate))) {
                source.push_back(filler(rng.below(spec.n_triggers), spec.n_triggers));
            } else {
                source.push_back(filler(spec.n_triggers + rng.below(n_plain), spec.n_triggers));
            }
        }
        if (!any_salient) {
            continue;  // every example needs a non-empty reference
        }
        Words ref = synthetic_reference(spec, source);
        out.push_back({std::move(source), std::move(ref)});
    }
    return out;
}

Vocab synthetic_vocab(const SyntheticTaskSpec& spec) {
    spec.validate();
    std::vector<std::string> tokens = Vocab::special_tokens();
    for (auto& w : spec.lexicon()) {
        tokens.push_back(std::move(w));
    }
    return Vocab(std::move(tokens));
}

Dataset generate_synthetic_dataset(std::uint64_t seed, std::size_t n_examples,
                                   const SyntheticTaskSpec& spec, const Vocab& vocab, Split split) {
    Dataset d{split, {}};
    for (const auto& row : generate_synthetic_words(seed, n_examples, spec)) {
        d.examples.push_back({encode(vocab, row.source), encode(vocab, row.reference)});
    }
    return d;
}

// ---------------------------------------------------------------------------
// files

Words split_whitespace(std::string_view line) {
    Words out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
        std::size_t j = i;
        while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
        if (j > i) {
            out.emplace_back(line.substr(i, j - i));
        }
        i = j;
    }
    return out;
}

namespace {

std::string join(const Words& w) {
    std::string s;
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (i) s += ' ';
        s += w[i];
    }
    return s;
}

}  // namespace

std::vector<WordExample> read_text_pairs(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open dataset file " + path.string());
    }
    std::vector<WordExample> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        const auto tab = line.find('\t');
        if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
            throw Error(path.string() + ":" + std::to_string(lineno) +
                        ": expected exactly one TAB between source and reference");
        }
        WordExample row{split_whitespace(std::string_view(line).substr(0, tab)),
                        split_whitespace(std::string_view(line).substr(tab + 1))};
        if (row.reference.empty()) {
            throw Error(path.string() + ":" + std::to_string(lineno) + ": empty reference");
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_text_pairs(const std::filesystem::path& path, const std::vector<WordExample>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    for (const auto& r : rows) {
        out << join(r.source) << '\t' << join(r.reference) << '\n';
    }
}

Dataset load_dataset(const std::filesystem::path& path, const Vocab& vocab, Split split) {
    Dataset d{split, {}};
    for (const auto& row : read_text_pairs(path)) {
        d.examples.push_back({encode(vocab, row.source), encode(vocab, row.reference)});
    }
    validate(d, vocab.size());
    return d;
}

void save_dataset(const std::filesystem::path& path, const Dataset& d, const Vocab& vocab) {
    std::vector<WordExample> rows;
    rows.reserve(d.size());
    for (const auto& ex : d.examples) {
        rows.push_back({decode(vocab, ex.source), decode(vocab, ex.reference)});
    }
    write_text_pairs(path, rows);
}

Vocab read_vocab(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open vocabulary file " + path.string());
    }
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        tokens.push_back(line);
    }
    return Vocab(std::move(tokens));
}

void write_vocab(const std::filesystem::path& path, const Vocab& v) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    for (const auto& t : v.tokens()) {
        out << t << '\n';
    }
}

}  // namespace brio::corpus
