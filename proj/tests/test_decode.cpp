#include "doctest.h"

#include <cmath>
#include <map>
#include <numeric>

#include "brio/decode.hpp"
#include "support.hpp"

using namespace brio;
using namespace brio::decode;

namespace {

struct Enumerated {
    TokenSequence generated;
    double sum = 0.0;
};

/// Every sequence the search space allows: stops at EOS or at max_len.
void enumerate(const TableModel& m, std::size_t max_len, TokenSequence& prefix, double sum,
               std::vector<Enumerated>& out) {
    auto state = m.start();
    for (TokenId t : prefix) state = m.extend(*state, t);
    const auto lp = state->log_probs();
    for (TokenId t = 0; t < m.vocab_size(); ++t) {
        prefix.push_back(t);
        const double s = sum + lp[t];
        if (t == m.eos() || prefix.size() == max_len) {
            out.push_back({prefix, s});
        } else {
            enumerate(m, max_len, prefix, s, out);
        }
        prefix.pop_back();
    }
}

TokenSequence generated_part(const Candidate& c) { return TokenSequence(c.tokens.begin() + 1, c.tokens.end()); }

std::size_t ipow(std::size_t b, std::size_t e) {
    std::size_t r = 1;
    while (e--) r *= b;
    return r;
}

void check_candidate(const Candidate& c, const StepModel& m, const BeamConfig& cfg) {
    REQUIRE(c.tokens.size() == c.token_logprobs.size() + 1);
    CHECK(c.tokens.front() == m.bos());
    CHECK(std::abs(std::accumulate(c.token_logprobs.begin(), c.token_logprobs.end(), 0.0) - c.sum_logprob) <= 1e-9);
    CHECK((c.tokens.back() == m.eos() || c.length() == cfg.max_len));
    CHECK(c.length() <= cfg.max_len);
    CHECK(c.f_score == seq_score(c.sum_logprob, c.length(), cfg.length_penalty));
    CHECK(c.alpha == cfg.length_penalty);
}

}  // namespace

TEST_CASE("seq_score hand cases") {
    CHECK(std::abs(seq_score(-2.0, 2, 1.0) - -1.0) <= 1e-9);
    CHECK(std::abs(seq_score(-2.0, 2, 2.0) - -0.5) <= 1e-9);
    CHECK(seq_score(-3.7, 5, 0.0) == -3.7);
    CHECK_THROWS_AS(seq_score(-1.0, 0, 1.0), Error);
}

TEST_CASE("beam config validation") {
    BeamConfig c;
    CHECK_NOTHROW(c.validate());
    c.beam_width = 0;
    CHECK_THROWS_AS(c.validate(), Error);
    c = BeamConfig{};
    c.n_groups = 3;
    CHECK_THROWS_AS(c.validate(), Error);
    c = BeamConfig{};
    c.n_candidates = 17;
    CHECK_THROWS_AS(c.validate(), Error);
    c = BeamConfig{};
    c.diversity_strength = -1.0;
    CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("full-width beam search finds the exhaustive f argmax") {
    Rng pick(2024);
    for (std::uint64_t trial = 0; trial < 50; ++trial) {
        const std::size_t vocab = 2 + pick.below(4);
        const std::size_t max_len = 1 + pick.below(4);
        const TokenId eos = static_cast<TokenId>(pick.below(vocab));
        const double alphas[] = {0.0, 0.5, 1.0, 2.0};
        const double alpha = alphas[pick.below(4)];
        const auto m = TableModel::random(vocab, eos, 1000 + trial);
        CAPTURE(trial);

        std::vector<Enumerated> all;
        TokenSequence prefix;
        enumerate(m, max_len, prefix, 0.0, all);
        const auto best = std::max_element(all.begin(), all.end(), [&](const auto& a, const auto& b) {
            return seq_score(a.sum, a.generated.size(), alpha) < seq_score(b.sum, b.generated.size(), alpha);
        });

        BeamConfig cfg;
        cfg.beam_width = ipow(vocab, max_len);
        cfg.n_groups = 1;
        cfg.n_candidates = cfg.beam_width;
        cfg.max_len = max_len;
        cfg.length_penalty = alpha;
        const auto res = beam_search(m, cfg);
        CHECK(generated_part(res.best()) == best->generated);
        CHECK(std::abs(res.best().sum_logprob - m.sequence_logprob(best->generated)) <= 1e-9);
        CHECK(res.beam.size() == std::min(cfg.beam_width, all.size()));
        for (const auto& c : res.beam) check_candidate(c, m, cfg);
        for (std::size_t i = 1; i < res.beam.size(); ++i) CHECK(res.beam[i - 1].f_score >= res.beam[i].f_score);

        // Strength 0 with one group is plain beam search.
        const auto dbs = diverse_beam_search(m, cfg);
        REQUIRE(dbs.candidates.size() == res.beam.size());
        for (std::size_t i = 0; i < res.beam.size(); ++i) CHECK(dbs.candidates[i].tokens == res.beam[i].tokens);
    }
}

TEST_CASE("zero-strength diverse search equals beam search for narrow beams") {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const auto m = TableModel::random(5, 0, 77 + seed);
        BeamConfig cfg;
        cfg.beam_width = 3;
        cfg.n_groups = 1;
        cfg.n_candidates = 3;
        cfg.max_len = 4;
        cfg.diversity_strength = 0.0;
        const auto b = beam_search(m, cfg);
        const auto d = diverse_beam_search(m, cfg);
        REQUIRE(d.candidates.size() == b.beam.size());
        for (std::size_t i = 0; i < b.beam.size(); ++i) CHECK(d.candidates[i] == b.beam[i]);

        // With G groups and no penalty every group runs the same width-B/G
        // search, so after deduplication the pool is one group's finished
        // list and its f-ordered head is the narrow beam.
        BeamConfig grouped = cfg;
        grouped.beam_width = 6;
        grouped.n_groups = 2;
        grouped.n_candidates = 6;
        const auto g = diverse_beam_search(m, grouped);
        REQUIRE(g.candidates.size() >= b.beam.size());
        CHECK(g.candidates.size() <= 2 * cfg.beam_width - 1);
        for (std::size_t i = 0; i < b.beam.size(); ++i) CHECK(g.candidates[i].tokens == b.beam[i].tokens);
        for (const auto& c : g.candidates) CHECK(c.group == 0);
        CHECK(g.shortfall);
    }
}

TEST_CASE("the Hamming penalty pushes the second group off a tied token") {
    // Tokens 1 and 2 tie at the first step; EOS is 0.
    const TableModel m(3, 0, [](const TokenSequence& prefix) {
        if (prefix.empty()) return std::vector<double>{std::log(0.2), std::log(0.4), std::log(0.4)};
        return std::vector<double>{std::log(0.9), std::log(0.05), std::log(0.05)};
    });
    BeamConfig cfg;
    cfg.beam_width = 2;
    cfg.n_groups = 2;
    cfg.n_candidates = 2;
    cfg.max_len = 2;
    cfg.diversity_strength = 1.0;
    cfg.length_penalty = 1.0;
    const auto d = diverse_beam_search(m, cfg);
    REQUIRE(d.candidates.size() == 2);
    std::map<std::size_t, TokenId> first;
    for (const auto& c : d.candidates) first[c.group] = c.tokens[1];
    CHECK(first.at(0) == 1);  // lower id wins the tie
    CHECK(first.at(1) == 2);
    // The penalty never leaks into the stored scores.
    for (const auto& c : d.candidates) CHECK(std::abs(c.sum_logprob - (std::log(0.4) + std::log(0.9))) <= 1e-12);

    cfg.diversity_strength = 0.0;
    const auto same = diverse_beam_search(m, cfg);
    CHECK(same.candidates.size() == 1);
    CHECK(same.shortfall);
}

TEST_CASE("diverse search returns distinct candidates with valid parts") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto m = TableModel::random(6, 1, seed);
        BeamConfig cfg;
        cfg.beam_width = 8;
        cfg.n_groups = 4;
        cfg.n_candidates = 6;
        cfg.max_len = 5;
        cfg.length_penalty = 1.0;
        const auto d = diverse_beam_search(m, cfg);
        CHECK(d.candidates.size() <= 6);
        CHECK(d.shortfall == (d.candidates.size() < 6));
        for (std::size_t i = 0; i < d.candidates.size(); ++i) {
            check_candidate(d.candidates[i], m, cfg);
            CHECK(d.candidates[i].group < cfg.n_groups);
            for (std::size_t j = 0; j < i; ++j) CHECK(d.candidates[i].tokens != d.candidates[j].tokens);
            if (i > 0) CHECK(d.candidates[i - 1].f_score >= d.candidates[i].f_score);
        }
        // Determinism.
        CHECK(diverse_beam_search(m, cfg).candidates == d.candidates);
    }
}

TEST_CASE("shortfall when the space holds too few sequences") {
    const auto m = TableModel::random(2, 1, 5);
    BeamConfig cfg;
    cfg.beam_width = 4;
    cfg.n_groups = 4;
    cfg.n_candidates = 4;
    cfg.max_len = 1;
    const auto d = diverse_beam_search(m, cfg);
    CHECK(d.candidates.size() == 2);
    CHECK(d.shortfall);
}

TEST_CASE("the widest beam dominates narrower ones on best log-probability") {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const auto m = TableModel::random(4, 0, 300 + seed);
        BeamConfig cfg;
        cfg.n_groups = 1;
        cfg.max_len = 4;
        cfg.length_penalty = 1.0;
        cfg.beam_width = cfg.n_candidates = ipow(4, 4);
        const double full = beam_search(m, cfg).best_sum_logprob;
        for (std::size_t w : {1u, 2u, 3u, 5u, 8u}) {
            cfg.beam_width = cfg.n_candidates = w;
            CHECK(beam_search(m, cfg).best_sum_logprob <= full);
        }
    }
}

TEST_CASE("greedy equals width-one beam search") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto m = TableModel::random(5, 2, 40 + seed);
        BeamConfig cfg;
        cfg.beam_width = cfg.n_candidates = cfg.n_groups = 1;
        cfg.max_len = 6;
        cfg.length_penalty = 1.0;
        CHECK(greedy(m, 6, 1.0) == beam_search(m, cfg).best());
    }
}

TEST_CASE("transformer step model agrees with teacher forcing") {
    const auto mc = testing::tiny_config(12, 1);
    const auto p = model::Parameters::init(mc, 4);
    const TokenSequence src{kBos, 5, 6, 7, kEos};
    TransformerStepModel sm(p, mc, src);
    CHECK_FALSE(sm.may_emit(kPad));
    CHECK_FALSE(sm.may_emit(kBos));
    CHECK(sm.may_emit(kEos));
    BeamConfig cfg;
    cfg.beam_width = 4;
    cfg.n_groups = 2;
    cfg.n_candidates = 4;
    cfg.max_len = 6;
    for (const auto& c : diverse_beam_search(sm, cfg).candidates) {
        check_candidate(c, sm, cfg);
        for (TokenId t : generated_part(c)) {
            CHECK(t != kPad);
            CHECK(t != kBos);
        }
        const auto tf = teacher_forced_logprobs(p, mc, src, c.tokens);
        REQUIRE(tf.size() == c.token_logprobs.size());
        for (std::size_t i = 0; i < tf.size(); ++i) CHECK(std::abs(tf[i] - c.token_logprobs[i]) <= 1e-12);
    }
}
