// Runs every acceptance criterion at its stated tolerance and prints one
// PASS/FAIL line per criterion. Exits nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>

#include "brio/decode.hpp"
#include "brio/harness.hpp"
#include "brio/metrics.hpp"
#include "brio/report.hpp"
#include "brio/train.hpp"
#include "cli_support.hpp"
#include "support.hpp"

using namespace brio;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << " [failed: " << what << "]";
        }
    }
};

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

TokenSequence random_tokens(Rng& rng, std::size_t max_len, std::size_t alphabet) {
    TokenSequence s(rng.below(max_len + 1));
    for (auto& t : s) t = static_cast<TokenId>(kNumSpecials + rng.below(alphabet));
    return s;
}

std::vector<TokenSequence> ngrams(const TokenSequence& s, std::size_t n) {
    std::vector<TokenSequence> out;
    for (std::size_t i = 0; i + n <= s.size(); ++i) out.emplace_back(s.begin() + i, s.begin() + i + n);
    return out;
}

double f1_of(double overlap, double nc, double nr) {
    if (nc == 0 || nr == 0) return 0.0;
    const double p = overlap / nc, r = overlap / nr;
    return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
}

// 1 ---------------------------------------------------------------------

void rouge_oracles(Outcome& o) {
    const auto t0 = Clock::now();
    Rng rng(101);
    std::size_t lcs_bad = 0, ngram_bad = 0;
    for (int trial = 0; trial < 500; ++trial) {
        const auto x = random_tokens(rng, 8, 5), y = random_tokens(rng, 8, 5);
        std::size_t best = 0;
        for (std::uint32_t mask = 0; mask < (1u << x.size()); ++mask) {
            TokenSequence sub;
            for (std::size_t i = 0; i < x.size(); ++i) {
                if (mask & (1u << i)) sub.push_back(x[i]);
            }
            std::size_t j = 0;
            for (TokenId t : y) {
                if (j < sub.size() && sub[j] == t) ++j;
            }
            if (j == sub.size()) best = std::max(best, sub.size());
        }
        const double expected = f1_of(static_cast<double>(best), static_cast<double>(x.size()),
                                      static_cast<double>(y.size()));
        if (metrics::rouge_l(x, y).f1 != expected || metrics::lcs_length(x, y) != best) ++lcs_bad;
    }
    for (int trial = 0; trial < 100; ++trial) {
        const auto x = random_tokens(rng, 8, 5), y = random_tokens(rng, 8, 5);
        for (std::size_t n : {1u, 2u}) {
            auto pool = ngrams(y, n);
            const auto cand = ngrams(x, n);
            std::size_t hits = 0;
            for (const auto& g : cand) {
                auto it = std::find(pool.begin(), pool.end(), g);
                if (it != pool.end()) {
                    pool.erase(it);
                    ++hits;
                }
            }
            const double expected = f1_of(static_cast<double>(hits), static_cast<double>(cand.size()),
                                          static_cast<double>(ngrams(y, n).size()));
            if (metrics::rouge_n(x, y, n).f1 != expected) ++ngram_bad;
        }
    }
    const double secs = seconds_since(t0);
    o.detail << "lcs mismatches " << lcs_bad << "/500, n-gram mismatches " << ngram_bad << "/200, " << secs << " s";
    o.require(lcs_bad == 0, "lcs oracle");
    o.require(ngram_bad == 0, "n-gram oracle");
    o.require(secs < 10.0, "runtime < 10 s");
}

// 2 ---------------------------------------------------------------------

void gradient_fidelity(Outcome& o) {
    const auto t0 = Clock::now();
    const auto cfg = testing::tiny_config(12, 2);
    const auto p = model::Parameters::init(cfg, 7);
    const TokenSequence src{kBos, 4, 9, 5, 11, kEos}, ref{kBos, 9, 11, 6, kEos};
    const std::vector<TokenSequence> cands{{kBos, 9, 11, kEos}, {kBos, 9, 6, kEos}, {kBos, 5, 7, 8, kEos}};
    const std::vector<std::size_t> ties{0, 1, 2};
    // A margin of 5 keeps every hinge strictly active, away from the kinks.
    const double margin = 5.0, gamma = 3.0, alpha = 1.0;
    const GradCheckOptions opts{1e-5, 1e-4, 0};

    auto xent = [&](const model::BoundModel& m, Var memory) {
        const std::span<const TokenId> r(ref);
        return model::xent_label_smoothed(m.decode(memory, r.first(r.size() - 1)), r.subspan(1), 0.1);
    };
    auto ctr = [&](const model::BoundModel& m, Var memory) {
        std::vector<Var> f;
        for (const auto& c : cands) f.push_back(train::candidate_score(m, memory, c, alpha));
        return train::contrastive_loss(f, margin, ties);
    };
    const auto a = testing::model_grad_check(p, cfg, [&](const model::BoundModel& m) { return xent(m, m.encode(src)); },
                                             opts);
    const auto b = testing::model_grad_check(p, cfg, [&](const model::BoundModel& m) { return ctr(m, m.encode(src)); },
                                             opts);
    const auto c = testing::model_grad_check(
        p, cfg,
        [&](const model::BoundModel& m) {
            Var memory = m.encode(src);
            return add(xent(m, memory), scale(ctr(m, memory), gamma));
        },
        opts);
    const double secs = seconds_since(t0);
    o.detail << "max rel error xent " << a.max_rel_error << ", ctr " << b.max_rel_error << ", mul "
             << c.max_rel_error << " (all elements), " << secs << " s";
    o.require(a.pass && a.max_rel_error <= 1e-4, "xent");
    o.require(b.pass && b.max_rel_error <= 1e-4, "contrastive");
    o.require(c.pass && c.max_rel_error <= 1e-4, "multi-task");
    o.require(secs < 60.0, "runtime < 60 s");
}

// 3 ---------------------------------------------------------------------

void hand_cases(Outcome& o) {
    std::size_t n = 0, bad = 0;
    auto near = [&](double got, double want, const char* what) {
        ++n;
        if (!(std::abs(got - want) <= 1e-9)) {
            ++bad;
            o.detail << " " << what << "=" << got << " want " << want << ";";
        }
    };
    using V = std::vector<double>;
    using G = std::vector<std::size_t>;
    near(train::contrastive_loss(V{-1, -2}, 0.5, G{0, 1}), 0.0, "ctr[-1,-2]");
    near(train::contrastive_loss(V{-1, -1, -3}, 1.0, G{0, 1, 2}), 1.0, "ctr[-1,-1,-3]");
    near(decode::seq_score(-2.0, 2, 1.0), -1.0, "seq_score a1");
    near(decode::seq_score(-2.0, 2, 2.0), -0.5, "seq_score a2");
    const auto st = model::smoothed_target(5, 2, 0.1);
    const V want{0.025, 0.025, 0.9, 0.025, 0.025};
    for (std::size_t i = 0; i < 5; ++i) near(st[i], want[i], "smoothed_target");
    near(train::multi_task_loss(2.0, 0.01, 100.0), 3.0, "multi_task");
    near(train::lr_at(10000, 10000, 2e-3), 2e-5, "lr_at");
    near(train::lr_at(2 * 10000, 10000, 2e-3), train::lr_at(10000, 10000, 2e-3) / std::sqrt(2.0), "lr_at 2w");
    // Source bigrams {ab, bc}; summary bigrams {ab, bc, cd, dd}.
    near(metrics::novelty({20, 21, 22}, {20, 21, 22, 23, 23}, 2), 0.5, "novelty");
    near(*metrics::spearman({3, 1, 2}, {0.9, 0.2, 0.5}), 1.0, "spearman+");
    near(*metrics::spearman({3, 1, 2}, {0.2, 0.9, 0.5}), -1.0, "spearman-");
    near(metrics::ece({0.9, 0.9, 0.2, 0.2}, {true, false, false, false}, 2).ece, 0.3, "ece");
    o.detail << n - bad << "/" << n << " hand values within 1e-9";
    o.require(bad == 0, "hand values");
}

// 4 ---------------------------------------------------------------------

void enumerate(const decode::TableModel& m, std::size_t max_len, TokenSequence& prefix, double sum,
               std::vector<std::pair<TokenSequence, double>>& out) {
    auto state = m.start();
    for (TokenId t : prefix) state = m.extend(*state, t);
    const auto lp = state->log_probs();
    for (TokenId t = 0; t < m.vocab_size(); ++t) {
        prefix.push_back(t);
        if (t == m.eos() || prefix.size() == max_len) {
            out.emplace_back(prefix, sum + lp[t]);
        } else {
            enumerate(m, max_len, prefix, sum + lp[t], out);
        }
        prefix.pop_back();
    }
}

void decoding_equivalence(Outcome& o) {
    const auto t0 = Clock::now();
    Rng pick(4242);
    std::size_t beam_bad = 0, dbs_bad = 0;
    const double alphas[] = {0.0, 0.5, 1.0, 2.0};
    for (std::uint64_t trial = 0; trial < 50; ++trial) {
        const std::size_t vocab = 2 + pick.below(4);
        const std::size_t max_len = 1 + pick.below(4);
        const auto eos = static_cast<TokenId>(pick.below(vocab));
        const double alpha = alphas[pick.below(4)];
        const auto m = decode::TableModel::random(vocab, eos, 5000 + trial);
        std::vector<std::pair<TokenSequence, double>> all;
        TokenSequence prefix;
        enumerate(m, max_len, prefix, 0.0, all);
        const auto best = std::max_element(all.begin(), all.end(), [&](const auto& a, const auto& b) {
            return decode::seq_score(a.second, a.first.size(), alpha) < decode::seq_score(b.second, b.first.size(), alpha);
        });
        decode::BeamConfig cfg;
        cfg.beam_width = cfg.n_candidates = static_cast<std::size_t>(std::pow(vocab, max_len));
        cfg.n_groups = 1;
        cfg.diversity_strength = 0.0;
        cfg.max_len = max_len;
        cfg.length_penalty = alpha;
        const auto beam = decode::beam_search(m, cfg);
        const TokenSequence got(beam.best().tokens.begin() + 1, beam.best().tokens.end());
        if (got != best->first) ++beam_bad;
        const auto dbs = decode::diverse_beam_search(m, cfg);
        bool same = dbs.candidates.size() == beam.beam.size();
        for (std::size_t i = 0; same && i < beam.beam.size(); ++i) same = dbs.candidates[i].tokens == beam.beam[i].tokens;
        if (!same) ++dbs_bad;
    }
    const double secs = seconds_since(t0);
    o.detail << "beam mismatches " << beam_bad << "/50, zero-strength diverse mismatches " << dbs_bad << "/50, "
             << secs << " s";
    o.require(beam_bad == 0, "beam equals exhaustive argmax");
    o.require(dbs_bad == 0, "zero-strength diverse equals beam");
    o.require(secs < 30.0, "runtime < 30 s");
}

// 5, 7, 9 ----------------------------------------------------------------

struct Desk {
    std::vector<harness::DeskResult> results;
    double seconds = 0.0;
    std::string error;
};

Desk run_desk() {
    Desk d;
    const auto t0 = Clock::now();
    try {
        RunConfig base;
        apply_config_file(base, BRIO_DESK_CONFIG);
        for (std::uint64_t s = 1; s <= 3; ++s) {
            RunConfig cfg = base;
            cfg.data.seed = s;
            cfg.train.seed = s;
            d.results.push_back(harness::run_desk_experiment(cfg, true));
        }
        std::cout << report::to_text(harness::desk_report(d.results, render_config(base))) << "\n";
    } catch (const std::exception& e) {
        d.error = e.what();
    }
    d.seconds = seconds_since(t0);
    return d;
}

template <class F>
double mean_of(const Desk& d, F f) {
    double s = 0.0;
    for (const auto& r : d.results) s += f(r);
    return s / static_cast<double>(d.results.size());
}

void coordination_experiment(Outcome& o, const Desk& d) {
    if (!d.error.empty()) {
        o.require(false, d.error);
        return;
    }
    const double sp_mle = mean_of(d, [](const auto& r) { return r.mle.coordination.spearman; });
    const double sp_brio = mean_of(d, [](const auto& r) { return r.brio.coordination.spearman; });
    const double ra_mle = mean_of(d, [](const auto& r) { return r.mle.coordination.ranking_accuracy; });
    const double ra_brio = mean_of(d, [](const auto& r) { return r.brio.coordination.ranking_accuracy; });
    const double r1_mle = mean_of(d, [](const auto& r) { return r.mle.rouge.r1; });
    const double r1_brio = mean_of(d, [](const auto& r) { return r.brio.rouge.r1; });
    o.detail << "3-seed mean spearman " << sp_mle << " -> " << sp_brio << ", ranking acc " << ra_mle << " -> "
             << ra_brio << ", R-1 " << r1_mle << " -> " << r1_brio << ", " << d.seconds << " s with the loop round";
    o.require(sp_brio >= sp_mle + 0.05, "spearman gain >= 0.05");
    o.require(ra_brio >= ra_mle + 5.0, "ranking accuracy gain >= 5");
    o.require(r1_brio >= r1_mle - 0.5, "R-1 within 0.5");
    o.require(d.seconds < 900.0, "runtime < 15 min");
}

void loop_non_degradation(Outcome& o, const Desk& d) {
    if (!d.error.empty()) {
        o.require(false, d.error);
        return;
    }
    const double r1 = mean_of(d, [](const auto& r) { return r.brio.coordination.spearman; });
    const double r2 = mean_of(d, [](const auto& r) { return r.loop->coordination.spearman; });
    o.detail << "3-seed mean spearman round 1 " << r1 << ", round 2 " << r2;
    o.require(r2 >= r1 - 0.02, "round 2 >= round 1 - 0.02");
}

// 6 ---------------------------------------------------------------------

void degeneracy_chain(Outcome& o) {
    corpus::SyntheticTaskSpec spec;
    spec.max_reference_len = 5;
    const auto vocab = corpus::synthetic_vocab(spec);
    const auto data = corpus::generate_synthetic_dataset(3, 10, spec, vocab);
    const auto cfg = testing::tiny_config(vocab.size(), 1);
    train::TrainConfig tc;
    tc.mle = {train::ScheduleConfig{2e-3, 4, false}, 2, 3, 0, true};
    tc.brio = tc.mle;
    tc.alpha = 1.0;
    tc.beam.beam_width = tc.beam.n_candidates = 4;
    tc.beam.n_groups = 2;
    tc.beam.max_len = cfg.max_tgt_len;
    const auto init = train::train_mle(model::Checkpoint::fresh(cfg, 1), data, nullptr, tc).checkpoint;
    const auto sets = train::build_candidate_sets(init.params, cfg, data, tc);
    tc.gamma = 0.0;
    const bool bitwise = train::train_brio(init, data, sets, nullptr, tc).checkpoint ==
                         train::train_mle(init, data, nullptr, tc).checkpoint;

    double worst = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto f = train::score_candidates(init.params, cfg, data.examples[i].source, sets[i], 0.0);
        for (std::size_t k = 0; k < f.size(); ++k) {
            const auto lp = decode::teacher_forced_logprobs(init.params, cfg, data.examples[i].source,
                                                            sets[i].candidates[k].candidate.tokens);
            worst = std::max(worst, std::abs(f[k] - std::accumulate(lp.begin(), lp.end(), 0.0)));
        }
    }
    o.detail << "gamma 0 checkpoint bitwise equal to continued MLE: " << (bitwise ? "yes" : "no")
             << "; max |f(alpha 0) - sum log p| " << worst;
    o.require(bitwise, "gamma 0 bitwise");
    o.require(worst == 0.0, "alpha 0 equals raw sum");
}

void calibration_machinery(Outcome& o, const Desk& d) {
    Rng rng(77);
    bool exact = true;
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> c(1 + rng.below(40));
        std::vector<bool> l(c.size());
        for (std::size_t i = 0; i < c.size(); ++i) {
            c[i] = rng.uniform();
            l[i] = rng.bernoulli(0.5);
        }
        const auto r = metrics::ece(c, l, 1);
        exact = exact && r.ece == std::abs(r.accuracy - r.confidence);
    }
    std::vector<double> c;
    std::vector<bool> l;
    for (int q10 : {1, 2, 4, 6, 8, 10}) {
        for (int i = 0; i < 10; ++i) {
            c.push_back(q10 / 10.0);
            l.push_back(i < q10);
        }
    }
    const double calibrated = metrics::ece(c, l, 10).ece;
    o.detail << "single bucket exact: " << (exact ? "yes" : "no") << "; calibrated case ECE " << calibrated;
    o.require(exact, "single-bucket ECE");
    o.require(calibrated <= 1e-12, "calibrated ECE <= 1e-12");
    if (d.error.empty()) {
        const double e_mle = mean_of(d, [](const auto& r) { return r.mle.ece; });
        const double e_brio = mean_of(d, [](const auto& r) { return r.brio.ece; });
        o.detail << "; desk ECE mle " << e_mle << ", brio " << e_brio << " (brio "
                 << (e_brio < e_mle ? "lower" : "not lower") << ", logged only)";
    } else {
        o.require(false, "desk ECE report: " + d.error);
    }
}

// 8 ---------------------------------------------------------------------

void determinism(Outcome& o) {
    testing::TempDir a("acc-a"), b("acc-b");
    for (const auto* dir : {&a, &b}) report::write_text_file(*dir / "run.ini", testing::kSmallConfig);
    const auto fa = testing::run_pipeline(a.path(), a / "run.ini");
    const auto fb = testing::run_pipeline(b.path(), b / "run.ini");
    o.require(fa.empty(), "first run: " + fa);
    o.require(fb.empty(), "second run: " + fb);
    if (!o.pass) return;
    const auto ta = testing::tree_contents(a.path()), tb = testing::tree_contents(b.path());
    std::size_t differing = 0;
    for (const auto& [name, body] : ta) {
        auto it = tb.find(name);
        if (it == tb.end() || it->second != body) {
            ++differing;
            o.detail << " differs: " << name << ";";
        }
    }
    o.detail << ta.size() << " files over " << testing::pipeline_stages().size() << " stages, " << differing
             << " differ";
    o.require(ta.size() == tb.size() && differing == 0, "byte-identical outputs");
}

}  // namespace

int main() {
    std::cout.precision(6);
    std::cout << "running the 3-seed desk experiment...\n" << std::flush;
    const Desk desk = run_desk();

    const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria{
        {"ROUGE oracle equivalence", rouge_oracles},
        {"gradient fidelity", gradient_fidelity},
        {"loss hand-cases", hand_cases},
        {"decoding equivalence", decoding_equivalence},
        {"end-to-end coordination experiment", [&](Outcome& o) { coordination_experiment(o, desk); }},
        {"degeneracy chain", degeneracy_chain},
        {"calibration machinery", [&](Outcome& o) { calibration_machinery(o, desk); }},
        {"determinism", determinism},
        {"loop non-degradation", [&](Outcome& o) { loop_non_degradation(o, desk); }},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            criteria[i].second(o);
        } catch (const std::exception& e) {
            o.require(false, std::string("exception: ") + e.what());
        }
        failed += o.pass ? 0 : 1;
        std::cout << (o.pass ? "PASS" : "FAIL") << " " << i + 1 << " " << criteria[i].first << ": " << o.detail.str()
                  << "\n"
                  << std::flush;
    }
    std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size()
              << " acceptance criteria passed\n";
    return failed == 0 ? 0 : 1;
}
