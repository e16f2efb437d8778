#include "brio/harness.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "brio/parallel.hpp"

namespace brio::harness {

Splits make_synthetic_splits(const DataConfig& cfg) {
    Splits s;
    s.vocab = corpus::synthetic_vocab(cfg.task);
    const std::uint64_t base = cfg.seed * 100;
    s.train = corpus::generate_synthetic_dataset(base + 1, cfg.n_train, cfg.task, s.vocab, corpus::Split::train);
    s.valid = corpus::generate_synthetic_dataset(base + 3, cfg.n_valid, cfg.task, s.vocab, corpus::Split::valid);
    s.test = corpus::generate_synthetic_dataset(base + 2, cfg.n_test, cfg.task, s.vocab, corpus::Split::test);
    return s;
}

std::vector<decode::Candidate> decode_split(const model::Checkpoint& ck, const corpus::Dataset& data,
                                            const decode::BeamConfig& beam, std::size_t threads) {
    std::vector<decode::Candidate> out(data.size());
    parallel_for(data.size(), threads, [&](std::size_t i) {
        decode::TransformerStepModel sm(ck.params, ck.config, data.examples[i].source);
        out[i] = decode::beam_search(sm, beam).best();
    });
    return out;
}

RougeAggregate rouge_aggregate(const std::vector<TokenSequence>& outputs, const corpus::Dataset& data) {
    if (outputs.size() != data.size()) throw Error("rouge: outputs and dataset differ in size");
    RougeAggregate a;
    a.n = data.size();
    if (a.n == 0) return a;
    for (std::size_t i = 0; i < outputs.size(); ++i) {
        const auto r = metrics::rouge_all(outputs[i], data.examples[i].reference);
        a.r1 += r.r1.f1;
        a.r2 += r.r2.f1;
        a.rl += r.rl.f1;
    }
    const double scale = 100.0 / static_cast<double>(a.n);
    a.r1 *= scale;
    a.r2 *= scale;
    a.rl *= scale;
    return a;
}

RougeAggregate rouge_aggregate(const std::vector<decode::Candidate>& outputs, const corpus::Dataset& data) {
    std::vector<TokenSequence> tokens;
    tokens.reserve(outputs.size());
    for (const auto& c : outputs) tokens.push_back(c.tokens);
    return rouge_aggregate(tokens, data);
}

CoordinationStats coordination_stats(const model::Checkpoint& scorer, const corpus::Dataset& data,
                                     const std::vector<CandidateSet>& sets, double alpha, std::size_t threads) {
    if (sets.size() != data.size()) throw Error("coordination: candidate sets and dataset differ in size");
    std::vector<std::vector<double>> scores(sets.size());
    parallel_for(sets.size(), threads, [&](std::size_t i) {
        scores[i] = train::score_candidates(scorer.params, scorer.config, data.examples[i].source, sets[i], alpha);
    });
    std::vector<std::pair<std::vector<double>, std::vector<double>>> per_example;
    std::vector<std::pair<double, double>> pairs;
    for (std::size_t i = 0; i < sets.size(); ++i) {
        std::vector<double> q;
        for (const auto& c : sets[i].candidates) q.push_back(c.quality);
        if (q.size() >= 2 && q.front() != q.back()) pairs.emplace_back(scores[i].front(), scores[i].back());
        per_example.emplace_back(std::move(scores[i]), std::move(q));
    }
    const auto sp = metrics::spearman_avg(per_example);
    CoordinationStats s;
    s.spearman = sp.mean;
    s.n_examples = sp.per_example.size();
    s.n_constant = sp.n_constant;
    s.n_pairs = pairs.size();
    s.ranking_accuracy = pairs.empty() ? 0.0 : metrics::ranking_accuracy(pairs);
    return s;
}

double select_alpha(const model::Checkpoint& scorer, const corpus::Dataset& valid,
                    const std::vector<CandidateSet>& valid_sets, const std::vector<double>& grid, double fallback,
                    std::size_t threads) {
    if (grid.empty()) return fallback;
    double best_alpha = grid.front();
    double best = -std::numeric_limits<double>::infinity();
    for (double a : grid) {
        const double s = coordination_stats(scorer, valid, valid_sets, a, threads).spearman;
        if (s > best) {
            best = s;
            best_alpha = a;
        }
    }
    return best_alpha;
}

namespace {

std::string fmt_gamma(double g) {
    if (std::isinf(g)) return "inf";
    std::ostringstream s;
    s << g;
    return s.str();
}

}  // namespace

// ---------------------------------------------------------------------------

std::vector<SweepPoint> run_coefficient_sweep(const model::Checkpoint& mle, const corpus::Dataset& train,
                                              const std::vector<CandidateSet>& train_sets,
                                              const corpus::Dataset& test, const std::vector<CandidateSet>& test_sets,
                                              const RunConfig& cfg) {
    const auto& gammas = cfg.sweep.gammas;
    if (gammas.empty()) throw Error("coefficient sweep: empty gamma list");
    if (std::find(gammas.begin(), gammas.end(), 0.0) == gammas.end()) {
        throw Error("coefficient sweep: the gamma list must include 0");
    }
    const auto beam = cfg.eval_beam(mle.config);
    std::vector<SweepPoint> points;
    for (double g : gammas) {
        train::TrainConfig tc = cfg.train;
        tc.gamma = g;
        SweepPoint p;
        p.gamma = g;
        p.checkpoint = train::train_brio(mle, train, train_sets, nullptr, tc).checkpoint;
        p.rouge = rouge_aggregate(decode_split(p.checkpoint, test, beam, tc.threads), test);
        p.coordination = coordination_stats(p.checkpoint, test, test_sets, tc.alpha, tc.threads);
        points.push_back(std::move(p));
    }
    return points;
}

report::Report coefficient_sweep_report(const std::vector<SweepPoint>& points, const std::string& config_text) {
    report::Report r{"coefficient-sweep", config_text, {}, {}};
    auto& t = r.table("gamma", {"gamma", "rouge1", "rouge2", "rougeL", "spearman", "ranking_accuracy"});
    for (const auto& p : points) {
        t.add_row({fmt_gamma(p.gamma), p.rouge.r1, p.rouge.r2, p.rouge.rl, p.coordination.spearman,
                   p.coordination.ranking_accuracy});
    }
    return r;
}

// ---------------------------------------------------------------------------

std::vector<BeamSweepRow> run_beam_sweep(const std::vector<NamedCheckpoint>& models, const corpus::Dataset& data,
                                         const std::vector<std::size_t>& widths, const RunConfig& cfg) {
    if (widths.empty()) throw Error("beam sweep: empty width list");
    for (std::size_t i = 0; i < widths.size(); ++i) {
        if (widths[i] == 0 || (i > 0 && widths[i] <= widths[i - 1])) {
            throw Error("beam sweep: widths must be positive and strictly ascending");
        }
    }
    std::vector<BeamSweepRow> rows;
    for (const auto& m : models) {
        std::vector<double> previous;
        for (std::size_t w : widths) {
            auto beam = cfg.eval_beam(m.checkpoint.config);
            beam.beam_width = w;
            beam.n_candidates = w;
            std::vector<decode::Candidate> best(data.size());
            std::vector<double> best_logprob(data.size());
            parallel_for(data.size(), cfg.train.threads, [&](std::size_t i) {
                decode::TransformerStepModel sm(m.checkpoint.params, m.checkpoint.config, data.examples[i].source);
                auto res = decode::beam_search(sm, beam);
                best_logprob[i] = res.best_sum_logprob;
                best[i] = res.best();
            });
            BeamSweepRow row{m.name, w, rouge_aggregate(best, data), 0};
            for (std::size_t i = 0; i < previous.size(); ++i) {
                if (best_logprob[i] < previous[i]) ++row.monotone_violations;
            }
            previous = std::move(best_logprob);
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

report::Report beam_sweep_report(const std::vector<BeamSweepRow>& rows, const std::string& config_text) {
    report::Report r{"beam-sweep", config_text, {}, {}};
    auto& t = r.table("width", {"model", "width", "rouge1", "rouge2", "rougeL", "monotone_violations"});
    std::size_t violations = 0;
    for (const auto& row : rows) {
        t.add_row({row.model, static_cast<std::int64_t>(row.width), row.rouge.r1, row.rouge.r2, row.rouge.rl,
                   static_cast<std::int64_t>(row.monotone_violations)});
        violations += row.monotone_violations;
    }
    if (violations > 0) {
        r.notes.push_back(std::to_string(violations) +
                          " example/width pairs found a lower best log-probability than the next narrower beam");
    }
    return r;
}

// ---------------------------------------------------------------------------

std::vector<CoordinationRow> run_coordination_report(const std::vector<NamedCheckpoint>& scorers,
                                                     const std::vector<CandidatePool>& pools,
                                                     const corpus::Dataset& data, const RunConfig& cfg,
                                                     const corpus::Dataset* valid,
                                                     const std::vector<CandidateSet>* valid_sets) {
    std::vector<CoordinationRow> rows;
    for (const auto& s : scorers) {
        double alpha = cfg.train.alpha;
        if (!cfg.eval.alpha_grid.empty() && valid != nullptr && valid_sets != nullptr) {
            alpha = select_alpha(s.checkpoint, *valid, *valid_sets, cfg.eval.alpha_grid, alpha, cfg.train.threads);
        }
        for (const auto& p : pools) {
            rows.push_back({s.name, p.name, alpha, coordination_stats(s.checkpoint, data, p.sets, alpha, cfg.train.threads)});
        }
    }
    return rows;
}

report::Report coordination_report(const std::vector<CoordinationRow>& rows, const std::string& config_text) {
    report::Report r{"coordination", config_text, {}, {}};
    auto& t = r.table("coordination", {"scorer", "candidates", "alpha", "spearman", "ranking_accuracy", "examples",
                                       "constant", "pairs"});
    for (const auto& row : rows) {
        t.add_row({row.scorer, row.pool, row.alpha, row.stats.spearman, row.stats.ranking_accuracy,
                   static_cast<std::int64_t>(row.stats.n_examples), static_cast<std::int64_t>(row.stats.n_constant),
                   static_cast<std::int64_t>(row.stats.n_pairs)});
    }
    return r;
}

// ---------------------------------------------------------------------------

CalibrationResult run_calibration_report(const NamedCheckpoint& model, const corpus::Dataset& data,
                                         const RunConfig& cfg) {
    const auto outputs = decode_split(model.checkpoint, data, cfg.eval_beam(model.checkpoint.config), cfg.train.threads);
    std::vector<double> conf;
    std::vector<bool> labels;
    for (std::size_t i = 0; i < outputs.size(); ++i) {
        const auto& c = outputs[i];
        const auto content = strip_sentinels(c.tokens);
        const auto l = metrics::align_token_labels(content, strip_sentinels(data.examples[i].reference));
        for (std::size_t k = 0; k < content.size(); ++k) {
            conf.push_back(std::exp(c.token_logprobs[k]));
            labels.push_back(l[k]);
        }
    }
    return {model.name, metrics::ece(conf, labels, cfg.eval.ece_buckets)};
}

report::Report calibration_report(const std::vector<CalibrationResult>& results, const std::string& config_text) {
    report::Report r{"calibration", config_text, {}, {}};
    auto& summary = r.table("summary", {"model", "ece", "accuracy", "confidence", "tokens"});
    for (const auto& res : results) {
        summary.add_row({res.model, res.ece.ece, res.ece.accuracy, res.ece.confidence,
                         static_cast<std::int64_t>(res.ece.n)});
    }
    for (const auto& res : results) {
        auto& t = r.table("reliability " + res.model, {"lower", "upper", "count", "accuracy", "confidence"});
        for (const auto& b : res.ece.buckets) {
            t.add_row({b.lower, b.upper, static_cast<std::int64_t>(b.count), b.accuracy, b.confidence});
        }
    }
    return r;
}

std::string reliability_csv(const metrics::EceResult& r) {
    std::ostringstream out;
    out.precision(17);
    out << "lower,upper,count,accuracy,confidence\n";
    for (const auto& b : r.buckets) {
        out << b.lower << ',' << b.upper << ',' << b.count << ',' << b.accuracy << ',' << b.confidence << '\n';
    }
    return out.str();
}

// ---------------------------------------------------------------------------

std::vector<std::size_t> equal_count_sizes(std::size_t n, std::size_t n_buckets) {
    if (n_buckets == 0) throw Error("bucket count must be >= 1");
    std::vector<std::size_t> sizes(n_buckets, n / n_buckets);
    for (std::size_t b = 0; b < n % n_buckets; ++b) ++sizes[b];
    return sizes;
}

namespace {

/// Mean novelty over items whose n-gram set is non-empty.
std::pair<double, std::size_t> mean_novelty(const corpus::Dataset& data, const std::vector<TokenSequence>& outputs,
                                            std::size_t n) {
    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t i = 0; i < outputs.size(); ++i) {
        if (strip_sentinels(outputs[i]).size() < n) continue;
        sum += metrics::novelty(data.examples[i].source, outputs[i], n);
        ++used;
    }
    return {used ? sum / static_cast<double>(used) : 0.0, used};
}

}  // namespace

NoveltyResult run_novelty_report(const std::vector<NamedCheckpoint>& models, const corpus::Dataset& data,
                                 const RunConfig& cfg) {
    NoveltyResult r;
    std::vector<TokenSequence> refs;
    for (const auto& ex : data.examples) refs.push_back(ex.reference);
    std::vector<std::vector<TokenSequence>> outputs;
    for (const auto& m : models) {
        r.models.push_back(m.name);
        std::vector<TokenSequence> toks;
        for (auto& c : decode_split(m.checkpoint, data, cfg.eval_beam(m.checkpoint.config), cfg.train.threads)) {
            toks.push_back(std::move(c.tokens));
        }
        outputs.push_back(std::move(toks));
    }
    auto row = [&](const std::string& name, const std::vector<TokenSequence>& out) {
        NoveltyRow nr{name, 0.0, 0.0, 0, 0};
        std::tie(nr.novel_1, nr.n_used_1) = mean_novelty(data, out, 1);
        std::tie(nr.novel_2, nr.n_used_2) = mean_novelty(data, out, 2);
        r.rows.push_back(nr);
    };
    row("reference", refs);
    for (std::size_t m = 0; m < models.size(); ++m) row(models[m].name, outputs[m]);

    std::vector<std::pair<double, std::size_t>> keyed;
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (strip_sentinels(refs[i]).size() < 2) {
            ++r.n_skipped;
            continue;
        }
        keyed.emplace_back(metrics::novelty(data.examples[i].source, refs[i], 2), i);
    }
    std::stable_sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::size_t start = 0;
    for (std::size_t size : equal_count_sizes(keyed.size(), cfg.eval.novelty_buckets)) {
        NoveltyBucket b;
        b.count = size;
        if (size > 0) {
            b.lower = keyed[start].first;
            b.upper = keyed[start + size - 1].first;
        }
        corpus::Dataset subset{data.split, {}};
        for (std::size_t k = start; k < start + size; ++k) subset.examples.push_back(data.examples[keyed[k].second]);
        for (const auto& out : outputs) {
            std::vector<TokenSequence> sub;
            for (std::size_t k = start; k < start + size; ++k) sub.push_back(out[keyed[k].second]);
            b.rouge.push_back(rouge_aggregate(sub, subset));
        }
        r.buckets.push_back(std::move(b));
        start += size;
    }
    return r;
}

report::Report novelty_report(const NoveltyResult& r, const std::string& config_text) {
    report::Report rep{"novelty", config_text, {}, {}};
    auto& t = rep.table("novel n-grams", {"system", "novel_1", "novel_2", "used_1", "used_2"});
    for (const auto& row : r.rows) {
        t.add_row({row.system, row.novel_1, row.novel_2, static_cast<std::int64_t>(row.n_used_1),
                   static_cast<std::int64_t>(row.n_used_2)});
    }
    std::vector<std::string> cols{"bucket", "lower", "upper", "count"};
    for (const auto& m : r.models) {
        cols.push_back(m + ".rouge1");
        cols.push_back(m + ".rouge2");
    }
    auto& b = rep.table("by reference novelty", cols);
    for (std::size_t i = 0; i < r.buckets.size(); ++i) {
        const auto& bk = r.buckets[i];
        std::vector<report::Cell> row{static_cast<std::int64_t>(i), bk.lower, bk.upper,
                                      static_cast<std::int64_t>(bk.count)};
        for (const auto& a : bk.rouge) {
            row.push_back(a.r1);
            row.push_back(a.r2);
        }
        b.add_row(std::move(row));
    }
    if (r.n_skipped > 0) {
        rep.notes.push_back(std::to_string(r.n_skipped) + " references without bigrams left out of the buckets");
    }
    return rep;
}

// ---------------------------------------------------------------------------

namespace {

ModelEval evaluate_model(const model::Checkpoint& ck, const corpus::Dataset& test,
                         const std::vector<CandidateSet>& test_sets, const RunConfig& cfg) {
    ModelEval e;
    e.rouge = rouge_aggregate(decode_split(ck, test, cfg.eval_beam(ck.config), cfg.train.threads), test);
    e.coordination = coordination_stats(ck, test, test_sets, cfg.train.alpha, cfg.train.threads);
    e.ece = run_calibration_report({"", ck}, test, cfg).ece.ece;
    return e;
}

}  // namespace

DeskResult run_desk_experiment(const RunConfig& cfg, bool with_loop) {
    cfg.validate();
    const auto splits = make_synthetic_splits(cfg.data);
    const auto mc = cfg.resolved_model(splits.vocab.size());
    const auto& tc = cfg.train;

    DeskResult r;
    r.seed = tc.seed;
    const auto mle = train::train_mle(model::Checkpoint::fresh(mc, tc.seed), splits.train, nullptr, tc).checkpoint;
    const auto test_sets = train::build_candidate_sets(mle.params, mc, splits.test, tc);
    const auto train_sets = train::build_candidate_sets(mle.params, mc, splits.train, tc);
    r.mle = evaluate_model(mle, splits.test, test_sets, cfg);

    const auto brio = train::train_brio(mle, splits.train, train_sets, nullptr, tc).checkpoint;
    r.brio = evaluate_model(brio, splits.test, test_sets, cfg);

    if (with_loop) {
        const auto round2_sets = train::build_candidate_sets(brio.params, mc, splits.train, tc);
        const auto round2 = train::train_brio(brio, splits.train, round2_sets, nullptr, tc).checkpoint;
        r.loop = evaluate_model(round2, splits.test, test_sets, cfg);
    }
    return r;
}

report::Report desk_report(const std::vector<DeskResult>& results, const std::string& config_text) {
    report::Report rep{"desk-experiment", config_text, {}, {}};
    auto& t = rep.table("per seed", {"seed", "model", "rouge1", "rouge2", "rougeL", "spearman", "ranking_accuracy",
                                     "ece"});
    auto add = [&](std::uint64_t seed, const std::string& name, const ModelEval& e) {
        t.add_row({static_cast<std::int64_t>(seed), name, e.rouge.r1, e.rouge.r2, e.rouge.rl, e.coordination.spearman,
                   e.coordination.ranking_accuracy, e.ece});
    };
    for (const auto& r : results) {
        add(r.seed, "mle", r.mle);
        add(r.seed, "brio", r.brio);
        if (r.loop) add(r.seed, "brio-loop", *r.loop);
    }
    return rep;
}

}  // namespace brio::harness
