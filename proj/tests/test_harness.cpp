#include "doctest.h"

#include <cmath>
#include <cstdlib>
#include <numeric>

#include "brio/harness.hpp"
#include "brio/metrics.hpp"
#include "brio/report.hpp"
#include "support.hpp"

using namespace brio;
using namespace brio::harness;

namespace {

RunConfig small_config() {
    RunConfig cfg;
    cfg.data.n_train = 8;
    cfg.data.n_valid = 4;
    cfg.data.n_test = 6;
    cfg.data.task.max_reference_len = 5;
    cfg.model = testing::tiny_config(0, 1);
    cfg.train.mle = {train::ScheduleConfig{5e-3, 1, true}, 2, 4, 0, true};
    cfg.train.brio = cfg.train.mle;
    cfg.train.alpha = 1.0;
    cfg.train.beam.beam_width = 4;
    cfg.train.beam.n_groups = 2;
    cfg.train.beam.n_candidates = 4;
    cfg.train.beam.max_len = 10;
    cfg.eval.beam_width = 2;
    cfg.eval.ece_buckets = 5;
    cfg.eval.novelty_buckets = 2;
    cfg.sweep.gammas = {0.0, 1.0};
    cfg.sweep.widths = {1, 2, 4};
    return cfg;
}

struct Prepared {
    RunConfig cfg = small_config();
    Splits splits = make_synthetic_splits(cfg.data);
    model::ModelConfig mc = cfg.resolved_model(splits.vocab.size());
    model::Checkpoint ck = model::Checkpoint::fresh(mc, 1);
};

}  // namespace

TEST_CASE("equal_count_sizes") {
    CHECK(equal_count_sizes(10, 3) == std::vector<std::size_t>{4, 3, 3});
    CHECK(equal_count_sizes(6, 3) == std::vector<std::size_t>{2, 2, 2});
    CHECK(equal_count_sizes(2, 4) == std::vector<std::size_t>{1, 1, 0, 0});
    for (std::size_t n = 0; n < 30; ++n) {
        for (std::size_t b = 1; b < 7; ++b) {
            const auto s = equal_count_sizes(n, b);
            REQUIRE(s.size() == b);
            CHECK(std::accumulate(s.begin(), s.end(), std::size_t{0}) == n);
            CHECK(*std::max_element(s.begin(), s.end()) - *std::min_element(s.begin(), s.end()) <= 1);
        }
    }
    CHECK_THROWS_AS(equal_count_sizes(3, 0), Error);
}

TEST_CASE("synthetic splits are seeded and disjoint in stream") {
    const auto cfg = small_config();
    const auto a = make_synthetic_splits(cfg.data);
    const auto b = make_synthetic_splits(cfg.data);
    CHECK(a.train.size() == 8);
    CHECK(a.valid.size() == 4);
    CHECK(a.test.size() == 6);
    CHECK(a.train.split == corpus::Split::train);
    CHECK(a.test.split == corpus::Split::test);
    for (std::size_t i = 0; i < a.train.size(); ++i) CHECK(a.train.examples[i].source == b.train.examples[i].source);
    CHECK(a.train.examples[0].source != a.test.examples[0].source);
    auto other = cfg.data;
    other.seed = 2;
    CHECK(make_synthetic_splits(other).train.examples[0].source != a.train.examples[0].source);
}

TEST_CASE("rouge aggregate matches a manual computation") {
    Prepared p;
    const auto outputs = decode_split(p.ck, p.splits.test, p.cfg.eval_beam(p.mc));
    REQUIRE(outputs.size() == p.splits.test.size());
    double r1 = 0, r2 = 0, rl = 0;
    for (std::size_t i = 0; i < outputs.size(); ++i) {
        const auto& ref = p.splits.test.examples[i].reference;
        r1 += metrics::rouge_n(outputs[i].tokens, ref, 1).f1;
        r2 += metrics::rouge_n(outputs[i].tokens, ref, 2).f1;
        rl += metrics::rouge_l(outputs[i].tokens, ref).f1;
    }
    const double n = static_cast<double>(outputs.size());
    const auto agg = rouge_aggregate(outputs, p.splits.test);
    CHECK(agg.n == outputs.size());
    CHECK(std::abs(agg.r1 - 100.0 * r1 / n) <= 1e-9);
    CHECK(std::abs(agg.r2 - 100.0 * r2 / n) <= 1e-9);
    CHECK(std::abs(agg.rl - 100.0 * rl / n) <= 1e-9);

    std::vector<TokenSequence> refs;
    for (const auto& ex : p.splits.test.examples) refs.push_back(ex.reference);
    const auto perfect = rouge_aggregate(refs, p.splits.test);
    CHECK(perfect.r1 == 100.0);
    CHECK(perfect.rl == 100.0);
    refs.pop_back();
    CHECK_THROWS_AS(rouge_aggregate(refs, p.splits.test), Error);
}

TEST_CASE("coordination on a constant-quality pool is zero") {
    Prepared p;
    auto sets = train::build_candidate_sets(p.ck.params, p.mc, p.splits.test, p.cfg.train);
    for (auto& s : sets) {
        for (auto& c : s.candidates) {
            c.quality = 0.5;
            c.tie_group = 0;
        }
    }
    const auto st = coordination_stats(p.ck, p.splits.test, sets, 1.0);
    CHECK(st.spearman == 0.0);
    CHECK(st.n_pairs == 0);
    CHECK(st.n_examples == sets.size());
}

TEST_CASE("coordination stats agree with direct rescoring") {
    Prepared p;
    const auto sets = train::build_candidate_sets(p.ck.params, p.mc, p.splits.test, p.cfg.train);
    const auto st = coordination_stats(p.ck, p.splits.test, sets, 1.0, 2);
    std::vector<std::pair<std::vector<double>, std::vector<double>>> per;
    std::vector<std::pair<double, double>> pairs;
    for (std::size_t i = 0; i < sets.size(); ++i) {
        const auto f = train::score_candidates(p.ck.params, p.mc, p.splits.test.examples[i].source, sets[i], 1.0);
        std::vector<double> q;
        for (const auto& c : sets[i].candidates) q.push_back(c.quality);
        if (q.size() >= 2 && q.front() != q.back()) pairs.emplace_back(f.front(), f.back());
        per.emplace_back(f, q);
    }
    CHECK(std::abs(st.spearman - metrics::spearman_avg(per).mean) <= 1e-12);
    CHECK(st.ranking_accuracy == metrics::ranking_accuracy(pairs));
    CHECK(st.n_pairs == pairs.size());
    CHECK(st.spearman >= -1.0);
    CHECK(st.spearman <= 1.0);
}

TEST_CASE("alpha selection keeps the first best grid point") {
    Prepared p;
    const auto sets = train::build_candidate_sets(p.ck.params, p.mc, p.splits.valid, p.cfg.train);
    CHECK(select_alpha(p.ck, p.splits.valid, sets, {}, 1.5) == 1.5);
    const std::vector<double> grid{0.0, 1.0, 2.0};
    const double a = select_alpha(p.ck, p.splits.valid, sets, grid, 1.0);
    double best = -2.0, pick = -1.0;
    for (double g : grid) {
        const double s = coordination_stats(p.ck, p.splits.valid, sets, g).spearman;
        if (s > best) {
            best = s;
            pick = g;
        }
    }
    CHECK(a == pick);
    CHECK(select_alpha(p.ck, p.splits.valid, sets, {1.0, 1.0}, 0.0) == 1.0);
}

TEST_CASE("report rows, json round-trip and determinism") {
    Prepared p;
    const std::vector<NamedCheckpoint> models{{"a", p.ck}, {"b", model::Checkpoint::fresh(p.mc, 2)}};
    const auto rows = run_beam_sweep(models, p.splits.test, p.cfg.sweep.widths, p.cfg);
    CHECK(rows.size() == models.size() * p.cfg.sweep.widths.size());
    for (const auto& r : rows) CHECK(r.rouge.n == p.splits.test.size());
    const auto rep = beam_sweep_report(rows, render_config(p.cfg));
    const auto json = report::to_json(rep);
    const auto back = report::from_json(json);
    CHECK(report::to_json(back) == json);
    CHECK(back.kind == rep.kind);
    CHECK(back.find(rep.tables.front().name).rows.size() == rows.size());
    CHECK(report::to_json(beam_sweep_report(run_beam_sweep(models, p.splits.test, p.cfg.sweep.widths, p.cfg),
                                            render_config(p.cfg))) == json);
    CHECK_THROWS_AS(report::from_json("{"), Error);
    CHECK_THROWS_AS(rep.find("nope"), Error);

    auto bad = p.cfg.sweep.widths;
    std::reverse(bad.begin(), bad.end());
    CHECK_THROWS_AS(run_beam_sweep(models, p.splits.test, bad, p.cfg), Error);
}

TEST_CASE("reports render non-finite values as null and check row width") {
    report::Report r;
    r.kind = "k";
    auto& t = r.table("t", {"x", "y"});
    t.add_row({std::string("a"), std::nan("")});
    CHECK_THROWS_AS(t.add_row({1.0}), Error);
    CHECK(report::to_json(r).find("null") != std::string::npos);
    CHECK(report::to_text(r).find("## t") != std::string::npos);
    testing::TempDir dir("report");
    report::write(dir.path(), "r", r);
    CHECK(std::filesystem::exists(dir / "r.json"));
    CHECK(report::read_text_file(dir / "r.txt") == report::to_text(r));
}

TEST_CASE("coefficient sweep needs a zero coefficient and trains one model per entry") {
    Prepared p;
    // An untrained model's candidates all score zero; the reference gives each set a strict pair.
    auto with_ref = p.cfg.train;
    with_ref.include_reference = true;
    const auto train_sets = train::build_candidate_sets(p.ck.params, p.mc, p.splits.train, with_ref);
    const auto test_sets = train::build_candidate_sets(p.ck.params, p.mc, p.splits.test, p.cfg.train);
    const auto points = run_coefficient_sweep(p.ck, p.splits.train, train_sets, p.splits.test, test_sets, p.cfg);
    REQUIRE(points.size() == 2);
    CHECK(points[0].gamma == 0.0);
    CHECK(points[0].checkpoint == train::train_mle(p.ck, p.splits.train, nullptr, [&] {
              auto tc = p.cfg.train;
              tc.mle = tc.brio;
              return tc;
          }()).checkpoint);
    CHECK_FALSE(points[1].checkpoint == points[0].checkpoint);
    CHECK(coefficient_sweep_report(points, "").tables.front().rows.size() == 2);
    auto cfg = p.cfg;
    cfg.sweep.gammas = {1.0};
    CHECK_THROWS_AS(run_coefficient_sweep(p.ck, p.splits.train, train_sets, p.splits.test, test_sets, cfg), Error);
}

TEST_CASE("coordination report covers every scorer and pool") {
    Prepared p;
    const auto pool = train::build_candidate_sets(p.ck.params, p.mc, p.splits.test, p.cfg.train);
    const std::vector<NamedCheckpoint> scorers{{"a", p.ck}, {"b", model::Checkpoint::fresh(p.mc, 3)}};
    const auto rows = run_coordination_report(scorers, {{"a", pool}, {"a2", pool}}, p.splits.test, p.cfg);
    CHECK(rows.size() == 4);
    CHECK(rows[0].stats.spearman == rows[1].stats.spearman);
    CHECK(rows[0].alpha == p.cfg.train.alpha);
    CHECK(coordination_report(rows, "").tables.front().rows.size() == 4);
}

TEST_CASE("calibration buckets partition the generated tokens") {
    Prepared p;
    const auto res = run_calibration_report({"m", p.ck}, p.splits.test, p.cfg);
    const auto outputs = decode_split(p.ck, p.splits.test, p.cfg.eval_beam(p.mc));
    std::size_t tokens = 0;
    for (const auto& o : outputs) tokens += strip_sentinels(o.tokens).size();
    CHECK(res.ece.n == tokens);
    REQUIRE(res.ece.buckets.size() == p.cfg.eval.ece_buckets);
    std::size_t total = 0;
    double weighted = 0.0;
    for (const auto& b : res.ece.buckets) {
        total += b.count;
        if (b.count > 0) {
            CHECK(b.confidence > b.lower - 1e-12);
            CHECK(b.confidence <= b.upper + 1e-12);
            weighted += static_cast<double>(b.count) * std::abs(b.accuracy - b.confidence);
        }
    }
    CHECK(total == tokens);
    CHECK(std::abs(res.ece.ece - weighted / static_cast<double>(tokens)) <= 1e-12);
    const auto csv = reliability_csv(res.ece);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(p.cfg.eval.ece_buckets + 1));
    const auto rep = calibration_report({res}, "");
    CHECK(rep.tables.size() == 2);
}

TEST_CASE("novelty buckets hold equal counts of references") {
    Prepared p;
    const auto r = run_novelty_report({{"m", p.ck}}, p.splits.test, p.cfg);
    REQUIRE(r.rows.size() == 2);
    CHECK(r.rows[0].system == "reference");
    REQUIRE(r.buckets.size() == p.cfg.eval.novelty_buckets);
    std::size_t used = 0;
    for (std::size_t b = 0; b < r.buckets.size(); ++b) {
        used += r.buckets[b].count;
        CHECK(r.buckets[b].rouge.size() == 1);
        CHECK(r.buckets[b].lower <= r.buckets[b].upper);
        if (b > 0) CHECK(r.buckets[b - 1].upper <= r.buckets[b].lower);
    }
    CHECK(used + r.n_skipped == p.splits.test.size());
    const auto sizes = equal_count_sizes(used, r.buckets.size());
    for (std::size_t b = 0; b < r.buckets.size(); ++b) CHECK(r.buckets[b].count == sizes[b]);
    for (const auto& row : r.rows) {
        CHECK(row.novel_1 >= 0.0);
        CHECK(row.novel_2 <= 1.0);
    }
    CHECK(novelty_report(r, "").tables.size() >= 2);
}

TEST_CASE("config text parsing") {
    RunConfig cfg;
    apply_config_text(cfg, "[train]\nalpha = 1.5\ngamma = inf\n[sweep]\nwidths = 1, 3\n# comment\n");
    CHECK(cfg.train.alpha == 1.5);
    CHECK(cfg.train.contrastive_only());
    CHECK(cfg.sweep.widths == std::vector<std::size_t>{1, 3});
    CHECK_THROWS_WITH_AS(apply_config_text(cfg, "[train]\nbogus = 1\n", "f.ini"), doctest::Contains("f.ini:2"), Error);
    CHECK_THROWS_AS(apply_config_text(cfg, "[nosection]\n"), Error);
    CHECK_THROWS_AS(apply_config_text(cfg, "[train]\nalpha = 1\nalpha = 2\n"), Error);
    CHECK_THROWS_AS(apply_config_text(cfg, "[train]\nalpha = x\n"), Error);
    set_config_value(cfg, "train.seed", "9");
    CHECK(cfg.train.seed == 9);
    CHECK_THROWS_AS(set_config_value(cfg, "train", "9"), Error);

    RunConfig rendered;
    apply_config_text(rendered, render_config(cfg));
    CHECK(render_config(rendered) == render_config(cfg));
    CHECK(config_keys().size() > 30);
}

TEST_CASE("config validation") {
    auto cfg = small_config();
    CHECK_NOTHROW(cfg.validate());
    cfg.sweep.widths = {2, 2};
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = small_config();
    CHECK(cfg.resolved_model(30).vocab_size == 30);
    cfg.model.vocab_size = 20;
    CHECK_THROWS_AS(cfg.resolved_model(30), Error);
    const auto b = small_config().eval_beam(testing::tiny_config(20, 1));
    CHECK(b.beam_width == 2);
    CHECK(b.n_groups == 1);
    CHECK(b.diversity_strength == 0.0);
}
