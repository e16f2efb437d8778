#include "doctest.h"

#include <cmath>
#include <numeric>

#include "brio/decode.hpp"
#include "brio/grad_check.hpp"
#include "brio/model.hpp"
#include "brio/train.hpp"
#include "support.hpp"

using namespace brio;
using namespace brio::model;

namespace {

Var xent_of(Tape& tape, const ModelConfig& cfg, const Parameters& p, const TokenSequence& src,
            const TokenSequence& tgt, double beta) {
    BoundModel m(tape, cfg, p);
    Var ld = forward_teacher_forced(m, src, tgt);
    return xent_label_smoothed(ld, std::span<const TokenId>(tgt.data() + 1, tgt.size() - 1), beta);
}

}  // namespace

TEST_CASE("smoothed_target hand case") {
    const auto p = smoothed_target(5, 2, 0.1);
    const std::vector<double> expected{0.025, 0.025, 0.9, 0.025, 0.025};
    REQUIRE(p.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(p[i] - expected[i]) <= 1e-9);
    CHECK(std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0) <= 1e-12);
    CHECK_THROWS_AS(smoothed_target(5, 5, 0.1), Error);
    CHECK_THROWS_AS(smoothed_target(5, 1, 1.0), Error);
}

TEST_CASE("xent of a uniform model over three tokens is 3 ln 4") {
    Tape tape(false);
    Var ld = tape.constant(Tensor::filled({3, 4}, std::log(0.25)));
    const std::vector<TokenId> targets{1, 3, 2};
    CHECK(std::abs(xent_label_smoothed(ld, targets, 0.0).value().item() - 3.0 * std::log(4.0)) <= 1e-9);
    // Smoothing cannot change the loss of a uniform prediction.
    CHECK(std::abs(xent_label_smoothed(ld, targets, 0.3).value().item() - 3.0 * std::log(4.0)) <= 1e-9);
    // Masked rows drop out.
    CHECK(std::abs(xent_label_smoothed(ld, targets, 0.0, {true, false, true}).value().item() - 2.0 * std::log(4.0)) <=
          1e-9);
}

TEST_CASE("model config validation") {
    auto c = testing::tiny_config();
    CHECK_NOTHROW(c.validate());
    c.embed_dim = 9;
    CHECK_THROWS_AS(c.validate(), Error);
    c = testing::tiny_config();
    c.n_enc_layers = 0;
    CHECK_THROWS_AS(c.validate(), Error);
    c = testing::tiny_config();
    c.vocab_size = 4;
    CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("parameter initialisation is seeded and finite") {
    const auto cfg = testing::tiny_config();
    const auto a = Parameters::init(cfg, 3);
    const auto b = Parameters::init(cfg, 3);
    const auto c = Parameters::init(cfg, 4);
    CHECK(a == b);
    CHECK_FALSE(a == c);
    CHECK(a.all_finite());
    const auto specs = parameter_specs(cfg);
    REQUIRE(specs.size() == a.size());
    for (std::size_t i = 0; i < specs.size(); ++i) {
        CHECK(a.tensors[i].name == specs[i].first);
        CHECK(a.tensors[i].value.shape() == specs[i].second);
    }
    auto names = a.names();
    std::sort(names.begin(), names.end());
    CHECK(std::adjacent_find(names.begin(), names.end()) == names.end());
}

TEST_CASE("teacher-forced rows are log-distributions and deterministic") {
    const auto cfg = testing::tiny_config();
    const auto p = Parameters::init(cfg, 1);
    const TokenSequence src{kBos, 5, 6, 7, kEos}, tgt{kBos, 8, 9, kEos};
    Tape t1(false), t2(false);
    const Tensor a = forward_teacher_forced(BoundModel(t1, cfg, p), src, tgt).value();
    const Tensor b = forward_teacher_forced(BoundModel(t2, cfg, p), src, tgt).value();
    CHECK(a == b);
    REQUIRE(a.shape() == Shape{3, cfg.vocab_size});
    for (std::size_t r = 0; r < 3; ++r) {
        double z = 0.0;
        for (std::size_t c = 0; c < cfg.vocab_size; ++c) z += std::exp(a.at(r, c));
        CHECK(std::abs(z - 1.0) <= 1e-12);
    }
}

TEST_CASE("incremental decoding matches the full decoder") {
    const auto cfg = testing::tiny_config();
    const auto p = Parameters::init(cfg, 2);
    const TokenSequence src{kBos, 4, 9, 5, 11, kEos}, tgt{kBos, 7, 7, 10, 6, kEos};
    Tape tape(false);
    const Tensor full = forward_teacher_forced(BoundModel(tape, cfg, p), src, tgt).value();
    IncrementalDecoder dec(p, cfg, src);
    auto state = dec.start();
    for (std::size_t j = 0; j + 1 < tgt.size(); ++j) {
        for (std::size_t c = 0; c < cfg.vocab_size; ++c) CHECK(std::abs(state.log_probs[c] - full.at(j, c)) <= 1e-12);
        const auto ntd = next_token_distribution(p, cfg, src, TokenSequence(tgt.begin(), tgt.begin() + j + 1));
        for (std::size_t c = 0; c < cfg.vocab_size; ++c) CHECK(std::abs(ntd[c] - full.at(j, c)) <= 1e-12);
        state = dec.extend(state, tgt[j + 1]);
    }
}

TEST_CASE("future target tokens do not affect earlier rows") {
    const auto cfg = testing::tiny_config();
    const auto p = Parameters::init(cfg, 5);
    const TokenSequence src{kBos, 4, 5, kEos};
    Tape tape(false);
    const Tensor a = forward_teacher_forced(BoundModel(tape, cfg, p), src, {kBos, 6, 7, 8, kEos}).value();
    const Tensor b = forward_teacher_forced(BoundModel(tape, cfg, p), src, {kBos, 6, 7, 11, kEos}).value();
    for (std::size_t r = 0; r < 3; ++r) {
        for (std::size_t c = 0; c < cfg.vocab_size; ++c) CHECK(a.at(r, c) == b.at(r, c));
    }
}

TEST_CASE("label-smoothed xent passes grad_check on a 2-layer model") {
    const auto cfg = testing::tiny_config(12, 2);
    const auto p = Parameters::init(cfg, 7);
    const TokenSequence src{kBos, 4, 9, 5, kEos}, tgt{kBos, 7, 10, 6, kEos};
    const auto rep = testing::model_grad_check(
        p, cfg,
        [&](const BoundModel& m) {
            Var ld = forward_teacher_forced(m, src, tgt);
            return xent_label_smoothed(ld, std::span<const TokenId>(tgt.data() + 1, tgt.size() - 1), 0.1);
        },
        {1e-5, 1e-4, 6});
    CHECK(rep.pass);
    CHECK(rep.max_rel_error <= 1e-4);
}

TEST_CASE("bound leaves must match the config") {
    const auto cfg = testing::tiny_config(12, 1);
    Tape tape;
    std::vector<Var> leaves{tape.variable(Tensor({2}))};
    CHECK_THROWS_AS(BoundModel(cfg, leaves), Error);
}

TEST_CASE("loss is equivariant under relabelling of content ids") {
    const auto cfg = testing::tiny_config(10, 1);
    auto p = Parameters::init(cfg, 9);
    // Swap ids 5 and 8 in the data and in the embedding table.
    std::vector<TokenId> perm(cfg.vocab_size);
    std::iota(perm.begin(), perm.end(), 0);
    std::swap(perm[5], perm[8]);
    auto q = p;
    auto& emb = q.tensors[*q.find("embed")].value;
    const auto& orig = p.tensors[*p.find("embed")].value;
    const std::size_t d = cfg.embed_dim;
    for (std::size_t r = 0; r < cfg.vocab_size; ++r) {
        for (std::size_t c = 0; c < d; ++c) emb[perm[r] * d + c] = orig[r * d + c];
    }
    auto relabel = [&](TokenSequence s) {
        for (auto& t : s) t = perm[t];
        return s;
    };
    const TokenSequence src{kBos, 5, 6, 8, 9, kEos}, tgt{kBos, 8, 5, kEos};
    Tape tape(false);
    const double a = xent_of(tape, cfg, p, src, tgt, 0.1).value().item();
    const double b = xent_of(tape, cfg, q, relabel(src), relabel(tgt), 0.1).value().item();
    CHECK(std::abs(a - b) <= 1e-10);
}

TEST_CASE("a model overfit to one example reproduces its reference") {
    auto cfg = testing::tiny_config(12, 1);
    cfg.embed_dim = 16;
    cfg.ffn_dim = 32;
    const corpus::Example ex{{kBos, 4, 9, 5, 11, 6, kEos}, {kBos, 9, 11, 7, kEos}};
    corpus::Dataset data{corpus::Split::train, std::vector<corpus::Example>(1, ex)};
    train::TrainConfig tc;
    tc.mle.schedule = {1e-2, 1, true};
    tc.mle.epochs = 300;
    tc.mle.batch_size = 1;
    const auto ck = train::train_mle(Checkpoint::fresh(cfg, 1), data, nullptr, tc).checkpoint;
    Tape tape(false);
    const Tensor ld = forward_teacher_forced(BoundModel(tape, cfg, ck.params), ex.source, ex.reference).value();
    for (std::size_t j = 0; j + 1 < ex.reference.size(); ++j) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < cfg.vocab_size; ++c) {
            if (ld.at(j, c) > ld.at(j, best)) best = c;
        }
        CHECK(best == ex.reference[j + 1]);
    }
    decode::TransformerStepModel sm(ck.params, cfg, ex.source);
    CHECK(decode::greedy(sm, cfg.max_tgt_len, 1.0).tokens == ex.reference);
}
