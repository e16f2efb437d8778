#include "brio/train.hpp"

#include <cmath>
#include <iostream>
#include <numeric>

#include "brio/metrics.hpp"
#include "brio/parallel.hpp"

namespace brio::train {

double lr_at(std::uint64_t step, std::uint64_t warmup, double lr_scale) {
    if (step == 0) throw Error("lr_at: step must be >= 1");
    if (warmup == 0) throw Error("lr_at: warmup must be >= 1");
    const double s = static_cast<double>(step), w = static_cast<double>(warmup);
    return lr_scale * std::min(1.0 / std::sqrt(s), s * std::pow(w, -1.5));
}

double ScheduleConfig::lr(std::uint64_t step) const {
    return constant ? lr_scale : lr_at(step, warmup, lr_scale);
}

void adam_step(model::Checkpoint& ck, std::span<const Tensor> grads, double lr, const AdamConfig& cfg) {
    auto& params = ck.params.tensors;
    if (grads.size() != params.size()) throw Error("adam: gradient count does not match parameters");
    if (ck.adam_m.empty()) {
        for (const auto& p : params) {
            ck.adam_m.emplace_back(p.value.shape());
            ck.adam_v.emplace_back(p.value.shape());
        }
    }
    ++ck.step_count;
    const double t = static_cast<double>(ck.step_count);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto theta = params[i].value.values();
        auto m = ck.adam_m[i].values();
        auto v = ck.adam_v[i].values();
        const auto g = grads[i].values();
        if (g.size() != theta.size()) throw Error("adam: gradient shape mismatch for " + params[i].name);
        for (std::size_t k = 0; k < theta.size(); ++k) {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            theta[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg.eps);
        }
    }
}

void TrainConfig::validate() const {
    if (!(beta >= 0.0 && beta < 1.0)) throw Error("train config: beta must lie in [0, 1)");
    if (!(margin >= 0.0)) throw Error("train config: margin must be >= 0");
    if (!(alpha >= 0.0)) throw Error("train config: alpha must be >= 0");
    if (!(gamma >= 0.0)) throw Error("train config: gamma must be >= 0");
    beam.validate();
    if (gamma > 0.0 && beam.n_candidates < 2) {
        throw Error("train config: contrastive training needs n_candidates >= 2");
    }
    for (const StageConfig* s : {&mle, &brio, &few_shot}) {
        if (s->batch_size == 0) throw Error("train config: batch_size must be >= 1");
        if (!(s->schedule.lr_scale > 0.0)) throw Error("train config: lr_scale must be > 0");
        if (s->schedule.warmup == 0) throw Error("train config: warmup must be >= 1");
    }
    if (threads == 0) throw Error("train config: threads must be >= 1");
    metrics::QualityRegistry().get(quality_metric);
}

// ---------------------------------------------------------------------------

Var contrastive_loss(std::span<const Var> f, double margin, std::span<const std::size_t> ties) {
    if (!ties.empty() && ties.size() != f.size()) throw Error("contrastive_loss: tie groups do not match scores");
    if (f.empty()) throw Error("contrastive_loss: no scores");
    Tape& tape = *f.front().tape;
    std::vector<Var> terms;
    for (std::size_t i = 0; i < f.size(); ++i) {
        for (std::size_t j = i + 1; j < f.size(); ++j) {
            if (!ties.empty() && ties[i] == ties[j]) continue;
            terms.push_back(relu(add_scalar(sub(f[j], f[i]), static_cast<double>(j - i) * margin)));
        }
    }
    if (terms.empty()) return tape.constant(Tensor::scalar(0.0));
    return sum(stack(terms));
}

double contrastive_loss(std::span<const double> f, double margin, std::span<const std::size_t> ties) {
    if (!ties.empty() && ties.size() != f.size()) throw Error("contrastive_loss: tie groups do not match scores");
    double total = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
        for (std::size_t j = i + 1; j < f.size(); ++j) {
            if (!ties.empty() && ties[i] == ties[j]) continue;
            total += std::max(0.0, f[j] - f[i] + static_cast<double>(j - i) * margin);
        }
    }
    return total;
}

double multi_task_loss(double l_xent, double l_ctr, double gamma) {
    if (!std::isfinite(l_xent) || !std::isfinite(l_ctr)) throw Error("multi_task_loss: losses must be finite");
    if (gamma == kContrastiveOnly) return l_ctr;
    return l_xent + gamma * l_ctr;
}

Var candidate_score(const model::BoundModel& m, Var memory, const TokenSequence& tokens, double alpha) {
    if (tokens.size() < 2) throw Error("candidate_score: candidate has no generated tokens");
    const std::span<const TokenId> all(tokens);
    Var lp = m.decode(memory, all.first(tokens.size() - 1));
    Var total = sum(pick(lp, all.subspan(1)));
    const std::size_t l = tokens.size() - 1;
    return alpha == 0.0 ? total : scale(total, 1.0 / std::pow(static_cast<double>(l), alpha));
}

namespace {

Var reference_xent(const model::BoundModel& m, Var memory, const TokenSequence& ref, double beta) {
    const std::span<const TokenId> all(ref);
    Var lp = m.decode(memory, all.first(ref.size() - 1));
    return model::xent_label_smoothed(lp, all.subspan(1), beta);
}

void collect_grads(const Tape& tape, const model::BoundModel& m, std::vector<Tensor>* grads) {
    if (!grads) return;
    grads->clear();
    for (const Var& v : m.leaves()) grads->push_back(tape.grad(v));
}

}  // namespace

LossParts mle_example_grad(const model::Parameters& params, const model::ModelConfig& cfg,
                           const corpus::Example& ex, double beta, std::vector<Tensor>* grads) {
    Tape tape(grads != nullptr);
    model::BoundModel m(tape, cfg, params);
    Var memory = m.encode(ex.source);
    Var loss = reference_xent(m, memory, ex.reference, beta);
    LossParts parts;
    parts.xent = parts.total = loss.value().item();
    if (grads) {
        tape.backward(loss);
        collect_grads(tape, m, grads);
    }
    return parts;
}

LossParts brio_example_grad(const model::Parameters& params, const model::ModelConfig& cfg,
                            const corpus::Example& ex, const CandidateSet& set, const TrainConfig& tc,
                            std::vector<Tensor>* grads) {
    Tape tape(grads != nullptr);
    model::BoundModel m(tape, cfg, params);
    Var memory = m.encode(ex.source);
    LossParts parts;
    std::optional<Var> xent, ctr;
    if (!tc.contrastive_only()) {
        xent = reference_xent(m, memory, ex.reference, tc.beta);
        parts.xent = xent->value().item();
    }
    if (tc.gamma != 0.0 && set.size() >= 2) {
        std::vector<Var> f;
        f.reserve(set.size());
        for (const auto& c : set.candidates) f.push_back(candidate_score(m, memory, c.candidate.tokens, tc.alpha));
        const auto ties = set.tie_groups();
        ctr = contrastive_loss(f, tc.margin, ties);
        parts.ctr = ctr->value().item();
    }
    Var total;
    if (tc.contrastive_only()) {
        total = ctr ? *ctr : tape.constant(Tensor::scalar(0.0));
    } else if (ctr) {
        total = add(*xent, scale(*ctr, tc.gamma));
    } else {
        total = *xent;
    }
    parts.total = total.value().item();
    if (grads) {
        tape.backward(total);
        collect_grads(tape, m, grads);
    }
    return parts;
}

double mean_xent(const model::Parameters& params, const model::ModelConfig& cfg, const corpus::Dataset& data,
                 double beta, std::size_t threads) {
    if (data.examples.empty()) throw Error("mean_xent: empty dataset");
    std::vector<double> per(data.size());
    parallel_for(data.size(), threads, [&](std::size_t i) {
        per[i] = mle_example_grad(params, cfg, data.examples[i], beta, nullptr).xent;
    });
    return std::accumulate(per.begin(), per.end(), 0.0) / static_cast<double>(per.size());
}

namespace {

using ExampleGrad = std::function<LossParts(const model::Parameters&, std::size_t index, std::vector<Tensor>*)>;

StageResult run_stage(const std::string& name, const model::Checkpoint& init, std::size_t n_examples,
                      const StageConfig& stage, const TrainConfig& tc, const ExampleGrad& example_grad,
                      const corpus::Dataset* valid) {
    if (n_examples == 0) throw Error(name + ": empty training set");
    StageResult result{init, {}};
    model::Checkpoint& ck = result.checkpoint;
    if (stage.reset_optimizer) {
        ck.step_count = 0;
        ck.adam_m.clear();
        ck.adam_v.clear();
    }
    const model::ModelConfig& cfg = ck.config;
    std::uint64_t steps_taken = 0;
    const Rng shuffle_root(tc.seed);
    for (std::size_t epoch = 0; epoch < stage.epochs; ++epoch) {
        if (stage.max_steps != 0 && steps_taken >= stage.max_steps) break;
        std::vector<std::size_t> order(n_examples);
        std::iota(order.begin(), order.end(), 0);
        Rng rng = shuffle_root.fork(epoch);
        rng.shuffle(order);

        LogRecord rec;
        rec.stage = name;
        rec.epoch = epoch + 1;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < n_examples; start += stage.batch_size) {
            if (stage.max_steps != 0 && steps_taken >= stage.max_steps) break;
            const std::size_t bsz = std::min(stage.batch_size, n_examples - start);
            std::vector<std::vector<Tensor>> per_grads(bsz);
            std::vector<LossParts> per_loss(bsz);
            parallel_for(bsz, tc.threads, [&](std::size_t b) {
                per_loss[b] = example_grad(ck.params, order[start + b], &per_grads[b]);
            });
            std::vector<Tensor> grads = std::move(per_grads[0]);
            for (std::size_t b = 1; b < bsz; ++b) {
                for (std::size_t p = 0; p < grads.size(); ++p) {
                    auto acc = grads[p].values();
                    const auto g = per_grads[b][p].values();
                    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += g[k];
                }
            }
            const double inv = 1.0 / static_cast<double>(bsz);
            for (auto& g : grads) {
                for (double& x : g.values()) x *= inv;
            }
            LossParts batch;
            for (const auto& l : per_loss) {
                batch.xent += l.xent;
                batch.ctr += l.ctr;
                batch.total += l.total;
            }
            if (!std::isfinite(batch.total)) {
                throw Error(name + ": loss diverged (non-finite) at step " + std::to_string(ck.step_count + 1) +
                            ", epoch " + std::to_string(epoch + 1));
            }
            const double lr = stage.schedule.lr(ck.step_count + 1);
            adam_step(ck, grads, lr, tc.adam);
            if (!ck.params.all_finite()) {
                throw Error(name + ": parameters became non-finite at step " + std::to_string(ck.step_count));
            }
            ++steps_taken;
            rec.xent += batch.xent;
            rec.ctr += batch.ctr;
            rec.total += batch.total;
            rec.lr = lr;
            seen += bsz;
        }
        if (seen == 0) break;
        rec.step = ck.step_count;
        rec.xent /= static_cast<double>(seen);
        rec.ctr /= static_cast<double>(seen);
        rec.total /= static_cast<double>(seen);
        rec.valid_xent = valid ? mean_xent(ck.params, cfg, *valid, tc.beta, tc.threads) : std::nan("");
        result.log.push_back(rec);
    }
    return result;
}

}  // namespace

StageResult train_mle(const model::Checkpoint& init, const corpus::Dataset& train, const corpus::Dataset* valid,
                      const TrainConfig& tc) {
    tc.validate();
    corpus::validate(train, init.config.vocab_size);
    return run_stage("mle", init, train.size(), tc.mle, tc,
                     [&](const model::Parameters& p, std::size_t i, std::vector<Tensor>* g) {
                         return mle_example_grad(p, init.config, train.examples[i], tc.beta, g);
                     },
                     valid);
}

StageResult train_brio(const model::Checkpoint& init, const corpus::Dataset& train,
                       const std::vector<CandidateSet>& cache, const corpus::Dataset* valid, const TrainConfig& tc) {
    tc.validate();
    corpus::validate(train, init.config.vocab_size);
    if (cache.size() != train.size()) {
        throw Error("candidate cache has " + std::to_string(cache.size()) + " sets but the dataset has " +
                    std::to_string(train.size()) + " examples");
    }
    std::size_t small = 0;
    for (std::size_t i = 0; i < cache.size(); ++i) {
        if (cache[i].example != i) {
            throw Error("candidate cache is not aligned with the dataset at line " + std::to_string(i + 1));
        }
        if (cache[i].size() < 2) ++small;
    }
    if (small > 0 && tc.gamma != 0.0) {
        std::cerr << "warning: " << small << " candidate sets hold fewer than 2 candidates; their contrastive loss is 0\n";
    }
    return run_stage("brio", init, train.size(), tc.brio, tc,
                     [&](const model::Parameters& p, std::size_t i, std::vector<Tensor>* g) {
                         return brio_example_grad(p, init.config, train.examples[i], cache[i], tc, g);
                     },
                     valid);
}

// ---------------------------------------------------------------------------

std::vector<CandidateSet> build_candidate_sets(const model::Parameters& params, const model::ModelConfig& cfg,
                                               const corpus::Dataset& data, const TrainConfig& tc) {
    tc.validate();
    const metrics::QualityRegistry registry;
    const auto& metric = registry.get(tc.quality_metric);
    decode::BeamConfig beam = tc.beam;
    beam.length_penalty = tc.alpha;
    beam.max_len = std::min(beam.max_len, cfg.max_tgt_len);
    std::vector<CandidateSet> sets(data.size());
    parallel_for(data.size(), tc.threads, [&](std::size_t i) {
        const auto& ex = data.examples[i];
        decode::TransformerStepModel sm(params, cfg, ex.source);
        auto found = decode::diverse_beam_search(sm, beam);
        CandidateSet set;
        set.example = i;
        set.shortfall = found.shortfall;
        bool has_reference = false;
        for (auto& c : found.candidates) {
            has_reference = has_reference || c.tokens == ex.reference;
            set.candidates.push_back({std::move(c), 0.0, 0, false});
        }
        if (tc.include_reference && !has_reference) {
            decode::Candidate ref;
            ref.tokens = ex.reference;
            ref.token_logprobs = decode::teacher_forced_logprobs(params, cfg, ex.source, ex.reference);
            ref.sum_logprob = std::accumulate(ref.token_logprobs.begin(), ref.token_logprobs.end(), 0.0);
            ref.f_score = decode::seq_score(ref.sum_logprob, ref.length(), tc.alpha);
            ref.alpha = tc.alpha;
            ref.group = beam.n_groups;
            set.candidates.push_back({std::move(ref), 0.0, 0, true});
        }
        sets[i] = metrics::order_candidates(std::move(set), ex.reference, metric);
    });
    return sets;
}

std::vector<double> score_candidates(const model::Parameters& params, const model::ModelConfig& cfg,
                                     const TokenSequence& source, const CandidateSet& set, double alpha) {
    Tape tape(false);
    model::BoundModel m(tape, cfg, params);
    Var memory = m.encode(source);
    std::vector<double> f;
    f.reserve(set.size());
    for (const auto& c : set.candidates) f.push_back(candidate_score(m, memory, c.candidate.tokens, alpha).value().item());
    return f;
}

std::vector<std::size_t> rerank_select(const model::Parameters& params, const model::ModelConfig& cfg,
                                       const corpus::Dataset& data, const std::vector<CandidateSet>& cache,
                                       double alpha, std::size_t threads) {
    if (cache.size() != data.size()) throw Error("rerank: cache and dataset differ in size");
    std::vector<std::size_t> chosen(cache.size());
    parallel_for(cache.size(), threads, [&](std::size_t i) {
        if (cache[i].candidates.empty()) {
            throw Error("rerank: example " + std::to_string(i) + " has no candidates");
        }
        const auto f = score_candidates(params, cfg, data.examples[i].source, cache[i], alpha);
        std::size_t best = 0;
        for (std::size_t k = 1; k < f.size(); ++k) {
            if (f[k] > f[best]) best = k;
        }
        chosen[i] = best;
    });
    return chosen;
}

std::vector<LoopRound> loop_finetune(const model::Checkpoint& init, const corpus::Dataset& train,
                                     const TrainConfig& tc, std::size_t n_rounds,
                                     const std::filesystem::path& out_dir) {
    if (n_rounds == 0) throw Error("loop: n_rounds must be >= 1");
    std::vector<LoopRound> rounds;
    model::Checkpoint current = init;
    for (std::size_t r = 1; r <= n_rounds; ++r) {
        LoopRound round;
        round.cache_path = out_dir / ("round-" + std::to_string(r) + ".candidates.jsonl");
        round.checkpoint_path = out_dir / ("round-" + std::to_string(r) + ".ckpt");
        const auto cache = build_candidate_sets(current.params, current.config, train, tc);
        write_candidate_cache(round.cache_path, cache);
        current = train_brio(current, train, cache, nullptr, tc).checkpoint;
        model::save_checkpoint(round.checkpoint_path, current);
        round.checkpoint = current;
        rounds.push_back(std::move(round));
    }
    return rounds;
}

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k, std::uint64_t seed) {
    if (k > n) {
        throw Error("cannot sample " + std::to_string(k) + " examples from a split of " + std::to_string(n));
    }
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

FewShotResult few_shot_finetune(const model::Checkpoint& init, const corpus::Dataset& train, std::size_t k,
                                std::size_t n_repeats, const TrainConfig& tc, const Evaluator& evaluate) {
    if (n_repeats == 0) throw Error("few-shot: n_repeats must be >= 1");
    if (k == 0) throw Error("few-shot: k must be >= 1");
    TrainConfig stage_tc = tc;
    stage_tc.brio = tc.few_shot;
    FewShotResult result;
    for (std::size_t r = 0; r < n_repeats; ++r) {
        FewShotRepeat rep;
        rep.indices = sample_indices(train.size(), k, Rng(tc.seed).fork(r).next_u64());
        corpus::Dataset subset{train.split, {}};
        for (std::size_t i : rep.indices) subset.examples.push_back(train.examples[i]);
        const auto cache = build_candidate_sets(init.params, init.config, subset, stage_tc);
        const auto trained = train_brio(init, subset, cache, nullptr, stage_tc).checkpoint;
        rep.metrics = evaluate(trained);
        result.repeats.push_back(std::move(rep));
    }
    for (const auto& [name, v] : result.repeats.front().metrics) {
        double s = 0.0;
        for (const auto& rep : result.repeats) s += rep.metrics.at(name);
        const double mean = s / static_cast<double>(n_repeats);
        double ss = 0.0;
        for (const auto& rep : result.repeats) ss += (rep.metrics.at(name) - mean) * (rep.metrics.at(name) - mean);
        result.mean[name] = mean;
        result.stddev[name] = n_repeats > 1 ? std::sqrt(ss / static_cast<double>(n_repeats - 1)) : 0.0;
    }
    return result;
}

}  // namespace brio::train
