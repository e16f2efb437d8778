#include "brio/decode.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace brio::decode {

double seq_score(double sum_logprob, std::size_t length, double alpha) {
    if (length == 0) {
        throw Error("seq_score: length must be >= 1");
    }
    if (alpha == 0.0) return sum_logprob;
    return sum_logprob / std::pow(static_cast<double>(length), alpha);
}

void BeamConfig::validate() const {
    if (beam_width == 0) throw Error("beam config: beam_width must be >= 1");
    if (max_len == 0) throw Error("beam config: max_len must be >= 1");
    if (n_groups == 0 || n_groups > beam_width) throw Error("beam config: n_groups must lie in [1, beam_width]");
    if (beam_width % n_groups != 0) {
        throw Error("beam config: beam_width " + std::to_string(beam_width) + " not divisible by n_groups " +
                    std::to_string(n_groups));
    }
    if (n_candidates == 0 || n_candidates > beam_width) {
        throw Error("beam config: n_candidates must lie in [1, beam_width]");
    }
    if (!(diversity_strength >= 0.0)) throw Error("beam config: diversity_strength must be >= 0");
    if (!(length_penalty >= 0.0)) throw Error("beam config: length_penalty must be >= 0");
}

// ---------------------------------------------------------------------------

namespace {

struct VectorState final : StepState {
    std::vector<double> lp;
    TokenSequence prefix;  // only used by TableModel
    std::span<const double> log_probs() const override { return lp; }
};

struct TransformerState final : StepState {
    model::IncrementalDecoder::State s;
    std::span<const double> log_probs() const override { return s.log_probs; }
};

}  // namespace

TransformerStepModel::TransformerStepModel(const model::Parameters& params, const model::ModelConfig& cfg,
                                           const TokenSequence& source)
    : cfg_(cfg), decoder_(params, cfg, source) {}

std::shared_ptr<const StepState> TransformerStepModel::start() const {
    auto st = std::make_shared<TransformerState>();
    st->s = decoder_.start();
    return st;
}

std::shared_ptr<const StepState> TransformerStepModel::extend(const StepState& s, TokenId t) const {
    const auto& prev = dynamic_cast<const TransformerState&>(s);
    auto st = std::make_shared<TransformerState>();
    st->s = decoder_.extend(prev.s, t);
    return st;
}

TableModel::TableModel(std::size_t vocab_size, TokenId eos, Table table)
    : vocab_size_(vocab_size), eos_(eos), table_(std::move(table)) {
    if (vocab_size_ < 1 || eos_ >= vocab_size_) {
        throw Error("table model: eos must be a vocabulary id");
    }
}

TableModel TableModel::random(std::size_t vocab_size, TokenId eos, std::uint64_t seed, double logit_scale) {
    return TableModel(vocab_size, eos, [vocab_size, seed, logit_scale](const TokenSequence& prefix) {
        std::uint64_t h = mix64(seed);
        for (TokenId t : prefix) h = mix64(h ^ (t + 0x100));
        Rng rng(h);
        std::vector<double> logits(vocab_size);
        for (double& x : logits) x = logit_scale * rng.normal();
        const double mx = *std::max_element(logits.begin(), logits.end());
        double z = 0.0;
        for (double x : logits) z += std::exp(x - mx);
        const double lz = mx + std::log(z);
        for (double& x : logits) x -= lz;
        return logits;
    });
}

std::shared_ptr<const StepState> TableModel::start() const {
    auto st = std::make_shared<VectorState>();
    st->lp = table_(st->prefix);
    if (st->lp.size() != vocab_size_) throw Error("table model: distribution has the wrong size");
    return st;
}

std::shared_ptr<const StepState> TableModel::extend(const StepState& s, TokenId t) const {
    const auto& prev = dynamic_cast<const VectorState&>(s);
    auto st = std::make_shared<VectorState>();
    st->prefix = prev.prefix;
    st->prefix.push_back(t);
    st->lp = table_(st->prefix);
    if (st->lp.size() != vocab_size_) throw Error("table model: distribution has the wrong size");
    return st;
}

double TableModel::sequence_logprob(const TokenSequence& generated) const {
    TokenSequence prefix;
    double total = 0.0;
    for (TokenId t : generated) {
        total += table_(prefix).at(t);
        prefix.push_back(t);
    }
    return total;
}

// ---------------------------------------------------------------------------

namespace {

struct Hyp {
    TokenSequence tokens;
    std::vector<double> lps;
    double sum = 0.0;
    std::shared_ptr<const StepState> state;
};

struct Expansion {
    double score;
    TokenId token;
    std::size_t hyp;
};

struct Group {
    std::size_t width;
    std::size_t index;
    std::vector<Hyp> active;
    std::vector<Candidate> finished;

    bool done() const { return active.empty() || finished.size() >= width; }
};

Candidate finish(Hyp h, std::size_t group, double alpha) {
    Candidate c;
    c.tokens = std::move(h.tokens);
    c.token_logprobs = std::move(h.lps);
    c.sum_logprob = h.sum;
    c.f_score = seq_score(c.sum_logprob, c.token_logprobs.size(), alpha);
    c.alpha = alpha;
    c.group = group;
    return c;
}

/// One time step for one group. `counts` holds how often each token was
/// chosen by earlier groups at this step and is updated with this group's picks.
void advance(const StepModel& model, Group& g, bool last_step, double strength, double alpha,
             std::vector<std::size_t>& counts) {
    const std::size_t V = model.vocab_size();
    std::vector<Expansion> exps;
    exps.reserve(g.active.size() * V);
    for (std::size_t h = 0; h < g.active.size(); ++h) {
        const auto lp = g.active[h].state->log_probs();
        for (TokenId t = 0; t < V; ++t) {
            if (!model.may_emit(t)) continue;
            exps.push_back({g.active[h].sum + lp[t] - strength * static_cast<double>(counts[t]), t, h});
        }
    }
    std::sort(exps.begin(), exps.end(), [](const Expansion& a, const Expansion& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.token != b.token) return a.token < b.token;
        return a.hyp < b.hyp;
    });

    std::vector<Hyp> next;
    std::vector<std::pair<std::size_t, TokenId>> parents;
    std::size_t selected = 0;
    for (const Expansion& e : exps) {
        if (next.size() >= g.width || (last_step && selected >= g.width)) break;
        const Hyp& parent = g.active[e.hyp];
        Hyp child;
        child.tokens = parent.tokens;
        child.tokens.push_back(e.token);
        child.lps = parent.lps;
        const double lp = parent.state->log_probs()[e.token];
        child.lps.push_back(lp);
        child.sum = parent.sum + lp;
        ++counts[e.token];
        ++selected;
        if (e.token == model.eos() || last_step) {
            g.finished.push_back(finish(std::move(child), g.index, alpha));
        } else {
            parents.emplace_back(e.hyp, e.token);
            next.push_back(std::move(child));
        }
    }
    if (!last_step) {
        for (std::size_t i = 0; i < next.size(); ++i) {
            next[i].state = model.extend(*g.active[parents[i].first].state, parents[i].second);
        }
    }
    g.active = std::move(next);
}

std::vector<Group> run_groups(const StepModel& model, const BeamConfig& cfg, std::size_t n_groups,
                              std::size_t width, double strength) {
    Hyp root;
    root.tokens = {model.bos()};
    root.state = model.start();
    std::vector<Group> groups;
    for (std::size_t g = 0; g < n_groups; ++g) groups.push_back(Group{width, g, {root}, {}});

    std::vector<std::size_t> counts(model.vocab_size());
    for (std::size_t step = 0; step < cfg.max_len; ++step) {
        std::fill(counts.begin(), counts.end(), 0);
        bool any = false;
        for (auto& g : groups) {
            if (g.done()) continue;
            any = true;
            advance(model, g, step + 1 == cfg.max_len, strength, cfg.length_penalty, counts);
        }
        if (!any) break;
    }
    return groups;
}

void sort_by_f(std::vector<Candidate>& c) {
    std::stable_sort(c.begin(), c.end(),
                     [](const Candidate& a, const Candidate& b) { return a.f_score > b.f_score; });
}

}  // namespace

BeamResult beam_search(const StepModel& model, const BeamConfig& cfg) {
    BeamConfig c = cfg;
    c.n_groups = 1;
    c.n_candidates = std::min(c.n_candidates, c.beam_width);
    c.validate();
    auto groups = run_groups(model, c, 1, c.beam_width, 0.0);
    BeamResult r;
    r.beam = std::move(groups.front().finished);
    r.best_sum_logprob = -INFINITY;
    for (const auto& cand : r.beam) r.best_sum_logprob = std::max(r.best_sum_logprob, cand.sum_logprob);
    sort_by_f(r.beam);
    if (r.beam.size() > c.beam_width) r.beam.resize(c.beam_width);
    return r;
}

DiverseResult diverse_beam_search(const StepModel& model, const BeamConfig& cfg) {
    cfg.validate();
    auto groups = run_groups(model, cfg, cfg.n_groups, cfg.beam_width / cfg.n_groups, cfg.diversity_strength);
    DiverseResult r;
    std::set<TokenSequence> seen;
    for (auto& g : groups) {
        for (auto& cand : g.finished) {
            if (seen.insert(cand.tokens).second) r.candidates.push_back(std::move(cand));
        }
    }
    sort_by_f(r.candidates);
    if (r.candidates.size() > cfg.n_candidates) r.candidates.resize(cfg.n_candidates);
    r.shortfall = r.candidates.size() < cfg.n_candidates;
    return r;
}

Candidate greedy(const StepModel& model, std::size_t max_len, double alpha) {
    BeamConfig cfg;
    cfg.beam_width = 1;
    cfg.n_groups = 1;
    cfg.n_candidates = 1;
    cfg.max_len = max_len;
    cfg.length_penalty = alpha;
    return beam_search(model, cfg).best();
}

std::vector<double> teacher_forced_logprobs(const model::Parameters& params, const model::ModelConfig& cfg,
                                            const TokenSequence& source, const TokenSequence& tokens) {
    if (tokens.size() < 2) {
        throw Error("teacher_forced_logprobs: sequence has no generated tokens");
    }
    Tape tape(false);
    model::BoundModel m(tape, cfg, params);
    const Tensor& lp = model::forward_teacher_forced(m, source, tokens).value();
    std::vector<double> out(tokens.size() - 1);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = lp.at(j, tokens[j + 1]);
    return out;
}

}  // namespace brio::decode
