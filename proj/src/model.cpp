#include "brio/model.hpp"

#include <cmath>

namespace brio::model {

namespace {

constexpr double kMaskedScore = -1e9;

}  // namespace

void ModelConfig::validate() const {
    if (vocab_size < kNumSpecials + 1 || embed_dim == 0 || n_heads == 0 || n_enc_layers == 0 ||
        n_dec_layers == 0 || ffn_dim == 0 || max_src_len == 0 || max_tgt_len == 0) {
        throw Error("model config: every extent must be >= 1 and vocab_size must exceed the specials");
    }
    if (embed_dim % n_heads != 0) {
        throw Error("model config: embed_dim " + std::to_string(embed_dim) + " not divisible by n_heads " +
                    std::to_string(n_heads));
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
        throw Error("model config: dropout_rate must lie in [0, 1)");
    }
}

std::vector<std::pair<std::string, Shape>> parameter_specs(const ModelConfig& cfg) {
    cfg.validate();
    const std::size_t d = cfg.embed_dim, f = cfg.ffn_dim;
    std::vector<std::pair<std::string, Shape>> specs;
    auto norm = [&](const std::string& p) {
        specs.emplace_back(p + ".g", Shape{d});
        specs.emplace_back(p + ".b", Shape{d});
    };
    auto attn = [&](const std::string& p) {
        for (const char* w : {".wq", ".wk", ".wv", ".wo"}) specs.emplace_back(p + w, Shape{d, d});
    };
    auto ffn = [&](const std::string& p) {
        specs.emplace_back(p + ".w1", Shape{d, f});
        specs.emplace_back(p + ".b1", Shape{f});
        specs.emplace_back(p + ".w2", Shape{f, d});
        specs.emplace_back(p + ".b2", Shape{d});
    };
    specs.emplace_back("embed", Shape{cfg.vocab_size, d});
    for (std::size_t l = 0; l < cfg.n_enc_layers; ++l) {
        const std::string p = "enc." + std::to_string(l);
        norm(p + ".ln_attn");
        attn(p + ".attn");
        norm(p + ".ln_ffn");
        ffn(p + ".ffn");
    }
    norm("enc.ln");
    for (std::size_t l = 0; l < cfg.n_dec_layers; ++l) {
        const std::string p = "dec." + std::to_string(l);
        norm(p + ".ln_self");
        attn(p + ".self");
        norm(p + ".ln_cross");
        attn(p + ".cross");
        norm(p + ".ln_ffn");
        ffn(p + ".ffn");
    }
    norm("dec.ln");
    return specs;
}

Layout Layout::of(const ModelConfig& cfg) {
    // Mirrors the order of parameter_specs.
    std::size_t next = 0;
    auto norm = [&] { Norm n{next, next + 1}; next += 2; return n; };
    auto attn = [&] { Attention a{next, next + 1, next + 2, next + 3}; next += 4; return a; };
    auto ffn = [&] { FeedForward f{next, next + 1, next + 2, next + 3}; next += 4; return f; };
    Layout l;
    l.embed = next++;
    for (std::size_t i = 0; i < cfg.n_enc_layers; ++i) {
        EncoderLayer e;
        e.ln_attn = norm();
        e.attn = attn();
        e.ln_ffn = norm();
        e.ffn = ffn();
        l.encoder.push_back(e);
    }
    l.enc_final = norm();
    for (std::size_t i = 0; i < cfg.n_dec_layers; ++i) {
        DecoderLayer dl;
        dl.ln_self = norm();
        dl.self_attn = attn();
        dl.ln_cross = norm();
        dl.cross_attn = attn();
        dl.ln_ffn = norm();
        dl.ffn = ffn();
        l.decoder.push_back(dl);
    }
    l.dec_final = norm();
    return l;
}

Parameters Parameters::init(const ModelConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    Parameters p;
    for (auto& [name, shape] : parameter_specs(cfg)) {
        Tensor t(shape);
        const bool is_gain = name.size() > 2 && name.ends_with(".g");
        if (shape.size() == 2) {
            // embed is [V, d]; weights are [fan_in, fan_out]
            const double std_dev = 1.0 / std::sqrt(static_cast<double>(name == "embed" ? shape[1] : shape[0]));
            for (double& v : t.values()) v = std_dev * rng.normal();
        } else if (is_gain) {
            for (double& v : t.values()) v = 1.0;
        }
        p.tensors.push_back({name, std::move(t)});
    }
    return p;
}

std::size_t Parameters::count_scalars() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.value.numel();
    return n;
}

std::optional<std::size_t> Parameters::find(std::string_view name) const {
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        if (tensors[i].name == name) return i;
    }
    return std::nullopt;
}

std::vector<std::string> Parameters::names() const {
    std::vector<std::string> out;
    for (const auto& t : tensors) out.push_back(t.name);
    return out;
}

bool Parameters::all_finite() const {
    for (const auto& t : tensors) {
        if (!t.value.all_finite()) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------

BoundModel::BoundModel(Tape& tape, const ModelConfig& cfg, const Parameters& params, DropoutContext* dropout)
    : tape_(&tape), cfg_(cfg), layout_(Layout::of(cfg)), dropout_(dropout) {
    const std::size_t expected = 1 + 12 * cfg.n_enc_layers + 2 + 18 * cfg.n_dec_layers + 2;
    if (params.size() != expected ||
        params.tensors[layout_.embed].value.shape() != Shape{cfg.vocab_size, cfg.embed_dim}) {
        throw Error("parameters do not match the model config (" + std::to_string(params.size()) +
                    " tensors, expected " + std::to_string(expected) + ")");
    }
    leaves_.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        leaves_.push_back(tape.parameter(params.tensors[i].value));
    }
}

BoundModel::BoundModel(const ModelConfig& cfg, std::span<const Var> leaves, DropoutContext* dropout)
    : tape_(leaves.empty() ? nullptr : leaves.front().tape), cfg_(cfg), layout_(Layout::of(cfg)),
      leaves_(leaves.begin(), leaves.end()), dropout_(dropout) {
    const auto specs = parameter_specs(cfg);
    if (leaves.size() != specs.size()) {
        throw Error("expected " + std::to_string(specs.size()) + " parameter leaves, got " +
                    std::to_string(leaves.size()));
    }
    for (std::size_t i = 0; i < specs.size(); ++i) {
        if (leaves[i].tape != tape_ || leaves[i].shape() != specs[i].second) {
            throw Error("parameter leaf " + specs[i].first + " does not match the model config");
        }
    }
}

Var BoundModel::maybe_dropout(Var x) const {
    if (dropout_ == nullptr || dropout_->rate <= 0.0) {
        return x;
    }
    std::vector<bool> keep(x.value().numel());
    for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = !dropout_->rng.bernoulli(dropout_->rate);
    return dropout(x, keep, dropout_->rate);
}

Var BoundModel::embed(std::span<const TokenId> ids, std::size_t first_position) const {
    const std::size_t d = cfg_.embed_dim;
    Tensor pe({ids.size(), d});
    for (std::size_t r = 0; r < ids.size(); ++r) {
        const double pos = static_cast<double>(first_position + r);
        for (std::size_t i = 0; i < d; i += 2) {
            const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
            pe[r * d + i] = std::sin(pos * freq);
            if (i + 1 < d) pe[r * d + i + 1] = std::cos(pos * freq);
        }
    }
    Var tok = scale(embedding_lookup(leaves_[layout_.embed], ids), std::sqrt(static_cast<double>(d)));
    return maybe_dropout(add(tok, tape_->constant(std::move(pe))));
}

Var BoundModel::norm(Var x, const Layout::Norm& n) const {
    return add(mul(layer_norm(x, 1), leaves_[n.gain]), leaves_[n.bias]);
}

Var BoundModel::feed_forward(Var x, const Layout::FeedForward& f) const {
    Var h = gelu(add(matmul(x, leaves_[f.w1]), leaves_[f.b1]));
    return maybe_dropout(add(matmul(h, leaves_[f.w2]), leaves_[f.b2]));
}

Var BoundModel::output_log_probs(Var h) const {
    return log_softmax(matmul(h, leaves_[layout_.embed], /*transpose_b=*/true), 1);
}

Var multi_head_attention(Var q, Var k, Var v, std::size_t n_heads, bool causal) {
    const std::size_t tq = q.value().dim(0), tk = k.value().dim(0), d = q.value().dim(1);
    if (k.value().dim(1) != d || v.value().shape() != k.value().shape()) {
        throw Error("attention: incompatible shapes " + shape_str(q.shape()) + " and " + shape_str(k.shape()));
    }
    const std::size_t dh = d / n_heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<bool> mask;
    bool any_masked = false;
    if (causal) {
        mask.assign(tq * tk, false);
        for (std::size_t i = 0; i < tq; ++i) {
            for (std::size_t j = i + (tk - tq) + 1; j < tk; ++j) {
                mask[i * tk + j] = true;
                any_masked = true;
            }
        }
    }
    std::vector<Var> heads;
    heads.reserve(n_heads);
    for (std::size_t h = 0; h < n_heads; ++h) {
        Var qh = n_heads == 1 ? q : slice_cols(q, h * dh, dh);
        Var kh = n_heads == 1 ? k : slice_cols(k, h * dh, dh);
        Var vh = n_heads == 1 ? v : slice_cols(v, h * dh, dh);
        Var scores = scale(matmul(qh, kh, true), inv_sqrt);
        if (any_masked) scores = masked_fill(scores, mask, kMaskedScore);
        heads.push_back(matmul(softmax(scores, 1), vh));
    }
    return n_heads == 1 ? heads[0] : concat_cols(heads);
}

Var BoundModel::encode(const TokenSequence& source) const {
    if (source.empty()) {
        throw Error("encode: empty source");
    }
    if (source.size() > cfg_.max_src_len) {
        throw Error("source length " + std::to_string(source.size()) + " exceeds max_src_len " +
                    std::to_string(cfg_.max_src_len));
    }
    Var x = embed(source, 0);
    for (const auto& layer : layout_.encoder) {
        Var h = norm(x, layer.ln_attn);
        Var a = multi_head_attention(project(h, layer.attn.wq), project(h, layer.attn.wk),
                                     project(h, layer.attn.wv), cfg_.n_heads, false);
        x = add(x, maybe_dropout(project(a, layer.attn.wo)));
        x = add(x, feed_forward(norm(x, layer.ln_ffn), layer.ffn));
    }
    return norm(x, layout_.enc_final);
}

Var BoundModel::decode(Var memory, std::span<const TokenId> inputs) const {
    if (inputs.empty()) {
        throw Error("decode: empty decoder input");
    }
    if (inputs.size() > cfg_.max_tgt_len) {
        throw Error("target length " + std::to_string(inputs.size()) + " exceeds max_tgt_len " +
                    std::to_string(cfg_.max_tgt_len));
    }
    Var x = embed(inputs, 0);
    for (const auto& layer : layout_.decoder) {
        Var h = norm(x, layer.ln_self);
        Var a = multi_head_attention(project(h, layer.self_attn.wq), project(h, layer.self_attn.wk),
                                     project(h, layer.self_attn.wv), cfg_.n_heads, true);
        x = add(x, maybe_dropout(project(a, layer.self_attn.wo)));
        h = norm(x, layer.ln_cross);
        Var c = multi_head_attention(project(h, layer.cross_attn.wq), project(memory, layer.cross_attn.wk),
                                     project(memory, layer.cross_attn.wv), cfg_.n_heads, false);
        x = add(x, maybe_dropout(project(c, layer.cross_attn.wo)));
        x = add(x, feed_forward(norm(x, layer.ln_ffn), layer.ffn));
    }
    return output_log_probs(norm(x, layout_.dec_final));
}

Var forward_teacher_forced(const BoundModel& m, const TokenSequence& source, const TokenSequence& target) {
    if (target.size() < 2) {
        throw Error("teacher forcing needs a target with at least BOS and one token");
    }
    Var memory = m.encode(source);
    return m.decode(memory, std::span<const TokenId>(target.data(), target.size() - 1));
}

std::vector<double> next_token_distribution(const Parameters& params, const ModelConfig& cfg,
                                            const TokenSequence& source, const TokenSequence& prefix) {
    Tape tape(false);
    BoundModel m(tape, cfg, params);
    const Tensor& rows = m.decode(m.encode(source), prefix).value();
    const std::size_t v = rows.dim(1);
    const double* last = rows.data() + (rows.dim(0) - 1) * v;
    return std::vector<double>(last, last + v);
}

std::vector<double> smoothed_target(std::size_t vocab_size, TokenId gold, double beta) {
    if (!(beta >= 0.0 && beta < 1.0)) {
        throw Error("label smoothing beta must lie in [0, 1)");
    }
    if (vocab_size < 2 || gold >= vocab_size) {
        throw Error("smoothed_target needs N >= 2 and gold < N");
    }
    std::vector<double> p(vocab_size, beta / static_cast<double>(vocab_size - 1));
    p[gold] = 1.0 - beta;
    return p;
}

Var xent_label_smoothed(Var log_dists, std::span<const TokenId> targets, double beta,
                        const std::vector<bool>& keep_mask) {
    const Tensor& lp = log_dists.value();
    if (lp.rank() != 2 || lp.dim(0) != targets.size() || (!keep_mask.empty() && keep_mask.size() != targets.size())) {
        throw Error("xent: incompatible shapes " + shape_str(lp.shape()) + " and " +
                    shape_str(Shape{targets.size()}));
    }
    const std::size_t v = lp.dim(1);
    Tensor w({targets.size(), v});
    for (std::size_t j = 0; j < targets.size(); ++j) {
        if (!keep_mask.empty() && !keep_mask[j]) continue;
        const auto p = smoothed_target(v, targets[j], beta);
        for (std::size_t s = 0; s < v; ++s) w[j * v + s] = -p[s];
    }
    return weighted_sum(log_dists, w);
}

// ---------------------------------------------------------------------------

IncrementalDecoder::IncrementalDecoder(const Parameters& params, const ModelConfig& cfg,
                                       const TokenSequence& source)
    : params_(&params), cfg_(cfg), layout_(Layout::of(cfg)) {
    Tape tape(false);
    BoundModel m(tape, cfg_, params);
    Var memory = m.encode(source);
    for (const auto& layer : layout_.decoder) {
        cross_k_.push_back(m.project(memory, layer.cross_attn.wk).value());
        cross_v_.push_back(m.project(memory, layer.cross_attn.wv).value());
    }
}

IncrementalDecoder::State IncrementalDecoder::start() const {
    State empty;
    empty.self_k.resize(layout_.decoder.size());
    empty.self_v.resize(layout_.decoder.size());
    return extend(empty, kBos);
}

IncrementalDecoder::State IncrementalDecoder::extend(const State& s, TokenId token) const {
    if (s.length + 1 > cfg_.max_tgt_len) {
        throw Error("target length " + std::to_string(s.length + 1) + " exceeds max_tgt_len " +
                    std::to_string(cfg_.max_tgt_len));
    }
    Tape tape(false);
    BoundModel m(tape, cfg_, *params_);
    const TokenId ids[1] = {token};
    Var x = m.embed(ids, s.length);
    State next;
    next.length = s.length + 1;
    for (std::size_t l = 0; l < layout_.decoder.size(); ++l) {
        const auto& layer = layout_.decoder[l];
        Var h = m.norm(x, layer.ln_self);
        Var k = m.project(h, layer.self_attn.wk);
        Var v = m.project(h, layer.self_attn.wv);
        if (s.length > 0) {
            const Var ks[2] = {tape.constant(s.self_k[l]), k};
            const Var vs[2] = {tape.constant(s.self_v[l]), v};
            k = concat_rows(ks);
            v = concat_rows(vs);
        }
        Var a = multi_head_attention(m.project(h, layer.self_attn.wq), k, v, cfg_.n_heads, true);
        x = add(x, m.project(a, layer.self_attn.wo));
        h = m.norm(x, layer.ln_cross);
        Var c = multi_head_attention(m.project(h, layer.cross_attn.wq), tape.parameter(cross_k_[l]),
                                     tape.parameter(cross_v_[l]), cfg_.n_heads, false);
        x = add(x, m.project(c, layer.cross_attn.wo));
        x = add(x, m.feed_forward(m.norm(x, layer.ln_ffn), layer.ffn));
        next.self_k.push_back(k.value());
        next.self_v.push_back(v.value());
    }
    const Tensor& lp = m.output_log_probs(m.norm(x, layout_.dec_final)).value();
    next.log_probs.assign(lp.data(), lp.data() + lp.numel());
    return next;
}

}  // namespace brio::model
