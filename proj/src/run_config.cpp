#include "brio/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace brio {

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
    if (v == std::numeric_limits<double>::infinity()) return "inf";
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

double parse_double(std::string_view s) {
    s = trim(s);
    if (s == "inf") return std::numeric_limits<double>::infinity();
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v)) {
        throw Error("expected a number, got '" + std::string(s) + "'");
    }
    return v;
}

std::uint64_t parse_uint(std::string_view s) {
    s = trim(s);
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || s.empty()) {
        throw Error("expected a non-negative integer, got '" + std::string(s) + "'");
    }
    return v;
}

bool parse_bool(std::string_view s) {
    s = trim(s);
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw Error("expected true or false, got '" + std::string(s) + "'");
}

std::vector<std::string_view> split_list(std::string_view s) {
    std::vector<std::string_view> out;
    s = trim(s);
    if (s.empty()) return out;
    std::size_t start = 0;
    while (true) {
        const auto comma = s.find(',', start);
        out.push_back(trim(s.substr(start, comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

struct Key {
    std::string section;
    std::string key;
    std::string help;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, std::string_view)> set;
};

using Getter = std::function<std::string(const RunConfig&)>;
using Setter = std::function<void(RunConfig&, std::string_view)>;

#define BRIO_UINT(expr) \
    [](const RunConfig& c) { return std::to_string(c.expr); }, \
    [](RunConfig& c, std::string_view v) { c.expr = static_cast<decltype(c.expr)>(parse_uint(v)); }
#define BRIO_DOUBLE(expr) \
    [](const RunConfig& c) { return fmt_double(c.expr); }, \
    [](RunConfig& c, std::string_view v) { c.expr = parse_double(v); }
#define BRIO_BOOL(expr) \
    [](const RunConfig& c) { return std::string(c.expr ? "true" : "false"); }, \
    [](RunConfig& c, std::string_view v) { c.expr = parse_bool(v); }

const std::vector<Key>& keys() {
    static const std::vector<Key> table = [] {
        std::vector<Key> k;
        auto add = [&](std::string s, std::string n, std::string h, Getter g, Setter st) {
            k.push_back({std::move(s), std::move(n), std::move(h), std::move(g), std::move(st)});
        };
        auto stage = [&](const std::string& s, train::StageConfig train::TrainConfig::*m) {
            add(s, "lr_scale", "learning-rate scale",
                [m](const RunConfig& c) { return fmt_double((c.train.*m).schedule.lr_scale); },
                [m](RunConfig& c, std::string_view v) { (c.train.*m).schedule.lr_scale = parse_double(v); });
            add(s, "warmup", "warmup steps of the inverse-square-root schedule",
                [m](const RunConfig& c) { return std::to_string((c.train.*m).schedule.warmup); },
                [m](RunConfig& c, std::string_view v) { (c.train.*m).schedule.warmup = parse_uint(v); });
            add(s, "constant_lr", "use lr_scale at every step",
                [m](const RunConfig& c) { return std::string((c.train.*m).schedule.constant ? "true" : "false"); },
                [m](RunConfig& c, std::string_view v) { (c.train.*m).schedule.constant = parse_bool(v); });
            add(s, "epochs", "passes over the training set",
                [m](const RunConfig& c) { return std::to_string((c.train.*m).epochs); },
                [m](RunConfig& c, std::string_view v) { (c.train.*m).epochs = parse_uint(v); });
            add(s, "batch_size", "examples per update",
                [m](const RunConfig& c) { return std::to_string((c.train.*m).batch_size); },
                [m](RunConfig& c, std::string_view v) { (c.train.*m).batch_size = parse_uint(v); });
            add(s, "max_steps", "update cap, 0 for none",
                [m](const RunConfig& c) { return std::to_string((c.train.*m).max_steps); },
                [m](RunConfig& c, std::string_view v) { (c.train.*m).max_steps = parse_uint(v); });
            add(s, "reset_optimizer", "start the stage with fresh Adam state",
                [m](const RunConfig& c) { return std::string((c.train.*m).reset_optimizer ? "true" : "false"); },
                [m](RunConfig& c, std::string_view v) { (c.train.*m).reset_optimizer = parse_bool(v); });
        };

        add("data", "seed", "synthetic data seed", BRIO_UINT(data.seed));
        add("data", "n_train", "training examples", BRIO_UINT(data.n_train));
        add("data", "n_valid", "validation examples", BRIO_UINT(data.n_valid));
        add("data", "n_test", "test examples", BRIO_UINT(data.n_test));
        add("data", "n_salient", "keywords", BRIO_UINT(data.task.n_salient));
        add("data", "n_filler", "filler words", BRIO_UINT(data.task.n_filler));
        add("data", "n_triggers", "fillers that trigger paraphrase", BRIO_UINT(data.task.n_triggers));
        add("data", "n_paraphrased", "keywords with a paraphrase form", BRIO_UINT(data.task.n_paraphrased));
        add("data", "min_source_len", "shortest source", BRIO_UINT(data.task.min_source_len));
        add("data", "max_source_len", "longest source", BRIO_UINT(data.task.max_source_len));
        add("data", "salient_rate", "chance a source slot is a keyword", BRIO_DOUBLE(data.task.salient_rate));
        add("data", "trigger_rate", "chance a filler slot is a trigger", BRIO_DOUBLE(data.task.trigger_rate));
        add("data", "max_reference_len", "reference truncation", BRIO_UINT(data.task.max_reference_len));

        add("model", "vocab_size", "0 takes the vocabulary size", BRIO_UINT(model.vocab_size));
        add("model", "embed_dim", "model width", BRIO_UINT(model.embed_dim));
        add("model", "n_heads", "attention heads", BRIO_UINT(model.n_heads));
        add("model", "n_enc_layers", "encoder layers", BRIO_UINT(model.n_enc_layers));
        add("model", "n_dec_layers", "decoder layers", BRIO_UINT(model.n_dec_layers));
        add("model", "ffn_dim", "feed-forward width", BRIO_UINT(model.ffn_dim));
        add("model", "max_src_len", "source length limit incl. sentinels", BRIO_UINT(model.max_src_len));
        add("model", "max_tgt_len", "target length limit incl. sentinels", BRIO_UINT(model.max_tgt_len));
        add("model", "dropout_rate", "dropout rate (training only)", BRIO_DOUBLE(model.dropout_rate));

        add("train", "seed", "shuffle and initialisation seed", BRIO_UINT(train.seed));
        add("train", "threads", "worker threads", BRIO_UINT(train.threads));
        add("train", "beta", "label smoothing mass", BRIO_DOUBLE(train.beta));
        add("train", "margin", "contrastive base margin lambda", BRIO_DOUBLE(train.margin));
        add("train", "alpha", "length penalty of the sequence score", BRIO_DOUBLE(train.alpha));
        add("train", "gamma", "contrastive weight; inf for contrastive only", BRIO_DOUBLE(train.gamma));
        add("train", "include_reference", "add the reference to each candidate set", BRIO_BOOL(train.include_reference));
        add("train", "quality_metric", "rouge_mean, rouge1, rouge2 or rougeL",
            [](const RunConfig& c) { return c.train.quality_metric; },
            [](RunConfig& c, std::string_view v) { c.train.quality_metric = std::string(trim(v)); });
        add("train", "adam_beta1", "Adam first-moment decay", BRIO_DOUBLE(train.adam.beta1));
        add("train", "adam_beta2", "Adam second-moment decay", BRIO_DOUBLE(train.adam.beta2));
        add("train", "adam_eps", "Adam epsilon", BRIO_DOUBLE(train.adam.eps));

        stage("mle", &train::TrainConfig::mle);
        stage("brio", &train::TrainConfig::brio);
        stage("few_shot", &train::TrainConfig::few_shot);
        add("few_shot", "k", "examples per repeat", BRIO_UINT(few_shot.k));
        add("few_shot", "repeats", "independent repeats", BRIO_UINT(few_shot.repeats));

        add("candidates", "beam_width", "diverse beam width", BRIO_UINT(train.beam.beam_width));
        add("candidates", "n_groups", "diverse beam groups", BRIO_UINT(train.beam.n_groups));
        add("candidates", "diversity_strength", "Hamming penalty strength", BRIO_DOUBLE(train.beam.diversity_strength));
        add("candidates", "n_candidates", "candidates kept per example", BRIO_UINT(train.beam.n_candidates));
        add("candidates", "max_len", "generated-token limit incl. EOS", BRIO_UINT(train.beam.max_len));

        add("eval", "beam_width", "beam width for generation metrics", BRIO_UINT(eval.beam_width));
        add("eval", "ece_buckets", "calibration buckets", BRIO_UINT(eval.ece_buckets));
        add("eval", "novelty_buckets", "reference-novelty buckets", BRIO_UINT(eval.novelty_buckets));
        add("eval", "alpha_grid", "comma list of alphas tried on the validation split; empty uses train.alpha",
            [](const RunConfig& c) {
                std::string s;
                for (std::size_t i = 0; i < c.eval.alpha_grid.size(); ++i) s += (i ? "," : "") + fmt_double(c.eval.alpha_grid[i]);
                return s;
            },
            [](RunConfig& c, std::string_view v) {
                c.eval.alpha_grid.clear();
                for (auto item : split_list(v)) c.eval.alpha_grid.push_back(parse_double(item));
            });

        add("sweep", "gammas", "comma list of contrastive weights",
            [](const RunConfig& c) {
                std::string s;
                for (std::size_t i = 0; i < c.sweep.gammas.size(); ++i) s += (i ? "," : "") + fmt_double(c.sweep.gammas[i]);
                return s;
            },
            [](RunConfig& c, std::string_view v) {
                c.sweep.gammas.clear();
                for (auto item : split_list(v)) c.sweep.gammas.push_back(parse_double(item));
            });
        add("sweep", "widths", "comma list of beam widths",
            [](const RunConfig& c) {
                std::string s;
                for (std::size_t i = 0; i < c.sweep.widths.size(); ++i) s += (i ? "," : "") + std::to_string(c.sweep.widths[i]);
                return s;
            },
            [](RunConfig& c, std::string_view v) {
                c.sweep.widths.clear();
                for (auto item : split_list(v)) c.sweep.widths.push_back(parse_uint(item));
            });
        add("loop", "rounds", "generation-finetuning rounds", BRIO_UINT(loop_rounds));
        return k;
    }();
    return table;
}

#undef BRIO_UINT
#undef BRIO_DOUBLE
#undef BRIO_BOOL

const Key& find_key(std::string_view section, std::string_view key) {
    for (const auto& k : keys()) {
        if (k.section == section && k.key == key) return k;
    }
    throw Error("unknown config key '" + std::string(section) + "." + std::string(key) + "'");
}

}  // namespace

RunConfig::RunConfig() { model.vocab_size = 0; }

void RunConfig::validate() const {
    data.task.validate();
    if (data.n_train == 0 || data.n_valid == 0 || data.n_test == 0) {
        throw Error("config: data split sizes must be >= 1");
    }
    model::ModelConfig m = model;
    if (m.vocab_size == 0) m.vocab_size = kNumSpecials + 1;
    m.validate();
    train.validate();
    if (eval.beam_width == 0) throw Error("config: eval.beam_width must be >= 1");
    if (eval.ece_buckets == 0) throw Error("config: eval.ece_buckets must be >= 1");
    if (eval.novelty_buckets == 0) throw Error("config: eval.novelty_buckets must be >= 1");
    for (double a : eval.alpha_grid) {
        if (!(a >= 0.0)) throw Error("config: eval.alpha_grid entries must be >= 0");
    }
    if (sweep.gammas.empty() || sweep.widths.empty()) throw Error("config: sweep lists must be non-empty");
    for (double g : sweep.gammas) {
        if (!(g >= 0.0)) throw Error("config: sweep.gammas entries must be >= 0");
    }
    for (std::size_t i = 0; i < sweep.widths.size(); ++i) {
        if (sweep.widths[i] == 0 || (i > 0 && sweep.widths[i] <= sweep.widths[i - 1])) {
            throw Error("config: sweep.widths must be positive and strictly ascending");
        }
    }
    if (few_shot.k == 0 || few_shot.repeats == 0) throw Error("config: few_shot.k and repeats must be >= 1");
    if (loop_rounds == 0) throw Error("config: loop.rounds must be >= 1");
}

model::ModelConfig RunConfig::resolved_model(std::size_t vocab_size) const {
    model::ModelConfig m = model;
    if (m.vocab_size == 0) {
        m.vocab_size = vocab_size;
    } else if (m.vocab_size != vocab_size) {
        throw Error("config: model.vocab_size " + std::to_string(m.vocab_size) + " differs from the vocabulary (" +
                    std::to_string(vocab_size) + ")");
    }
    m.validate();
    return m;
}

decode::BeamConfig RunConfig::eval_beam(const model::ModelConfig& m) const {
    decode::BeamConfig b;
    b.beam_width = eval.beam_width;
    b.n_groups = 1;
    b.n_candidates = eval.beam_width;
    b.diversity_strength = 0.0;
    b.length_penalty = train.alpha;
    b.max_len = std::min(train.beam.max_len, m.max_tgt_len);
    return b;
}

void set_config_value(RunConfig& cfg, std::string_view dotted_key, std::string_view value) {
    const auto dot = dotted_key.find('.');
    if (dot == std::string_view::npos) {
        throw Error("config override '" + std::string(dotted_key) + "' must have the form section.key");
    }
    const Key& k = find_key(dotted_key.substr(0, dot), dotted_key.substr(dot + 1));
    try {
        k.set(cfg, value);
    } catch (const Error& e) {
        throw Error("config key '" + std::string(dotted_key) + "': " + e.what());
    }
}

void apply_config_text(RunConfig& cfg, std::string_view text, std::string_view origin) {
    std::string section;
    std::set<std::string> seen;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto nl = text.find('\n', pos);
        std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        const auto where = std::string(origin) + ":" + std::to_string(line_no) + ": ";
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw Error(where + "malformed section header");
            section = std::string(trim(line.substr(1, line.size() - 2)));
            bool known = false;
            for (const auto& k : keys()) known = known || k.section == section;
            if (!known) throw Error(where + "unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw Error(where + "expected key = value");
        if (section.empty()) throw Error(where + "key outside of a section");
        const std::string key(trim(line.substr(0, eq)));
        const std::string dotted = section + "." + key;
        if (!seen.insert(dotted).second) throw Error(where + "duplicate key '" + dotted + "'");
        try {
            set_config_value(cfg, dotted, trim(line.substr(eq + 1)));
        } catch (const Error& e) {
            throw Error(where + e.what());
        }
    }
}

void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    apply_config_text(cfg, ss.str(), path.string());
}

void apply_environment(RunConfig& cfg) {
    if (const char* s = std::getenv("BRIO_SEED")) set_config_value(cfg, "train.seed", s);
    if (const char* t = std::getenv("BRIO_THREADS")) set_config_value(cfg, "train.threads", t);
}

std::string render_config(const RunConfig& cfg) {
    std::string out, section;
    for (const auto& k : keys()) {
        if (k.section != section) {
            if (!section.empty()) out += "\n";
            section = k.section;
            out += "[" + section + "]\n";
        }
        out += k.key + " = " + k.get(cfg) + "\n";
    }
    return out;
}

std::vector<ConfigKeyInfo> config_keys() {
    const RunConfig defaults;
    std::vector<ConfigKeyInfo> out;
    for (const auto& k : keys()) out.push_back({k.section, k.key, k.get(defaults), k.help});
    return out;
}

}  // namespace brio
