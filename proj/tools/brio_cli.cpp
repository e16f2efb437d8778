// Command-line pipeline: every subcommand reads files, runs one driver and
// writes a fresh output directory with a manifest of content hashes.

#include <openssl/evp.h>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "brio/harness.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace brio;

namespace {

struct UsageError : Error {
    using Error::Error;
};
struct InputError : Error {
    using Error::Error;
};
struct HashMismatch : Error {
    using Error::Error;
};

std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw Error("sha256 failed");
    }
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 15];
    }
    return out;
}

std::string hash_file(const fs::path& p) { return sha256_hex(report::read_text_file(p)); }

/// Options shared by every subcommand.
struct Common {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--config", c.config_path, "config file (INI sections, key = value)");
    sub->add_option("--set", c.overrides, "override one key, section.key=value (repeatable)");
    sub->add_option("--out", c.out, "output directory; must not exist or be empty")->required();
}

RunConfig resolve_config(const Common& c) {
    RunConfig cfg;
    try {
        if (!c.config_path.empty()) {
            if (!fs::exists(c.config_path)) throw InputError("missing config file " + c.config_path);
            apply_config_file(cfg, c.config_path);
        }
        apply_environment(cfg);
        for (const auto& o : c.overrides) {
            const auto eq = o.find('=');
            if (eq == std::string::npos) throw UsageError("--set expects section.key=value, got '" + o + "'");
            set_config_value(cfg, o.substr(0, eq), o.substr(eq + 1));
        }
        cfg.validate();
    } catch (const InputError&) {
        throw;
    } catch (const UsageError&) {
        throw;
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    return cfg;
}

/// Owns the output directory for one run: creates it fresh, holds the lock
/// file and writes the manifest once the driver finished.
class Session {
public:
    Session(std::string command, const Common& common)
        : command_(std::move(command)), cfg_(resolve_config(common)), out_(common.out) {
        if (fs::exists(out_) && !(fs::is_directory(out_) && fs::is_empty(out_))) {
            throw UsageError("output directory " + out_.string() + " exists and is not empty");
        }
        fs::create_directories(out_);
        lock_ = out_ / ".lock";
        std::FILE* f = std::fopen(lock_.c_str(), "wx");
        if (f == nullptr) throw UsageError("output directory " + out_.string() + " is locked by another run");
        std::fclose(f);
    }
    Session(const Session&) = delete;
    Session& operator=(const Session&) = delete;
    ~Session() {
        std::error_code ec;
        fs::remove(lock_, ec);
    }

    const RunConfig& config() const { return cfg_; }
    RunConfig& config() { return cfg_; }
    const fs::path& out() const { return out_; }

    /// Registers an input file, checking it against the manifest of the run
    /// that produced it when one sits next to it.
    fs::path input(const std::string& path) {
        const fs::path p(path);
        if (!fs::is_regular_file(p)) throw InputError("missing input file " + path);
        const std::string h = hash_file(p);
        const fs::path manifest = p.parent_path() / "manifest.json";
        if (fs::exists(manifest)) {
            const auto m = json::parse(report::read_text_file(manifest), nullptr, false);
            if (m.is_discarded()) throw InputError("malformed manifest " + manifest.string());
            const auto name = p.filename().string();
            if (m.contains("outputs") && m["outputs"].contains(name) && m["outputs"][name] != h) {
                throw HashMismatch("hash mismatch for " + path + " against " + manifest.string());
            }
        }
        inputs_[path] = h;
        return p;
    }

    /// Loads the vocabulary and one split from a make-data directory.
    corpus::Dataset dataset(const std::string& dir, corpus::Split split) {
        const auto v = vocab(dir);
        return corpus::load_dataset(input((fs::path(dir) / (std::string(corpus::split_name(split)) + ".tsv")).string()),
                                    v, split);
    }
    corpus::Vocab vocab(const std::string& dir) {
        return corpus::read_vocab(input((fs::path(dir) / "vocab.txt").string()));
    }
    model::Checkpoint checkpoint(const std::string& path) { return model::load_checkpoint(input(path)); }
    std::vector<CandidateSet> candidates(const std::string& path) { return read_candidate_cache(input(path)); }

    fs::path output(const std::string& name) {
        outputs_.push_back(name);
        return out_ / name;
    }
    void report(const std::string& stem, const report::Report& r) {
        report::write(out_, stem, r);
        outputs_.push_back(stem + ".json");
        outputs_.push_back(stem + ".txt");
    }
    void text(const std::string& name, const std::string& body) { report::write_text_file(output(name), body); }

    void finish() {
        json outputs = json::object();
        for (const auto& name : outputs_) outputs[name] = hash_file(out_ / name);
        json m{{"command", command_},
               {"version", std::string(report::kVersion)},
               {"hash_algorithm", "sha256"},
               {"seed", cfg_.train.seed},
               {"data_seed", cfg_.data.seed},
               {"config", render_config(cfg_)},
               {"inputs", inputs_},
               {"outputs", outputs}};
        report::write_text_file(out_ / "manifest.json", m.dump(2) + "\n");
    }

private:
    std::string command_;
    RunConfig cfg_;
    fs::path out_;
    fs::path lock_;
    std::map<std::string, std::string> inputs_;
    std::vector<std::string> outputs_;
};

corpus::Split split_of(const std::string& s) {
    try {
        return corpus::parse_split(s);
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
}

std::string log_jsonl(const std::vector<train::LogRecord>& log) {
    std::string out;
    for (const auto& r : log) {
        json j{{"stage", r.stage}, {"epoch", r.epoch}, {"step", r.step}, {"lr", r.lr}, {"xent", r.xent},
               {"ctr", r.ctr},     {"total", r.total}};
        j["valid_xent"] = std::isfinite(r.valid_xent) ? json(r.valid_xent) : json(nullptr);
        out += j.dump() + "\n";
    }
    return out;
}

std::string words_of(const corpus::Vocab& v, const TokenSequence& seq) {
    std::string s;
    for (const auto& w : corpus::decode(v, seq)) s += (s.empty() ? "" : " ") + w;
    return s;
}

/// "name=path" or a bare path named after its file stem.
harness::NamedCheckpoint named_checkpoint(Session& s, const std::string& spec) {
    const auto eq = spec.find('=');
    const std::string path = eq == std::string::npos ? spec : spec.substr(eq + 1);
    const std::string name = eq == std::string::npos ? fs::path(spec).stem().string() : spec.substr(0, eq);
    return {name, s.checkpoint(path)};
}

harness::CandidatePool named_pool(Session& s, const std::string& spec) {
    const auto eq = spec.find('=');
    const std::string path = eq == std::string::npos ? spec : spec.substr(eq + 1);
    const std::string name = eq == std::string::npos ? fs::path(spec).stem().string() : spec.substr(0, eq);
    return {name, s.candidates(path)};
}

void require_aligned(const std::vector<CandidateSet>& sets, const corpus::Dataset& data, const std::string& what) {
    if (sets.size() != data.size()) {
        throw InputError(what + " holds " + std::to_string(sets.size()) + " sets for " + std::to_string(data.size()) +
                         " examples");
    }
}

std::string config_help() {
    std::ostringstream out;
    out << "Config keys (section.key = default):\n";
    for (const auto& k : config_keys()) {
        out << "  " << k.section << "." << k.key << " = " << (k.default_value.empty() ? "\"\"" : k.default_value)
            << "    " << k.help << "\n";
    }
    out << "Environment: BRIO_SEED sets train.seed, BRIO_THREADS sets train.threads.\n"
        << "Precedence: --config < environment < --set.\n";
    return out.str();
}

int exit_code_of(const std::exception& e) {
    if (dynamic_cast<const UsageError*>(&e)) return 2;
    if (dynamic_cast<const InputError*>(&e)) return 3;
    if (dynamic_cast<const HashMismatch*>(&e)) return 4;
    return 1;
}

std::string kind_of(const std::exception& e) {
    if (dynamic_cast<const UsageError*>(&e)) return "usage";
    if (dynamic_cast<const InputError*>(&e)) return "input";
    if (dynamic_cast<const HashMismatch*>(&e)) return "hash_mismatch";
    return "runtime";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Contrastive reranking and fine-tuning pipeline for sequence-to-sequence models"};
    app.require_subcommand(1);
    app.footer(config_help());

    Common common;
    std::string data_dir, ckpt, cands, split_name = "test", report_kind = "rouge", sweep_kind = "gamma";
    std::string test_cands, valid_cands;
    std::vector<std::string> models, pools;

    auto* make_data = app.add_subcommand("make-data", "generate the synthetic splits and vocabulary");
    add_common(make_data, common);

    auto* train_mle = app.add_subcommand("train-mle", "train with label-smoothed cross-entropy");
    add_common(train_mle, common);
    train_mle->add_option("--data", data_dir, "make-data directory")->required();
    train_mle->add_option("--init", ckpt, "continue from this checkpoint");

    auto* gen = app.add_subcommand("gen-candidates", "diverse beam search candidates for a split");
    add_common(gen, common);
    gen->add_option("--data", data_dir, "make-data directory")->required();
    gen->add_option("--checkpoint", ckpt, "generating model")->required();
    gen->add_option("--split", split_name, "train, valid or test")->capture_default_str();

    auto* train_brio = app.add_subcommand("train-brio", "fine-tune with the multi-task contrastive objective");
    add_common(train_brio, common);
    train_brio->add_option("--data", data_dir, "make-data directory")->required();
    train_brio->add_option("--checkpoint", ckpt, "starting model")->required();
    train_brio->add_option("--candidates", cands, "candidate cache of the train split")->required();

    auto* rerank = app.add_subcommand("rerank", "pick the highest-scoring cached candidate per example");
    add_common(rerank, common);
    rerank->add_option("--data", data_dir, "make-data directory")->required();
    rerank->add_option("--checkpoint", ckpt, "scoring model")->required();
    rerank->add_option("--candidates", cands, "candidate cache")->required();
    rerank->add_option("--split", split_name, "train, valid or test")->capture_default_str();

    auto* evaluate = app.add_subcommand("evaluate", "ROUGE, coordination or novelty report");
    add_common(evaluate, common);
    evaluate->add_option("--data", data_dir, "make-data directory")->required();
    evaluate->add_option("--report", report_kind, "rouge, coordination or novelty")
        ->check(CLI::IsMember({"rouge", "coordination", "novelty"}))
        ->capture_default_str();
    evaluate->add_option("--model", models, "name=checkpoint (repeatable)")->required();
    evaluate->add_option("--candidates", pools, "name=cache for coordination (repeatable)");
    evaluate->add_option("--valid-candidates", valid_cands, "valid-split cache for choosing alpha from eval.alpha_grid");
    evaluate->add_option("--split", split_name, "train, valid or test")->capture_default_str();

    auto* sweep = app.add_subcommand("sweep", "gamma or beam-width sweep");
    add_common(sweep, common);
    sweep->add_option("--data", data_dir, "make-data directory")->required();
    sweep->add_option("--kind", sweep_kind, "gamma or beam")->check(CLI::IsMember({"gamma", "beam"}))->capture_default_str();
    sweep->add_option("--checkpoint", ckpt, "MLE checkpoint (gamma sweep)");
    sweep->add_option("--candidates", cands, "train-split cache (gamma sweep)");
    sweep->add_option("--test-candidates", test_cands, "evaluation-split cache (gamma sweep)");
    sweep->add_option("--model", models, "name=checkpoint (beam sweep, repeatable)");
    sweep->add_option("--split", split_name, "evaluation split")->capture_default_str();

    auto* loop = app.add_subcommand("loop", "alternate candidate generation and fine-tuning");
    add_common(loop, common);
    loop->add_option("--data", data_dir, "make-data directory")->required();
    loop->add_option("--checkpoint", ckpt, "starting model")->required();

    auto* few_shot = app.add_subcommand("few-shot", "fine-tune on small training subsets");
    add_common(few_shot, common);
    few_shot->add_option("--data", data_dir, "make-data directory")->required();
    few_shot->add_option("--checkpoint", ckpt, "starting model")->required();
    few_shot->add_option("--test-candidates", test_cands, "evaluation-split cache for coordination");

    auto* calibrate = app.add_subcommand("calibrate", "expected calibration error of generated tokens");
    add_common(calibrate, common);
    calibrate->add_option("--data", data_dir, "make-data directory")->required();
    calibrate->add_option("--model", models, "name=checkpoint (repeatable)")->required();
    calibrate->add_option("--split", split_name, "train, valid or test")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << json{{"error", e.what()}, {"kind", "usage"}}.dump() << "\n";
        return 2;
    }

    try {
        if (make_data->parsed()) {
            Session s("make-data", common);
            const auto splits = harness::make_synthetic_splits(s.config().data);
            corpus::write_vocab(s.output("vocab.txt"), splits.vocab);
            corpus::save_dataset(s.output("train.tsv"), splits.train, splits.vocab);
            corpus::save_dataset(s.output("valid.tsv"), splits.valid, splits.vocab);
            corpus::save_dataset(s.output("test.tsv"), splits.test, splits.vocab);
            s.finish();
        } else if (train_mle->parsed()) {
            Session s("train-mle", common);
            const auto& cfg = s.config();
            const auto vocab = s.vocab(data_dir);
            const auto train = s.dataset(data_dir, corpus::Split::train);
            const auto valid = s.dataset(data_dir, corpus::Split::valid);
            const auto init = ckpt.empty() ? model::Checkpoint::fresh(cfg.resolved_model(vocab.size()), cfg.train.seed)
                                           : s.checkpoint(ckpt);
            const auto r = train::train_mle(init, train, &valid, cfg.train);
            model::save_checkpoint(s.output("model.ckpt"), r.checkpoint);
            s.text("train_log.jsonl", log_jsonl(r.log));
            s.finish();
        } else if (gen->parsed()) {
            Session s("gen-candidates", common);
            const auto data = s.dataset(data_dir, split_of(split_name));
            const auto ck = s.checkpoint(ckpt);
            const auto sets = train::build_candidate_sets(ck.params, ck.config, data, s.config().train);
            write_candidate_cache(s.output("candidates.jsonl"), sets);
            s.finish();
        } else if (train_brio->parsed()) {
            Session s("train-brio", common);
            const auto train = s.dataset(data_dir, corpus::Split::train);
            const auto valid = s.dataset(data_dir, corpus::Split::valid);
            const auto ck = s.checkpoint(ckpt);
            const auto sets = s.candidates(cands);
            require_aligned(sets, train, "candidate cache");
            const auto r = train::train_brio(ck, train, sets, &valid, s.config().train);
            model::save_checkpoint(s.output("model.ckpt"), r.checkpoint);
            s.text("train_log.jsonl", log_jsonl(r.log));
            s.finish();
        } else if (rerank->parsed()) {
            Session s("rerank", common);
            const auto vocab = s.vocab(data_dir);
            const auto data = s.dataset(data_dir, split_of(split_name));
            const auto ck = s.checkpoint(ckpt);
            const auto sets = s.candidates(cands);
            require_aligned(sets, data, "candidate cache");
            const auto& tc = s.config().train;
            const auto chosen = train::rerank_select(ck.params, ck.config, data, sets, tc.alpha, tc.threads);
            std::vector<TokenSequence> outputs;
            std::string text;
            for (std::size_t i = 0; i < chosen.size(); ++i) {
                outputs.push_back(sets[i].candidates[chosen[i]].candidate.tokens);
                text += std::to_string(chosen[i]) + "\t" + words_of(vocab, outputs.back()) + "\n";
            }
            s.text("selections.tsv", text);
            const auto agg = harness::rouge_aggregate(outputs, data);
            report::Report r{"rerank", render_config(s.config()), {}, {}};
            r.table("rouge", {"rouge1", "rouge2", "rougeL", "examples"})
                .add_row({agg.r1, agg.r2, agg.rl, static_cast<std::int64_t>(agg.n)});
            s.report("rerank", r);
            s.finish();
        } else if (evaluate->parsed()) {
            Session s("evaluate", common);
            const auto vocab = s.vocab(data_dir);
            const auto split = split_of(split_name);
            const auto data = s.dataset(data_dir, split);
            std::vector<harness::NamedCheckpoint> named;
            for (const auto& m : models) named.push_back(named_checkpoint(s, m));
            const auto& cfg = s.config();
            const auto config_text = render_config(cfg);
            if (report_kind == "rouge") {
                report::Report r{"rouge", config_text, {}, {}};
                auto& t = r.table("rouge", {"model", "rouge1", "rouge2", "rougeL", "examples"});
                for (const auto& m : named) {
                    const auto outputs =
                        harness::decode_split(m.checkpoint, data, cfg.eval_beam(m.checkpoint.config), cfg.train.threads);
                    std::string text;
                    for (const auto& c : outputs) text += words_of(vocab, c.tokens) + "\n";
                    s.text("outputs-" + m.name + ".txt", text);
                    const auto agg = harness::rouge_aggregate(outputs, data);
                    t.add_row({m.name, agg.r1, agg.r2, agg.rl, static_cast<std::int64_t>(agg.n)});
                }
                s.report("rouge", r);
            } else if (report_kind == "coordination") {
                if (pools.empty()) throw UsageError("--report coordination needs at least one --candidates");
                std::vector<harness::CandidatePool> named_pools;
                for (const auto& p : pools) {
                    named_pools.push_back(named_pool(s, p));
                    require_aligned(named_pools.back().sets, data, "candidate cache " + p);
                }
                std::optional<corpus::Dataset> valid;
                std::vector<CandidateSet> valid_sets;
                if (!valid_cands.empty()) {
                    valid = s.dataset(data_dir, corpus::Split::valid);
                    valid_sets = s.candidates(valid_cands);
                    require_aligned(valid_sets, *valid, "validation cache");
                }
                const auto rows = harness::run_coordination_report(named, named_pools, data, cfg,
                                                                   valid ? &*valid : nullptr,
                                                                   valid ? &valid_sets : nullptr);
                s.report("coordination", harness::coordination_report(rows, config_text));
            } else {
                s.report("novelty", harness::novelty_report(harness::run_novelty_report(named, data, cfg), config_text));
            }
            s.finish();
        } else if (sweep->parsed()) {
            Session s("sweep", common);
            const auto& cfg = s.config();
            const auto config_text = render_config(cfg);
            const auto data = s.dataset(data_dir, split_of(split_name));
            if (sweep_kind == "gamma") {
                if (ckpt.empty() || cands.empty()) throw UsageError("gamma sweep needs --checkpoint and --candidates");
                const auto train = s.dataset(data_dir, corpus::Split::train);
                const auto mle = s.checkpoint(ckpt);
                const auto train_sets = s.candidates(cands);
                require_aligned(train_sets, train, "candidate cache");
                const auto test_sets = test_cands.empty()
                                           ? train::build_candidate_sets(mle.params, mle.config, data, cfg.train)
                                           : s.candidates(test_cands);
                require_aligned(test_sets, data, "evaluation cache");
                const auto points = harness::run_coefficient_sweep(mle, train, train_sets, data, test_sets, cfg);
                for (std::size_t i = 0; i < points.size(); ++i) {
                    model::save_checkpoint(s.output("gamma-" + std::to_string(i) + ".ckpt"), points[i].checkpoint);
                }
                s.report("gamma_sweep", harness::coefficient_sweep_report(points, config_text));
            } else {
                if (models.empty()) throw UsageError("beam sweep needs at least one --model");
                std::vector<harness::NamedCheckpoint> named;
                for (const auto& m : models) named.push_back(named_checkpoint(s, m));
                const auto rows = harness::run_beam_sweep(named, data, cfg.sweep.widths, cfg);
                s.report("beam_sweep", harness::beam_sweep_report(rows, config_text));
            }
            s.finish();
        } else if (loop->parsed()) {
            Session s("loop", common);
            const auto train = s.dataset(data_dir, corpus::Split::train);
            const auto ck = s.checkpoint(ckpt);
            const auto rounds = train::loop_finetune(ck, train, s.config().train, s.config().loop_rounds, s.out());
            for (const auto& r : rounds) {
                s.output(r.cache_path.filename().string());
                s.output(r.checkpoint_path.filename().string());
            }
            s.finish();
        } else if (few_shot->parsed()) {
            Session s("few-shot", common);
            const auto& cfg = s.config();
            const auto train = s.dataset(data_dir, corpus::Split::train);
            const auto test = s.dataset(data_dir, corpus::Split::test);
            const auto init = s.checkpoint(ckpt);
            const auto test_sets = test_cands.empty()
                                       ? train::build_candidate_sets(init.params, init.config, test, cfg.train)
                                       : s.candidates(test_cands);
            require_aligned(test_sets, test, "evaluation cache");
            const auto result = train::few_shot_finetune(
                init, train, cfg.few_shot.k, cfg.few_shot.repeats, cfg.train, [&](const model::Checkpoint& ck) {
                    const auto agg = harness::rouge_aggregate(
                        harness::decode_split(ck, test, cfg.eval_beam(ck.config), cfg.train.threads), test);
                    const auto co = harness::coordination_stats(ck, test, test_sets, cfg.train.alpha, cfg.train.threads);
                    return std::map<std::string, double>{{"rouge1", agg.r1},
                                                         {"rouge2", agg.r2},
                                                         {"rougeL", agg.rl},
                                                         {"spearman", co.spearman},
                                                         {"ranking_accuracy", co.ranking_accuracy}};
                });
            report::Report r{"few-shot", render_config(cfg), {}, {}};
            auto& per = r.table("repeats", {"repeat", "metric", "value"});
            for (std::size_t i = 0; i < result.repeats.size(); ++i) {
                for (const auto& [name, v] : result.repeats[i].metrics) {
                    per.add_row({static_cast<std::int64_t>(i), name, v});
                }
            }
            auto& agg = r.table("summary", {"metric", "mean", "stddev"});
            for (const auto& [name, mean] : result.mean) agg.add_row({name, mean, result.stddev.at(name)});
            s.report("few_shot", r);
            s.finish();
        } else if (calibrate->parsed()) {
            Session s("calibrate", common);
            const auto data = s.dataset(data_dir, split_of(split_name));
            std::vector<harness::CalibrationResult> results;
            for (const auto& m : models) {
                results.push_back(harness::run_calibration_report(named_checkpoint(s, m), data, s.config()));
                s.text("reliability-" + results.back().model + ".csv", harness::reliability_csv(results.back().ece));
            }
            s.report("calibration", harness::calibration_report(results, render_config(s.config())));
            s.finish();
        }
    } catch (const std::exception& e) {
        std::cerr << json{{"error", e.what()}, {"kind", kind_of(e)}}.dump() << "\n";
        return exit_code_of(e);
    }
    return 0;
}
