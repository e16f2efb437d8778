#include "doctest.h"

#include "brio/report.hpp"
#include "cli_support.hpp"
#include "support.hpp"

using namespace brio;
using namespace brio::testing;

namespace {

std::filesystem::path write_config(const TempDir& dir, const std::string& text = kSmallConfig) {
    const auto p = dir / "run.ini";
    report::write_text_file(p, text);
    return p;
}

std::string with(const std::filesystem::path& config, const std::filesystem::path& out) {
    return " --config " + config.string() + " --out " + out.string();
}

}  // namespace

TEST_CASE("the full pipeline runs and re-runs byte-identically") {
    TempDir a("cli-a"), b("cli-b");
    const auto ca = write_config(a), cb = write_config(b);
    const auto fail_a = run_pipeline(a.path(), ca);
    REQUIRE_MESSAGE(fail_a.empty(), fail_a);
    const auto fail_b = run_pipeline(b.path(), cb);
    REQUIRE_MESSAGE(fail_b.empty(), fail_b);
    const auto ta = tree_contents(a.path()), tb = tree_contents(b.path());
    REQUIRE(ta.size() == tb.size());
    for (const auto& [name, body] : ta) {
        CAPTURE(name);
        REQUIRE(tb.count(name) == 1);
        CHECK(tb.at(name) == body);
    }
    CHECK(ta.count("mle/model.ckpt") == 1);
    CHECK(ta.count("mle/manifest.json") == 1);
    CHECK(ta.count("loop/round-1.ckpt") == 1);
    CHECK(ta.count("calib/reliability-brio.csv") == 1);
    CHECK(ta.count("gamma/gamma_sweep.json") == 1);
    CHECK(ta.at("mle/manifest.json").find("\"hash_algorithm\": \"sha256\"") != std::string::npos);
    CHECK(ta.count("mle/.lock") == 0);
}

TEST_CASE("gamma 0 training then rerank") {
    TempDir dir("cli-g0");
    const auto cfg = write_config(dir);
    const std::string root = dir.path().string();
    for (const auto& [stage, args] : pipeline_stages()) {
        if (stage == "brio") break;
        REQUIRE(run_cli(replace_root(args, root) + with(cfg, dir / stage), dir.path()).exit_code == 0);
    }
    const auto train = run_cli("train-brio --data " + root + "/data --checkpoint " + root +
                                   "/mle/model.ckpt --candidates " + root + "/cand-train/candidates.jsonl --set train.gamma=0" +
                                   with(cfg, dir / "g0"),
                               dir.path());
    REQUIRE(train.exit_code == 0);
    const auto rr = run_cli("rerank --data " + root + "/data --checkpoint " + root + "/g0/model.ckpt --candidates " +
                                root + "/cand-test/candidates.jsonl" + with(cfg, dir / "rr"),
                            dir.path());
    CHECK(rr.exit_code == 0);
    const auto sel = read_file(dir / "rr" / "selections.tsv");
    CHECK(std::count(sel.begin(), sel.end(), '\n') >= 6);

    // Continued MLE with the brio stage schedule yields the same model and selections.
    const auto mle = run_cli("train-mle --data " + root + "/data --init " + root + "/mle/model.ckpt --set mle.epochs=1" +
                                 with(cfg, dir / "cont"),
                             dir.path());
    REQUIRE(mle.exit_code == 0);
    CHECK(read_file(dir / "cont" / "model.ckpt") == read_file(dir / "g0" / "model.ckpt"));
    REQUIRE(run_cli("rerank --data " + root + "/data --checkpoint " + root + "/cont/model.ckpt --candidates " + root +
                        "/cand-test/candidates.jsonl" + with(cfg, dir / "rr-cont"),
                    dir.path())
                .exit_code == 0);
    CHECK(read_file(dir / "rr-cont" / "selections.tsv") == sel);
}

TEST_CASE("errors exit with distinct codes and a json line") {
    TempDir dir("cli-err");
    const auto cfg = write_config(dir);

    auto missing = run_cli("train-mle --data " + (dir / "nothing").string() + with(cfg, dir / "o1"), dir.path());
    CHECK(missing.exit_code == 3);
    CHECK(missing.stderr_text.find("\"error\"") != std::string::npos);

    report::write_text_file(dir / "bad.ini", "[train]\nalpha = \n");
    CHECK(run_cli("make-data" + with(dir / "bad.ini", dir / "o2"), dir.path()).exit_code != 0);

    report::write_text_file(dir / "unknown.ini", "[train]\nnot_a_key = 1\n");
    const auto unknown = run_cli("make-data" + with(dir / "unknown.ini", dir / "o3"), dir.path());
    CHECK(unknown.exit_code != 0);
    CHECK(unknown.stderr_text.find("not_a_key") != std::string::npos);

    CHECK(run_cli("make-data --set train.nope=1" + with(cfg, dir / "o4"), dir.path()).exit_code != 0);
    CHECK(run_cli("make-data", dir.path()).exit_code == 2);
    CHECK(run_cli("no-such-command", dir.path()).exit_code == 2);

    REQUIRE(run_cli("make-data" + with(cfg, dir / "data"), dir.path()).exit_code == 0);
    // A second run into the same non-empty directory is refused.
    CHECK(run_cli("make-data" + with(cfg, dir / "data"), dir.path()).exit_code != 0);

    // Tampering with an input after its manifest was written.
    {
        std::ofstream f(dir / "data" / "train.tsv", std::ios::app);
        f << "x\ty\n";
    }
    CHECK(run_cli("train-mle --data " + (dir / "data").string() + with(cfg, dir / "o5"), dir.path()).exit_code == 4);
}

TEST_CASE("help lists every config key") {
    TempDir dir("cli-help");
    const auto cmd = std::string(BRIO_CLI_PATH) + " --help > " + (dir / "help.txt").string() + " 2>&1";
    REQUIRE(std::system(cmd.c_str()) == 0);
    const auto help = read_file(dir / "help.txt");
    for (const char* key : {"train.gamma", "train.margin", "candidates.n_groups", "eval.alpha_grid", "BRIO_SEED"}) {
        CHECK_MESSAGE(help.find(key) != std::string::npos, key);
    }
}

TEST_CASE("environment overrides the file and --set overrides both") {
    TempDir dir("cli-env");
    const auto cfg = write_config(dir);
    const auto cmd = std::string("BRIO_SEED=7 ") + BRIO_CLI_PATH + " make-data --set train.seed=9" +
                     with(cfg, dir / "a") + " 2>/dev/null";
    REQUIRE(std::system(cmd.c_str()) == 0);
    const auto manifest = read_file(dir / "a" / "manifest.json");
    CHECK(manifest.find("\"seed\": 9") != std::string::npos);
    const auto cmd2 = std::string("BRIO_SEED=7 ") + BRIO_CLI_PATH + " make-data" + with(cfg, dir / "b") + " 2>/dev/null";
    REQUIRE(std::system(cmd2.c_str()) == 0);
    CHECK(read_file(dir / "b" / "manifest.json").find("\"seed\": 7") != std::string::npos);
}
