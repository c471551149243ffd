#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "mindgrid/cli_core.hpp"
#include "mindgrid/error.hpp"

using namespace mindgrid;
namespace fs = std::filesystem;

namespace {

std::string file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

struct CliFixture {
    fs::path dir;
    GenPaths data;
    TrainResult run;
    TrainOptions tr;

    CliFixture() {
        dir = fs::temp_directory_path() / "mindgrid_cli_test";
        fs::remove_all(dir);

        GenOptions gen;
        gen.task = "frozenlake";
        gen.sizes = {3};
        gen.train_count = 24;
        gen.dev_count = 8;
        gen.seed = 17;
        gen.qlearn_episodes = 600;
        gen.out_dir = (dir / "data").string();
        gen.variants = {"direct", "visual_cot"};
        data = run_gen(gen);

        tr.train_path = data.train;
        tr.dev_path = data.dev;
        tr.vocab_path = data.vocab;
        tr.codebook_path = data.codebook;
        tr.out_dir = (dir / "run").string();
        tr.variant = "visual_cot";
        tr.layers = 1;
        tr.heads = 2;
        tr.width = 16;
        tr.ff_width = 32;
        tr.max_seq = 352;
        tr.max_rel = 32;
        tr.epochs = 1;
        tr.batch_size = 8;
        tr.seed = 4;
        tr.eval_every = 0;
        run = run_train(tr);
    }
};

const CliFixture& fixture() {
    static const CliFixture f;
    return f;
}

} // namespace

TEST_CASE("exit codes follow the documented convention") {
    CHECK(exit_code_for(ErrorKind::invalid_spec) == 2);
    CHECK(exit_code_for(ErrorKind::invalid_argument) == 2);
    CHECK(exit_code_for(ErrorKind::exhaustion) == 2);
    CHECK(exit_code_for(ErrorKind::vocabulary) == 2);
    CHECK(exit_code_for(ErrorKind::format) == 3);
    CHECK(exit_code_for(ErrorKind::integrity) == 3);
    CHECK(exit_code_for(ErrorKind::numeric) == 4);
}

TEST_CASE("gen rejects out-of-range sizes as usage errors") {
    GenOptions gen;
    gen.task = "maze";
    gen.sizes = {2};
    gen.train_count = 4;
    gen.dev_count = 2;
    gen.out_dir = (fs::temp_directory_path() / "mindgrid_cli_badsize").string();
    bool usage = false;
    try {
        run_gen(gen);
    } catch (const Error& e) {
        usage = exit_code_for(e.kind()) == 2;
    }
    CHECK(usage);
}

TEST_CASE("gen is byte-reproducible") {
    const fs::path dir = fs::temp_directory_path() / "mindgrid_cli_repro";
    fs::remove_all(dir);
    GenOptions gen;
    gen.task = "maze";
    gen.sizes = {3, 4};
    gen.train_count = 20;
    gen.dev_count = 6;
    gen.seed = 5;
    gen.variants = {"direct"};
    gen.out_dir = (dir / "a").string();
    GenPaths a = run_gen(gen);
    gen.out_dir = (dir / "b").string();
    GenPaths b = run_gen(gen);

    CHECK(file_bytes(a.train) == file_bytes(b.train));
    CHECK(file_bytes(a.dev) == file_bytes(b.dev));
    CHECK(file_bytes(a.stats) == file_bytes(b.stats));
    CHECK(file_bytes(a.vocab) == file_bytes(b.vocab));
    CHECK(file_bytes(a.codebook) == file_bytes(b.codebook));
}

TEST_CASE("eval writes a full report deterministically") {
    const CliFixture& f = fixture();

    EvalCmdOptions ev;
    ev.checkpoint_path = f.run.checkpoint_path;
    ev.dataset_path = f.data.dev;
    ev.vocab_path = f.data.vocab;
    ev.codebook_path = f.data.codebook;
    ev.out_path = (f.dir / "report.json").string();
    ev.limit = 4;
    ev.max_new_tokens = 128;
    EvalOutcome out = run_eval(ev);
    CHECK(out.total == 4);

    nlohmann::json report = nlohmann::json::parse(file_bytes(ev.out_path));
    for (const char* key : {"task", "variant", "total", "accuracy", "v_acc", "v_red", "v_steps",
                            "v_ratio", "by_grid_size", "predictions", "golds"}) {
        CHECK(report.contains(key));
    }
    CHECK(report["by_grid_size"].contains("overall"));
    CHECK(report["variant"] == "visual_cot"); // taken from the checkpoint

    // Identical inputs, identical bytes.
    EvalCmdOptions ev2 = ev;
    ev2.out_path = (f.dir / "report2.json").string();
    run_eval(ev2);
    CHECK(file_bytes(ev.out_path) == file_bytes(ev2.out_path));

    // Threaded generation produces the same report.
    EvalCmdOptions ev4 = ev;
    ev4.out_path = (f.dir / "report4.json").string();
    ev4.threads = 2;
    run_eval(ev4);
    CHECK(file_bytes(ev.out_path) == file_bytes(ev4.out_path));

    // Ensemble with itself reproduces its own accuracy as the upper bound.
    EvalCmdOptions ev3 = ev;
    ev3.out_path = (f.dir / "report3.json").string();
    ev3.ensemble_with = ev.out_path;
    EvalOutcome out3 = run_eval(ev3);
    nlohmann::json r3 = nlohmann::json::parse(file_bytes(ev3.out_path));
    CHECK(r3.contains("ensemble_upperbound"));
    CHECK(r3["ensemble_upperbound"].get<double>() == doctest::Approx(out3.accuracy));
}

TEST_CASE("eval on missing inputs is a usage error; foreign artifacts fail integrity") {
    const CliFixture& f = fixture();
    EvalCmdOptions ev;
    ev.checkpoint_path = (f.dir / "nope.ckpt").string();
    ev.dataset_path = f.data.dev;
    ev.vocab_path = f.data.vocab;
    ev.codebook_path = f.data.codebook;
    bool usage = false;
    try {
        run_eval(ev);
    } catch (const Error& e) {
        usage = exit_code_for(e.kind()) == 2;
    }
    CHECK(usage);

    // A vocab whose digest differs from the checkpoint's is rejected as 3.
    const std::string other_vocab = (f.dir / "other_vocab.json").string();
    {
        Codebook cb = build_codebook(SpriteSet::instance().all());
        std::vector<std::string> corpus = template_corpus();
        corpus.push_back("foreign word");
        save_vocab(build_vocab(corpus, cb), cb, other_vocab);
    }
    EvalCmdOptions bad;
    bad.checkpoint_path = f.run.checkpoint_path;
    bad.dataset_path = f.data.dev;
    bad.vocab_path = other_vocab;
    bad.codebook_path = f.data.codebook;
    bool integrity = false;
    try {
        run_eval(bad);
    } catch (const Error& e) {
        integrity = exit_code_for(e.kind()) == 3;
    }
    CHECK(integrity);
}

TEST_CASE("analyze reports overlap ratios for the requested ks") {
    const CliFixture& f = fixture();
    AnalyzeOptions an;
    an.checkpoint_path = f.run.checkpoint_path;
    an.vocab_path = f.data.vocab;
    an.codebook_path = f.data.codebook;
    an.out_path = (f.dir / "overlap.json").string();
    an.ks = {10, 50};
    auto ratios = run_analyze(an);
    REQUIRE(ratios.size() == 2);
    for (const auto& [k, ratio] : ratios) {
        CHECK(ratio >= 0.0);
        CHECK(ratio <= 1.0);
    }
    nlohmann::json j = nlohmann::json::parse(file_bytes(an.out_path));
    CHECK(j["overlap"].contains("10"));
    CHECK(j["overlap"].contains("50"));
}
