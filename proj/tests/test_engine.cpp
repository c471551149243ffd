#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "mindgrid/cli_core.hpp"
#include "mindgrid/engine.hpp"
#include "mindgrid/error.hpp"

using namespace mindgrid;
namespace fs = std::filesystem;

namespace {

struct ToySetup {
    Codebook cb;
    TokenVocab vocab;
    ModelConfig cfg;

    ToySetup() : cb(build_codebook(SpriteSet::instance().all())), vocab(default_vocab(cb)) {
        cfg.layers = 1;
        cfg.heads = 2;
        cfg.width = 16;
        cfg.ff_width = 32;
        cfg.max_seq = 96;
        cfg.max_rel = 32;
        cfg.vocab_size = vocab.size();
        cfg.seed = 5;
    }
};

const ToySetup& toy() {
    static const ToySetup t;
    return t;
}

// Zeroing the final norm's gamma and steering its beta makes the logits
// constant in the context, so the argmax is fully scripted through tok_emb.
Parameters scripted_model(int favored_token, double weight = 8.0) {
    const ToySetup& t = toy();
    Parameters p(t.cfg);
    const TensorInfo& gamma = p.tensor("final_ln.gamma");
    const TensorInfo& beta = p.tensor("final_ln.beta");
    for (std::size_t i = 0; i < gamma.size; ++i) p.set(gamma.offset + i, 0.0f);
    p.set(beta.offset, 1.0f);
    const TensorInfo& emb = p.tensor("tok_emb");
    p.set(emb.offset + static_cast<std::size_t>(favored_token) * t.cfg.width,
          static_cast<float>(weight));
    // Give every image token a deterministic mild preference ladder on the
    // coordinate the constant final vector reads.
    for (int e = 0; e < t.cb.entries; ++e) {
        const int tok = t.vocab.image_token(e);
        p.set(emb.offset + static_cast<std::size_t>(tok) * t.cfg.width,
              static_cast<float>(e == 3 ? 2.0 : 0.1));
    }
    return p;
}

std::vector<int> tiny_prompt() {
    const ToySetup& t = toy();
    std::vector<int> ids = {TokenVocab::bos};
    for (int id : encode_text("Response:", t.vocab)) ids.push_back(id);
    return ids;
}

} // namespace

TEST_CASE("answer extraction follows the stated pattern rules") {
    CHECK(extract_answer("Action sequence finished. The answer is A.") == 'A');
    CHECK_FALSE(extract_answer("no conclusion reached").has_value());
    CHECK(extract_answer("the answer is b.") == 'B');
    CHECK(extract_answer("The answer is A. Wait. The answer is C.") == 'C'); // last wins
    CHECK(extract_answer("THE ANSWER IS d") == 'D');
    CHECK_FALSE(extract_answer("the answer is maybe").has_value());
    CHECK(extract_answer("the answer is : A .") == 'A');
}

TEST_CASE("generation enforces the image-block grammar with forced EOI") {
    const ToySetup& t = toy();
    Parameters p = scripted_model(TokenVocab::boi);

    GenerationResult gen =
        generate(p, t.vocab, t.cb, tiny_prompt(), Variant::visual_cot, 4, 2, 2, 30);

    // The scripted model emits BOI forever, so blocks fill the budget:
    // each block is BOI + 4 image tokens + forced EOI.
    REQUIRE(!gen.images.empty());
    std::size_t i = 0;
    while (i + 5 < gen.tokens.size()) {
        CHECK(gen.tokens[i] == TokenVocab::boi);
        for (std::size_t j = i + 1; j <= i + 4; ++j) {
            CHECK(t.vocab.is_image(gen.tokens[j]));
        }
        CHECK(gen.tokens[i + 5] == TokenVocab::eoi);
        i += 6;
    }
    // All drawn image tokens follow the scripted ladder (entry 3 wins).
    for (const TileImage& img : gen.images) {
        CHECK(img.width == 2);
        CHECK(img.height == 2);
        for (TileCode code : img.tiles) {
            CHECK(code == t.cb.tile_of[3]);
        }
    }
    CHECK_FALSE(gen.answer.has_value());
}

TEST_CASE("generation stops at EOS and reports truncation") {
    const ToySetup& t = toy();
    Parameters eos_model = scripted_model(TokenVocab::eos);
    GenerationResult gen =
        generate(eos_model, t.vocab, t.cb, tiny_prompt(), Variant::direct, 4, 2, 2, 50);
    CHECK(gen.tokens == std::vector<int>{TokenVocab::eos});
    CHECK_FALSE(gen.truncated);

    // A context-filling run flags truncation.
    Parameters boi_model = scripted_model(TokenVocab::boi);
    GenerationResult longrun =
        generate(boi_model, t.vocab, t.cb, tiny_prompt(), Variant::visual_cot, 4, 2, 2, 4000);
    CHECK(longrun.truncated);

    // Greedy decoding is deterministic.
    GenerationResult again =
        generate(boi_model, t.vocab, t.cb, tiny_prompt(), Variant::visual_cot, 4, 2, 2, 4000);
    CHECK(longrun.tokens == again.tokens);
}

TEST_CASE("training writes metrics, honors lambda flags, and reproduces bitwise") {
    const fs::path dir = fs::temp_directory_path() / "mindgrid_engine_test";
    fs::remove_all(dir);

    GenOptions gen;
    gen.task = "maze";
    gen.sizes = {3};
    gen.train_count = 24;
    gen.dev_count = 6;
    gen.seed = 3;
    gen.out_dir = (dir / "data").string();
    gen.variants = {"visual_cot"};
    GenPaths paths = run_gen(gen);

    TrainOptions tr;
    tr.train_path = paths.train;
    tr.dev_path = paths.dev;
    tr.vocab_path = paths.vocab;
    tr.codebook_path = paths.codebook;
    tr.variant = "visual_cot";
    tr.layers = 1;
    tr.heads = 2;
    tr.width = 16;
    tr.ff_width = 32;
    tr.max_seq = 288;
    tr.max_rel = 32;
    tr.epochs = 2;
    tr.batch_size = 8;
    tr.seed = 21;
    tr.eval_every = 0;

    SUBCASE("lambda zero makes the loss purely cross-entropy") {
        tr.out_dir = (dir / "run_l0").string();
        tr.no_token_discrepancy = true;
        TrainResult res = run_train(tr);
        REQUIRE(res.metrics.size() == 2);
        for (const EpochMetrics& em : res.metrics) {
            CHECK(em.disc == 0.0);
            CHECK(em.loss == em.ce);
        }
        auto [params, meta] = load_checkpoint(res.checkpoint_path);
        CHECK(meta.variant == "visual_cot");
    }

    SUBCASE("same seed and data order give bitwise-identical checkpoints") {
        tr.out_dir = (dir / "run_a").string();
        TrainResult a = run_train(tr);
        tr.out_dir = (dir / "run_b").string();
        TrainResult b = run_train(tr);

        auto bytes = [](const std::string& path) {
            std::ifstream f(path, std::ios::binary);
            return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        };
        CHECK(bytes(a.checkpoint_path) == bytes(b.checkpoint_path));
        CHECK(bytes(a.metrics_path) == bytes(b.metrics_path));

        // Augmentation noise is part of the seeded stream: disabling it
        // changes the trajectory.
        tr.out_dir = (dir / "run_noaug").string();
        tr.no_augment = true;
        TrainResult c = run_train(tr);
        CHECK(bytes(a.checkpoint_path) != bytes(c.checkpoint_path));
    }

    SUBCASE("artifact digest mismatches are integrity errors") {
        // A vocab with one extra word has a different digest.
        const std::string other_vocab = (dir / "other_vocab.json").string();
        {
            Codebook cb = build_codebook(SpriteSet::instance().all());
            std::vector<std::string> corpus = template_corpus();
            corpus.push_back("spurious extra lexeme");
            TokenVocab vocab = build_vocab(corpus, cb);
            save_vocab(vocab, cb, other_vocab);
        }
        tr.out_dir = (dir / "run_bad").string();
        tr.vocab_path = other_vocab;
        bool integrity = false;
        try {
            run_train(tr);
        } catch (const Error& e) {
            integrity = e.kind() == ErrorKind::integrity;
            CHECK(exit_code_for(e.kind()) == 3);
        }
        CHECK(integrity);
    }
}

TEST_CASE("teacher forcing: augmentation perturbs inputs, never golden targets") {
    const ToySetup& t = toy();
    SimilarityMatrix S = similarity_matrix(t.cb);
    NeighborTable nt = build_neighbors(S, 3);

    // Build one record by hand with a single image span.
    LakeEnv env;
    env.size = 3;
    env.agent = {0, 0};
    env.gift = {2, 2};
    TileImage img = render(EnvState(env));

    TokenSequence seq;
    seq.ids.push_back(TokenVocab::bos);
    seq.loss_mask.push_back(0);
    seq.spans.push_back({0, 1, Modality::text});
    const int start = static_cast<int>(seq.ids.size());
    seq.ids.push_back(TokenVocab::boi);
    seq.loss_mask.push_back(1);
    for (int e : tokenize_image(img, t.cb)) {
        seq.ids.push_back(t.vocab.image_token(e));
        seq.loss_mask.push_back(1);
    }
    seq.ids.push_back(TokenVocab::eoi);
    seq.loss_mask.push_back(1);
    seq.spans.push_back({start, static_cast<int>(seq.ids.size()), Modality::image});

    Example ex; // only to reuse to_record
    ex.task = Task::frozen_lake;
    ex.grid_size = 3;
    ex.seed = 1;
    ex.env0 = EnvState(env);
    ex.gold = {OutcomeLabel::fl_success};
    ex.env_fp = env_fingerprint(ex.env0);
    DatasetRecord rec = to_record(ex, Variant::visual_cot, seq);

    // With p = 1 every image token moves to a neighbor; the original ids are
    // untouched because augmentation copies.
    const std::vector<int> before = rec.token_ids;
    bool changed = false;
    for (uint64_t seed = 0; seed < 50 && !changed; ++seed) {
        std::vector<int> entries;
        for (const Span& s : rec.spans) {
            if (s.modality != Modality::image) continue;
            for (int i = s.start + 1; i + 1 < s.end; ++i) {
                entries.push_back(t.vocab.entry_of(rec.token_ids[static_cast<std::size_t>(i)]));
            }
        }
        std::vector<int> noisy = augment(entries, nt, 1.0, seed);
        changed = noisy != entries;
    }
    CHECK(changed);
    CHECK(rec.token_ids == before);
}
