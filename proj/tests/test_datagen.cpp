#include <doctest.h>

#include <filesystem>
#include <set>

#include "mindgrid/datagen.hpp"
#include "mindgrid/error.hpp"

using namespace mindgrid;

namespace {

struct SharedArtifacts {
    Codebook cb;
    TokenVocab vocab;

    SharedArtifacts() : cb(build_codebook(SpriteSet::instance().all())), vocab(default_vocab(cb)) {}
};

const SharedArtifacts& shared() {
    static const SharedArtifacts s;
    return s;
}

DatagenConfig small_cfg(Task task, int train = 40, int dev = 12) {
    DatagenConfig cfg;
    cfg.task = task;
    cfg.train_count = train;
    cfg.dev_count = dev;
    cfg.seed = 99;
    cfg.qlearn_episodes = 800;
    return cfg;
}

// Independent replay for the audit: plain step loop, no classify_outcome.
char oracle_label(const Example& ex) {
    EnvState cur = ex.env0;
    if (ex.task == Task::mini_behavior) {
        const auto& p = std::get<PrinterEnv>(ex.env0);
        if (!p.printer || p.table.empty()) return 'D';
    }
    bool picked = false, dropped = false, toggled = false;
    for (const Action& a : ex.actions) {
        auto [next, fx] = step(cur, a);
        cur = next;
        switch (ex.task) {
        case Task::frozen_lake:
            if (fx.fell) return 'B';
            if (fx.reached) return 'A';
            break;
        case Task::mini_behavior:
            if (a.kind == ActionKind::pick_up && !fx.picked) return 'C';
            if (a.kind == ActionKind::drop && !fx.dropped) return 'B';
            picked |= fx.picked;
            dropped |= fx.dropped;
            toggled |= fx.toggled;
            break;
        case Task::maze:
            break;
        }
    }
    if (ex.task == Task::frozen_lake) return 'C';
    if (ex.task == Task::mini_behavior) return (picked && dropped && toggled) ? 'A' : '?';
    const auto& m = std::get<MazeEnv>(cur);
    for (const auto& [letter, cell] : m.destinations) {
        if (cell == m.agent) return letter;
    }
    return '?';
}

} // namespace

TEST_CASE("maze dataset replays to its gold labels with no cross-split repeats") {
    auto [train, dev] = build_maze_dataset(small_cfg(Task::maze));
    CHECK(train.examples.size() == 40);
    CHECK(dev.examples.size() == 12);

    std::set<std::pair<uint64_t, std::string>> keys;
    for (const Split* split : {&train, &dev}) {
        for (const Example& ex : split->examples) {
            REQUIRE(oracle_label(ex) == option_letter(ex.gold.label));
            const auto& m = std::get<MazeEnv>(ex.env0);
            REQUIRE(keys.insert({wall_fingerprint(m), action_string(ex.actions)}).second);
            REQUIRE(static_cast<int>(ex.actions.size()) <= 20);
        }
    }

    // Determinism: same config, same content.
    auto [train2, dev2] = build_maze_dataset(small_cfg(Task::maze));
    REQUIRE(train2.examples.size() == train.examples.size());
    for (std::size_t i = 0; i < train.examples.size(); ++i) {
        CHECK(train.examples[i].env_fp == train2.examples[i].env_fp);
        CHECK(action_string(train.examples[i].actions) == action_string(train2.examples[i].actions));
    }
}

TEST_CASE("printer dataset mixes mutations and keeps labels replay-consistent") {
    DatagenConfig cfg = small_cfg(Task::mini_behavior, 60, 15);
    auto [train, dev] = build_printer_dataset(cfg);
    CHECK(train.examples.size() == 60);

    std::set<char> labels;
    std::set<std::pair<uint64_t, std::string>> keys;
    for (const Split* split : {&train, &dev}) {
        for (const Example& ex : split->examples) {
            REQUIRE(oracle_label(ex) == option_letter(ex.gold.label));
            REQUIRE(keys.insert({ex.env_fp, action_string(ex.actions)}).second);
            labels.insert(option_letter(ex.gold.label));
            if (ex.gold.label == OutcomeLabel::mb_missing_objects) {
                const auto& p = std::get<PrinterEnv>(ex.env0);
                REQUIRE((!p.printer || p.table.empty()));
            }
        }
    }
    // The mutation pipeline produces failure labels, not only successes.
    CHECK(labels.count('A') == 1);
    CHECK(labels.size() >= 3);
}

TEST_CASE("lake dataset hits the option quota and the hole-count trend") {
    DatagenConfig cfg = small_cfg(Task::frozen_lake, 200, 50);
    auto [train, dev] = build_lake_dataset(cfg);
    CHECK(train.examples.size() == 200);
    CHECK(dev.examples.size() == 50);

    SplitStats st = stats(train);
    const double a = st.option_counts['A'] / 200.0;
    const double b = st.option_counts['B'] / 200.0;
    const double c = st.option_counts['C'] / 200.0;
    CHECK(std::abs(a - 0.44) <= 0.05);
    CHECK(std::abs(b - 0.35) <= 0.05);
    CHECK(std::abs(c - 0.21) <= 0.05);

    // Mean hole count strictly increases with grid size.
    std::map<int, std::pair<double, int>> holes_by_size;
    for (const Split* split : {&train, &dev}) {
        for (const Example& ex : split->examples) {
            REQUIRE(oracle_label(ex) == option_letter(ex.gold.label));
            const auto& l = std::get<LakeEnv>(ex.env0);
            holes_by_size[ex.grid_size].first += static_cast<double>(l.holes.size());
            holes_by_size[ex.grid_size].second += 1;
        }
    }
    double prev = -1.0;
    for (const auto& [size, acc] : holes_by_size) {
        const double mean = acc.first / acc.second;
        REQUIRE(mean > prev);
        prev = mean;
    }

    // Fall examples end their executed prefix on a hole.
    for (const Example& ex : train.examples) {
        if (ex.gold.label != OutcomeLabel::fl_fell_in_hole) continue;
        REQUIRE(!ex.trace.empty());
        const auto& last = std::get<LakeEnv>(ex.trace.back().state_after);
        REQUIRE(last.holes.count(last.agent) == 1);
    }
}

TEST_CASE("exhaustion reports partial progress") {
    DatagenConfig cfg = small_cfg(Task::maze, 4000, 1000);
    cfg.sizes = {3};
    cfg.attempt_budget = 3000; // 3x3 mazes cannot fill 5000 unique pairs in 3000 attempts
    bool thrown = false;
    try {
        build_maze_dataset(cfg);
    } catch (const ExhaustionError& e) {
        thrown = true;
        CHECK(e.produced() < e.requested());
        CHECK(e.requested() == 5000);
    }
    CHECK(thrown);
}

TEST_CASE("stats counts sum to the split size") {
    auto [train, dev] = build_maze_dataset(small_cfg(Task::maze, 30, 10));
    SplitStats st = stats(train);
    CHECK(st.total == 30);
    int option_sum = 0;
    for (const auto& [k, v] : st.option_counts) option_sum += v;
    int size_sum = 0;
    for (const auto& [k, v] : st.size_counts) size_sum += v;
    CHECK(option_sum == 30);
    CHECK(size_sum == 30);
    CHECK(st.mean_entity_count == 5.0); // agent + four labeled destinations

    Split single;
    single.examples.push_back(train.examples[0]);
    SplitStats one = stats(single);
    CHECK(one.total == 1);
    CHECK(one.option_counts[option_letter(train.examples[0].gold.label)] == 1);
    CHECK(one.mean_action_length == static_cast<double>(train.examples[0].actions.size()));
}

TEST_CASE("the five variants share one prompt and differ as specified") {
    const auto& art = shared();
    auto [train, dev] = build_maze_dataset(small_cfg(Task::maze, 6, 2));
    const Example& ex = train.examples[0];

    std::map<Variant, TokenSequence> seqs;
    for (Variant v : all_variants()) {
        seqs[v] = format_example(ex, v, art.vocab, art.cb);
    }

    // Identical prompt prefix: everything before the first supervised position.
    auto prompt_of = [](const TokenSequence& s) {
        std::vector<int> prompt;
        for (std::size_t i = 0; i < s.ids.size() && !s.loss_mask[i]; ++i) prompt.push_back(s.ids[i]);
        return prompt;
    };
    const auto base_prompt = prompt_of(seqs[Variant::direct]);
    CHECK(!base_prompt.empty());
    for (Variant v : all_variants()) {
        CHECK(prompt_of(seqs[v]) == base_prompt);
    }

    // interleaved and visual_cot share ids; only the mask differs.
    CHECK(seqs[Variant::interleaved].ids == seqs[Variant::visual_cot].ids);
    CHECK(seqs[Variant::interleaved].loss_mask != seqs[Variant::visual_cot].loss_mask);
    for (std::size_t i = 0; i < seqs[Variant::interleaved].ids.size(); ++i) {
        const bool vc = seqs[Variant::visual_cot].loss_mask[i];
        const bool il = seqs[Variant::interleaved].loss_mask[i];
        const bool image_side = art.vocab.is_image(seqs[Variant::interleaved].ids[i]) ||
                                seqs[Variant::interleaved].ids[i] == TokenVocab::boi ||
                                seqs[Variant::interleaved].ids[i] == TokenVocab::eoi;
        if (il != vc) {
            REQUIRE(image_side); // differences live on image tokens only
            REQUIRE(vc);
            REQUIRE_FALSE(il);
        }
    }

    // direct ends with the answer sentence.
    const TokenSequence& d = seqs[Variant::direct];
    std::vector<int> tail(d.ids.end() - 6, d.ids.end() - 1);
    std::string answer(1, option_letter(ex.gold.label));
    CHECK(tail == encode_text("The answer is " + answer + ".", art.vocab));
    CHECK(d.ids.back() == TokenVocab::eos);
}

TEST_CASE("cot layout narration matches the environment exactly") {
    const auto& art = shared();
    DatagenConfig cfg = small_cfg(Task::frozen_lake, 10, 4);
    auto [train, dev] = build_lake_dataset(cfg);
    const Example& ex = train.examples[0];
    const auto& lake = std::get<LakeEnv>(ex.env0);

    TokenSequence seq = format_example(ex, Variant::cot_layout, art.vocab, art.cb);
    std::vector<int> text_ids;
    for (std::size_t i = 0; i < seq.ids.size(); ++i) {
        if (art.vocab.is_text(seq.ids[i])) text_ids.push_back(seq.ids[i]);
    }
    const std::string text = decode_text(text_ids, art.vocab);

    // Reconstruct the hole list from the narration and compare as sets.
    const std::string marker = "Holes Coordinate : [";
    const std::size_t at = text.find(marker);
    REQUIRE(at != std::string::npos);
    const std::size_t end = text.find("] . Gift", at);
    REQUIRE(end != std::string::npos);
    std::string inner = text.substr(at + marker.size(), end - at - marker.size());
    std::set<Cell> parsed;
    int value = -1, x = -1;
    for (std::size_t i = 0; i < inner.size(); ++i) {
        const char ch = inner[i];
        if (std::isdigit(static_cast<unsigned char>(ch))) {
            value = value < 0 ? ch - '0' : value * 10 + (ch - '0');
        } else if (ch == ',' && value >= 0 && x < 0) {
            x = value;
            value = -1;
        } else if (ch == ']' && value >= 0) {
            parsed.insert(Cell{x, value});
            x = -1;
            value = -1;
        }
    }
    CHECK(parsed == lake.holes);
    CHECK(text.find("Gift Coordinate : [ " + std::to_string(lake.gift.x) + " , " +
                    std::to_string(lake.gift.y) + " ]") != std::string::npos);
    CHECK(text.find("Initial Agent Coordinate : [ " + std::to_string(lake.agent.x) + " , " +
                    std::to_string(lake.agent.y) + " ]") != std::string::npos);
}

TEST_CASE("oracle soundness: image spans decode to replayed renders") {
    const auto& art = shared();
    for (Task task : {Task::maze, Task::mini_behavior, Task::frozen_lake}) {
        DatagenConfig cfg = small_cfg(task, 8, 3);
        auto [train, dev] = build_dataset(cfg);
        for (const Example& ex : train.examples) {
            TokenSequence seq = format_example(ex, Variant::visual_cot, art.vocab, art.cb);

            // Collect image spans; span 0 is the prompt image.
            std::vector<TileImage> decoded;
            for (const Span& s : seq.spans) {
                if (s.modality != Modality::image) continue;
                std::vector<int> entries;
                for (int i = s.start + 1; i + 1 < s.end; ++i) {
                    entries.push_back(art.vocab.entry_of(seq.ids[static_cast<std::size_t>(i)]));
                }
                decoded.push_back(detokenize(entries, art.cb, ex.grid_size, ex.grid_size));
            }
            REQUIRE(decoded.size() == ex.trace.size() + 1);
            REQUIRE(decoded[0] == render(ex.env0));

            EnvState cur = ex.env0;
            for (std::size_t i = 0; i < ex.trace.size(); ++i) {
                auto [next, fx] = step(cur, ex.trace[i].action);
                cur = next;
                REQUIRE(decoded[i + 1] == render(cur));
            }
        }
    }
}

TEST_CASE("records round trip through jsonl files") {
    namespace fs = std::filesystem;
    const auto& art = shared();
    auto [train, dev] = build_maze_dataset(small_cfg(Task::maze, 5, 2));

    std::vector<DatasetRecord> records;
    for (const Example& ex : train.examples) {
        for (Variant v : {Variant::direct, Variant::visual_cot}) {
            records.push_back(to_record(ex, v, format_example(ex, v, art.vocab, art.cb)));
        }
    }

    DatasetHeader header;
    header.task = "maze";
    header.config_json = "{\"probe\":1}";
    header.config_digest = 7;
    header.vocab_digest = vocab_digest(art.vocab);
    header.codebook_digest = codebook_digest(art.cb);

    const fs::path dir = fs::temp_directory_path() / "mindgrid_datagen_test";
    fs::create_directories(dir);
    const std::string path = (dir / "maze.jsonl").string();
    write_dataset(path, header, records);

    auto [h2, all] = read_dataset(path);
    CHECK(h2.task == header.task);
    CHECK(h2.vocab_digest == header.vocab_digest);
    CHECK(h2.codebook_digest == header.codebook_digest);
    CHECK(h2.count == static_cast<long>(records.size()));
    REQUIRE(all.size() == records.size());
    for (std::size_t i = 0; i < all.size(); ++i) {
        CHECK(all[i].token_ids == records[i].token_ids);
        CHECK(all[i].loss_mask == records[i].loss_mask);
        CHECK(all[i].spans == records[i].spans);
        CHECK(all[i].answer == records[i].answer);
        CHECK(all[i].seed == records[i].seed);
    }

    auto [h3, only_direct] = read_dataset(path, Variant::direct);
    CHECK(only_direct.size() == train.examples.size());
    for (const DatasetRecord& r : only_direct) CHECK(r.variant == "direct");

    // The prompt boundary sits before the first supervised token.
    const DatasetRecord& r = all[0];
    const int pl = r.prompt_length();
    REQUIRE(pl > 0);
    CHECK(r.loss_mask[static_cast<std::size_t>(pl)] == 1);
    for (int i = 0; i < pl; ++i) CHECK(r.loss_mask[static_cast<std::size_t>(i)] == 0);
}

TEST_CASE("the template lexicon covers the formatter output end to end") {
    const auto& art = shared();
    // Formatting a batch from each task throws nothing, proving closure of
    // the lexicon over all dynamic pieces (coordinates, options, carrying).
    for (Task task : {Task::maze, Task::mini_behavior, Task::frozen_lake}) {
        auto [train, dev] = build_dataset(small_cfg(task, 12, 4));
        for (const Example& ex : train.examples) {
            for (Variant v : all_variants()) {
                (void)format_example(ex, v, art.vocab, art.cb);
            }
        }
    }
    CHECK(true);
}
