#include "mindgrid/cli_core.hpp"

#include <filesystem>
#include <fstream>
#include <thread>

#include <json.hpp>

#include "mindgrid/error.hpp"

namespace mindgrid {

namespace fs = std::filesystem;

int exit_code_for(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::format:
    case ErrorKind::integrity:
        return 3;
    case ErrorKind::numeric:
        return 4;
    default:
        return 2;
    }
}

namespace {

std::string gen_config_json(const GenOptions& opt, const std::vector<int>& sizes,
                            const std::vector<std::string>& variants) {
    nlohmann::ordered_json j;
    j["task"] = opt.task;
    j["sizes"] = sizes;
    j["train_count"] = opt.train_count;
    j["dev_count"] = opt.dev_count;
    j["seed"] = hex64(opt.seed);
    j["variants"] = variants;
    j["mutation_rate"] = opt.mutation_rate;
    j["qlearn_episodes"] = opt.qlearn_episodes;
    return j.dump();
}

} // namespace

GenPaths run_gen(const GenOptions& opt) {
    const Task task = task_from_name(opt.task);
    DatagenConfig cfg;
    cfg.task = task;
    cfg.sizes = opt.sizes.empty() ? default_sizes(task) : opt.sizes;
    cfg.train_count = opt.train_count;
    cfg.dev_count = opt.dev_count;
    cfg.seed = opt.seed;
    cfg.mutation_rate = opt.mutation_rate;
    cfg.qlearn_episodes = opt.qlearn_episodes;

    std::vector<std::string> variant_names = opt.variants;
    if (variant_names.empty() || (variant_names.size() == 1 && variant_names[0] == "all")) {
        variant_names.clear();
        for (Variant v : all_variants()) variant_names.push_back(variant_name(v));
    }
    std::vector<Variant> variants;
    for (const std::string& name : variant_names) variants.push_back(variant_from_name(name));

    fs::create_directories(opt.out_dir);

    const Codebook cb = build_codebook(SpriteSet::instance().all());
    const TokenVocab vocab = default_vocab(cb);

    GenPaths paths;
    paths.vocab = (fs::path(opt.out_dir) / "vocab.json").string();
    paths.codebook = (fs::path(opt.out_dir) / "codebook.bin").string();
    save_vocab(vocab, cb, paths.vocab);
    save_codebook(cb, paths.codebook);

    auto [train, dev] = build_dataset(cfg);

    const std::string config_json = gen_config_json(opt, cfg.sizes, variant_names);
    DatasetHeader header;
    header.task = opt.task;
    header.config_json = config_json;
    header.config_digest = fnv1a64(config_json);
    header.vocab_digest = vocab_digest(vocab);
    header.codebook_digest = codebook_digest(cb);

    auto serialize = [&](const Split& split) {
        std::vector<DatasetRecord> records;
        records.reserve(split.examples.size() * variants.size());
        for (const Example& ex : split.examples) {
            for (Variant v : variants) {
                records.push_back(to_record(ex, v, format_example(ex, v, vocab, cb)));
            }
        }
        return records;
    };

    paths.train = (fs::path(opt.out_dir) / (opt.task + "_train.jsonl")).string();
    paths.dev = (fs::path(opt.out_dir) / (opt.task + "_dev.jsonl")).string();
    write_dataset(paths.train, header, serialize(train));
    write_dataset(paths.dev, header, serialize(dev));

    paths.stats = (fs::path(opt.out_dir) / (opt.task + "_stats.json")).string();
    {
        std::ofstream f(paths.stats, std::ios::binary);
        require(f.good(), ErrorKind::invalid_argument, "cannot open " + paths.stats);
        f << stats_json(stats(train), stats(dev));
    }

    if (opt.ppm_examples > 0) {
        const fs::path dir = fs::path(opt.out_dir) / "ppm";
        fs::create_directories(dir);
        const int n = std::min<int>(opt.ppm_examples, static_cast<int>(dev.examples.size()));
        for (int i = 0; i < n; ++i) {
            write_ppm(render(dev.examples[static_cast<std::size_t>(i)].env0),
                      (dir / (opt.task + "_dev" + std::to_string(i) + ".ppm")).string());
        }
    }
    return paths;
}

TrainResult run_train(const TrainOptions& opt) {
    TrainConfig cfg;
    cfg.train_path = opt.train_path;
    cfg.dev_path = opt.dev_path;
    cfg.vocab_path = opt.vocab_path;
    cfg.codebook_path = opt.codebook_path;
    cfg.out_dir = opt.out_dir;
    cfg.variant = variant_from_name(opt.variant);
    cfg.model.layers = opt.layers;
    cfg.model.heads = opt.heads;
    cfg.model.width = opt.width;
    cfg.model.ff_width = opt.ff_width > 0 ? opt.ff_width : 4 * opt.width;
    cfg.model.max_seq = opt.max_seq;
    cfg.model.max_rel = opt.max_rel;
    cfg.model.init_std = opt.init_std;
    cfg.model.seed = opt.seed;
    cfg.epochs = opt.epochs;
    cfg.batch_size = opt.batch_size;
    cfg.seed = opt.seed;
    cfg.lr = opt.lr;
    cfg.lambda_disc = opt.no_token_discrepancy ? 0.0 : opt.lambda_disc;
    cfg.augment = !opt.no_augment;
    cfg.augment_p = opt.augment_p;
    cfg.augment_k = opt.augment_k;
    cfg.eval_every = opt.eval_every;
    cfg.eval_examples = opt.eval_examples;
    cfg.checkpoint_every = opt.checkpoint_every;
    cfg.max_new_tokens = opt.max_new_tokens;

    fs::create_directories(opt.out_dir);
    {
        nlohmann::ordered_json j;
        j["train"] = opt.train_path;
        j["dev"] = opt.dev_path;
        j["vocab"] = opt.vocab_path;
        j["codebook"] = opt.codebook_path;
        j["variant"] = opt.variant;
        j["layers"] = cfg.model.layers;
        j["heads"] = cfg.model.heads;
        j["width"] = cfg.model.width;
        j["ff_width"] = cfg.model.ff_width;
        j["max_seq"] = cfg.model.max_seq;
        j["max_rel"] = cfg.model.max_rel;
        j["epochs"] = cfg.epochs;
        j["batch_size"] = cfg.batch_size;
        j["seed"] = hex64(cfg.seed);
        j["lr"] = cfg.lr;
        j["lambda_disc"] = cfg.lambda_disc;
        j["augment"] = cfg.augment;
        j["augment_p"] = cfg.augment_p;
        j["augment_k"] = cfg.augment_k;
        const std::string dump = j.dump(2) + "\n";
        std::ofstream f(fs::path(opt.out_dir) / "run_config.json", std::ios::binary);
        require(f.good(), ErrorKind::invalid_argument, "cannot write run_config.json");
        f << dump;
    }

    return train(cfg);
}

namespace {

struct LoadedEvalInputs {
    Parameters params;
    CheckpointMeta meta;
    TokenVocab vocab;
    Codebook cb;
};

LoadedEvalInputs load_eval_inputs(const std::string& checkpoint_path, const std::string& vocab_path,
                                  const std::string& codebook_path) {
    require(fs::exists(checkpoint_path), ErrorKind::invalid_argument,
            "missing checkpoint: " + checkpoint_path);
    require(fs::exists(vocab_path), ErrorKind::invalid_argument, "missing vocab: " + vocab_path);
    require(fs::exists(codebook_path), ErrorKind::invalid_argument,
            "missing codebook: " + codebook_path);
    auto [params, meta] = load_checkpoint(checkpoint_path);
    TokenVocab vocab = load_vocab(vocab_path);
    Codebook cb = load_codebook(codebook_path);
    require(meta.vocab_digest == vocab_digest(vocab), ErrorKind::integrity,
            "checkpoint was trained against a different vocab");
    require(meta.codebook_digest == codebook_digest(cb), ErrorKind::integrity,
            "checkpoint was trained against a different codebook");
    return {std::move(params), std::move(meta), std::move(vocab), std::move(cb)};
}

} // namespace

EvalOutcome run_eval(const EvalCmdOptions& opt) {
    require(fs::exists(opt.dataset_path), ErrorKind::invalid_argument,
            "missing dataset: " + opt.dataset_path);
    LoadedEvalInputs in = load_eval_inputs(opt.checkpoint_path, opt.vocab_path, opt.codebook_path);

    const std::string variant = opt.variant.empty() ? in.meta.variant : opt.variant;
    auto [header, records] = read_dataset(opt.dataset_path, variant_from_name(variant));
    require(header.vocab_digest == vocab_digest(in.vocab), ErrorKind::integrity,
            "dataset was generated against a different vocab");
    require(header.codebook_digest == codebook_digest(in.cb), ErrorKind::integrity,
            "dataset was generated against a different codebook");
    require(!records.empty(), ErrorKind::invalid_argument,
            "dataset has no records for variant " + variant);

    // Generation is parallel across prompts with index-ordered merging, so
    // the report is identical for any worker count.
    const int n = opt.limit > 0 ? std::min<int>(opt.limit, static_cast<int>(records.size()))
                                : static_cast<int>(records.size());
    std::vector<GenerationResult> gens(static_cast<std::size_t>(n));
    const int workers = std::max(1, std::min(opt.threads, n));
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
            for (int i = w; i < n; i += workers) {
                gens[static_cast<std::size_t>(i)] = generate_for_record(
                    in.params, in.vocab, in.cb, records[static_cast<std::size_t>(i)],
                    opt.max_new_tokens);
            }
        });
    }
    for (auto& t : pool) t.join();

    EvalOutcome outcome;
    outcome.total = n;
    std::vector<std::vector<VisGrade>> grades;
    std::vector<int> graded_example; // index into records per grades row
    std::vector<std::vector<TileImage>> oracle_images(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const DatasetRecord& rec = records[static_cast<std::size_t>(i)];
        outcome.predictions.push_back(gens[static_cast<std::size_t>(i)].answer);
        outcome.golds.push_back(rec.answer[0]);
        outcome.grid_sizes.push_back(rec.grid_size);
        std::vector<TileImage> oracle;
        std::optional<TileImage> initial;
        const int prompt_len = rec.prompt_length();
        for (const Span& s : rec.spans) {
            if (s.modality != Modality::image) continue;
            std::vector<int> entries;
            for (int t = s.start + 1; t + 1 < s.end; ++t) {
                entries.push_back(in.vocab.entry_of(rec.token_ids[static_cast<std::size_t>(t)]));
            }
            TileImage img = detokenize(entries, in.cb, rec.grid_size, rec.grid_size);
            if (s.start < prompt_len) initial = std::move(img);
            else oracle.push_back(std::move(img));
        }
        if (initial && !oracle.empty()) {
            grades.push_back(
                grade_visualizations(gens[static_cast<std::size_t>(i)].images, *initial, oracle));
            graded_example.push_back(i);
            oracle_images[static_cast<std::size_t>(i)] = std::move(oracle);
        }
    }
    outcome.accuracy = task_accuracy(outcome.predictions, outcome.golds);
    outcome.by_size = breakdown_by_grid_size(outcome.grid_sizes, outcome.predictions, outcome.golds);
    if (!grades.empty()) {
        outcome.vis = vis_metrics(grades);
        outcome.has_vis = true;
    }

    if (opt.dump_failures > 0 && !grades.empty()) {
        const fs::path dir = fs::path(opt.out_path).parent_path() / "failures";
        fs::create_directories(dir);
        int dumped = 0;
        for (std::size_t g = 0; g < grades.size() && dumped < opt.dump_failures; ++g) {
            const int i = graded_example[g];
            for (std::size_t s = 0; s < grades[g].size(); ++s) {
                const VisGrade& grade = grades[g][s];
                if (grade.correct && !grade.redundant) continue;
                if (grade.undecodable) continue;
                auto bytes = side_by_side_ppm(gens[static_cast<std::size_t>(i)].images[s],
                                              oracle_images[static_cast<std::size_t>(i)][s]);
                const std::string name = "ex" + std::to_string(i) + "_step" + std::to_string(s) + ".ppm";
                std::ofstream f(dir / name, std::ios::binary);
                f.write(reinterpret_cast<const char*>(bytes.data()),
                        static_cast<std::streamsize>(bytes.size()));
                ++dumped;
                if (dumped >= opt.dump_failures) break;
            }
        }
    }

    std::optional<double> ensemble;
    if (!opt.ensemble_with.empty()) {
        std::ifstream f(opt.ensemble_with);
        require(f.good(), ErrorKind::invalid_argument, "missing report: " + opt.ensemble_with);
        nlohmann::json other;
        try {
            f >> other;
        } catch (const std::exception& e) {
            fail(ErrorKind::format, std::string("bad report json: ") + e.what());
        }
        std::vector<std::optional<char>> other_preds;
        for (const auto& p : other.at("predictions")) {
            const std::string s = p.get<std::string>();
            other_preds.push_back(s.empty() ? std::optional<char>{} : std::optional<char>{s[0]});
        }
        require(other_preds.size() == outcome.predictions.size(), ErrorKind::invalid_argument,
                "ensemble reports cover different example counts");
        ensemble = ensemble_upperbound(outcome.predictions, other_preds, outcome.golds);
    }

    const std::string report = eval_report_json(outcome, header.task, variant, ensemble);
    std::ofstream f(opt.out_path, std::ios::binary);
    require(f.good(), ErrorKind::invalid_argument, "cannot open " + opt.out_path);
    f << report;
    return outcome;
}

std::map<int, double> run_analyze(const AnalyzeOptions& opt) {
    LoadedEvalInputs in = load_eval_inputs(opt.checkpoint_path, opt.vocab_path, opt.codebook_path);
    std::map<int, double> ratios = model_codebook_overlap(in.params, in.vocab, in.cb, opt.ks);

    nlohmann::ordered_json j;
    j["checkpoint"] = opt.checkpoint_path;
    j["variant"] = in.meta.variant;
    nlohmann::ordered_json table;
    for (const auto& [k, ratio] : ratios) {
        table[std::to_string(k)] = ratio;
    }
    j["overlap"] = table;
    std::ofstream f(opt.out_path, std::ios::binary);
    require(f.good(), ErrorKind::invalid_argument, "cannot open " + opt.out_path);
    f << j.dump(2) << "\n";
    return ratios;
}

} // namespace mindgrid
