#include "mindgrid/engine.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <memory>

#include <json.hpp>

#include "mindgrid/error.hpp"

namespace mindgrid {

std::optional<char> extract_answer(const std::string& text) {
    std::string lower;
    lower.reserve(text.size());
    for (char c : text) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));

    const std::string needle = "the answer is";
    std::optional<char> found;
    std::size_t at = lower.find(needle);
    while (at != std::string::npos) {
        std::size_t i = at + needle.size();
        while (i < lower.size() &&
               !std::isalnum(static_cast<unsigned char>(lower[i]))) {
            ++i;
        }
        if (i < lower.size() && lower[i] >= 'a' && lower[i] <= 'd') {
            found = static_cast<char>(std::toupper(static_cast<unsigned char>(lower[i])));
        }
        at = lower.find(needle, at + 1);
    }
    return found;
}

GenerationResult generate(const Parameters& params, const TokenVocab& vocab, const Codebook& cb,
                          std::span<const int> prompt, Variant mode, int image_block, int grid_w,
                          int grid_h, int max_new_tokens) {
    (void)mode; // the decoding grammar is variant-independent; trained weights decide
    require(grid_w * grid_h == image_block, ErrorKind::invalid_argument,
            "image block must equal the grid cell count");

    GenerationResult out;
    DecodeSession session(params);
    const int max_seq = params.config().max_seq;
    if (static_cast<int>(prompt.size()) >= max_seq) {
        out.truncated = true;
        return out;
    }
    session.feed(prompt);

    std::vector<int> current_image;   // entries of the open image block
    int image_left = 0;               // image tokens still owed to the open block
    std::string current_text;
    auto flush_text = [&]() {
        if (!current_text.empty()) {
            out.verbal_steps.push_back(current_text);
            current_text.clear();
        }
    };

    for (int produced = 0; produced < max_new_tokens; ++produced) {
        if (session.position() >= max_seq) {
            out.truncated = true;
            break;
        }
        const std::vector<double>& logits = session.last_logits();
        int next;
        if (image_left > 0) {
            // Inside a block only image tokens are drawn.
            int best = vocab.image_base();
            for (int v = vocab.image_base() + 1; v < vocab.size(); ++v) {
                if (logits[static_cast<std::size_t>(v)] > logits[static_cast<std::size_t>(best)]) best = v;
            }
            next = best;
        } else {
            int best = 0;
            for (int v = 1; v < vocab.size(); ++v) {
                if (logits[static_cast<std::size_t>(v)] > logits[static_cast<std::size_t>(best)]) best = v;
            }
            next = best;
        }

        out.tokens.push_back(next);
        session.feed_one(next);

        if (image_left > 0) {
            current_image.push_back(vocab.entry_of(next));
            image_left -= 1;
            if (image_left == 0) {
                // Forced EOI framing.
                if (session.position() >= max_seq) {
                    out.truncated = true;
                    break;
                }
                out.tokens.push_back(TokenVocab::eoi);
                session.feed_one(TokenVocab::eoi);
                out.images.push_back(detokenize(current_image, cb, grid_w, grid_h));
                current_image.clear();
            }
            continue;
        }

        if (next == TokenVocab::eos) break;
        if (next == TokenVocab::boi) {
            flush_text();
            image_left = image_block;
            current_image.clear();
            continue;
        }
        if (vocab.is_text(next)) {
            const std::string word = vocab.surface(next);
            if (!current_text.empty()) current_text += " ";
            current_text += word;
            if (!out.text.empty()) out.text += " ";
            out.text += word;
            // A completed answer sentence ends the generation.
            if (word == "." && extract_answer(out.text).has_value()) break;
        }
        // Stray EOI or PAD outside a block carries no structure; keep going.
    }

    flush_text();
    out.answer = extract_answer(out.text);
    return out;
}

GenerationResult generate_for_record(const Parameters& params, const TokenVocab& vocab,
                                     const Codebook& cb, const DatasetRecord& record,
                                     int max_new_tokens) {
    const int prompt_len = record.prompt_length();
    std::span<const int> prompt(record.token_ids.data(), static_cast<std::size_t>(prompt_len));
    return generate(params, vocab, cb, prompt, variant_from_name(record.variant),
                    record.image_block(), record.grid_size, record.grid_size, max_new_tokens);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

struct LoadedData {
    DatasetHeader train_header;
    std::vector<DatasetRecord> train;
    std::vector<DatasetRecord> dev;
    TokenVocab vocab;
    Codebook cb;
    SimilarityMatrix S;
};

LoadedData load_all(const TrainConfig& cfg) {
    LoadedData d;
    d.vocab = load_vocab(cfg.vocab_path);
    d.cb = load_codebook(cfg.codebook_path);
    d.S = similarity_matrix(d.cb);

    auto [theader, trecords] = read_dataset(cfg.train_path, cfg.variant);
    d.train_header = theader;
    d.train = std::move(trecords);
    require(!d.train.empty(), ErrorKind::invalid_argument,
            "no training records for variant " + variant_name(cfg.variant));
    require(theader.vocab_digest == vocab_digest(d.vocab), ErrorKind::integrity,
            "vocab digest mismatch between dataset and vocab file");
    require(theader.codebook_digest == codebook_digest(d.cb), ErrorKind::integrity,
            "codebook digest mismatch between dataset and codebook file");

    if (!cfg.dev_path.empty()) {
        auto [dheader, drecords] = read_dataset(cfg.dev_path, cfg.variant);
        require(dheader.vocab_digest == theader.vocab_digest &&
                    dheader.codebook_digest == theader.codebook_digest,
                ErrorKind::integrity, "dev split artifacts disagree with the train split");
        d.dev = std::move(drecords);
    }
    return d;
}

// Augment the image spans of the input side; targets stay golden.
std::vector<int> augmented_inputs(const DatasetRecord& rec, const TokenVocab& vocab,
                                  const NeighborTable& nt, double p, Rng stream) {
    std::vector<int> ids = rec.token_ids;
    int span_idx = 0;
    for (const Span& s : rec.spans) {
        if (s.modality != Modality::image) continue;
        std::vector<int> entries;
        entries.reserve(static_cast<std::size_t>(s.end - s.start - 2));
        for (int i = s.start + 1; i + 1 < s.end; ++i) {
            entries.push_back(vocab.entry_of(ids[static_cast<std::size_t>(i)]));
        }
        std::vector<int> noisy = augment(entries, nt, p, stream.split(static_cast<uint64_t>(span_idx)).next_u64());
        for (std::size_t k = 0; k < noisy.size(); ++k) {
            ids[static_cast<std::size_t>(s.start) + 1 + k] = vocab.image_token(noisy[k]);
        }
        ++span_idx;
    }
    return ids;
}

double dev_accuracy_probe(const Parameters& params, const LoadedData& d, const TrainConfig& cfg) {
    const int n = std::min<int>(cfg.eval_examples, static_cast<int>(d.dev.size()));
    if (n <= 0) return 0.0;
    int correct = 0;
    for (int i = 0; i < n; ++i) {
        const DatasetRecord& rec = d.dev[static_cast<std::size_t>(i)];
        GenerationResult gen = generate_for_record(params, d.vocab, d.cb, rec, cfg.max_new_tokens);
        if (gen.answer && *gen.answer == rec.answer[0]) ++correct;
    }
    return static_cast<double>(correct) / n;
}

} // namespace

TrainResult train(const TrainConfig& cfg) {
    namespace fs = std::filesystem;
    require(cfg.epochs > 0 && cfg.batch_size > 0, ErrorKind::invalid_argument,
            "epochs and batch size must be positive");

    LoadedData d = load_all(cfg);

    ModelConfig mcfg = cfg.model;
    mcfg.vocab_size = d.vocab.size();
    std::size_t longest = 0;
    for (const DatasetRecord& r : d.train) longest = std::max(longest, r.token_ids.size());
    require(static_cast<int>(longest) <= mcfg.max_seq, ErrorKind::invalid_argument,
            "max_seq " + std::to_string(mcfg.max_seq) + " is shorter than the longest example (" +
                std::to_string(longest) + ")");

    Parameters params = init(mcfg);
    AdamState adam = make_adam(params, cfg.lr);
    std::unique_ptr<Workspace, WorkspaceDeleter> ws(make_workspace());
    NeighborTable neighbors;
    if (cfg.augment) {
        neighbors = build_neighbors(d.S, cfg.augment_k);
    }

    fs::create_directories(cfg.out_dir);
    const std::string metrics_path = (fs::path(cfg.out_dir) / "metrics.jsonl").string();
    std::ofstream metrics(metrics_path, std::ios::binary);
    require(metrics.good(), ErrorKind::invalid_argument, "cannot open " + metrics_path);
    {
        nlohmann::ordered_json j;
        j["type"] = "header";
        j["variant"] = variant_name(cfg.variant);
        j["epochs"] = cfg.epochs;
        j["batch_size"] = cfg.batch_size;
        j["seed"] = cfg.seed;
        j["lr"] = cfg.lr;
        j["lambda_disc"] = cfg.lambda_disc;
        j["augment"] = cfg.augment;
        j["augment_p"] = cfg.augment_p;
        j["augment_k"] = cfg.augment_k;
        j["model_digest"] = hex64(config_digest(mcfg));
        j["vocab_digest"] = hex64(vocab_digest(d.vocab));
        j["codebook_digest"] = hex64(codebook_digest(d.cb));
        metrics << j.dump() << "\n";
    }

    Rng root = Rng(cfg.seed).split("train");
    TrainResult result;
    result.metrics_path = metrics_path;

    std::vector<std::size_t> order(d.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    Gradients grads;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng erng = root.split("epoch").split(static_cast<uint64_t>(epoch));
        erng.shuffle(order);

        double ce_weighted = 0.0, disc_raw = 0.0;
        long text_n = 0, image_n = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            TrainBatch batch;
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            for (std::size_t bi = start; bi < stop; ++bi) {
                const DatasetRecord& rec = d.train[order[bi]];
                TrainItem item;
                item.golden_ids = rec.token_ids;
                item.loss_mask = rec.loss_mask;
                if (cfg.augment && cfg.augment_p > 0.0) {
                    Rng stream = root.split("augment")
                                     .split(static_cast<uint64_t>(epoch))
                                     .split(static_cast<uint64_t>(order[bi]));
                    item.input_ids = augmented_inputs(rec, d.vocab, neighbors, cfg.augment_p, stream);
                } else {
                    item.input_ids = rec.token_ids;
                }
                batch.push_back(std::move(item));
            }
            LossBreakdown lb = backward(params, batch, d.S, d.vocab, cfg.lambda_disc, grads, *ws);
            optimize_step(params, grads, adam);
            ce_weighted += lb.ce * static_cast<double>(lb.text_positions + lb.image_positions);
            disc_raw += lb.disc_raw_sum;
            text_n += lb.text_positions;
            image_n += lb.image_positions;
        }

        EpochMetrics em;
        em.epoch = epoch;
        em.ce = (text_n + image_n) > 0 ? ce_weighted / static_cast<double>(text_n + image_n) : 0.0;
        const double disc_mean = image_n > 0 ? disc_raw / static_cast<double>(image_n) : 0.0;
        em.disc = cfg.lambda_disc == 0.0 ? 0.0 : cfg.lambda_disc * disc_mean;
        em.loss = em.ce + em.disc;
        if (cfg.eval_every > 0 && cfg.eval_examples > 0 &&
            (epoch % cfg.eval_every == cfg.eval_every - 1 || epoch + 1 == cfg.epochs)) {
            em.dev_accuracy = dev_accuracy_probe(params, d, cfg);
        }

        nlohmann::ordered_json j;
        j["epoch"] = em.epoch;
        j["loss"] = em.loss;
        j["ce"] = em.ce;
        j["disc"] = em.disc;
        if (em.dev_accuracy) {
            j["dev_accuracy"] = *em.dev_accuracy;
        } else {
            j["dev_accuracy"] = nullptr;
        }
        metrics << j.dump() << "\n";
        metrics.flush();
        result.metrics.push_back(em);

        if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 &&
            epoch + 1 < cfg.epochs) {
            const std::string path =
                (fs::path(cfg.out_dir) / ("checkpoint_epoch" + std::to_string(epoch + 1) + ".ckpt"))
                    .string();
            save_checkpoint(params,
                            {vocab_digest(d.vocab), codebook_digest(d.cb), variant_name(cfg.variant)},
                            path);
        }
    }

    result.checkpoint_path = (fs::path(cfg.out_dir) / "checkpoint.ckpt").string();
    save_checkpoint(params, {vocab_digest(d.vocab), codebook_digest(d.cb), variant_name(cfg.variant)},
                    result.checkpoint_path);
    return result;
}

} // namespace mindgrid
