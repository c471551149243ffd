#include "mindgrid/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>

#include <json.hpp>

#include "mindgrid/error.hpp"

namespace mindgrid {

double task_accuracy(const std::vector<std::optional<char>>& preds, const std::vector<char>& golds) {
    require(preds.size() == golds.size(), ErrorKind::invalid_argument,
            "prediction/gold lists disagree in length");
    require(!golds.empty(), ErrorKind::invalid_argument, "empty evaluation set");
    int correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        // Extraction failures count as incorrect.
        if (preds[i] && *preds[i] == golds[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(golds.size());
}

std::vector<VisGrade> grade_visualizations(const std::vector<TileImage>& generated,
                                           const TileImage& initial,
                                           const std::vector<TileImage>& oracle) {
    std::vector<VisGrade> grades;
    grades.reserve(oracle.size());
    const TileImage* prev = &initial;
    for (std::size_t i = 0; i < oracle.size(); ++i) {
        VisGrade g;
        g.intended = diff_cells(*prev, oracle[i]);
        if (i >= generated.size() || generated[i].width != oracle[i].width ||
            generated[i].height != oracle[i].height) {
            // Missing or undecodable visualization: counted wrong and redundant.
            g.correct = false;
            g.redundant = true;
            g.undecodable = true;
        } else {
            const TileImage& gen = generated[i];
            g.correct = true;
            for (const Cell& c : g.intended) {
                if (gen.at(c) != oracle[i].at(c)) {
                    g.correct = false;
                    break;
                }
            }
            for (const Cell& c : diff_cells(gen, oracle[i])) {
                if (g.intended.count(c) == 0) {
                    g.offending.insert(c);
                }
            }
            g.redundant = !g.offending.empty();
        }
        grades.push_back(std::move(g));
        prev = &oracle[i];
    }
    return grades;
}

VisMetrics vis_metrics(const std::vector<std::vector<VisGrade>>& per_example, int k_cutoff) {
    require(!per_example.empty(), ErrorKind::invalid_argument, "no grades");
    long steps = 0, correct = 0, redundant = 0;
    double prefix_sum = 0.0, ratio_sum = 0.0;
    long examples = 0;
    for (const auto& full : per_example) {
        std::span<const VisGrade> grades(full);
        if (k_cutoff > 0 && static_cast<int>(grades.size()) > k_cutoff) {
            grades = grades.subspan(0, static_cast<std::size_t>(k_cutoff));
        }
        if (grades.empty()) continue;
        ++examples;
        long prefix = 0;
        bool run = true;
        for (const VisGrade& g : grades) {
            ++steps;
            correct += g.correct ? 1 : 0;
            redundant += g.redundant ? 1 : 0;
            if (run && g.correct) ++prefix;
            else run = false;
        }
        prefix_sum += static_cast<double>(prefix);
        ratio_sum += static_cast<double>(prefix) / static_cast<double>(grades.size());
    }
    require(examples > 0 && steps > 0, ErrorKind::invalid_argument, "no graded steps");
    VisMetrics m;
    m.v_acc = static_cast<double>(correct) / static_cast<double>(steps);
    m.v_red = static_cast<double>(redundant) / static_cast<double>(steps);
    m.v_steps = prefix_sum / static_cast<double>(examples);
    m.v_ratio = ratio_sum / static_cast<double>(examples);
    return m;
}

double ensemble_upperbound(const std::vector<std::optional<char>>& preds_a,
                           const std::vector<std::optional<char>>& preds_b,
                           const std::vector<char>& golds) {
    require(preds_a.size() == golds.size() && preds_b.size() == golds.size(),
            ErrorKind::invalid_argument, "prediction/gold lists disagree in length");
    require(!golds.empty(), ErrorKind::invalid_argument, "empty evaluation set");
    int correct = 0;
    for (std::size_t i = 0; i < golds.size(); ++i) {
        const bool a = preds_a[i] && *preds_a[i] == golds[i];
        const bool b = preds_b[i] && *preds_b[i] == golds[i];
        if (a || b) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(golds.size());
}

namespace {

std::vector<int> topk_cosine(const EmbeddingTable& t, int row, int k) {
    std::vector<double> sims(static_cast<std::size_t>(t.rows), 0.0);
    const double* a = t.row(row);
    double na = 0.0;
    for (int d = 0; d < t.cols; ++d) na += a[d] * a[d];
    na = std::sqrt(na);
    for (int j = 0; j < t.rows; ++j) {
        const double* b = t.row(j);
        double dot = 0.0, nb = 0.0;
        for (int d = 0; d < t.cols; ++d) {
            dot += a[d] * b[d];
            nb += b[d] * b[d];
        }
        nb = std::sqrt(nb);
        sims[static_cast<std::size_t>(j)] = (na > 0 && nb > 0) ? dot / (na * nb) : 0.0;
    }
    std::vector<int> order(static_cast<std::size_t>(t.rows));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
        return sims[static_cast<std::size_t>(x)] > sims[static_cast<std::size_t>(y)];
    });
    std::vector<int> out;
    for (int j : order) {
        if (j == row) continue;
        out.push_back(j);
        if (static_cast<int>(out.size()) == k) break;
    }
    return out;
}

} // namespace

std::map<int, double> embedding_overlap(const EmbeddingTable& a, const EmbeddingTable& b,
                                        const std::vector<int>& ks) {
    require(a.rows == b.rows && a.rows > 1, ErrorKind::invalid_argument,
            "tables must align row for row");
    std::map<int, double> out;
    for (int k : ks) {
        require(k >= 1 && k < a.rows, ErrorKind::invalid_argument,
                "k must be below the table size");
        double sum = 0.0;
        for (int i = 0; i < a.rows; ++i) {
            std::vector<int> na = topk_cosine(a, i, k);
            std::vector<int> nb = topk_cosine(b, i, k);
            std::set<int> sa(na.begin(), na.end());
            int shared = 0;
            for (int j : nb) shared += sa.count(j) > 0 ? 1 : 0;
            sum += static_cast<double>(shared) / static_cast<double>(k);
        }
        out[k] = sum / static_cast<double>(a.rows);
    }
    return out;
}

std::map<int, SizeAccuracy> breakdown_by_grid_size(const std::vector<int>& grid_sizes,
                                                   const std::vector<std::optional<char>>& preds,
                                                   const std::vector<char>& golds) {
    require(grid_sizes.size() == preds.size() && preds.size() == golds.size(),
            ErrorKind::invalid_argument, "breakdown inputs disagree in length");
    std::map<int, SizeAccuracy> out;
    for (std::size_t i = 0; i < golds.size(); ++i) {
        const bool ok = preds[i] && *preds[i] == golds[i];
        SizeAccuracy& row = out[grid_sizes[i]];
        row.total += 1;
        row.correct += ok ? 1 : 0;
        SizeAccuracy& overall = out[0];
        overall.total += 1;
        overall.correct += ok ? 1 : 0;
    }
    return out;
}

EvalOutcome evaluate_records(const Parameters& params, const TokenVocab& vocab, const Codebook& cb,
                             const std::vector<DatasetRecord>& records, const EvalConfig& cfg) {
    require(!records.empty(), ErrorKind::invalid_argument, "no records to evaluate");
    const int n = cfg.limit > 0 ? std::min<int>(cfg.limit, static_cast<int>(records.size()))
                                : static_cast<int>(records.size());

    EvalOutcome out;
    out.total = n;
    std::vector<std::vector<VisGrade>> grades;

    for (int i = 0; i < n; ++i) {
        const DatasetRecord& rec = records[static_cast<std::size_t>(i)];
        GenerationResult gen = generate_for_record(params, vocab, cb, rec, cfg.max_new_tokens);
        out.predictions.push_back(gen.answer);
        out.golds.push_back(rec.answer[0]);
        out.grid_sizes.push_back(rec.grid_size);

        // Oracle images live in the golden response spans; the prompt image
        // is the first image span.
        std::vector<TileImage> oracle;
        std::optional<TileImage> initial;
        const int prompt_len = rec.prompt_length();
        for (const Span& s : rec.spans) {
            if (s.modality != Modality::image) continue;
            std::vector<int> entries;
            for (int t = s.start + 1; t + 1 < s.end; ++t) {
                entries.push_back(vocab.entry_of(rec.token_ids[static_cast<std::size_t>(t)]));
            }
            TileImage img = detokenize(entries, cb, rec.grid_size, rec.grid_size);
            if (s.start < prompt_len) {
                initial = std::move(img);
            } else {
                oracle.push_back(std::move(img));
            }
        }
        if (initial && !oracle.empty()) {
            grades.push_back(grade_visualizations(gen.images, *initial, oracle));
        }
    }

    out.accuracy = task_accuracy(out.predictions, out.golds);
    out.by_size = breakdown_by_grid_size(out.grid_sizes, out.predictions, out.golds);
    if (!grades.empty()) {
        out.vis = vis_metrics(grades);
        out.has_vis = true;
    }
    return out;
}

std::string eval_report_json(const EvalOutcome& outcome, const std::string& task,
                             const std::string& variant, const std::optional<double>& ensemble) {
    nlohmann::ordered_json j;
    j["task"] = task;
    j["variant"] = variant;
    j["total"] = outcome.total;
    j["accuracy"] = outcome.accuracy;
    if (outcome.has_vis) {
        j["v_acc"] = outcome.vis.v_acc;
        j["v_red"] = outcome.vis.v_red;
        j["v_steps"] = outcome.vis.v_steps;
        j["v_ratio"] = outcome.vis.v_ratio;
    } else {
        j["v_acc"] = nullptr;
        j["v_red"] = nullptr;
        j["v_steps"] = nullptr;
        j["v_ratio"] = nullptr;
    }
    nlohmann::ordered_json sizes;
    for (const auto& [size, acc] : outcome.by_size) {
        nlohmann::ordered_json row;
        row["correct"] = acc.correct;
        row["total"] = acc.total;
        row["accuracy"] = acc.accuracy();
        sizes[size == 0 ? "overall" : std::to_string(size)] = row;
    }
    j["by_grid_size"] = sizes;
    if (ensemble) {
        j["ensemble_upperbound"] = *ensemble;
    }
    nlohmann::ordered_json preds = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < outcome.predictions.size(); ++i) {
        preds.push_back(outcome.predictions[i] ? std::string(1, *outcome.predictions[i])
                                               : std::string(""));
    }
    j["predictions"] = preds;
    nlohmann::ordered_json golds = nlohmann::ordered_json::array();
    for (char g : outcome.golds) golds.push_back(std::string(1, g));
    j["golds"] = golds;
    return j.dump(2) + "\n";
}

std::vector<uint8_t> side_by_side_ppm(const TileImage& generated, const TileImage& oracle) {
    require(generated.height == oracle.height, ErrorKind::invalid_argument,
            "strip images disagree in height");
    const int gap = 4;
    const int ph = generated.height * kTileSize;
    const int pw_a = generated.width * kTileSize;
    const int pw_b = oracle.width * kTileSize;
    const int pw = pw_a + gap + pw_b;
    auto pa = render_pixels(generated);
    auto pb = render_pixels(oracle);
    std::vector<uint8_t> px(static_cast<std::size_t>(pw) * ph * 3, 255);
    for (int r = 0; r < ph; ++r) {
        std::copy_n(pa.data() + static_cast<std::size_t>(r) * pw_a * 3, pw_a * 3,
                    px.data() + static_cast<std::size_t>(r) * pw * 3);
        std::copy_n(pb.data() + static_cast<std::size_t>(r) * pw_b * 3, pw_b * 3,
                    px.data() + (static_cast<std::size_t>(r) * pw + pw_a + gap) * 3);
    }
    std::string header = "P6\n" + std::to_string(pw) + " " + std::to_string(ph) + "\n255\n";
    std::vector<uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), px.begin(), px.end());
    return out;
}

std::map<int, double> model_codebook_overlap(const Parameters& params, const TokenVocab& vocab,
                                             const Codebook& cb, const std::vector<int>& ks) {
    require(vocab.image_entries == cb.entries, ErrorKind::invalid_argument,
            "vocab and codebook disagree on image-token count");
    const TensorInfo& emb = params.tensor("tok_emb");
    const int width = emb.shape[1];

    EmbeddingTable lm;
    lm.rows = cb.entries;
    lm.cols = width;
    lm.data.resize(static_cast<std::size_t>(lm.rows) * lm.cols);
    const double* base = params.at(emb);
    for (int i = 0; i < cb.entries; ++i) {
        const int token = vocab.image_token(i);
        std::copy_n(base + static_cast<std::size_t>(token) * width, width,
                    lm.data.begin() + static_cast<std::size_t>(i) * width);
    }

    EmbeddingTable vis;
    vis.rows = cb.entries;
    vis.cols = cb.dim;
    vis.data = cb.embeddings;

    return embedding_overlap(lm, vis, ks);
}

} // namespace mindgrid
