#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mindgrid/engine.hpp"

namespace mindgrid {

// Per-step visualization grade against the oracle trace. A step is correct
// when the generated image matches the oracle on the cells the action was
// supposed to modify; it is redundant when anything outside that region
// deviates from the oracle.
struct VisGrade {
    bool correct = false;
    bool redundant = false;
    std::set<Cell> intended;
    std::set<Cell> offending;
    bool undecodable = false;
};

double task_accuracy(const std::vector<std::optional<char>>& preds, const std::vector<char>& golds);

// oracle[0] renders the state after action 1; `initial` is the prompt image.
std::vector<VisGrade> grade_visualizations(const std::vector<TileImage>& generated,
                                           const TileImage& initial,
                                           const std::vector<TileImage>& oracle);

struct VisMetrics {
    double v_acc = 0.0;   // grand mean of per-step correctness
    double v_red = 0.0;   // grand mean of per-step redundancy
    double v_steps = 0.0; // mean longest all-correct prefix
    double v_ratio = 0.0; // mean prefix length / trace length
};

// Default reading: the prefix runs to the first incorrect step. Passing
// k_cutoff > 0 instead grades only the first k steps of every example.
VisMetrics vis_metrics(const std::vector<std::vector<VisGrade>>& per_example, int k_cutoff = 0);

double ensemble_upperbound(const std::vector<std::optional<char>>& preds_a,
                           const std::vector<std::optional<char>>& preds_b,
                           const std::vector<char>& golds);

// Mean top-k cosine-neighborhood overlap between two row-aligned embedding
// tables (self excluded; ties broken by index). Throws when k >= rows.
struct EmbeddingTable {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    const double* row(int i) const { return data.data() + static_cast<std::size_t>(i) * cols; }
};

std::map<int, double> embedding_overlap(const EmbeddingTable& a, const EmbeddingTable& b,
                                        const std::vector<int>& ks);

struct SizeAccuracy {
    int correct = 0;
    int total = 0;
    double accuracy() const { return total > 0 ? static_cast<double>(correct) / total : 0.0; }
};

// Per-grid-size accuracy plus the overall row (keyed 0).
std::map<int, SizeAccuracy> breakdown_by_grid_size(const std::vector<int>& grid_sizes,
                                                   const std::vector<std::optional<char>>& preds,
                                                   const std::vector<char>& golds);

// ---------------------------------------------------------------------------
// Whole-split evaluation against dataset records.
// ---------------------------------------------------------------------------

struct EvalConfig {
    int limit = 0; // 0 = all records
    int max_new_tokens = 1024;
    std::vector<int> overlap_ks{10, 50};
};

struct EvalOutcome {
    int total = 0;
    double accuracy = 0.0;
    VisMetrics vis;
    bool has_vis = false;
    std::map<int, SizeAccuracy> by_size;
    std::vector<std::optional<char>> predictions;
    std::vector<char> golds;
    std::vector<int> grid_sizes;
};

EvalOutcome evaluate_records(const Parameters& params, const TokenVocab& vocab, const Codebook& cb,
                             const std::vector<DatasetRecord>& records, const EvalConfig& cfg);

// Deterministic JSON rendering of a report (stable key order).
std::string eval_report_json(const EvalOutcome& outcome, const std::string& task,
                             const std::string& variant,
                             const std::optional<double>& ensemble = std::nullopt);

// Model-vs-codebook diagnostic: image-token rows of the LM embedding table
// against the visual codebook rows.
std::map<int, double> model_codebook_overlap(const Parameters& params, const TokenVocab& vocab,
                                             const Codebook& cb, const std::vector<int>& ks);

// Side-by-side (generated | oracle) strip as a P6 PPM, for failure triage.
std::vector<uint8_t> side_by_side_ppm(const TileImage& generated, const TileImage& oracle);

} // namespace mindgrid
