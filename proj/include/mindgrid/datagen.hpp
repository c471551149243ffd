#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mindgrid/codec.hpp"
#include "mindgrid/gridworld.hpp"
#include "mindgrid/raster.hpp"

namespace mindgrid {

enum class Variant : uint8_t { direct, cot_layout, cot_coords, interleaved, visual_cot };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);
const std::vector<Variant>& all_variants();

struct TraceStep {
    Action action;
    StepEffect effect;
    EnvState state_after;
    TileImage image; // oracle rendering of state_after
};

struct Example {
    Task task = Task::maze;
    int grid_size = 0;
    uint64_t seed = 0; // derivation seed of this example
    EnvState env0;
    std::vector<Action> actions; // full prompt sequence (may outlive the executed trace)
    Outcome gold{OutcomeLabel::maze_a};
    std::vector<TraceStep> trace; // executed steps; replay stops where the outcome is decided
    uint64_t env_fp = 0;
};

struct DatagenConfig {
    Task task = Task::maze;
    std::vector<int> sizes;      // empty -> task default (3..6, or 7..10 for mini_behavior)
    int train_count = 2000;
    int dev_count = 500;
    uint64_t seed = 0;
    double mutation_rate = 0.5;  // mini_behavior: probability of reusing a seen pair via mutation
    int qlearn_episodes = 2000;  // frozen_lake
    std::array<double, 3> lake_quota{0.44, 0.35, 0.21}; // success / fall / no-reach mix
    int max_maze_path = 20;      // longer gold paths are rejected so examples fit the context
    long attempt_budget = 0;     // 0 -> derived from counts
};

std::vector<int> default_sizes(Task task);

struct Split {
    std::vector<Example> examples;
};

std::pair<Split, Split> build_maze_dataset(const DatagenConfig& cfg);
std::pair<Split, Split> build_printer_dataset(const DatagenConfig& cfg);
std::pair<Split, Split> build_lake_dataset(const DatagenConfig& cfg);
std::pair<Split, Split> build_dataset(const DatagenConfig& cfg);

struct SplitStats {
    int total = 0;
    std::map<char, int> option_counts;
    std::map<int, int> size_counts;
    double mean_action_length = 0.0;
    double mean_entity_count = 0.0;
};

SplitStats stats(const Split& split);
std::string stats_json(const SplitStats& train, const SplitStats& dev);

// Closed lexicon source: every text surface the formatter can emit.
const std::vector<std::string>& template_corpus();
TokenVocab default_vocab(const Codebook& cb);

// Option letter texts as they appear in the prompt, in option order.
std::vector<std::string> option_lines(Task task);

// Serializes one example in the requested variant. All variants share the
// identical prompt token prefix; interleaved and visual_cot share ids and
// differ only in the loss mask.
TokenSequence format_example(const Example& ex, Variant v, const TokenVocab& vocab, const Codebook& cb);

// ---------------------------------------------------------------------------
// Dataset files: JSON-lines with one header line followed by one record per
// (example, variant).
// ---------------------------------------------------------------------------

struct DatasetRecord {
    std::string task;
    int grid_size = 0;
    std::string seed;   // hex, 64-bit
    std::string variant;
    std::vector<int> token_ids;
    std::vector<uint8_t> loss_mask;
    std::vector<Span> spans;
    std::string answer; // option letter
    std::string env_fingerprint; // hex

    int image_block() const { return grid_size * grid_size; }
    // Prompt prefix = everything before the first supervised token.
    int prompt_length() const;
};

struct DatasetHeader {
    std::string task;
    std::string config_json;
    uint64_t config_digest = 0;
    uint64_t vocab_digest = 0;
    uint64_t codebook_digest = 0;
    long count = 0;
};

DatasetRecord to_record(const Example& ex, Variant v, const TokenSequence& seq);
std::string record_json(const DatasetRecord& r);
DatasetRecord parse_record(const std::string& line);

void write_dataset(const std::string& path, const DatasetHeader& header,
                   const std::vector<DatasetRecord>& records);
DatasetHeader read_dataset_header(const std::string& path);
std::pair<DatasetHeader, std::vector<DatasetRecord>>
read_dataset(const std::string& path, std::optional<Variant> only = std::nullopt);

std::string hex64(uint64_t v);
uint64_t parse_hex64(const std::string& s);

} // namespace mindgrid
