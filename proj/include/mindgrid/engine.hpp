#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mindgrid/datagen.hpp"
#include "mindgrid/model.hpp"

namespace mindgrid {

struct TrainConfig {
    std::string train_path;
    std::string dev_path;
    std::string vocab_path;
    std::string codebook_path;
    std::string out_dir;
    Variant variant = Variant::visual_cot;

    ModelConfig model; // vocab_size is filled from the vocab at load time

    int epochs = 60;
    int batch_size = 16;
    uint64_t seed = 0;
    double lr = 3e-4;
    double lambda_disc = 1.0;

    bool augment = true;
    double augment_p = 0.05;
    int augment_k = 3;

    int eval_every = 1;     // epochs between dev-accuracy probes; 0 disables
    int eval_examples = 32; // dev prompts per probe
    int checkpoint_every = 0; // extra checkpoints every N epochs; 0 = final only
    int max_new_tokens = 1024;
};

struct EpochMetrics {
    int epoch = 0;
    double loss = 0.0;
    double ce = 0.0;
    double disc = 0.0;
    std::optional<double> dev_accuracy;
};

struct TrainResult {
    std::string checkpoint_path;
    std::string metrics_path;
    std::vector<EpochMetrics> metrics;
};

TrainResult train(const TrainConfig& cfg);

// Greedy interleaved decoding. Once BOI is emitted, exactly `image_block`
// tokens are drawn from the image range and EOI is forced, and the generated
// block stays in context for the following steps. Stops on EOS, a completed
// answer sentence, the token budget, or the context limit (recorded as
// truncated).
struct GenerationResult {
    std::vector<int> tokens;               // generated ids (prompt excluded)
    std::string text;                      // decoded text portion
    std::vector<std::string> verbal_steps; // text segments between images
    std::vector<TileImage> images;         // decoded visual thoughts
    std::optional<char> answer;
    bool truncated = false;
};

GenerationResult generate(const Parameters& params, const TokenVocab& vocab, const Codebook& cb,
                          std::span<const int> prompt, Variant mode, int image_block, int grid_w,
                          int grid_h, int max_new_tokens);

GenerationResult generate_for_record(const Parameters& params, const TokenVocab& vocab,
                                     const Codebook& cb, const DatasetRecord& record,
                                     int max_new_tokens);

// Case-insensitive search for "the answer is" followed by an option letter;
// the last occurrence wins.
std::optional<char> extract_answer(const std::string& text);

} // namespace mindgrid
