#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mindgrid/engine.hpp"
#include "mindgrid/error.hpp"
#include "mindgrid/eval.hpp"

namespace mindgrid {

// Command implementations shared by the binary and the test suites. They
// throw Error; main() maps kinds to exit codes (0 ok, 2 usage/input,
// 3 integrity, 4 numeric).
int exit_code_for(ErrorKind kind);

struct GenOptions {
    std::string task = "maze";
    std::vector<int> sizes;   // empty = task default
    int train_count = 2000;
    int dev_count = 500;
    uint64_t seed = 0;
    std::string out_dir = "data";
    std::vector<std::string> variants; // empty = all five
    int ppm_examples = 0;     // export the first N dev initial states as PPM
    double mutation_rate = 0.5;
    int qlearn_episodes = 2000;
};

struct GenPaths {
    std::string train;
    std::string dev;
    std::string stats;
    std::string vocab;
    std::string codebook;
};

GenPaths run_gen(const GenOptions& opt);

struct TrainOptions {
    std::string train_path;
    std::string dev_path;
    std::string vocab_path;
    std::string codebook_path;
    std::string out_dir = "run";
    std::string variant = "visual_cot";

    int layers = 4;
    int heads = 4;
    int width = 128;
    int ff_width = 0; // 0 = 4 * width
    int max_seq = 1024;
    int max_rel = 160;
    double init_std = 0.02;

    int epochs = 60;
    int batch_size = 16;
    uint64_t seed = 0;
    double lr = 3e-4;
    double lambda_disc = 1.0;
    bool no_token_discrepancy = false; // forces lambda_disc = 0

    bool no_augment = false;
    double augment_p = 0.05;
    int augment_k = 3;

    int eval_every = 1;
    int eval_examples = 32;
    int checkpoint_every = 0;
    int max_new_tokens = 1024;
};

TrainResult run_train(const TrainOptions& opt);

struct EvalCmdOptions {
    std::string checkpoint_path;
    std::string dataset_path;
    std::string vocab_path;
    std::string codebook_path;
    std::string out_path = "report.json";
    std::string variant; // empty = the checkpoint's training variant
    int limit = 0;
    int max_new_tokens = 1024;
    int threads = 1;
    int dump_failures = 0; // write up to N side-by-side failure strips
    std::string ensemble_with; // other report for the union upper bound
};

EvalOutcome run_eval(const EvalCmdOptions& opt);

struct AnalyzeOptions {
    std::string checkpoint_path;
    std::string vocab_path;
    std::string codebook_path;
    std::string out_path = "overlap.json";
    std::vector<int> ks{10, 50};
};

std::map<int, double> run_analyze(const AnalyzeOptions& opt);

} // namespace mindgrid
