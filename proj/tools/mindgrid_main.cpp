#include <cstdio>
#include <exception>

#include <CLI11.hpp>

#include "mindgrid/cli_core.hpp"
#include "mindgrid/error.hpp"

using namespace mindgrid;

int main(int argc, char** argv) {
    CLI::App app{"Grid-world visual-reasoning lab: dataset generation, training, "
                 "evaluation, and embedding analysis"};
    app.set_config("--config", "", "Flat key=value config file; flags override");
    app.require_subcommand(1);

    GenOptions gen;
    std::string gen_variants = "all";
    auto* cgen = app.add_subcommand("gen", "Generate dataset splits and shared artifacts");
    cgen->add_option("--task", gen.task, "maze | minibehavior | frozenlake")->capture_default_str();
    cgen->add_option("--sizes", gen.sizes, "Grid sizes (default: task range)")->delimiter(',');
    cgen->add_option("--train", gen.train_count, "Training examples")->capture_default_str();
    cgen->add_option("--dev", gen.dev_count, "Dev examples")->capture_default_str();
    cgen->add_option("--seed", gen.seed, "Root seed")->capture_default_str();
    cgen->add_option("--out", gen.out_dir, "Output directory")->capture_default_str();
    cgen->add_option("--variants", gen_variants,
                     "Comma list of direct,cot_layout,cot_coords,interleaved,visual_cot or 'all'")
        ->capture_default_str();
    cgen->add_option("--ppm", gen.ppm_examples, "Export the first N dev states as PPM");
    cgen->add_option("--mutation-rate", gen.mutation_rate, "minibehavior repeat probability")
        ->capture_default_str();
    cgen->add_option("--qlearn-episodes", gen.qlearn_episodes, "frozenlake Q-learning episodes")
        ->capture_default_str();

    TrainOptions tr;
    auto* ctrain = app.add_subcommand("train", "Train a model on a generated split");
    ctrain->add_option("--train", tr.train_path, "Train JSONL")->required();
    ctrain->add_option("--dev", tr.dev_path, "Dev JSONL");
    ctrain->add_option("--vocab", tr.vocab_path, "vocab.json")->required();
    ctrain->add_option("--codebook", tr.codebook_path, "codebook.bin")->required();
    ctrain->add_option("--out", tr.out_dir, "Run directory")->capture_default_str();
    ctrain->add_option("--variant", tr.variant, "Training variant")->capture_default_str();
    ctrain->add_option("--layers", tr.layers)->capture_default_str();
    ctrain->add_option("--heads", tr.heads)->capture_default_str();
    ctrain->add_option("--width", tr.width)->capture_default_str();
    ctrain->add_option("--ff-width", tr.ff_width, "0 = 4*width")->capture_default_str();
    ctrain->add_option("--max-seq", tr.max_seq)->capture_default_str();
    ctrain->add_option("--max-rel", tr.max_rel)->capture_default_str();
    ctrain->add_option("--epochs", tr.epochs)->capture_default_str();
    ctrain->add_option("--batch", tr.batch_size)->capture_default_str();
    ctrain->add_option("--seed", tr.seed)->capture_default_str();
    ctrain->add_option("--lr", tr.lr)->capture_default_str();
    ctrain->add_option("--lambda-disc", tr.lambda_disc, "Token discrepancy weight")
        ->capture_default_str();
    ctrain->add_flag("--no-token-discrepancy", tr.no_token_discrepancy,
                     "Ablation: train with lambda_disc = 0");
    ctrain->add_flag("--no-augment", tr.no_augment, "Disable input image augmentation");
    ctrain->add_option("--augment-p", tr.augment_p)->capture_default_str();
    ctrain->add_option("--augment-k", tr.augment_k)->capture_default_str();
    ctrain->add_option("--eval-every", tr.eval_every, "Dev probe cadence in epochs (0 = off)")
        ->capture_default_str();
    ctrain->add_option("--eval-examples", tr.eval_examples)->capture_default_str();
    ctrain->add_option("--checkpoint-every", tr.checkpoint_every)->capture_default_str();
    ctrain->add_option("--max-new-tokens", tr.max_new_tokens)->capture_default_str();

    EvalCmdOptions ev;
    auto* ceval = app.add_subcommand("eval", "Evaluate a checkpoint on a dev split");
    ceval->add_option("--checkpoint", ev.checkpoint_path)->required();
    ceval->add_option("--dataset", ev.dataset_path)->required();
    ceval->add_option("--vocab", ev.vocab_path)->required();
    ceval->add_option("--codebook", ev.codebook_path)->required();
    ceval->add_option("--out", ev.out_path)->capture_default_str();
    ceval->add_option("--variant", ev.variant, "Override the checkpoint's variant");
    ceval->add_option("--limit", ev.limit, "Evaluate only the first N records");
    ceval->add_option("--max-new-tokens", ev.max_new_tokens)->capture_default_str();
    ceval->add_option("--threads", ev.threads, "Workers for generation")->capture_default_str();
    ceval->add_option("--dump-failures", ev.dump_failures,
                      "Write up to N side-by-side failure strips as PPM");
    ceval->add_option("--ensemble-with", ev.ensemble_with,
                      "Second report; adds the union-correct upper bound");

    AnalyzeOptions an;
    auto* canalyze =
        app.add_subcommand("analyze", "Top-k overlap between LM and visual embeddings");
    canalyze->add_option("--checkpoint", an.checkpoint_path)->required();
    canalyze->add_option("--vocab", an.vocab_path)->required();
    canalyze->add_option("--codebook", an.codebook_path)->required();
    canalyze->add_option("--out", an.out_path)->capture_default_str();
    canalyze->add_option("--ks", an.ks, "Neighborhood sizes")->delimiter(',')->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (cgen->parsed()) {
            if (gen_variants != "all") {
                gen.variants.clear();
                std::string cur;
                for (char c : gen_variants + ",") {
                    if (c == ',') {
                        if (!cur.empty()) gen.variants.push_back(cur);
                        cur.clear();
                    } else {
                        cur.push_back(c);
                    }
                }
            }
            GenPaths paths = run_gen(gen);
            std::printf("wrote %s\n", paths.train.c_str());
            std::printf("wrote %s\n", paths.dev.c_str());
            std::printf("wrote %s\n", paths.stats.c_str());
        } else if (ctrain->parsed()) {
            TrainResult res = run_train(tr);
            const EpochMetrics& last = res.metrics.back();
            std::printf("trained %d epochs, final loss %.6f (ce %.6f, disc %.6f)\n",
                        static_cast<int>(res.metrics.size()), last.loss, last.ce, last.disc);
            if (last.dev_accuracy) {
                std::printf("dev accuracy %.4f\n", *last.dev_accuracy);
            }
            std::printf("wrote %s\n", res.checkpoint_path.c_str());
        } else if (ceval->parsed()) {
            EvalOutcome out = run_eval(ev);
            std::printf("accuracy %.4f over %d examples\n", out.accuracy, out.total);
            if (out.has_vis) {
                std::printf("v_acc %.4f v_red %.4f v_steps %.4f v_ratio %.4f\n", out.vis.v_acc,
                            out.vis.v_red, out.vis.v_steps, out.vis.v_ratio);
            }
            std::printf("wrote %s\n", ev.out_path.c_str());
        } else if (canalyze->parsed()) {
            auto ratios = run_analyze(an);
            for (const auto& [k, ratio] : ratios) {
                std::printf("top-%d overlap %.4f\n", k, ratio);
            }
            std::printf("wrote %s\n", an.out_path.c_str());
        }
    } catch (const ExhaustionError& e) {
        std::fprintf(stderr, "error: %s (produced %zu of %zu)\n", e.what(), e.produced(),
                     e.requested());
        return exit_code_for(e.kind());
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_code_for(e.kind());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
