#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mindgrid/codec.hpp"

namespace mindgrid {

struct ModelConfig {
    int layers = 4;
    int heads = 4;
    int width = 128;
    int ff_width = 512;
    int max_seq = 1024;
    int max_rel = 160;   // relative-attention bias window
    int vocab_size = 0;
    double init_std = 0.02;
    uint64_t seed = 0;

    bool operator==(const ModelConfig&) const = default;
};

uint64_t config_digest(const ModelConfig& cfg);
long parameter_count(const ModelConfig& cfg);

struct TensorInfo {
    std::string name;
    std::vector<int> shape;
    std::size_t offset = 0;
    std::size_t size = 0;
};

// Flat named parameter store. Master values are float32 (that is what
// checkpoints hold, bytewise); a double mirror backs all computation.
class Parameters {
public:
    Parameters() = default;
    explicit Parameters(const ModelConfig& cfg); // zero-initialized

    const ModelConfig& config() const { return cfg_; }
    const std::vector<TensorInfo>& tensors() const { return tensors_; }
    const TensorInfo& tensor(const std::string& name) const;

    std::size_t size() const { return data_.size(); }
    const std::vector<float>& raw() const { return data_; }
    const double* mirror() const { return mirror_.data(); }
    const double* at(const TensorInfo& t) const { return mirror_.data() + t.offset; }
    const double* at(const std::string& name) const { return at(tensor(name)); }

    float get(std::size_t i) const { return data_[i]; }
    void set(std::size_t i, float v) {
        data_[i] = v;
        mirror_[i] = static_cast<double>(v);
    }
    void assign_raw(std::vector<float> values);

private:
    ModelConfig cfg_;
    std::vector<TensorInfo> tensors_;
    std::vector<float> data_;
    std::vector<double> mirror_;
};

// Seeded init: weights ~ N(0, init_std), norms at identity, relative bias 0.
Parameters init(const ModelConfig& cfg);

using Gradients = std::vector<double>; // aligned with the flat parameter store

struct LossBreakdown {
    double ce = 0.0;        // mean masked cross-entropy
    double disc = 0.0;      // token discrepancy term as added to the total (lambda-scaled mean)
    double total = 0.0;     // ce + disc, exactly
    double disc_raw_sum = 0.0;  // unnormalized sum over supervised image positions
    double disc_raw_mean = 0.0; // per-image-position mean before lambda
    long text_positions = 0;    // supervised non-image target positions
    long image_positions = 0;   // supervised image target positions
};

// One teacher-forced sequence: inputs may carry augmentation noise on image
// tokens, targets are always the golden ids.
struct TrainItem {
    std::vector<int> input_ids;
    std::vector<int> golden_ids; // same length; target at t is golden_ids[t+1]
    std::vector<uint8_t> loss_mask;
};

using TrainBatch = std::vector<TrainItem>;

// Token discrepancy contribution of one predicted distribution: the label's
// similarity row dotted with the probability restricted to image tokens,
// plus row-max-rate penalty for mass outside the image range. Zero exactly
// when all mass sits on tokens whose embeddings equal the label's.
double discrepancy_term(std::span<const double> probs, int target_entry, const SimilarityMatrix& S,
                        int image_base);

// Loss over precomputed logits rows (row r predicts targets[r]); the
// reference surface used by unit tests and the independent oracle.
LossBreakdown loss_from_logits(const std::vector<std::vector<double>>& logits,
                               std::span<const int> targets, std::span<const uint8_t> mask,
                               const SimilarityMatrix& S, const TokenVocab& vocab, double lambda_disc);

class Workspace; // per-thread scratch, reusable across calls

Workspace* make_workspace();
void free_workspace(Workspace*);

struct WorkspaceDeleter {
    void operator()(Workspace* w) const { free_workspace(w); }
};

// Strictly causal forward pass; returns one logits row per entry of
// `positions` (position indices into `ids`).
std::vector<std::vector<double>> forward(const Parameters& params, std::span<const int> ids,
                                         std::span<const int> positions, Workspace& ws);

// Loss of a batch without gradients (finite-difference oracle path).
LossBreakdown batch_loss(const Parameters& params, const TrainBatch& batch, const SimilarityMatrix& S,
                         const TokenVocab& vocab, double lambda_disc, Workspace& ws);

// Loss plus exact analytic gradients of ce + lambda * disc.
LossBreakdown backward(const Parameters& params, const TrainBatch& batch, const SimilarityMatrix& S,
                       const TokenVocab& vocab, double lambda_disc, Gradients& grads, Workspace& ws);

struct AdamState {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long step = 0;
    std::vector<double> m, v;
};

AdamState make_adam(const Parameters& params, double lr = 3e-4);
void optimize_step(Parameters& params, const Gradients& grads, AdamState& state);

// Incremental decoding with per-layer KV caches; logits match the full
// forward pass bit for bit.
class DecodeSession {
public:
    explicit DecodeSession(const Parameters& params);
    ~DecodeSession();
    DecodeSession(const DecodeSession&) = delete;
    DecodeSession& operator=(const DecodeSession&) = delete;

    void reset();
    void feed(std::span<const int> ids);
    void feed_one(int id);
    int position() const; // tokens consumed
    const std::vector<double>& last_logits() const;

private:
    struct Impl;
    Impl* impl_;
};

// Versioned binary checkpoint: magic, version, config, companion digests,
// tensor directory, row-major float32 little-endian data.
struct CheckpointMeta {
    uint64_t vocab_digest = 0;
    uint64_t codebook_digest = 0;
    std::string variant; // training variant tag
};

void save_checkpoint(const Parameters& params, const CheckpointMeta& meta, const std::string& path);
std::pair<Parameters, CheckpointMeta> load_checkpoint(const std::string& path);
// Rejects a checkpoint whose embedded config digest differs.
std::pair<Parameters, CheckpointMeta> load_checkpoint(const std::string& path,
                                                      const ModelConfig& expected);

} // namespace mindgrid
