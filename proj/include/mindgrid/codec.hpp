#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mindgrid/raster.hpp"
#include "mindgrid/rng.hpp"

namespace mindgrid {

// Visual embedding table; row i is the mean-centered, unit-L2-scaled pixel
// vector of the sprite for tile_of[i]. Values are rounded to float32 so the
// in-memory table and the serialized table are bit-identical.
struct Codebook {
    int entries = 0;   // N
    int dim = 0;       // D = 3 * T^2
    std::vector<double> embeddings;   // N x D, row-major
    std::vector<TileCode> tile_of;    // token index -> tile kind
    std::map<TileCode, int> index_of; // tile kind -> token index

    const double* row(int i) const { return embeddings.data() + static_cast<std::size_t>(i) * dim; }
};

Codebook build_codebook(const std::vector<TileSprite>& sprites);

// Pairwise per-dimension mean squared error between codebook rows; symmetric,
// zero diagonal, nonnegative. Larger value = less similar.
struct SimilarityMatrix {
    int entries = 0;
    std::vector<double> values; // N x N

    double at(int i, int j) const { return values[static_cast<std::size_t>(i) * entries + j]; }
    double row_max(int i) const;
};

SimilarityMatrix similarity_matrix(const Codebook& cb);

// Row-major codebook indices, one per cell.
std::vector<int> tokenize_image(const TileImage& img, const Codebook& cb);
TileImage detokenize(const std::vector<int>& tokens, const Codebook& cb, int width, int height);

// k nearest neighbors per token under S (self excluded, ties by index).
struct NeighborTable {
    int k = 0;
    std::vector<int> flat; // N x k
    const int* row(int i) const { return flat.data() + static_cast<std::size_t>(i) * k; }
};

NeighborTable build_neighbors(const SimilarityMatrix& S, int k);

// Reconstruction-noise channel standing in for a lossy round trip through a
// learned tokenizer: draws r ~ U{0..10}, then applies r rounds where each
// token is replaced with probability p by a uniform pick among its k nearest
// neighbors. Deterministic in seed.
std::vector<int> augment(const std::vector<int>& tokens, const NeighborTable& nt, double p, uint64_t seed);
std::vector<int> augment(const std::vector<int>& tokens, const SimilarityMatrix& S, double p, int k,
                         uint64_t seed);
// Fixed-round core used by both entry points.
std::vector<int> augment_rounds(const std::vector<int>& tokens, const NeighborTable& nt, double p,
                                int rounds, Rng& rng);

// Unified token space: specials, then the closed word-level text lexicon,
// then one image token per codebook entry.
struct TokenVocab {
    static constexpr int pad = 0;
    static constexpr int bos = 1;
    static constexpr int eos = 2;
    static constexpr int boi = 3; // begin image
    static constexpr int eoi = 4; // end image

    std::vector<std::string> text_surfaces; // ids text_base()..text_base()+n-1
    int image_entries = 0;                  // codebook size
    std::map<std::string, int> text_ids;

    int text_base() const { return 5; }
    int image_base() const { return 5 + static_cast<int>(text_surfaces.size()); }
    int size() const { return image_base() + image_entries; }

    bool is_special(int id) const { return id >= 0 && id < 5; }
    bool is_text(int id) const { return id >= text_base() && id < image_base(); }
    bool is_image(int id) const { return id >= image_base() && id < size(); }

    int text_id(const std::string& surface) const;       // throws vocabulary error
    int image_token(int entry) const { return image_base() + entry; }
    int entry_of(int image_token_id) const { return image_token_id - image_base(); }
    std::string surface(int id) const; // "<bos>" style names for specials
};

// Splits into [A-Za-z0-9_]+ words and single-character punctuation tokens.
std::vector<std::string> split_text(const std::string& text);

// Lexicon = every word/punctuation form appearing in `corpus`, sorted.
TokenVocab build_vocab(const std::vector<std::string>& corpus, const Codebook& cb);

std::vector<int> encode_text(const std::string& text, const TokenVocab& vocab);
std::string decode_text(const std::vector<int>& ids, const TokenVocab& vocab); // space-joined

enum class Modality : uint8_t { text, image };

struct Span {
    int start = 0; // inclusive
    int end = 0;   // exclusive
    Modality modality = Modality::text;

    bool operator==(const Span&) const = default;
};

// Training/inference unit. Image spans cover BOI + w*h image tokens + EOI;
// spans of both kinds tile the whole id list.
struct TokenSequence {
    std::vector<int> ids;
    std::vector<uint8_t> loss_mask;
    std::vector<Span> spans;

    void validate(const TokenVocab& vocab, int image_block) const;
};

// Artifact IO. Digests are FNV-1a over the serialized bytes.
void save_codebook(const Codebook& cb, const std::string& path);
Codebook load_codebook(const std::string& path);
uint64_t codebook_digest(const Codebook& cb);

std::string vocab_manifest_json(const TokenVocab& vocab, const SpriteSet& sprites, const Codebook& cb);
void save_vocab(const TokenVocab& vocab, const Codebook& cb, const std::string& path);
TokenVocab load_vocab(const std::string& path);
uint64_t vocab_digest(const TokenVocab& vocab);

} // namespace mindgrid
