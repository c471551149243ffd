#include "mindgrid/codec.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mindgrid/error.hpp"

namespace mindgrid {

Codebook build_codebook(const std::vector<TileSprite>& sprites) {
    require(!sprites.empty(), ErrorKind::invalid_argument, "empty sprite set");

    Codebook cb;
    cb.entries = static_cast<int>(sprites.size());
    cb.dim = kTilePixels;
    cb.embeddings.resize(static_cast<std::size_t>(cb.entries) * cb.dim);
    cb.tile_of.resize(static_cast<std::size_t>(cb.entries));

    std::set<std::pair<uint64_t, uint64_t>> seen; // (pixel hash, secondary hash)
    for (int i = 0; i < cb.entries; ++i) {
        const TileSprite& s = sprites[static_cast<std::size_t>(i)];
        uint64_t h1 = fnv1a64_bytes(s.pixels.data(), s.pixels.size());
        uint64_t h2 = fnv1a64_bytes(s.pixels.data(), s.pixels.size(), 0x84222325cbf29ce4ull);
        if (!seen.insert({h1, h2}).second) {
            fail(ErrorKind::ambiguous_codebook,
                 "two tile kinds share identical pixels (" + SpriteSet::instance().name(s.code) + ")");
        }
        cb.tile_of[static_cast<std::size_t>(i)] = s.code;
        cb.index_of[s.code] = i;

        double* row = cb.embeddings.data() + static_cast<std::size_t>(i) * cb.dim;
        double mean = 0.0;
        for (int d = 0; d < cb.dim; ++d) {
            row[d] = static_cast<double>(s.pixels[static_cast<std::size_t>(d)]) / 255.0;
            mean += row[d];
        }
        mean /= cb.dim;
        double norm2 = 0.0;
        for (int d = 0; d < cb.dim; ++d) {
            row[d] -= mean;
            norm2 += row[d] * row[d];
        }
        const double norm = std::sqrt(norm2);
        require(norm > 1e-9, ErrorKind::ambiguous_codebook,
                "uniform sprite has no direction: " + SpriteSet::instance().name(s.code));
        for (int d = 0; d < cb.dim; ++d) {
            row[d] = static_cast<double>(static_cast<float>(row[d] / norm));
        }
    }
    return cb;
}

double SimilarityMatrix::row_max(int i) const {
    const double* r = values.data() + static_cast<std::size_t>(i) * entries;
    return *std::max_element(r, r + entries);
}

SimilarityMatrix similarity_matrix(const Codebook& cb) {
    SimilarityMatrix S;
    S.entries = cb.entries;
    S.values.assign(static_cast<std::size_t>(cb.entries) * cb.entries, 0.0);
    for (int i = 0; i < cb.entries; ++i) {
        for (int j = i + 1; j < cb.entries; ++j) {
            const double* a = cb.row(i);
            const double* b = cb.row(j);
            double acc = 0.0;
            for (int d = 0; d < cb.dim; ++d) {
                const double diff = a[d] - b[d];
                acc += diff * diff;
            }
            const double mse = acc / cb.dim;
            S.values[static_cast<std::size_t>(i) * cb.entries + j] = mse;
            S.values[static_cast<std::size_t>(j) * cb.entries + i] = mse;
        }
    }
    return S;
}

std::vector<int> tokenize_image(const TileImage& img, const Codebook& cb) {
    std::vector<int> out;
    out.reserve(img.tiles.size());
    for (TileCode t : img.tiles) {
        auto it = cb.index_of.find(t);
        if (it == cb.index_of.end()) {
            fail(ErrorKind::decode, "tile kind " + std::to_string(t) + " not in codebook");
        }
        out.push_back(it->second);
    }
    return out;
}

TileImage detokenize(const std::vector<int>& tokens, const Codebook& cb, int width, int height) {
    require(static_cast<std::size_t>(width) * height == tokens.size(), ErrorKind::decode,
            "token count does not match image dimensions");
    TileImage img;
    img.width = width;
    img.height = height;
    img.tiles.reserve(tokens.size());
    for (int t : tokens) {
        require(t >= 0 && t < cb.entries, ErrorKind::decode, "image token out of range");
        img.tiles.push_back(cb.tile_of[static_cast<std::size_t>(t)]);
    }
    return img;
}

NeighborTable build_neighbors(const SimilarityMatrix& S, int k) {
    require(k >= 1 && k < S.entries, ErrorKind::invalid_argument, "neighbor count out of range");
    NeighborTable nt;
    nt.k = k;
    nt.flat.resize(static_cast<std::size_t>(S.entries) * k);
    std::vector<int> order(static_cast<std::size_t>(S.entries));
    for (int i = 0; i < S.entries; ++i) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return S.at(i, a) < S.at(i, b); });
        int written = 0;
        for (int cand : order) {
            if (cand == i) continue;
            nt.flat[static_cast<std::size_t>(i) * k + written++] = cand;
            if (written == k) break;
        }
    }
    return nt;
}

std::vector<int> augment_rounds(const std::vector<int>& tokens, const NeighborTable& nt, double p,
                                int rounds, Rng& rng) {
    std::vector<int> out = tokens;
    for (int r = 0; r < rounds; ++r) {
        for (int& t : out) {
            if (rng.uniform01() < p) {
                t = nt.row(t)[rng.below(static_cast<uint64_t>(nt.k))];
            }
        }
    }
    return out;
}

std::vector<int> augment(const std::vector<int>& tokens, const NeighborTable& nt, double p, uint64_t seed) {
    require(p >= 0.0 && p <= 1.0, ErrorKind::invalid_argument, "p must be a probability");
    Rng rng = Rng(seed).split("augment");
    const int rounds = static_cast<int>(rng.below(11)); // 0..10 inclusive
    return augment_rounds(tokens, nt, p, rounds, rng);
}

std::vector<int> augment(const std::vector<int>& tokens, const SimilarityMatrix& S, double p, int k,
                         uint64_t seed) {
    return augment(tokens, build_neighbors(S, k), p, seed);
}

int TokenVocab::text_id(const std::string& surface) const {
    auto it = text_ids.find(surface);
    if (it == text_ids.end()) {
        fail(ErrorKind::vocabulary, "surface form not in lexicon: '" + surface + "'");
    }
    return it->second;
}

std::string TokenVocab::surface(int id) const {
    static const char* specials[] = {"<pad>", "<bos>", "<eos>", "<boi>", "<eoi>"};
    if (is_special(id)) return specials[id];
    if (is_text(id)) return text_surfaces[static_cast<std::size_t>(id - text_base())];
    if (is_image(id)) return "<img:" + std::to_string(entry_of(id)) + ">";
    fail(ErrorKind::decode, "token id out of range: " + std::to_string(id));
}

std::vector<std::string> split_text(const std::string& text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    auto wordish = [](unsigned char c) {
        return std::isalnum(c) != 0 || c == '_';
    };
    while (i < text.size()) {
        unsigned char c = static_cast<unsigned char>(text[i]);
        if (std::isspace(c)) {
            ++i;
            continue;
        }
        if (wordish(c)) {
            std::size_t j = i;
            while (j < text.size() && wordish(static_cast<unsigned char>(text[j]))) ++j;
            out.push_back(text.substr(i, j - i));
            i = j;
        } else {
            out.push_back(std::string(1, text[i]));
            ++i;
        }
    }
    return out;
}

TokenVocab build_vocab(const std::vector<std::string>& corpus, const Codebook& cb) {
    std::set<std::string> lexicon;
    for (const std::string& s : corpus) {
        for (std::string& w : split_text(s)) {
            lexicon.insert(std::move(w));
        }
    }
    TokenVocab vocab;
    vocab.text_surfaces.assign(lexicon.begin(), lexicon.end());
    for (std::size_t i = 0; i < vocab.text_surfaces.size(); ++i) {
        vocab.text_ids[vocab.text_surfaces[i]] = vocab.text_base() + static_cast<int>(i);
    }
    vocab.image_entries = cb.entries;
    return vocab;
}

std::vector<int> encode_text(const std::string& text, const TokenVocab& vocab) {
    std::vector<int> ids;
    for (const std::string& w : split_text(text)) {
        ids.push_back(vocab.text_id(w));
    }
    return ids;
}

std::string decode_text(const std::vector<int>& ids, const TokenVocab& vocab) {
    std::string out;
    for (int id : ids) {
        if (!out.empty()) out.push_back(' ');
        out += vocab.surface(id);
    }
    return out;
}

void TokenSequence::validate(const TokenVocab& vocab, int image_block) const {
    require(ids.size() == loss_mask.size(), ErrorKind::invalid_argument, "mask length mismatch");
    int cursor = 0;
    for (const Span& s : spans) {
        require(s.start == cursor && s.end > s.start && s.end <= static_cast<int>(ids.size()),
                ErrorKind::invalid_argument, "spans must tile the sequence");
        cursor = s.end;
        if (s.modality == Modality::image) {
            require(s.end - s.start == image_block + 2, ErrorKind::invalid_argument,
                    "image span must be BOI + block + EOI");
            require(ids[static_cast<std::size_t>(s.start)] == TokenVocab::boi &&
                        ids[static_cast<std::size_t>(s.end) - 1] == TokenVocab::eoi,
                    ErrorKind::invalid_argument, "image span must be framed by BOI/EOI");
            for (int i = s.start + 1; i + 1 < s.end; ++i) {
                require(vocab.is_image(ids[static_cast<std::size_t>(i)]), ErrorKind::invalid_argument,
                        "non-image token inside an image span");
            }
        }
    }
    require(cursor == static_cast<int>(ids.size()), ErrorKind::invalid_argument,
            "spans must cover every token");
}

namespace {

constexpr char kCodebookMagic[8] = {'M', 'G', 'C', 'B', '0', '0', '0', '1'};

template <typename T>
void write_raw(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    require(is.good(), ErrorKind::format, "truncated file");
    return v;
}

std::string codebook_bytes(const Codebook& cb) {
    std::ostringstream os(std::ios::binary);
    os.write(kCodebookMagic, sizeof(kCodebookMagic));
    write_raw<uint32_t>(os, 1); // format version
    write_raw<uint32_t>(os, static_cast<uint32_t>(cb.entries));
    write_raw<uint32_t>(os, static_cast<uint32_t>(cb.dim));
    write_raw<uint8_t>(os, 1); // MSE normalization: 1 = mean over dimensions
    for (TileCode t : cb.tile_of) {
        write_raw<uint16_t>(os, t);
    }
    for (double v : cb.embeddings) {
        write_raw<float>(os, static_cast<float>(v));
    }
    return os.str();
}

} // namespace

void save_codebook(const Codebook& cb, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    require(f.good(), ErrorKind::invalid_argument, "cannot open " + path);
    const std::string bytes = codebook_bytes(cb);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Codebook load_codebook(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), ErrorKind::invalid_argument, "cannot open " + path);
    char magic[8];
    f.read(magic, sizeof(magic));
    require(f.good() && std::memcmp(magic, kCodebookMagic, sizeof(magic)) == 0, ErrorKind::format,
            "bad codebook magic");
    require(read_raw<uint32_t>(f) == 1, ErrorKind::format, "unsupported codebook version");
    Codebook cb;
    cb.entries = static_cast<int>(read_raw<uint32_t>(f));
    cb.dim = static_cast<int>(read_raw<uint32_t>(f));
    require(read_raw<uint8_t>(f) == 1, ErrorKind::format, "unsupported MSE normalization flag");
    cb.tile_of.resize(static_cast<std::size_t>(cb.entries));
    for (auto& t : cb.tile_of) {
        t = read_raw<uint16_t>(f);
    }
    for (int i = 0; i < cb.entries; ++i) {
        cb.index_of[cb.tile_of[static_cast<std::size_t>(i)]] = i;
    }
    cb.embeddings.resize(static_cast<std::size_t>(cb.entries) * cb.dim);
    for (double& v : cb.embeddings) {
        v = static_cast<double>(read_raw<float>(f));
    }
    return cb;
}

uint64_t codebook_digest(const Codebook& cb) {
    const std::string bytes = codebook_bytes(cb);
    return fnv1a64_bytes(bytes.data(), bytes.size());
}

std::string vocab_manifest_json(const TokenVocab& vocab, const SpriteSet& sprites, const Codebook& cb) {
    nlohmann::ordered_json j;
    j["version"] = 1;
    j["specials"] = {"<pad>", "<bos>", "<eos>", "<boi>", "<eoi>"};
    j["text"] = vocab.text_surfaces;
    std::vector<std::string> tiles;
    tiles.reserve(static_cast<std::size_t>(cb.entries));
    for (TileCode t : cb.tile_of) {
        tiles.push_back(sprites.name(t));
    }
    j["image_tiles"] = tiles;
    return j.dump(2) + "\n";
}

void save_vocab(const TokenVocab& vocab, const Codebook& cb, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    require(f.good(), ErrorKind::invalid_argument, "cannot open " + path);
    f << vocab_manifest_json(vocab, SpriteSet::instance(), cb);
}

TokenVocab load_vocab(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), ErrorKind::invalid_argument, "cannot open " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const std::exception& e) {
        fail(ErrorKind::format, std::string("bad vocab manifest: ") + e.what());
    }
    require(j.value("version", 0) == 1, ErrorKind::format, "unsupported vocab version");
    TokenVocab vocab;
    vocab.text_surfaces = j.at("text").get<std::vector<std::string>>();
    for (std::size_t i = 0; i < vocab.text_surfaces.size(); ++i) {
        vocab.text_ids[vocab.text_surfaces[i]] = vocab.text_base() + static_cast<int>(i);
    }
    vocab.image_entries = static_cast<int>(j.at("image_tiles").size());
    return vocab;
}

uint64_t vocab_digest(const TokenVocab& vocab) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const std::string& s : vocab.text_surfaces) {
        h = fnv1a64(s, h);
        h = fnv1a64("\x1f", h);
    }
    h = mix64(h ^ static_cast<uint64_t>(vocab.image_entries));
    return h;
}

} // namespace mindgrid
