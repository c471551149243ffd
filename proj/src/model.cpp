#include "mindgrid/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mindgrid/error.hpp"
#include "mindgrid/rng.hpp"

namespace mindgrid {

namespace {

constexpr double kLnEps = 1e-5;

// Four-lane dot product. The lane structure fixes the accumulation order
// while letting the compiler keep the lanes in SIMD registers.
double dot(const double* a, const double* b, int n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) s0 += a[i] * b[i];
    return (s0 + s1) + (s2 + s3);
}

// C[m x n] += A[m x k] * B[k x n], all row-major. The kk-outer inner loop is
// the single accumulation order used everywhere (including single-row
// decoding), so batched and incremental paths agree bitwise.
void matmul_acc(const double* A, const double* B, double* C, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* a = A + static_cast<std::size_t>(i) * k;
        double* c = C + static_cast<std::size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            const double av = a[kk];
            const double* b = B + static_cast<std::size_t>(kk) * n;
            for (int j = 0; j < n; ++j) {
                c[j] += av * b[j];
            }
        }
    }
}

// dA[m x k] += dC[m x n] * B^T (rows of B are contiguous)
void matmul_acc_bt(const double* dC, const double* B, double* dA, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* dc = dC + static_cast<std::size_t>(i) * n;
        double* da = dA + static_cast<std::size_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
            da[kk] += dot(dc, B + static_cast<std::size_t>(kk) * n, n);
        }
    }
}

// dB[k x n] += A^T * dC
void matmul_acc_at(const double* A, const double* dC, double* dB, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* a = A + static_cast<std::size_t>(i) * k;
        const double* dc = dC + static_cast<std::size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            const double av = a[kk];
            double* db = dB + static_cast<std::size_t>(kk) * n;
            for (int j = 0; j < n; ++j) {
                db[j] += av * dc[j];
            }
        }
    }
}

double gelu(double x) {
    constexpr double c = 0.7978845608028654; // sqrt(2/pi)
    const double u = c * (x + 0.044715 * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_grad(double x) {
    constexpr double c = 0.7978845608028654;
    const double u = c * (x + 0.044715 * x * x * x);
    const double t = std::tanh(u);
    const double du = c * (1.0 + 3.0 * 0.044715 * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

struct LayerNames {
    std::string ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
    explicit LayerNames(int l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        ln1_g = p + "ln1.gamma";
        ln1_b = p + "ln1.beta";
        wq = p + "attn.wq";
        bq = p + "attn.bq";
        wk = p + "attn.wk";
        bk = p + "attn.bk";
        wv = p + "attn.wv";
        bv = p + "attn.bv";
        wo = p + "attn.wo";
        bo = p + "attn.bo";
        ln2_g = p + "ln2.gamma";
        ln2_b = p + "ln2.beta";
        w1 = p + "mlp.w1";
        b1 = p + "mlp.b1";
        w2 = p + "mlp.w2";
        b2 = p + "mlp.b2";
    }
};

} // namespace

uint64_t config_digest(const ModelConfig& cfg) {
    std::ostringstream os;
    os << cfg.layers << '|' << cfg.heads << '|' << cfg.width << '|' << cfg.ff_width << '|' << cfg.max_seq
       << '|' << cfg.max_rel << '|' << cfg.vocab_size << '|' << cfg.init_std << '|' << cfg.seed;
    return fnv1a64(os.str());
}

long parameter_count(const ModelConfig& cfg) {
    const long W = cfg.width, F = cfg.ff_width;
    const long per_layer = 2 * W             // ln1
                           + 3 * (W * W + W) // q,k,v
                           + W * W + W       // output projection
                           + 2 * W           // ln2
                           + W * F + F       // mlp in
                           + F * W + W;      // mlp out
    return static_cast<long>(cfg.vocab_size) * W        // tied token embedding
           + static_cast<long>(cfg.max_seq) * W         // positions
           + static_cast<long>(cfg.heads) * cfg.max_rel // relative bias
           + cfg.layers * per_layer + 2 * W;            // final norm
}

Parameters::Parameters(const ModelConfig& cfg) : cfg_(cfg) {
    require(cfg.width % cfg.heads == 0, ErrorKind::invalid_argument, "width must divide by heads");
    require(cfg.vocab_size > 0, ErrorKind::invalid_argument, "vocab size must be set");

    std::size_t offset = 0;
    auto add = [&](const std::string& name, std::vector<int> shape) {
        std::size_t n = 1;
        for (int d : shape) n *= static_cast<std::size_t>(d);
        tensors_.push_back({name, std::move(shape), offset, n});
        offset += n;
    };

    add("tok_emb", {cfg.vocab_size, cfg.width});
    add("pos_emb", {cfg.max_seq, cfg.width});
    add("rel_bias", {cfg.heads, cfg.max_rel});
    for (int l = 0; l < cfg.layers; ++l) {
        LayerNames n(l);
        add(n.ln1_g, {cfg.width});
        add(n.ln1_b, {cfg.width});
        add(n.wq, {cfg.width, cfg.width});
        add(n.bq, {cfg.width});
        add(n.wk, {cfg.width, cfg.width});
        add(n.bk, {cfg.width});
        add(n.wv, {cfg.width, cfg.width});
        add(n.bv, {cfg.width});
        add(n.wo, {cfg.width, cfg.width});
        add(n.bo, {cfg.width});
        add(n.ln2_g, {cfg.width});
        add(n.ln2_b, {cfg.width});
        add(n.w1, {cfg.width, cfg.ff_width});
        add(n.b1, {cfg.ff_width});
        add(n.w2, {cfg.ff_width, cfg.width});
        add(n.b2, {cfg.width});
    }
    add("final_ln.gamma", {cfg.width});
    add("final_ln.beta", {cfg.width});

    data_.assign(offset, 0.0f);
    mirror_.assign(offset, 0.0);
}

const TensorInfo& Parameters::tensor(const std::string& name) const {
    for (const TensorInfo& t : tensors_) {
        if (t.name == name) return t;
    }
    fail(ErrorKind::invalid_argument, "unknown tensor: " + name);
}

void Parameters::assign_raw(std::vector<float> values) {
    require(values.size() == data_.size(), ErrorKind::format, "parameter payload size mismatch");
    data_ = std::move(values);
    mirror_.resize(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) {
        mirror_[i] = static_cast<double>(data_[i]);
    }
}

Parameters init(const ModelConfig& cfg) {
    Parameters p(cfg);
    Rng root(cfg.seed);
    for (const TensorInfo& t : p.tensors()) {
        Rng stream = root.split("init." + t.name);
        const bool is_gamma = t.name.ends_with("gamma");
        const bool is_zero = t.name.ends_with("beta") || t.name.ends_with(".bq") ||
                             t.name.ends_with(".bk") || t.name.ends_with(".bv") ||
                             t.name.ends_with(".bo") || t.name.ends_with(".b1") ||
                             t.name.ends_with(".b2") || t.name == "rel_bias";
        for (std::size_t i = 0; i < t.size; ++i) {
            float v = 0.0f;
            if (is_gamma) {
                v = 1.0f;
            } else if (!is_zero) {
                v = static_cast<float>(stream.normal(0.0, cfg.init_std));
            }
            p.set(t.offset + i, v);
        }
    }
    return p;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

namespace {

struct LayerActs {
    std::vector<double> x_in;    // T x W, residual stream entering the layer
    std::vector<double> ln1_out; // T x W
    std::vector<double> ln1_mean, ln1_rstd;
    std::vector<double> q, k, v; // T x W
    std::vector<double> probs;   // heads x T x T, row-softmaxed attention
    std::vector<double> ctx;     // T x W
    std::vector<double> x_mid;   // T x W, after the attention residual
    std::vector<double> ln2_out; // T x W
    std::vector<double> ln2_mean, ln2_rstd;
    std::vector<double> h1;      // T x F, pre-activation
    std::vector<double> g;       // T x F
};

} // namespace

class Workspace {
public:
    std::vector<LayerActs> layers;
    std::vector<double> x_final; // T x W
    std::vector<double> f;       // T x W, final LN output
    std::vector<double> f_mean, f_rstd;
    std::vector<double> logits;   // vocab scratch
    std::vector<double> probs;    // vocab scratch
    std::vector<double> dx;       // T x W
    std::vector<double> scratch1; // T x max(W,F)
    std::vector<double> scratch2;
    std::vector<double> dscores; // T
    std::vector<double> df;      // T x W

    void size_for(const ModelConfig& cfg, int T) {
        const std::size_t tw = static_cast<std::size_t>(T) * cfg.width;
        const std::size_t tf = static_cast<std::size_t>(T) * cfg.ff_width;
        layers.resize(static_cast<std::size_t>(cfg.layers));
        for (auto& la : layers) {
            la.x_in.assign(tw, 0.0);
            la.ln1_out.assign(tw, 0.0);
            la.ln1_mean.assign(static_cast<std::size_t>(T), 0.0);
            la.ln1_rstd.assign(static_cast<std::size_t>(T), 0.0);
            la.q.assign(tw, 0.0);
            la.k.assign(tw, 0.0);
            la.v.assign(tw, 0.0);
            la.probs.assign(static_cast<std::size_t>(cfg.heads) * T * T, 0.0);
            la.ctx.assign(tw, 0.0);
            la.x_mid.assign(tw, 0.0);
            la.ln2_out.assign(tw, 0.0);
            la.ln2_mean.assign(static_cast<std::size_t>(T), 0.0);
            la.ln2_rstd.assign(static_cast<std::size_t>(T), 0.0);
            la.h1.assign(tf, 0.0);
            la.g.assign(tf, 0.0);
        }
        x_final.assign(tw, 0.0);
        f.assign(tw, 0.0);
        f_mean.assign(static_cast<std::size_t>(T), 0.0);
        f_rstd.assign(static_cast<std::size_t>(T), 0.0);
        logits.assign(static_cast<std::size_t>(cfg.vocab_size), 0.0);
        probs.assign(static_cast<std::size_t>(cfg.vocab_size), 0.0);
        dx.assign(tw, 0.0);
        scratch1.assign(std::max(tw, tf), 0.0);
        scratch2.assign(std::max(tw, tf), 0.0);
        dscores.assign(static_cast<std::size_t>(T), 0.0);
        df.assign(tw, 0.0);
    }
};

Workspace* make_workspace() { return new Workspace(); }
void free_workspace(Workspace* w) { delete w; }

namespace {

void layer_norm_forward(const double* x, const double* gamma, const double* beta, double* out,
                        double* means, double* rstds, int T, int W) {
    for (int t = 0; t < T; ++t) {
        const double* xi = x + static_cast<std::size_t>(t) * W;
        double* oi = out + static_cast<std::size_t>(t) * W;
        double mean = 0.0;
        for (int d = 0; d < W; ++d) mean += xi[d];
        mean /= W;
        double var = 0.0;
        for (int d = 0; d < W; ++d) {
            const double c = xi[d] - mean;
            var += c * c;
        }
        var /= W;
        const double rstd = 1.0 / std::sqrt(var + kLnEps);
        means[t] = mean;
        rstds[t] = rstd;
        for (int d = 0; d < W; ++d) {
            oi[d] = (xi[d] - mean) * rstd * gamma[d] + beta[d];
        }
    }
}

// dx += backprop(dout); also accumulates gamma/beta grads.
void layer_norm_backward(const double* x, const double* gamma, const double* dout, const double* means,
                         const double* rstds, double* dx, double* dgamma, double* dbeta, int T, int W) {
    for (int t = 0; t < T; ++t) {
        const double* xi = x + static_cast<std::size_t>(t) * W;
        const double* doi = dout + static_cast<std::size_t>(t) * W;
        double* dxi = dx + static_cast<std::size_t>(t) * W;
        const double mean = means[t], rstd = rstds[t];

        double sum_dyg = 0.0, sum_dyg_xhat = 0.0;
        for (int d = 0; d < W; ++d) {
            const double xhat = (xi[d] - mean) * rstd;
            const double dyg = doi[d] * gamma[d];
            sum_dyg += dyg;
            sum_dyg_xhat += dyg * xhat;
            dgamma[d] += doi[d] * xhat;
            dbeta[d] += doi[d];
        }
        const double inv_w = 1.0 / W;
        for (int d = 0; d < W; ++d) {
            const double xhat = (xi[d] - mean) * rstd;
            const double dyg = doi[d] * gamma[d];
            dxi[d] += rstd * (dyg - inv_w * sum_dyg - xhat * inv_w * sum_dyg_xhat);
        }
    }
}

void add_bias(double* x, const double* b, int T, int W) {
    for (int t = 0; t < T; ++t) {
        double* xi = x + static_cast<std::size_t>(t) * W;
        for (int d = 0; d < W; ++d) xi[d] += b[d];
    }
}

int rel_bucket(int dist, int max_rel) { return dist < max_rel ? dist : max_rel - 1; }

void attention_forward(const ModelConfig& cfg, LayerActs& la, const double* rel_bias, int T) {
    const int H = cfg.heads, W = cfg.width, hd = W / H;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    std::vector<double> row(static_cast<std::size_t>(T));
    for (int h = 0; h < H; ++h) {
        const int off = h * hd;
        const double* bias = rel_bias + static_cast<std::size_t>(h) * cfg.max_rel;
        for (int i = 0; i < T; ++i) {
            const double* qi = la.q.data() + static_cast<std::size_t>(i) * W + off;
            double maxv = -1e300;
            for (int j = 0; j <= i; ++j) {
                const double* kj = la.k.data() + static_cast<std::size_t>(j) * W + off;
                const double s = dot(qi, kj, hd) * scale + bias[rel_bucket(i - j, cfg.max_rel)];
                row[static_cast<std::size_t>(j)] = s;
                maxv = std::max(maxv, s);
            }
            double denom = 0.0;
            for (int j = 0; j <= i; ++j) {
                row[static_cast<std::size_t>(j)] = std::exp(row[static_cast<std::size_t>(j)] - maxv);
                denom += row[static_cast<std::size_t>(j)];
            }
            double* pi = la.probs.data() + (static_cast<std::size_t>(h) * T + i) * T;
            double* ci = la.ctx.data() + static_cast<std::size_t>(i) * W + off;
            std::fill(ci, ci + hd, 0.0);
            const double inv = 1.0 / denom;
            for (int j = 0; j <= i; ++j) {
                const double p = row[static_cast<std::size_t>(j)] * inv;
                pi[j] = p;
                const double* vj = la.v.data() + static_cast<std::size_t>(j) * W + off;
                for (int d = 0; d < hd; ++d) ci[d] += p * vj[d];
            }
            std::fill(pi + i + 1, pi + T, 0.0);
        }
    }
}

void attention_backward(const ModelConfig& cfg, const LayerActs& la, const double* dctx, double* dq,
                        double* dk, double* dv, double* drel, int T, std::vector<double>& dscores) {
    const int H = cfg.heads, W = cfg.width, hd = W / H;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    for (int h = 0; h < H; ++h) {
        const int off = h * hd;
        double* drel_h = drel + static_cast<std::size_t>(h) * cfg.max_rel;
        for (int i = 0; i < T; ++i) {
            const double* pi = la.probs.data() + (static_cast<std::size_t>(h) * T + i) * T;
            const double* dci = dctx + static_cast<std::size_t>(i) * W + off;
            double dot_sum = 0.0; // sum_j dP[j] * P[j], for the softmax backward
            for (int j = 0; j <= i; ++j) {
                const double* vj = la.v.data() + static_cast<std::size_t>(j) * W + off;
                const double dp = dot(dci, vj, hd);
                dscores[static_cast<std::size_t>(j)] = dp;
                dot_sum += dp * pi[j];
            }
            const double* qi = la.q.data() + static_cast<std::size_t>(i) * W + off;
            double* dqi = dq + static_cast<std::size_t>(i) * W + off;
            for (int j = 0; j <= i; ++j) {
                const double ds = pi[j] * (dscores[static_cast<std::size_t>(j)] - dot_sum);
                const double* kj = la.k.data() + static_cast<std::size_t>(j) * W + off;
                double* dvj = dv + static_cast<std::size_t>(j) * W + off;
                double* dkj = dk + static_cast<std::size_t>(j) * W + off;
                for (int d = 0; d < hd; ++d) {
                    dvj[d] += pi[j] * dci[d];
                    dqi[d] += ds * scale * kj[d];
                    dkj[d] += ds * scale * qi[d];
                }
                drel_h[rel_bucket(i - j, cfg.max_rel)] += ds;
            }
        }
    }
}

// Runs the trunk; leaves final-LN rows in ws.f.
void run_trunk(const Parameters& params, std::span<const int> ids, Workspace& ws) {
    const ModelConfig& cfg = params.config();
    const int T = static_cast<int>(ids.size());
    const int W = cfg.width, F = cfg.ff_width;
    require(T >= 1, ErrorKind::invalid_argument, "empty sequence");
    require(T <= cfg.max_seq, ErrorKind::invalid_argument,
            "sequence length " + std::to_string(T) + " exceeds context " + std::to_string(cfg.max_seq));
    ws.size_for(cfg, T);

    const double* tok_emb = params.at("tok_emb");
    const double* pos_emb = params.at("pos_emb");
    double* x0 = cfg.layers > 0 ? ws.layers[0].x_in.data() : ws.x_final.data();
    for (int t = 0; t < T; ++t) {
        const int id = ids[static_cast<std::size_t>(t)];
        require(id >= 0 && id < cfg.vocab_size, ErrorKind::invalid_argument, "token id out of range");
        const double* e = tok_emb + static_cast<std::size_t>(id) * W;
        const double* pe = pos_emb + static_cast<std::size_t>(t) * W;
        double* xt = x0 + static_cast<std::size_t>(t) * W;
        for (int d = 0; d < W; ++d) xt[d] = e[d] + pe[d];
    }

    const double* rel_bias = params.at("rel_bias");
    for (int l = 0; l < cfg.layers; ++l) {
        LayerActs& la = ws.layers[static_cast<std::size_t>(l)];
        LayerNames names(l);
        layer_norm_forward(la.x_in.data(), params.at(names.ln1_g), params.at(names.ln1_b),
                           la.ln1_out.data(), la.ln1_mean.data(), la.ln1_rstd.data(), T, W);
        matmul_acc(la.ln1_out.data(), params.at(names.wq), la.q.data(), T, W, W);
        matmul_acc(la.ln1_out.data(), params.at(names.wk), la.k.data(), T, W, W);
        matmul_acc(la.ln1_out.data(), params.at(names.wv), la.v.data(), T, W, W);
        add_bias(la.q.data(), params.at(names.bq), T, W);
        add_bias(la.k.data(), params.at(names.bk), T, W);
        add_bias(la.v.data(), params.at(names.bv), T, W);

        attention_forward(cfg, la, rel_bias, T);

        // x_mid = x_in + ctx Wo + bo
        std::copy(la.x_in.begin(), la.x_in.end(), la.x_mid.begin());
        matmul_acc(la.ctx.data(), params.at(names.wo), la.x_mid.data(), T, W, W);
        add_bias(la.x_mid.data(), params.at(names.bo), T, W);

        layer_norm_forward(la.x_mid.data(), params.at(names.ln2_g), params.at(names.ln2_b),
                           la.ln2_out.data(), la.ln2_mean.data(), la.ln2_rstd.data(), T, W);
        matmul_acc(la.ln2_out.data(), params.at(names.w1), la.h1.data(), T, W, F);
        add_bias(la.h1.data(), params.at(names.b1), T, F);
        for (std::size_t i = 0; i < la.h1.size(); ++i) la.g[i] = gelu(la.h1[i]);

        double* x_next = (l + 1 < cfg.layers) ? ws.layers[static_cast<std::size_t>(l + 1)].x_in.data()
                                              : ws.x_final.data();
        std::copy(la.x_mid.begin(), la.x_mid.end(), x_next);
        matmul_acc(la.g.data(), params.at(names.w2), x_next, T, F, W);
        add_bias(x_next, params.at(names.b2), T, W);
    }

    layer_norm_forward(ws.x_final.data(), params.at("final_ln.gamma"), params.at("final_ln.beta"),
                       ws.f.data(), ws.f_mean.data(), ws.f_rstd.data(), T, W);
}

void logits_at(const Parameters& params, const Workspace& ws, int t, std::vector<double>& out) {
    const ModelConfig& cfg = params.config();
    const int W = cfg.width;
    const double* tok_emb = params.at("tok_emb");
    const double* ft = ws.f.data() + static_cast<std::size_t>(t) * W;
    out.assign(static_cast<std::size_t>(cfg.vocab_size), 0.0);
    for (int v = 0; v < cfg.vocab_size; ++v) {
        out[static_cast<std::size_t>(v)] = dot(ft, tok_emb + static_cast<std::size_t>(v) * W, W);
    }
}

void softmax_inplace(std::vector<double>& x) {
    const double maxv = *std::max_element(x.begin(), x.end());
    double denom = 0.0;
    for (double& v : x) {
        v = std::exp(v - maxv);
        denom += v;
    }
    const double inv = 1.0 / denom;
    for (double& v : x) v *= inv;
}

} // namespace

std::vector<std::vector<double>> forward(const Parameters& params, std::span<const int> ids,
                                         std::span<const int> positions, Workspace& ws) {
    run_trunk(params, ids, ws);
    std::vector<std::vector<double>> out;
    out.reserve(positions.size());
    std::vector<double> row;
    for (int t : positions) {
        require(t >= 0 && t < static_cast<int>(ids.size()), ErrorKind::invalid_argument,
                "logit position out of range");
        logits_at(params, ws, t, row);
        out.push_back(row);
    }
    return out;
}

double discrepancy_term(std::span<const double> probs, int target_entry, const SimilarityMatrix& S,
                        int image_base) {
    require(target_entry >= 0 && target_entry < S.entries, ErrorKind::invalid_argument,
            "image label outside the codebook range");
    const double out_rate = S.row_max(target_entry);
    double acc = 0.0;
    const int n = static_cast<int>(probs.size());
    for (int v = 0; v < n; ++v) {
        const bool image = v >= image_base && v < image_base + S.entries;
        const double rate = image ? S.at(target_entry, v - image_base) : out_rate;
        acc += rate * probs[static_cast<std::size_t>(v)];
    }
    return acc;
}

namespace {

struct PositionLoss {
    double ce = 0.0;
    double disc = 0.0; // raw, unscaled
    bool image = false;
};

PositionLoss position_loss(const std::vector<double>& probs, int target, const SimilarityMatrix& S,
                           const TokenVocab& vocab) {
    PositionLoss out;
    const double p = probs[static_cast<std::size_t>(target)];
    out.ce = -std::log(std::max(p, 1e-300));
    if (vocab.is_image(target)) {
        out.image = true;
        out.disc = discrepancy_term(probs, vocab.entry_of(target), S, vocab.image_base());
    }
    return out;
}

LossBreakdown finalize_loss(double ce_sum, double disc_sum, long text_n, long image_n, double lambda) {
    const long total_n = text_n + image_n;
    LossBreakdown lb;
    lb.text_positions = text_n;
    lb.image_positions = image_n;
    lb.ce = total_n > 0 ? ce_sum / static_cast<double>(total_n) : 0.0;
    lb.disc_raw_sum = disc_sum;
    lb.disc_raw_mean = image_n > 0 ? disc_sum / static_cast<double>(image_n) : 0.0;
    lb.disc = lambda == 0.0 ? 0.0 : lambda * lb.disc_raw_mean;
    lb.total = lb.ce + lb.disc;
    return lb;
}

} // namespace

LossBreakdown loss_from_logits(const std::vector<std::vector<double>>& logits,
                               std::span<const int> targets, std::span<const uint8_t> mask,
                               const SimilarityMatrix& S, const TokenVocab& vocab, double lambda_disc) {
    require(logits.size() == targets.size() && targets.size() == mask.size(),
            ErrorKind::invalid_argument, "loss inputs disagree in length");
    double ce_sum = 0.0, disc_sum = 0.0;
    long text_n = 0, image_n = 0;
    std::vector<double> probs;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        if (!mask[i]) continue;
        probs = logits[i];
        softmax_inplace(probs);
        PositionLoss pl = position_loss(probs, targets[i], S, vocab);
        ce_sum += pl.ce;
        if (pl.image) {
            ++image_n;
            disc_sum += pl.disc;
        } else {
            ++text_n;
        }
    }
    return finalize_loss(ce_sum, disc_sum, text_n, image_n, lambda_disc);
}

namespace {

// Shared core of batch_loss/backward; grads == nullptr computes loss only.
// Supervised positions are target positions t >= 1 with mask[t]; the logits
// row that predicts them lives at t-1.
LossBreakdown run_batch(const Parameters& params, const TrainBatch& batch, const SimilarityMatrix& S,
                        const TokenVocab& vocab, double lambda_disc, Gradients* grads, Workspace& ws) {
    const ModelConfig& cfg = params.config();
    const int W = cfg.width, F = cfg.ff_width;

    // The ce/disc normalizers are batch-global, so count first.
    long text_n = 0, image_n = 0;
    for (const TrainItem& item : batch) {
        require(item.input_ids.size() == item.golden_ids.size() &&
                    item.golden_ids.size() == item.loss_mask.size(),
                ErrorKind::invalid_argument, "train item arrays disagree in length");
        for (std::size_t t = 1; t < item.golden_ids.size(); ++t) {
            if (!item.loss_mask[t]) continue;
            if (vocab.is_image(item.golden_ids[t])) ++image_n;
            else ++text_n;
        }
    }
    const long total_n = text_n + image_n;
    double ce_sum = 0.0, disc_sum = 0.0;
    const double ce_norm = total_n > 0 ? 1.0 / static_cast<double>(total_n) : 0.0;
    const double disc_norm = image_n > 0 ? lambda_disc / static_cast<double>(image_n) : 0.0;

    for (const TrainItem& item : batch) {
        const int T = static_cast<int>(item.input_ids.size());
        run_trunk(params, item.input_ids, ws);

        std::fill(ws.df.begin(), ws.df.end(), 0.0);
        const double* tok_emb = params.at("tok_emb");
        double* dtok = grads ? grads->data() + params.tensor("tok_emb").offset : nullptr;

        for (int t = 1; t < T; ++t) {
            if (!item.loss_mask[static_cast<std::size_t>(t)]) continue;
            const int target = item.golden_ids[static_cast<std::size_t>(t)];
            const int row = t - 1;
            logits_at(params, ws, row, ws.logits);
            ws.probs = ws.logits;
            softmax_inplace(ws.probs);
            if (!std::isfinite(ws.probs[static_cast<std::size_t>(target)])) {
                fail(ErrorKind::numeric, "non-finite probability at position " + std::to_string(row));
            }
            PositionLoss pl = position_loss(ws.probs, target, S, vocab);
            ce_sum += pl.ce;
            if (pl.image) disc_sum += pl.disc;

            if (!grads) continue;

            // dlogit = ce_norm * (P - onehot)
            //        + disc_norm * P .* (rate - sum(rate .* P)) at image targets
            std::vector<double>& dlogit = ws.logits; // reuse the buffer
            if (pl.image && disc_norm != 0.0) {
                const int entry = vocab.entry_of(target);
                const double out_rate = S.row_max(entry);
                const double expected = pl.disc;
                for (int v = 0; v < cfg.vocab_size; ++v) {
                    const bool image = vocab.is_image(v);
                    const double rate = image ? S.at(entry, v - vocab.image_base()) : out_rate;
                    const double p = ws.probs[static_cast<std::size_t>(v)];
                    dlogit[static_cast<std::size_t>(v)] = ce_norm * p + disc_norm * p * (rate - expected);
                }
            } else {
                for (int v = 0; v < cfg.vocab_size; ++v) {
                    dlogit[static_cast<std::size_t>(v)] = ce_norm * ws.probs[static_cast<std::size_t>(v)];
                }
            }
            dlogit[static_cast<std::size_t>(target)] -= ce_norm;

            // logits = f_row . tok_emb^T
            double* dfr = ws.df.data() + static_cast<std::size_t>(row) * W;
            const double* fr = ws.f.data() + static_cast<std::size_t>(row) * W;
            for (int v = 0; v < cfg.vocab_size; ++v) {
                const double dv = dlogit[static_cast<std::size_t>(v)];
                const double* e = tok_emb + static_cast<std::size_t>(v) * W;
                double* de = dtok + static_cast<std::size_t>(v) * W;
                for (int d = 0; d < W; ++d) {
                    dfr[d] += dv * e[d];
                    de[d] += dv * fr[d];
                }
            }
        }

        if (!grads) continue;
        Gradients& g = *grads;
        auto gp = [&](const std::string& name) { return g.data() + params.tensor(name).offset; };

        std::fill(ws.dx.begin(), ws.dx.end(), 0.0);
        layer_norm_backward(ws.x_final.data(), params.at("final_ln.gamma"), ws.df.data(),
                            ws.f_mean.data(), ws.f_rstd.data(), ws.dx.data(), gp("final_ln.gamma"),
                            gp("final_ln.beta"), T, W);

        for (int l = cfg.layers - 1; l >= 0; --l) {
            LayerActs& la = ws.layers[static_cast<std::size_t>(l)];
            LayerNames names(l);
            const std::size_t tw = static_cast<std::size_t>(T) * W;
            const std::size_t tf = static_cast<std::size_t>(T) * F;

            // MLP: x_next = x_mid + gelu(ln2(x_mid) W1 + b1) W2 + b2
            std::vector<double>& dg = ws.scratch1;
            std::fill(dg.begin(), dg.begin() + static_cast<std::ptrdiff_t>(tf), 0.0);
            matmul_acc_bt(ws.dx.data(), params.at(names.w2), dg.data(), T, F, W);
            matmul_acc_at(la.g.data(), ws.dx.data(), gp(names.w2), T, F, W);
            {
                double* db2 = gp(names.b2);
                for (int t = 0; t < T; ++t) {
                    const double* dxt = ws.dx.data() + static_cast<std::size_t>(t) * W;
                    for (int d = 0; d < W; ++d) db2[d] += dxt[d];
                }
            }
            for (std::size_t i = 0; i < tf; ++i) {
                dg[i] *= gelu_grad(la.h1[i]); // dg now holds d(h1)
            }
            {
                double* db1 = gp(names.b1);
                for (int t = 0; t < T; ++t) {
                    const double* dh = dg.data() + static_cast<std::size_t>(t) * F;
                    for (int d = 0; d < F; ++d) db1[d] += dh[d];
                }
            }
            std::vector<double>& dln2 = ws.scratch2;
            std::fill(dln2.begin(), dln2.begin() + static_cast<std::ptrdiff_t>(tw), 0.0);
            matmul_acc_bt(dg.data(), params.at(names.w1), dln2.data(), T, W, F);
            matmul_acc_at(la.ln2_out.data(), dg.data(), gp(names.w1), T, W, F);
            layer_norm_backward(la.x_mid.data(), params.at(names.ln2_g), dln2.data(), la.ln2_mean.data(),
                                la.ln2_rstd.data(), ws.dx.data(), gp(names.ln2_g), gp(names.ln2_b), T, W);

            // Attention: x_mid = x_in + ctx Wo + bo
            std::vector<double>& dctx = ws.scratch1;
            std::fill(dctx.begin(), dctx.begin() + static_cast<std::ptrdiff_t>(tw), 0.0);
            matmul_acc_bt(ws.dx.data(), params.at(names.wo), dctx.data(), T, W, W);
            matmul_acc_at(la.ctx.data(), ws.dx.data(), gp(names.wo), T, W, W);
            {
                double* dbo = gp(names.bo);
                for (int t = 0; t < T; ++t) {
                    const double* dxt = ws.dx.data() + static_cast<std::size_t>(t) * W;
                    for (int d = 0; d < W; ++d) dbo[d] += dxt[d];
                }
            }

            std::vector<double> dq(tw, 0.0), dk(tw, 0.0), dv(tw, 0.0);
            attention_backward(cfg, la, dctx.data(), dq.data(), dk.data(), dv.data(), gp("rel_bias"), T,
                               ws.dscores);

            std::vector<double>& dln1 = ws.scratch2;
            std::fill(dln1.begin(), dln1.begin() + static_cast<std::ptrdiff_t>(tw), 0.0);
            matmul_acc_bt(dq.data(), params.at(names.wq), dln1.data(), T, W, W);
            matmul_acc_at(la.ln1_out.data(), dq.data(), gp(names.wq), T, W, W);
            matmul_acc_bt(dk.data(), params.at(names.wk), dln1.data(), T, W, W);
            matmul_acc_at(la.ln1_out.data(), dk.data(), gp(names.wk), T, W, W);
            matmul_acc_bt(dv.data(), params.at(names.wv), dln1.data(), T, W, W);
            matmul_acc_at(la.ln1_out.data(), dv.data(), gp(names.wv), T, W, W);
            {
                double* dbq = gp(names.bq);
                double* dbk = gp(names.bk);
                double* dbv = gp(names.bv);
                for (int t = 0; t < T; ++t) {
                    const double* aq = dq.data() + static_cast<std::size_t>(t) * W;
                    const double* ak = dk.data() + static_cast<std::size_t>(t) * W;
                    const double* av = dv.data() + static_cast<std::size_t>(t) * W;
                    for (int d = 0; d < W; ++d) {
                        dbq[d] += aq[d];
                        dbk[d] += ak[d];
                        dbv[d] += av[d];
                    }
                }
            }
            layer_norm_backward(la.x_in.data(), params.at(names.ln1_g), dln1.data(), la.ln1_mean.data(),
                                la.ln1_rstd.data(), ws.dx.data(), gp(names.ln1_g), gp(names.ln1_b), T, W);
        }

        double* dpos = g.data() + params.tensor("pos_emb").offset;
        for (int t = 0; t < T; ++t) {
            const int id = item.input_ids[static_cast<std::size_t>(t)];
            const double* dxt = ws.dx.data() + static_cast<std::size_t>(t) * W;
            double* de = dtok + static_cast<std::size_t>(id) * W;
            double* dp = dpos + static_cast<std::size_t>(t) * W;
            for (int d = 0; d < W; ++d) {
                de[d] += dxt[d];
                dp[d] += dxt[d];
            }
        }
    }

    LossBreakdown lb = finalize_loss(ce_sum, disc_sum, text_n, image_n, lambda_disc);
    if (!std::isfinite(lb.total)) {
        fail(ErrorKind::numeric, "non-finite loss");
    }
    return lb;
}

} // namespace

LossBreakdown batch_loss(const Parameters& params, const TrainBatch& batch, const SimilarityMatrix& S,
                         const TokenVocab& vocab, double lambda_disc, Workspace& ws) {
    return run_batch(params, batch, S, vocab, lambda_disc, nullptr, ws);
}

LossBreakdown backward(const Parameters& params, const TrainBatch& batch, const SimilarityMatrix& S,
                       const TokenVocab& vocab, double lambda_disc, Gradients& grads, Workspace& ws) {
    grads.assign(params.size(), 0.0);
    return run_batch(params, batch, S, vocab, lambda_disc, &grads, ws);
}

AdamState make_adam(const Parameters& params, double lr) {
    AdamState s;
    s.lr = lr;
    s.m.assign(params.size(), 0.0);
    s.v.assign(params.size(), 0.0);
    return s;
}

void optimize_step(Parameters& params, const Gradients& grads, AdamState& state) {
    require(grads.size() == params.size() && state.m.size() == params.size(),
            ErrorKind::invalid_argument, "optimizer size mismatch");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < grads.size(); ++i) {
        const double gv = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * gv;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * gv * gv;
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        const double upd = state.lr * mhat / (std::sqrt(vhat) + state.eps);
        params.set(i, static_cast<float>(static_cast<double>(params.get(i)) - upd));
    }
}

// ---------------------------------------------------------------------------
// Incremental decoding
// ---------------------------------------------------------------------------

struct DecodeSession::Impl {
    const Parameters& params;
    int pos = 0;
    std::vector<std::vector<double>> kcache, vcache; // per layer, [t][W] appended
    std::vector<double> logits;
    std::vector<double> x, a, q, k, v, ctx, h1, g, row;

    explicit Impl(const Parameters& p) : params(p) {
        const ModelConfig& cfg = p.config();
        kcache.assign(static_cast<std::size_t>(cfg.layers), {});
        vcache.assign(static_cast<std::size_t>(cfg.layers), {});
        logits.assign(static_cast<std::size_t>(cfg.vocab_size), 0.0);
        x.assign(static_cast<std::size_t>(cfg.width), 0.0);
        a.assign(static_cast<std::size_t>(cfg.width), 0.0);
        q.assign(static_cast<std::size_t>(cfg.width), 0.0);
        k.assign(static_cast<std::size_t>(cfg.width), 0.0);
        v.assign(static_cast<std::size_t>(cfg.width), 0.0);
        ctx.assign(static_cast<std::size_t>(cfg.width), 0.0);
        h1.assign(static_cast<std::size_t>(cfg.ff_width), 0.0);
        g.assign(static_cast<std::size_t>(cfg.ff_width), 0.0);
    }

    void ln_row(const double* xin, const double* gamma, const double* beta, double* out, int W) const {
        double mean = 0.0;
        for (int d = 0; d < W; ++d) mean += xin[d];
        mean /= W;
        double var = 0.0;
        for (int d = 0; d < W; ++d) {
            const double c = xin[d] - mean;
            var += c * c;
        }
        var /= W;
        const double rstd = 1.0 / std::sqrt(var + kLnEps);
        for (int d = 0; d < W; ++d) out[d] = (xin[d] - mean) * rstd * gamma[d] + beta[d];
    }

    void step_token(int id) {
        const ModelConfig& cfg = params.config();
        const int W = cfg.width, F = cfg.ff_width, H = cfg.heads, hd = W / H;
        require(pos < cfg.max_seq, ErrorKind::invalid_argument, "decode past the context length");
        require(id >= 0 && id < cfg.vocab_size, ErrorKind::invalid_argument, "token id out of range");

        const double* tok_emb = params.at("tok_emb");
        const double* pos_emb = params.at("pos_emb");
        for (int d = 0; d < W; ++d) {
            x[static_cast<std::size_t>(d)] = tok_emb[static_cast<std::size_t>(id) * W + d] +
                                             pos_emb[static_cast<std::size_t>(pos) * W + d];
        }

        const double* rel_bias = params.at("rel_bias");
        const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
        for (int l = 0; l < cfg.layers; ++l) {
            LayerNames names(l);
            ln_row(x.data(), params.at(names.ln1_g), params.at(names.ln1_b), a.data(), W);
            std::fill(q.begin(), q.end(), 0.0);
            std::fill(k.begin(), k.end(), 0.0);
            std::fill(v.begin(), v.end(), 0.0);
            matmul_acc(a.data(), params.at(names.wq), q.data(), 1, W, W);
            matmul_acc(a.data(), params.at(names.wk), k.data(), 1, W, W);
            matmul_acc(a.data(), params.at(names.wv), v.data(), 1, W, W);
            const double* bq = params.at(names.bq);
            const double* bk = params.at(names.bk);
            const double* bv = params.at(names.bv);
            for (int d = 0; d < W; ++d) {
                q[static_cast<std::size_t>(d)] += bq[d];
                k[static_cast<std::size_t>(d)] += bk[d];
                v[static_cast<std::size_t>(d)] += bv[d];
            }
            auto& kc = kcache[static_cast<std::size_t>(l)];
            auto& vc = vcache[static_cast<std::size_t>(l)];
            kc.insert(kc.end(), k.begin(), k.end());
            vc.insert(vc.end(), v.begin(), v.end());

            const int T = pos + 1;
            if (static_cast<int>(row.size()) < T) row.resize(static_cast<std::size_t>(T));
            for (int h = 0; h < H; ++h) {
                const int off = h * hd;
                const double* bias = rel_bias + static_cast<std::size_t>(h) * cfg.max_rel;
                double maxv = -1e300;
                for (int j = 0; j < T; ++j) {
                    const double* kj = kc.data() + static_cast<std::size_t>(j) * W + off;
                    const double s =
                        dot(q.data() + off, kj, hd) * scale + bias[rel_bucket(pos - j, cfg.max_rel)];
                    row[static_cast<std::size_t>(j)] = s;
                    maxv = std::max(maxv, s);
                }
                double denom = 0.0;
                for (int j = 0; j < T; ++j) {
                    row[static_cast<std::size_t>(j)] = std::exp(row[static_cast<std::size_t>(j)] - maxv);
                    denom += row[static_cast<std::size_t>(j)];
                }
                const double inv = 1.0 / denom;
                for (int d = 0; d < hd; ++d) ctx[static_cast<std::size_t>(off + d)] = 0.0;
                for (int j = 0; j < T; ++j) {
                    const double p = row[static_cast<std::size_t>(j)] * inv;
                    const double* vj = vc.data() + static_cast<std::size_t>(j) * W + off;
                    for (int d = 0; d < hd; ++d) ctx[static_cast<std::size_t>(off + d)] += p * vj[d];
                }
            }

            // Same op order as run_trunk: residual copy, ctx projection, bias.
            std::copy(x.begin(), x.end(), a.begin());
            matmul_acc(ctx.data(), params.at(names.wo), a.data(), 1, W, W);
            const double* bo = params.at(names.bo);
            for (int d = 0; d < W; ++d) a[static_cast<std::size_t>(d)] += bo[d];
            std::copy(a.begin(), a.end(), x.begin()); // x is now x_mid

            ln_row(x.data(), params.at(names.ln2_g), params.at(names.ln2_b), a.data(), W);
            std::fill(h1.begin(), h1.end(), 0.0);
            matmul_acc(a.data(), params.at(names.w1), h1.data(), 1, W, F);
            const double* b1 = params.at(names.b1);
            for (int d = 0; d < F; ++d) h1[static_cast<std::size_t>(d)] += b1[d];
            for (int d = 0; d < F; ++d) {
                g[static_cast<std::size_t>(d)] = gelu(h1[static_cast<std::size_t>(d)]);
            }
            matmul_acc(g.data(), params.at(names.w2), x.data(), 1, F, W);
            const double* b2 = params.at(names.b2);
            for (int d = 0; d < W; ++d) x[static_cast<std::size_t>(d)] += b2[d];
        }

        ln_row(x.data(), params.at("final_ln.gamma"), params.at("final_ln.beta"), a.data(), W);
        for (int vtok = 0; vtok < cfg.vocab_size; ++vtok) {
            logits[static_cast<std::size_t>(vtok)] =
                dot(a.data(), tok_emb + static_cast<std::size_t>(vtok) * W, W);
        }
        pos += 1;
    }
};

DecodeSession::DecodeSession(const Parameters& params) : impl_(new Impl(params)) {}
DecodeSession::~DecodeSession() { delete impl_; }

void DecodeSession::reset() {
    const Parameters& p = impl_->params;
    delete impl_;
    impl_ = new Impl(p);
}

void DecodeSession::feed(std::span<const int> ids) {
    for (int id : ids) impl_->step_token(id);
}

void DecodeSession::feed_one(int id) { impl_->step_token(id); }

int DecodeSession::position() const { return impl_->pos; }

const std::vector<double>& DecodeSession::last_logits() const { return impl_->logits; }

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kCkptMagic[8] = {'M', 'G', 'C', 'K', 'P', 'T', '0', '1'};

template <typename T>
void wr(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T rd(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    require(is.good(), ErrorKind::format, "truncated checkpoint");
    return v;
}

void wr_string(std::ostream& os, const std::string& s) {
    wr<uint32_t>(os, static_cast<uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string rd_string(std::istream& is) {
    const uint32_t n = rd<uint32_t>(is);
    require(n < (1u << 20), ErrorKind::format, "implausible string length in checkpoint");
    std::string s(n, '\0');
    is.read(s.data(), n);
    require(is.good(), ErrorKind::format, "truncated checkpoint");
    return s;
}

} // namespace

void save_checkpoint(const Parameters& params, const CheckpointMeta& meta, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    require(f.good(), ErrorKind::invalid_argument, "cannot open " + path);
    const ModelConfig& cfg = params.config();
    f.write(kCkptMagic, sizeof(kCkptMagic));
    wr<uint32_t>(f, 1);
    wr<uint64_t>(f, config_digest(cfg));
    wr<int32_t>(f, cfg.layers);
    wr<int32_t>(f, cfg.heads);
    wr<int32_t>(f, cfg.width);
    wr<int32_t>(f, cfg.ff_width);
    wr<int32_t>(f, cfg.max_seq);
    wr<int32_t>(f, cfg.max_rel);
    wr<int32_t>(f, cfg.vocab_size);
    wr<double>(f, cfg.init_std);
    wr<uint64_t>(f, cfg.seed);
    wr<uint64_t>(f, meta.vocab_digest);
    wr<uint64_t>(f, meta.codebook_digest);
    wr_string(f, meta.variant);
    wr<uint32_t>(f, static_cast<uint32_t>(params.tensors().size()));
    for (const TensorInfo& t : params.tensors()) {
        wr_string(f, t.name);
        wr<uint32_t>(f, static_cast<uint32_t>(t.shape.size()));
        for (int d : t.shape) wr<int32_t>(f, d);
        wr<uint64_t>(f, t.offset);
    }
    f.write(reinterpret_cast<const char*>(params.raw().data()),
            static_cast<std::streamsize>(params.raw().size() * sizeof(float)));
    require(f.good(), ErrorKind::invalid_argument, "failed writing " + path);
}

std::pair<Parameters, CheckpointMeta> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), ErrorKind::invalid_argument, "cannot open " + path);
    char magic[8];
    f.read(magic, sizeof(magic));
    require(f.good() && std::memcmp(magic, kCkptMagic, sizeof(magic)) == 0, ErrorKind::format,
            "bad checkpoint magic");
    require(rd<uint32_t>(f) == 1, ErrorKind::format, "unsupported checkpoint version");
    const uint64_t digest = rd<uint64_t>(f);
    ModelConfig cfg;
    cfg.layers = rd<int32_t>(f);
    cfg.heads = rd<int32_t>(f);
    cfg.width = rd<int32_t>(f);
    cfg.ff_width = rd<int32_t>(f);
    cfg.max_seq = rd<int32_t>(f);
    cfg.max_rel = rd<int32_t>(f);
    cfg.vocab_size = rd<int32_t>(f);
    cfg.init_std = rd<double>(f);
    cfg.seed = rd<uint64_t>(f);
    require(config_digest(cfg) == digest, ErrorKind::format, "checkpoint config digest mismatch");

    CheckpointMeta meta;
    meta.vocab_digest = rd<uint64_t>(f);
    meta.codebook_digest = rd<uint64_t>(f);
    meta.variant = rd_string(f);

    Parameters params(cfg);
    const uint32_t tcount = rd<uint32_t>(f);
    require(tcount == params.tensors().size(), ErrorKind::format, "tensor directory size mismatch");
    for (const TensorInfo& expect : params.tensors()) {
        const std::string name = rd_string(f);
        require(name == expect.name, ErrorKind::format, "tensor order mismatch: " + name);
        const uint32_t nd = rd<uint32_t>(f);
        require(nd == expect.shape.size(), ErrorKind::format, "tensor rank mismatch: " + name);
        for (int d : expect.shape) {
            require(rd<int32_t>(f) == d, ErrorKind::format, "tensor shape mismatch: " + name);
        }
        require(rd<uint64_t>(f) == expect.offset, ErrorKind::format, "tensor offset mismatch: " + name);
    }
    std::vector<float> values(params.size());
    f.read(reinterpret_cast<char*>(values.data()),
           static_cast<std::streamsize>(values.size() * sizeof(float)));
    require(f.good(), ErrorKind::format, "truncated checkpoint payload");
    params.assign_raw(std::move(values));
    return {std::move(params), std::move(meta)};
}

std::pair<Parameters, CheckpointMeta> load_checkpoint(const std::string& path,
                                                      const ModelConfig& expected) {
    auto loaded = load_checkpoint(path);
    require(config_digest(loaded.first.config()) == config_digest(expected), ErrorKind::format,
            "checkpoint was produced by a different model config");
    return loaded;
}

} // namespace mindgrid
