#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "lexsum/errors.hpp"
#include "lexsum/lora.hpp"
#include "lexsum/matrix.hpp"
#include "lexsum/rng.hpp"

namespace lexsum {

struct TinyModelConfig {
    std::size_t vocab_size = 0;
    std::size_t d_model = 32;
    std::size_t n_heads = 2;
    std::size_t n_layers = 2;
    std::size_t d_ff = 128;
    std::size_t max_input_tokens = 1024;
    std::size_t max_output_tokens = 512;

    void validate() const {
        if (vocab_size < 4) throw ConfigError("vocab_size must cover reserved tokens");
        if (d_model < 1 || n_heads < 1 || n_layers < 1 || d_ff < 1) {
            throw ConfigError("model dimensions must be positive");
        }
        if (d_model % n_heads != 0) {
            throw ConfigError("d_model must be divisible by n_heads");
        }
        if (max_input_tokens < 1 || max_output_tokens < 1) {
            throw ConfigError("token budgets must be positive");
        }
    }
};

struct Vocab {
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kUnk = 3;

    std::vector<std::string> tokens;
    std::map<std::string, int> index;

    std::size_t size() const { return tokens.size(); }

    int id_of(const std::string& token) const {
        const auto it = index.find(token);
        return it == index.end() ? kUnk : it->second;
    }

    const std::string& token_of(int id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= tokens.size()) {
            throw DataError("token id out of range: " + std::to_string(id));
        }
        return tokens[static_cast<std::size_t>(id)];
    }

    std::vector<int> encode(const std::vector<std::string>& words) const {
        std::vector<int> ids;
        ids.reserve(words.size());
        for (const auto& w : words) ids.push_back(id_of(w));
        return ids;
    }

    std::vector<std::string> decode(const std::vector<int>& ids) const {
        std::vector<std::string> words;
        words.reserve(ids.size());
        for (const int id : ids) words.push_back(token_of(id));
        return words;
    }
};

// Reserved symbols first, then corpus tokens by descending frequency with
// lexicographic ties.
inline Vocab build_vocab(const std::vector<std::vector<std::string>>& sequences,
                         std::size_t min_freq = 2) {
    if (min_freq < 1) throw ConfigError("min_freq must be >= 1");
    std::map<std::string, std::size_t> freq;
    for (const auto& seq : sequences) {
        for (const auto& tok : seq) ++freq[tok];
    }
    std::vector<std::pair<std::string, std::size_t>> kept;
    for (const auto& [tok, n] : freq) {
        if (n >= min_freq) kept.emplace_back(tok, n);
    }
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    Vocab vocab;
    vocab.tokens = {"<pad>", "<bos>", "<eos>", "<unk>"};
    for (const auto& [tok, n] : kept) vocab.tokens.push_back(tok);
    for (std::size_t i = 0; i < vocab.tokens.size(); ++i) {
        vocab.index[vocab.tokens[i]] = static_cast<int>(i);
    }
    return vocab;
}

struct LoraLinear {
    std::string name;
    Matrix w{0, 0};  // out x in, frozen
    bool adapted = false;
    Matrix a{0, 0};  // rank x in
    Matrix b{0, 0};  // out x rank
    std::size_t rank = 0;
    double alpha = 0.0;
    Matrix ga{0, 0};
    Matrix gb{0, 0};

    double scale() const { return adapted ? alpha / static_cast<double>(rank) : 0.0; }
};

struct NormParams {
    std::vector<double> gamma;
    std::vector<double> beta;
};

struct AttentionBlock {
    LoraLinear q, k, v, o;
};

struct EncoderLayer {
    NormParams ln1, ln2;
    AttentionBlock self;
    Matrix w1{0, 0};  // d_ff x d_model
    Matrix w2{0, 0};  // d_model x d_ff
};

struct DecoderLayer {
    NormParams ln1, ln2, ln3;
    AttentionBlock self, cross;
    Matrix w1{0, 0};
    Matrix w2{0, 0};
};

struct TinyModel {
    TinyModelConfig cfg;
    Vocab vocab;
    Matrix embedding{0, 0};  // vocab x d_model, shared by both stacks
    std::vector<EncoderLayer> encoder;
    std::vector<DecoderLayer> decoder;
    NormParams enc_norm, dec_norm;
    Matrix head{0, 0};  // vocab x d_model

    std::vector<std::string> lora_targets;
    std::size_t lora_rank = 0;
    double lora_alpha = 0.0;

    Matrix g_embedding{0, 0};
    Matrix g_head{0, 0};
};

namespace detail {

inline void fill_normal(Matrix& m, Rng& rng, double stddev) {
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, stddev);
}

inline LoraLinear make_linear(std::size_t out, std::size_t in, Rng& rng) {
    LoraLinear lin;
    lin.w = Matrix(out, in);
    fill_normal(lin.w, rng, 1.0 / std::sqrt(static_cast<double>(in)));
    return lin;
}

inline NormParams make_norm(std::size_t d) {
    NormParams n;
    n.gamma.assign(d, 1.0);
    n.beta.assign(d, 0.0);
    return n;
}

inline AttentionBlock make_attention(std::size_t d, Rng& rng) {
    AttentionBlock blk;
    blk.q = make_linear(d, d, rng);
    blk.k = make_linear(d, d, rng);
    blk.v = make_linear(d, d, rng);
    blk.o = make_linear(d, d, rng);
    return blk;
}

}  // namespace detail

inline TinyModel init_model(TinyModelConfig cfg, Vocab vocab, std::uint64_t seed) {
    cfg.vocab_size = vocab.size();
    cfg.validate();
    TinyModel m;
    m.cfg = cfg;
    m.vocab = std::move(vocab);
    Rng rng(derive_seed(seed, "toy_model"));
    const std::size_t d = cfg.d_model;
    m.embedding = Matrix(cfg.vocab_size, d);
    detail::fill_normal(m.embedding, rng, 1.0 / std::sqrt(static_cast<double>(d)));
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        EncoderLayer layer;
        layer.ln1 = detail::make_norm(d);
        layer.ln2 = detail::make_norm(d);
        layer.self = detail::make_attention(d, rng);
        layer.w1 = Matrix(cfg.d_ff, d);
        layer.w2 = Matrix(d, cfg.d_ff);
        detail::fill_normal(layer.w1, rng, 1.0 / std::sqrt(static_cast<double>(d)));
        detail::fill_normal(layer.w2, rng, 1.0 / std::sqrt(static_cast<double>(cfg.d_ff)));
        m.encoder.push_back(std::move(layer));
    }
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        DecoderLayer layer;
        layer.ln1 = detail::make_norm(d);
        layer.ln2 = detail::make_norm(d);
        layer.ln3 = detail::make_norm(d);
        layer.self = detail::make_attention(d, rng);
        layer.cross = detail::make_attention(d, rng);
        layer.w1 = Matrix(cfg.d_ff, d);
        layer.w2 = Matrix(d, cfg.d_ff);
        detail::fill_normal(layer.w1, rng, 1.0 / std::sqrt(static_cast<double>(d)));
        detail::fill_normal(layer.w2, rng, 1.0 / std::sqrt(static_cast<double>(cfg.d_ff)));
        m.decoder.push_back(std::move(layer));
    }
    m.enc_norm = detail::make_norm(d);
    m.dec_norm = detail::make_norm(d);
    m.head = Matrix(cfg.vocab_size, d);
    detail::fill_normal(m.head, rng, 1.0 / std::sqrt(static_cast<double>(d)));
    m.g_embedding = Matrix(cfg.vocab_size, d);
    m.g_head = Matrix(cfg.vocab_size, d);

    // layer names fixed up front so adapters and saved files agree
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const std::string enc = "enc." + std::to_string(l) + ".self.";
        m.encoder[l].self.q.name = enc + "q_proj";
        m.encoder[l].self.k.name = enc + "k_proj";
        m.encoder[l].self.v.name = enc + "v_proj";
        m.encoder[l].self.o.name = enc + "o_proj";
        const std::string dse = "dec." + std::to_string(l) + ".self.";
        m.decoder[l].self.q.name = dse + "q_proj";
        m.decoder[l].self.k.name = dse + "k_proj";
        m.decoder[l].self.v.name = dse + "v_proj";
        m.decoder[l].self.o.name = dse + "o_proj";
        const std::string dcr = "dec." + std::to_string(l) + ".cross.";
        m.decoder[l].cross.q.name = dcr + "q_proj";
        m.decoder[l].cross.k.name = dcr + "k_proj";
        m.decoder[l].cross.v.name = dcr + "v_proj";
        m.decoder[l].cross.o.name = dcr + "o_proj";
    }
    return m;
}

namespace detail {

inline void for_each_attention(TinyModel& m,
                               const std::function<void(AttentionBlock&)>& fn) {
    for (auto& layer : m.encoder) fn(layer.self);
    for (auto& layer : m.decoder) {
        fn(layer.self);
        fn(layer.cross);
    }
}

inline LoraLinear* target_of(AttentionBlock& blk, const std::string& name) {
    if (name == "q_proj") return &blk.q;
    if (name == "k_proj") return &blk.k;
    if (name == "v_proj") return &blk.v;
    if (name == "o_proj") return &blk.o;
    return nullptr;
}

}  // namespace detail

inline void attach_lora(TinyModel& m,
                        const std::set<std::string>& targets = {"q_proj", "k_proj",
                                                                "v_proj"},
                        std::size_t rank = 16, double alpha = 32.0,
                        std::uint64_t seed = 0) {
    for (const auto& t : targets) {
        if (t != "q_proj" && t != "k_proj" && t != "v_proj" && t != "o_proj") {
            throw ConfigError("unknown lora target: " + t +
                              " (valid: q_proj, k_proj, v_proj, o_proj)");
        }
    }
    if (targets.empty()) return;
    detail::for_each_attention(m, [&](AttentionBlock& blk) {
        for (const auto& t : targets) {
            LoraLinear* lin = detail::target_of(blk, t);
            if (lin->adapted) {
                throw ConfigError("lora already attached to " + lin->name);
            }
            LoraAdapter adapter =
                init_adapter(lin->w, rank, alpha, derive_seed(seed, lin->name));
            lin->adapted = true;
            lin->a = std::move(adapter.A);
            lin->b = std::move(adapter.B);
            lin->rank = rank;
            lin->alpha = alpha;
            lin->ga = Matrix(lin->a.rows(), lin->a.cols());
            lin->gb = Matrix(lin->b.rows(), lin->b.cols());
        }
    });
    m.lora_targets.assign(targets.begin(), targets.end());
    m.lora_rank = rank;
    m.lora_alpha = alpha;
}

inline std::size_t lora_param_count(const TinyModel& m) {
    std::size_t count = 0;
    const auto add = [&](const AttentionBlock& blk) {
        for (const auto* lin : {&blk.q, &blk.k, &blk.v, &blk.o}) {
            if (lin->adapted) {
                count += lin->rank * (lin->w.rows() + lin->w.cols());
            }
        }
    };
    for (const auto& layer : m.encoder) add(layer.self);
    for (const auto& layer : m.decoder) {
        add(layer.self);
        add(layer.cross);
    }
    return count;
}

inline std::size_t trainable_param_count(const TinyModel& m,
                                         bool include_embeddings) {
    std::size_t count = lora_param_count(m);
    if (include_embeddings) count += m.embedding.size() + m.head.size();
    return count;
}

inline void zero_grads(TinyModel& m) {
    detail::for_each_attention(m, [](AttentionBlock& blk) {
        for (auto* lin : {&blk.q, &blk.k, &blk.v, &blk.o}) {
            if (lin->adapted) {
                lin->ga.fill(0.0);
                lin->gb.fill(0.0);
            }
        }
    });
    m.g_embedding.fill(0.0);
    m.g_head.fill(0.0);
}

// (value, gradient) pairs in a fixed traversal order
inline std::vector<std::pair<Matrix*, Matrix*>> collect_trainables(
    TinyModel& m, bool include_embeddings) {
    std::vector<std::pair<Matrix*, Matrix*>> slots;
    detail::for_each_attention(m, [&](AttentionBlock& blk) {
        for (auto* lin : {&blk.q, &blk.k, &blk.v, &blk.o}) {
            if (lin->adapted) {
                slots.emplace_back(&lin->a, &lin->ga);
                slots.emplace_back(&lin->b, &lin->gb);
            }
        }
    });
    if (include_embeddings) {
        slots.emplace_back(&m.embedding, &m.g_embedding);
        slots.emplace_back(&m.head, &m.g_head);
    }
    return slots;
}

namespace detail {

constexpr double kNormEps = 1e-5;

inline double positional_value(std::size_t pos, std::size_t dim, std::size_t d) {
    const double pair_index = static_cast<double>(dim / 2);
    const double rate =
        std::pow(10000.0, 2.0 * pair_index / static_cast<double>(d));
    const double angle = static_cast<double>(pos) / rate;
    return dim % 2 == 0 ? std::sin(angle) : std::cos(angle);
}

inline Matrix embed_sequence(const TinyModel& m, const std::vector<int>& ids) {
    const std::size_t d = m.cfg.d_model;
    Matrix x(ids.size(), d);
    for (std::size_t t = 0; t < ids.size(); ++t) {
        const auto row = static_cast<std::size_t>(ids[t]);
        for (std::size_t j = 0; j < d; ++j) {
            x(t, j) = m.embedding(row, j) + positional_value(t, j, d);
        }
    }
    return x;
}

inline void embed_backward(TinyModel& m, const std::vector<int>& ids,
                           const Matrix& dx) {
    for (std::size_t t = 0; t < ids.size(); ++t) {
        const auto row = static_cast<std::size_t>(ids[t]);
        for (std::size_t j = 0; j < dx.cols(); ++j) {
            m.g_embedding(row, j) += dx(t, j);
        }
    }
}

struct NormCache {
    Matrix xhat{0, 0};
    std::vector<double> inv_std;
};

inline Matrix norm_forward(const NormParams& p, const Matrix& x, NormCache& cache) {
    const std::size_t d = x.cols();
    Matrix y(x.rows(), d);
    cache.xhat = Matrix(x.rows(), d);
    cache.inv_std.assign(x.rows(), 0.0);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += x(i, j);
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = x(i, j) - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + kNormEps);
        cache.inv_std[i] = inv;
        for (std::size_t j = 0; j < d; ++j) {
            const double xh = (x(i, j) - mean) * inv;
            cache.xhat(i, j) = xh;
            y(i, j) = xh * p.gamma[j] + p.beta[j];
        }
    }
    return y;
}

inline void norm_backward(const NormParams& p, const NormCache& cache,
                          const Matrix& dy, Matrix& dx_accum) {
    const std::size_t d = dy.cols();
    for (std::size_t i = 0; i < dy.rows(); ++i) {
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double g = dy(i, j) * p.gamma[j];
            m1 += g;
            m2 += g * cache.xhat(i, j);
        }
        m1 /= static_cast<double>(d);
        m2 /= static_cast<double>(d);
        const double inv = cache.inv_std[i];
        for (std::size_t j = 0; j < d; ++j) {
            const double g = dy(i, j) * p.gamma[j];
            dx_accum(i, j) += inv * (g - m1 - cache.xhat(i, j) * m2);
        }
    }
}

struct LinearCache {
    Matrix x{0, 0};
    Matrix u{0, 0};  // x * a^T when adapted
};

inline Matrix linear_forward(const LoraLinear& lin, const Matrix& x,
                             LinearCache& cache) {
    cache.x = x;
    Matrix y = mul_abt(x, lin.w);
    if (lin.adapted) {
        cache.u = mul_abt(x, lin.a);
        add_scaled(y, mul_abt(cache.u, lin.b), lin.scale());
    }
    return y;
}

inline Matrix linear_apply(const LoraLinear& lin, const Matrix& x) {
    Matrix y = mul_abt(x, lin.w);
    if (lin.adapted) {
        add_scaled(y, mul_abt(mul_abt(x, lin.a), lin.b), lin.scale());
    }
    return y;
}

inline void linear_backward(LoraLinear& lin, const LinearCache& cache,
                            const Matrix& dy, Matrix& dx_accum) {
    add_scaled(dx_accum, mul(dy, lin.w), 1.0);
    if (lin.adapted) {
        const double s = lin.scale();
        const Matrix dyb = mul(dy, lin.b);
        add_scaled(dx_accum, mul(dyb, lin.a), s);
        add_scaled(lin.gb, mul_atb(dy, cache.u), s);
        add_scaled(lin.ga, mul_atb(dyb, cache.x), s);
    }
}

inline Matrix col_slice(const Matrix& m, std::size_t c0, std::size_t width) {
    Matrix out(m.rows(), width);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < width; ++j) out(i, j) = m(i, c0 + j);
    }
    return out;
}

inline void add_col_slice(Matrix& m, const Matrix& sub, std::size_t c0) {
    for (std::size_t i = 0; i < sub.rows(); ++i) {
        for (std::size_t j = 0; j < sub.cols(); ++j) m(i, c0 + j) += sub(i, j);
    }
}

inline void softmax_rows(Matrix& s) {
    for (std::size_t i = 0; i < s.rows(); ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < s.cols(); ++j) mx = std::max(mx, s(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < s.cols(); ++j) {
            const double e = std::exp(s(i, j) - mx);
            s(i, j) = e;
            sum += e;
        }
        for (std::size_t j = 0; j < s.cols(); ++j) s(i, j) /= sum;
    }
}

struct AttnCache {
    LinearCache qc, kc, vc, oc;
    Matrix q{0, 0}, k{0, 0}, v{0, 0};
    std::vector<Matrix> probs;
};

inline Matrix attention_forward(const AttentionBlock& blk, const Matrix& xq,
                                const Matrix& xkv, bool causal,
                                std::size_t n_heads, AttnCache& cache) {
    const std::size_t d = xq.cols();
    const std::size_t dh = d / n_heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    cache.q = linear_forward(blk.q, xq, cache.qc);
    cache.k = linear_forward(blk.k, xkv, cache.kc);
    cache.v = linear_forward(blk.v, xkv, cache.vc);
    cache.probs.clear();
    Matrix concat(xq.rows(), d);
    for (std::size_t h = 0; h < n_heads; ++h) {
        const Matrix qh = col_slice(cache.q, h * dh, dh);
        const Matrix kh = col_slice(cache.k, h * dh, dh);
        const Matrix vh = col_slice(cache.v, h * dh, dh);
        Matrix s = mul_abt(qh, kh);
        for (std::size_t i = 0; i < s.rows(); ++i) {
            for (std::size_t j = 0; j < s.cols(); ++j) {
                s(i, j) = causal && j > i
                              ? -std::numeric_limits<double>::infinity()
                              : s(i, j) * inv_sqrt;
            }
        }
        softmax_rows(s);
        add_col_slice(concat, mul(s, vh), h * dh);
        cache.probs.push_back(std::move(s));
    }
    return linear_forward(blk.o, concat, cache.oc);
}

inline void attention_backward(AttentionBlock& blk, const AttnCache& cache,
                               const Matrix& dout, std::size_t n_heads,
                               Matrix& dxq_accum, Matrix& dxkv_accum) {
    const std::size_t d = cache.q.cols();
    const std::size_t dh = d / n_heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    Matrix dconcat(cache.q.rows(), d);
    linear_backward(blk.o, cache.oc, dout, dconcat);
    Matrix dq(cache.q.rows(), d), dk(cache.k.rows(), d), dv(cache.v.rows(), d);
    for (std::size_t h = 0; h < n_heads; ++h) {
        const Matrix qh = col_slice(cache.q, h * dh, dh);
        const Matrix kh = col_slice(cache.k, h * dh, dh);
        const Matrix vh = col_slice(cache.v, h * dh, dh);
        const Matrix doh = col_slice(dconcat, h * dh, dh);
        const Matrix& p = cache.probs[h];
        Matrix dp = mul_abt(doh, vh);
        add_col_slice(dv, mul_atb(p, doh), h * dh);
        // softmax jacobian: ds = p .* (dp - rowsum(dp .* p))
        Matrix ds(p.rows(), p.cols());
        for (std::size_t i = 0; i < p.rows(); ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < p.cols(); ++j) dot += dp(i, j) * p(i, j);
            for (std::size_t j = 0; j < p.cols(); ++j) {
                ds(i, j) = p(i, j) * (dp(i, j) - dot) * inv_sqrt;
            }
        }
        add_col_slice(dq, mul(ds, kh), h * dh);
        add_col_slice(dk, mul_atb(ds, qh), h * dh);
    }
    linear_backward(blk.q, cache.qc, dq, dxq_accum);
    linear_backward(blk.k, cache.kc, dk, dxkv_accum);
    linear_backward(blk.v, cache.vc, dv, dxkv_accum);
}

struct FfnCache {
    Matrix x{0, 0};
    Matrix h1{0, 0};
};

inline Matrix ffn_forward(const Matrix& w1, const Matrix& w2, const Matrix& x,
                          FfnCache& cache) {
    cache.x = x;
    cache.h1 = mul_abt(x, w1);
    for (std::size_t i = 0; i < cache.h1.size(); ++i) {
        cache.h1.data()[i] = std::max(0.0, cache.h1.data()[i]);
    }
    return mul_abt(cache.h1, w2);
}

inline void ffn_backward(const Matrix& w1, const Matrix& w2, const FfnCache& cache,
                         const Matrix& dy, Matrix& dx_accum) {
    Matrix dh1 = mul(dy, w2);
    for (std::size_t i = 0; i < dh1.size(); ++i) {
        if (cache.h1.data()[i] <= 0.0) dh1.data()[i] = 0.0;
    }
    add_scaled(dx_accum, mul(dh1, w1), 1.0);
}

struct EncLayerCache {
    NormCache ln1, ln2;
    AttnCache attn;
    FfnCache ffn;
};

struct DecLayerCache {
    NormCache ln1, ln2, ln3;
    AttnCache self, cross;
    FfnCache ffn;
};

struct ForwardPass {
    std::vector<EncLayerCache> enc;
    std::vector<DecLayerCache> dec;
    NormCache enc_norm, dec_norm;
    Matrix enc_out{0, 0};
    Matrix dec_normed{0, 0};
    Matrix logits{0, 0};
};

inline void forward_pass(const TinyModel& m, const std::vector<int>& src_ids,
                         const std::vector<int>& dec_ids, ForwardPass& fp) {
    const std::size_t heads = m.cfg.n_heads;
    fp.enc.assign(m.encoder.size(), EncLayerCache{});
    fp.dec.assign(m.decoder.size(), DecLayerCache{});

    Matrix x = embed_sequence(m, src_ids);
    for (std::size_t l = 0; l < m.encoder.size(); ++l) {
        const auto& layer = m.encoder[l];
        auto& c = fp.enc[l];
        const Matrix n1 = norm_forward(layer.ln1, x, c.ln1);
        add_scaled(x, attention_forward(layer.self, n1, n1, false, heads, c.attn),
                   1.0);
        const Matrix n2 = norm_forward(layer.ln2, x, c.ln2);
        add_scaled(x, ffn_forward(layer.w1, layer.w2, n2, c.ffn), 1.0);
    }
    fp.enc_out = norm_forward(m.enc_norm, x, fp.enc_norm);

    Matrix y = embed_sequence(m, dec_ids);
    for (std::size_t l = 0; l < m.decoder.size(); ++l) {
        const auto& layer = m.decoder[l];
        auto& c = fp.dec[l];
        const Matrix n1 = norm_forward(layer.ln1, y, c.ln1);
        add_scaled(y, attention_forward(layer.self, n1, n1, true, heads, c.self),
                   1.0);
        const Matrix n2 = norm_forward(layer.ln2, y, c.ln2);
        add_scaled(y,
                   attention_forward(layer.cross, n2, fp.enc_out, false, heads,
                                     c.cross),
                   1.0);
        const Matrix n3 = norm_forward(layer.ln3, y, c.ln3);
        add_scaled(y, ffn_forward(layer.w1, layer.w2, n3, c.ffn), 1.0);
    }
    fp.dec_normed = norm_forward(m.dec_norm, y, fp.dec_norm);
    fp.logits = mul_abt(fp.dec_normed, m.head);
}

inline void backward_pass(TinyModel& m, const std::vector<int>& src_ids,
                          const std::vector<int>& dec_ids, const ForwardPass& fp,
                          const Matrix& dlogits) {
    const std::size_t heads = m.cfg.n_heads;
    add_scaled(m.g_head, mul_atb(dlogits, fp.dec_normed), 1.0);

    Matrix dy(dec_ids.size(), m.cfg.d_model);
    norm_backward(m.dec_norm, fp.dec_norm, mul(dlogits, m.head), dy);

    Matrix denc(src_ids.size(), m.cfg.d_model);
    for (std::size_t li = m.decoder.size(); li-- > 0;) {
        auto& layer = m.decoder[li];
        const auto& c = fp.dec[li];
        Matrix dn3(dy.rows(), dy.cols());
        ffn_backward(layer.w1, layer.w2, c.ffn, dy, dn3);
        norm_backward(layer.ln3, c.ln3, dn3, dy);
        Matrix dn2(dy.rows(), dy.cols());
        attention_backward(layer.cross, c.cross, dy, heads, dn2, denc);
        norm_backward(layer.ln2, c.ln2, dn2, dy);
        Matrix dn1(dy.rows(), dy.cols());
        attention_backward(layer.self, c.self, dy, heads, dn1, dn1);
        norm_backward(layer.ln1, c.ln1, dn1, dy);
    }
    embed_backward(m, dec_ids, dy);

    Matrix dx(src_ids.size(), m.cfg.d_model);
    norm_backward(m.enc_norm, fp.enc_norm, denc, dx);
    for (std::size_t li = m.encoder.size(); li-- > 0;) {
        auto& layer = m.encoder[li];
        const auto& c = fp.enc[li];
        Matrix dn2(dx.rows(), dx.cols());
        ffn_backward(layer.w1, layer.w2, c.ffn, dx, dn2);
        norm_backward(layer.ln2, c.ln2, dn2, dx);
        Matrix dn1(dx.rows(), dx.cols());
        attention_backward(layer.self, c.attn, dx, heads, dn1, dn1);
        norm_backward(layer.ln1, c.ln1, dn1, dx);
    }
    embed_backward(m, src_ids, dx);
}

}  // namespace detail

// Mean token cross-entropy of the teacher-forced decode of tgt given src.
// Gradients accumulate into the model's grad buffers when with_grad is set.
inline double teacher_forced_loss(TinyModel& m, const std::vector<int>& src_ids,
                                  const std::vector<int>& tgt_ids, bool with_grad) {
    if (src_ids.empty()) throw PipelineError("empty model input");
    std::vector<int> dec_ids;
    dec_ids.push_back(Vocab::kBos);
    dec_ids.insert(dec_ids.end(), tgt_ids.begin(), tgt_ids.end());
    std::vector<int> labels = tgt_ids;
    labels.push_back(Vocab::kEos);

    detail::ForwardPass fp;
    detail::forward_pass(m, src_ids, dec_ids, fp);

    const std::size_t T = labels.size();
    const std::size_t V = m.cfg.vocab_size;
    double loss = 0.0;
    Matrix dlogits(with_grad ? T : 0, with_grad ? V : 0);
    for (std::size_t t = 0; t < T; ++t) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < V; ++j) mx = std::max(mx, fp.logits(t, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < V; ++j) sum += std::exp(fp.logits(t, j) - mx);
        const double lse = mx + std::log(sum);
        const auto label = static_cast<std::size_t>(labels[t]);
        loss += lse - fp.logits(t, label);
        if (with_grad) {
            for (std::size_t j = 0; j < V; ++j) {
                dlogits(t, j) = std::exp(fp.logits(t, j) - lse) /
                                static_cast<double>(T);
            }
            dlogits(t, label) -= 1.0 / static_cast<double>(T);
        }
    }
    loss /= static_cast<double>(T);
    if (with_grad) detail::backward_pass(m, src_ids, dec_ids, fp, dlogits);
    return loss;
}

// Forward-only logits over the given decoder prefix; row t scores token t+1.
inline Matrix teacher_forced_logits(const TinyModel& m, const std::vector<int>& src_ids,
                                    const std::vector<int>& dec_ids) {
    if (src_ids.empty() || dec_ids.empty()) {
        throw PipelineError("empty model input");
    }
    detail::ForwardPass fp;
    detail::forward_pass(m, src_ids, dec_ids, fp);
    return fp.logits;
}

namespace detail {

struct DecodeLayerState {
    Matrix self_k{0, 0}, self_v{0, 0};
    Matrix cross_k{0, 0}, cross_v{0, 0};
};

inline Matrix append_row(const Matrix& grown, const Matrix& row) {
    Matrix out(grown.rows() + 1, row.cols());
    for (std::size_t i = 0; i < grown.rows(); ++i) {
        for (std::size_t j = 0; j < grown.cols(); ++j) out(i, j) = grown(i, j);
    }
    for (std::size_t j = 0; j < row.cols(); ++j) out(grown.rows(), j) = row(0, j);
    return out;
}

inline Matrix norm_apply(const NormParams& p, const Matrix& x) {
    NormCache scratch;
    return norm_forward(p, x, scratch);
}

inline Matrix cached_attention(const LoraLinear& q_proj, const LoraLinear& o_proj,
                               const Matrix& xq, const Matrix& keys,
                               const Matrix& values, std::size_t n_heads) {
    const std::size_t d = xq.cols();
    const std::size_t dh = d / n_heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    const Matrix q = linear_apply(q_proj, xq);
    Matrix concat(1, d);
    for (std::size_t h = 0; h < n_heads; ++h) {
        const Matrix qh = col_slice(q, h * dh, dh);
        const Matrix kh = col_slice(keys, h * dh, dh);
        const Matrix vh = col_slice(values, h * dh, dh);
        Matrix s = mul_abt(qh, kh);
        for (std::size_t j = 0; j < s.cols(); ++j) s(0, j) *= inv_sqrt;
        softmax_rows(s);
        add_col_slice(concat, mul(s, vh), h * dh);
    }
    return linear_apply(o_proj, concat);
}

}  // namespace detail

// Greedy argmax decode with cached keys and values; ties go to the lowest
// token id. Stops at EOS or max_output_tokens.
inline std::vector<int> greedy_decode(const TinyModel& m, std::vector<int> src_ids,
                                      std::size_t max_output) {
    if (src_ids.empty()) throw PipelineError("empty model input");
    if (src_ids.size() > m.cfg.max_input_tokens) {
        src_ids.resize(m.cfg.max_input_tokens);
    }
    detail::ForwardPass fp;
    const std::vector<int> bos = {Vocab::kBos};
    detail::forward_pass(m, src_ids, bos, fp);  // fills enc caches; dec run below

    std::vector<detail::DecodeLayerState> state(m.decoder.size());
    for (std::size_t l = 0; l < m.decoder.size(); ++l) {
        state[l].cross_k = detail::linear_apply(m.decoder[l].cross.k, fp.enc_out);
        state[l].cross_v = detail::linear_apply(m.decoder[l].cross.v, fp.enc_out);
    }

    std::vector<int> out;
    int prev = Vocab::kBos;
    const std::size_t d = m.cfg.d_model;
    for (std::size_t t = 0; t < max_output; ++t) {
        Matrix x(1, d);
        const auto row = static_cast<std::size_t>(prev);
        for (std::size_t j = 0; j < d; ++j) {
            x(0, j) = m.embedding(row, j) + detail::positional_value(t, j, d);
        }
        for (std::size_t l = 0; l < m.decoder.size(); ++l) {
            const auto& layer = m.decoder[l];
            auto& st = state[l];
            const Matrix n1 = detail::norm_apply(layer.ln1, x);
            st.self_k = detail::append_row(st.self_k,
                                           detail::linear_apply(layer.self.k, n1));
            st.self_v = detail::append_row(st.self_v,
                                           detail::linear_apply(layer.self.v, n1));
            add_scaled(x,
                       detail::cached_attention(layer.self.q, layer.self.o, n1,
                                                st.self_k, st.self_v,
                                                m.cfg.n_heads),
                       1.0);
            const Matrix n2 = detail::norm_apply(layer.ln2, x);
            add_scaled(x,
                       detail::cached_attention(layer.cross.q, layer.cross.o, n2,
                                                st.cross_k, st.cross_v,
                                                m.cfg.n_heads),
                       1.0);
            const Matrix n3 = detail::norm_apply(layer.ln3, x);
            detail::FfnCache scratch;
            add_scaled(x, detail::ffn_forward(layer.w1, layer.w2, n3, scratch), 1.0);
        }
        const Matrix xn = detail::norm_apply(m.dec_norm, x);
        int best = 0;
        double best_score = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < m.cfg.vocab_size; ++j) {
            double score = 0.0;
            for (std::size_t c = 0; c < d; ++c) score += xn(0, c) * m.head(j, c);
            if (score > best_score) {
                best_score = score;
                best = static_cast<int>(j);
            }
        }
        if (best == Vocab::kEos) break;
        out.push_back(best);
        prev = best;
    }
    return out;
}

namespace detail {

inline void write_vector(std::ostream& out, const std::vector<double>& v) {
    write_u64(out, v.size());
    for (const double x : v) write_f64(out, x);
}

inline std::vector<double> read_vector(std::istream& in) {
    const std::uint64_t n = read_u64(in);
    if (n > (1u << 24)) throw DataError("model file vector too large");
    std::vector<double> v(n);
    for (auto& x : v) x = read_f64(in);
    return v;
}

inline void write_string(std::ostream& out, const std::string& s) {
    write_u64(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in) {
    const std::uint64_t n = read_u64(in);
    if (n > (1u << 20)) throw DataError("model file string too large");
    std::string s(n, '\0');
    in.read(s.data(), static_cast<std::streamsize>(n));
    if (!in) throw DataError("model file truncated");
    return s;
}

inline void write_linear(std::ostream& out, const LoraLinear& lin) {
    write_matrix(out, lin.w);
    out.put(lin.adapted ? 1 : 0);
    if (lin.adapted) {
        write_matrix(out, lin.a);
        write_matrix(out, lin.b);
    }
}

inline void read_linear(std::istream& in, LoraLinear& lin, std::size_t rank,
                        double alpha) {
    lin.w = read_matrix(in);
    const int flag = in.get();
    if (flag != 0 && flag != 1) throw DataError("model file corrupt adapter flag");
    lin.adapted = flag == 1;
    if (lin.adapted) {
        lin.a = read_matrix(in);
        lin.b = read_matrix(in);
        lin.rank = rank;
        lin.alpha = alpha;
        if (lin.a.rows() != rank || lin.b.cols() != rank ||
            lin.a.cols() != lin.w.cols() || lin.b.rows() != lin.w.rows()) {
            throw DataError("model file adapter shape mismatch");
        }
        lin.ga = Matrix(lin.a.rows(), lin.a.cols());
        lin.gb = Matrix(lin.b.rows(), lin.b.cols());
    }
}

inline void write_norm(std::ostream& out, const NormParams& p) {
    write_vector(out, p.gamma);
    write_vector(out, p.beta);
}

inline NormParams read_norm(std::istream& in) {
    NormParams p;
    p.gamma = read_vector(in);
    p.beta = read_vector(in);
    if (p.gamma.size() != p.beta.size()) {
        throw DataError("model file norm shape mismatch");
    }
    return p;
}

constexpr std::uint32_t kModelFormatVersion = 1;

}  // namespace detail

inline void save_model(const TinyModel& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open model file for writing: " + path);
    out.write("LXTM", 4);
    detail::write_u32(out, detail::kModelFormatVersion);
    for (const std::size_t v :
         {m.cfg.d_model, m.cfg.n_heads, m.cfg.n_layers, m.cfg.d_ff,
          m.cfg.max_input_tokens, m.cfg.max_output_tokens}) {
        detail::write_u64(out, v);
    }
    detail::write_u64(out, m.vocab.size());
    for (const auto& tok : m.vocab.tokens) detail::write_string(out, tok);
    detail::write_u64(out, m.lora_targets.size());
    for (const auto& t : m.lora_targets) detail::write_string(out, t);
    detail::write_u64(out, m.lora_rank);
    detail::write_f64(out, m.lora_alpha);

    detail::write_matrix(out, m.embedding);
    const auto write_block = [&](const AttentionBlock& blk) {
        detail::write_linear(out, blk.q);
        detail::write_linear(out, blk.k);
        detail::write_linear(out, blk.v);
        detail::write_linear(out, blk.o);
    };
    for (const auto& layer : m.encoder) {
        detail::write_norm(out, layer.ln1);
        write_block(layer.self);
        detail::write_norm(out, layer.ln2);
        detail::write_matrix(out, layer.w1);
        detail::write_matrix(out, layer.w2);
    }
    for (const auto& layer : m.decoder) {
        detail::write_norm(out, layer.ln1);
        write_block(layer.self);
        detail::write_norm(out, layer.ln2);
        write_block(layer.cross);
        detail::write_norm(out, layer.ln3);
        detail::write_matrix(out, layer.w1);
        detail::write_matrix(out, layer.w2);
    }
    detail::write_norm(out, m.enc_norm);
    detail::write_norm(out, m.dec_norm);
    detail::write_matrix(out, m.head);
    if (!out) throw DataError("model write failed: " + path);
}

inline TinyModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open model file: " + path);
    char magic[4] = {};
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != "LXTM") {
        throw DataError("not a model file: " + path);
    }
    const std::uint32_t version = detail::read_u32(in);
    if (version != detail::kModelFormatVersion) {
        throw DataError("unsupported model format version " +
                        std::to_string(version));
    }
    TinyModel m;
    m.cfg.d_model = detail::read_u64(in);
    m.cfg.n_heads = detail::read_u64(in);
    m.cfg.n_layers = detail::read_u64(in);
    m.cfg.d_ff = detail::read_u64(in);
    m.cfg.max_input_tokens = detail::read_u64(in);
    m.cfg.max_output_tokens = detail::read_u64(in);
    const std::uint64_t vocab_size = detail::read_u64(in);
    if (vocab_size > (1u << 24)) throw DataError("model vocabulary too large");
    for (std::uint64_t i = 0; i < vocab_size; ++i) {
        m.vocab.tokens.push_back(detail::read_string(in));
        m.vocab.index[m.vocab.tokens.back()] = static_cast<int>(i);
    }
    m.cfg.vocab_size = m.vocab.size();
    m.cfg.validate();
    const std::uint64_t n_targets = detail::read_u64(in);
    if (n_targets > 4) throw DataError("model file corrupt target list");
    for (std::uint64_t i = 0; i < n_targets; ++i) {
        m.lora_targets.push_back(detail::read_string(in));
    }
    m.lora_rank = detail::read_u64(in);
    m.lora_alpha = detail::read_f64(in);

    m.embedding = detail::read_matrix(in);
    const auto read_block = [&](AttentionBlock& blk) {
        detail::read_linear(in, blk.q, m.lora_rank, m.lora_alpha);
        detail::read_linear(in, blk.k, m.lora_rank, m.lora_alpha);
        detail::read_linear(in, blk.v, m.lora_rank, m.lora_alpha);
        detail::read_linear(in, blk.o, m.lora_rank, m.lora_alpha);
    };
    for (std::size_t l = 0; l < m.cfg.n_layers; ++l) {
        EncoderLayer layer;
        layer.ln1 = detail::read_norm(in);
        read_block(layer.self);
        layer.ln2 = detail::read_norm(in);
        layer.w1 = detail::read_matrix(in);
        layer.w2 = detail::read_matrix(in);
        m.encoder.push_back(std::move(layer));
    }
    for (std::size_t l = 0; l < m.cfg.n_layers; ++l) {
        DecoderLayer layer;
        layer.ln1 = detail::read_norm(in);
        read_block(layer.self);
        layer.ln2 = detail::read_norm(in);
        read_block(layer.cross);
        layer.ln3 = detail::read_norm(in);
        layer.w1 = detail::read_matrix(in);
        layer.w2 = detail::read_matrix(in);
        m.decoder.push_back(std::move(layer));
    }
    m.enc_norm = detail::read_norm(in);
    m.dec_norm = detail::read_norm(in);
    m.head = detail::read_matrix(in);
    if (!in) throw DataError("model file truncated: " + path);
    m.g_embedding = Matrix(m.cfg.vocab_size, m.cfg.d_model);
    m.g_head = Matrix(m.cfg.vocab_size, m.cfg.d_model);

    for (std::size_t l = 0; l < m.cfg.n_layers; ++l) {
        const std::string enc = "enc." + std::to_string(l) + ".self.";
        m.encoder[l].self.q.name = enc + "q_proj";
        m.encoder[l].self.k.name = enc + "k_proj";
        m.encoder[l].self.v.name = enc + "v_proj";
        m.encoder[l].self.o.name = enc + "o_proj";
        const std::string dse = "dec." + std::to_string(l) + ".self.";
        m.decoder[l].self.q.name = dse + "q_proj";
        m.decoder[l].self.k.name = dse + "k_proj";
        m.decoder[l].self.v.name = dse + "v_proj";
        m.decoder[l].self.o.name = dse + "o_proj";
        const std::string dcr = "dec." + std::to_string(l) + ".cross.";
        m.decoder[l].cross.q.name = dcr + "q_proj";
        m.decoder[l].cross.k.name = dcr + "k_proj";
        m.decoder[l].cross.v.name = dcr + "v_proj";
        m.decoder[l].cross.o.name = dcr + "o_proj";
    }
    return m;
}

}  // namespace lexsum
