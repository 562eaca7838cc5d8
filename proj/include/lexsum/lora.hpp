#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "lexsum/errors.hpp"
#include "lexsum/matrix.hpp"
#include "lexsum/rng.hpp"

namespace lexsum {

// Frozen base weight plus trainable low-rank correction. The correction
// path is scaled by alpha/rank so its magnitude stays comparable across
// ranks.
struct LoraAdapter {
    Matrix W0;  // d x k, never updated
    Matrix A;   // r x k
    Matrix B;   // d x r, zero at init so the correction starts exactly off
    std::size_t rank = 0;
    double alpha = 0.0;

    std::size_t d() const { return W0.rows(); }
    std::size_t k() const { return W0.cols(); }
    double scale() const { return alpha / static_cast<double>(rank); }
};

struct LoraGradients {
    Matrix dA;  // r x k
    Matrix dB;  // d x r
};

inline LoraAdapter init_adapter(Matrix w0, std::size_t rank, double alpha,
                                std::uint64_t seed) {
    const std::size_t d = w0.rows();
    const std::size_t k = w0.cols();
    if (rank < 1 || rank > std::min(d, k)) {
        throw DimensionError("init_adapter: rank " + std::to_string(rank) +
                             " outside [1, min(" + std::to_string(d) + ", " +
                             std::to_string(k) + ")]");
    }
    if (alpha <= 0.0) throw ConfigError("init_adapter: alpha must be positive");
    LoraAdapter adapter;
    adapter.W0 = std::move(w0);
    adapter.rank = rank;
    adapter.alpha = alpha;
    adapter.A = Matrix(rank, k);
    adapter.B = Matrix(d, rank, 0.0);
    Rng rng(seed);
    const double sigma = 1.0 / static_cast<double>(rank);
    for (std::size_t i = 0; i < adapter.A.size(); ++i) {
        adapter.A.data()[i] = rng.normal(0.0, sigma);
    }
    return adapter;
}

namespace lora {

// h = W0 x + scale * B (A x)
inline std::vector<double> forward(const Matrix& w0, const Matrix& a,
                                   const Matrix& b, double scale,
                                   const std::vector<double>& x) {
    if (x.size() != w0.cols()) {
        throw DimensionError("lora forward: input length " +
                             std::to_string(x.size()) + " != base columns " +
                             std::to_string(w0.cols()));
    }
    std::vector<double> h = matvec(w0, x);
    const std::vector<double> ax = matvec(a, x);
    const std::vector<double> bax = matvec(b, ax);
    for (std::size_t i = 0; i < h.size(); ++i) h[i] += scale * bax[i];
    return h;
}

inline Matrix merge(const Matrix& w0, const Matrix& a, const Matrix& b,
                    double scale) {
    Matrix merged = w0;
    const Matrix ba = mul(b, a);
    add_scaled(merged, ba, scale);
    return merged;
}

// dB = scale * g (A x)^T,  dA = scale * (B^T g) x^T
inline LoraGradients backward(const Matrix& a, const Matrix& b, double scale,
                              const std::vector<double>& x,
                              const std::vector<double>& g) {
    if (x.size() != a.cols()) {
        throw DimensionError("lora backward: input length " +
                             std::to_string(x.size()) + " != A columns " +
                             std::to_string(a.cols()));
    }
    if (g.size() != b.rows()) {
        throw DimensionError("lora backward: gradient length " +
                             std::to_string(g.size()) + " != B rows " +
                             std::to_string(b.rows()));
    }
    LoraGradients grads;
    const std::vector<double> ax = matvec(a, x);
    const std::vector<double> btg = matvec_t(b, g);
    grads.dB = Matrix(b.rows(), b.cols());
    for (std::size_t i = 0; i < b.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            grads.dB(i, j) = scale * g[i] * ax[j];
        }
    }
    grads.dA = Matrix(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) {
            grads.dA(i, j) = scale * btg[i] * x[j];
        }
    }
    return grads;
}

// dx = W0^T g + scale * A^T (B^T g)
inline std::vector<double> input_grad(const Matrix& w0, const Matrix& a,
                                      const Matrix& b, double scale,
                                      const std::vector<double>& g) {
    std::vector<double> dx = matvec_t(w0, g);
    const std::vector<double> btg = matvec_t(b, g);
    const std::vector<double> atbtg = matvec_t(a, btg);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += scale * atbtg[i];
    return dx;
}

}  // namespace lora

inline std::vector<double> forward(const LoraAdapter& adapter,
                                   const std::vector<double>& x) {
    return lora::forward(adapter.W0, adapter.A, adapter.B, adapter.scale(), x);
}

inline Matrix merge_weights(const LoraAdapter& adapter) {
    return lora::merge(adapter.W0, adapter.A, adapter.B, adapter.scale());
}

inline LoraGradients backward(const LoraAdapter& adapter,
                              const std::vector<double>& x,
                              const std::vector<double>& g) {
    return lora::backward(adapter.A, adapter.B, adapter.scale(), x, g);
}

inline std::size_t trainable_param_count(const LoraAdapter& adapter) {
    return adapter.rank * (adapter.d() + adapter.k());
}

inline void apply_sgd(LoraAdapter& adapter, const LoraGradients& grads,
                      double learning_rate) {
    if (!grads.dA.same_shape(adapter.A) || !grads.dB.same_shape(adapter.B)) {
        throw DimensionError("apply_sgd: gradient shapes do not match adapter");
    }
    add_scaled(adapter.A, grads.dA, -learning_rate);
    add_scaled(adapter.B, grads.dB, -learning_rate);
}

// Serialized factors reference the base weight by layer name; W0 itself is
// never written.
struct SavedAdapter {
    std::string layer_name;
    Matrix A;
    Matrix B;
    std::size_t rank = 0;
    double alpha = 0.0;
};

namespace detail {

inline void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char buf[4];
    for (int i = 0; i < 4; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(buf), 4);
}

inline void write_u64(std::ostream& out, std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(buf), 8);
}

inline void write_f64(std::ostream& out, double v) {
    std::uint64_t bits;
    static_assert(sizeof(bits) == sizeof(v));
    __builtin_memcpy(&bits, &v, sizeof(bits));
    write_u64(out, bits);
}

inline std::uint32_t read_u32(std::istream& in) {
    unsigned char buf[4];
    in.read(reinterpret_cast<char*>(buf), 4);
    if (!in) throw DataError("adapter file truncated");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[i]) << (8 * i);
    return v;
}

inline std::uint64_t read_u64(std::istream& in) {
    unsigned char buf[8];
    in.read(reinterpret_cast<char*>(buf), 8);
    if (!in) throw DataError("adapter file truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
}

inline double read_f64(std::istream& in) {
    const std::uint64_t bits = read_u64(in);
    double v;
    __builtin_memcpy(&v, &bits, sizeof(v));
    return v;
}

inline void write_matrix(std::ostream& out, const Matrix& m) {
    write_u64(out, m.rows());
    write_u64(out, m.cols());
    for (std::size_t i = 0; i < m.size(); ++i) write_f64(out, m.data()[i]);
}

inline Matrix read_matrix(std::istream& in) {
    const std::uint64_t rows = read_u64(in);
    const std::uint64_t cols = read_u64(in);
    if (rows > (1u << 20) || cols > (1u << 20)) {
        throw DataError("adapter file holds an implausible matrix shape");
    }
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = read_f64(in);
    return m;
}

}  // namespace detail

inline constexpr std::uint32_t kAdapterFormatVersion = 1;

inline void save_adapter(const std::string& path, const LoraAdapter& adapter,
                         const std::string& layer_name) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write adapter file: " + path);
    out.write("LORA", 4);
    detail::write_u32(out, kAdapterFormatVersion);
    detail::write_u32(out, static_cast<std::uint32_t>(layer_name.size()));
    out.write(layer_name.data(), static_cast<std::streamsize>(layer_name.size()));
    detail::write_u64(out, adapter.rank);
    detail::write_f64(out, adapter.alpha);
    detail::write_matrix(out, adapter.A);
    detail::write_matrix(out, adapter.B);
    if (!out) throw DataError("failed while writing adapter file: " + path);
}

inline SavedAdapter load_adapter(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open adapter file: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != "LORA") {
        throw DataError("not an adapter file: " + path);
    }
    const std::uint32_t version = detail::read_u32(in);
    if (version != kAdapterFormatVersion) {
        throw DataError("unsupported adapter format version " +
                        std::to_string(version));
    }
    const std::uint32_t name_len = detail::read_u32(in);
    if (name_len > 4096) throw DataError("adapter layer name implausibly long");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw DataError("adapter file truncated");
    SavedAdapter saved;
    saved.layer_name = std::move(name);
    saved.rank = detail::read_u64(in);
    saved.alpha = detail::read_f64(in);
    saved.A = detail::read_matrix(in);
    saved.B = detail::read_matrix(in);
    if (saved.A.rows() != saved.rank || saved.B.cols() != saved.rank) {
        throw DataError("adapter file factor shapes disagree with rank");
    }
    return saved;
}

}  // namespace lexsum
