#pragma once

// Independent reference computations for the test suites. Everything here
// favors directness over speed: dense elimination, exhaustive search,
// brute-force recursion.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "lexsum/lexrank.hpp"
#include "lexsum/matrix.hpp"
#include "lexsum/porter.hpp"
#include "lexsum/rng.hpp"

namespace oracles {

// Gaussian elimination with partial pivoting.
inline std::vector<double> solve_dense(lexsum::Matrix a, std::vector<double> b) {
    const std::size_t n = a.rows();
    if (a.cols() != n || b.size() != n) {
        throw std::invalid_argument("solve_dense: shape mismatch");
    }
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < n; ++r) {
            if (std::abs(a(r, col)) > std::abs(a(pivot, col))) pivot = r;
        }
        if (std::abs(a(pivot, col)) < 1e-14) {
            throw std::runtime_error("solve_dense: singular system");
        }
        if (pivot != col) {
            for (std::size_t c = 0; c < n; ++c) std::swap(a(col, c), a(pivot, c));
            std::swap(b[col], b[pivot]);
        }
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = a(r, col) / a(col, col);
            if (f == 0.0) continue;
            for (std::size_t c = col; c < n; ++c) a(r, c) -= f * a(col, c);
            b[r] -= f * b[col];
        }
    }
    std::vector<double> x(n, 0.0);
    for (std::size_t i = n; i-- > 0;) {
        double s = b[i];
        for (std::size_t c = i + 1; c < n; ++c) s -= a(i, c) * x[c];
        x[i] = s / a(i, i);
    }
    return x;
}

// Centrality by direct solve of the fixed-point system
// (I - (1-d) T) p = (d/n) 1 with T[u][v] = w(u,v) / sum_z w(z,v),
// followed by the same sum-to-one normalization the iteration applies.
inline std::vector<double> centrality_by_solve(const lexsum::SentenceGraph& g,
                                               double damping) {
    const std::size_t n = g.n;
    std::vector<double> col_sum(n, 0.0);
    for (std::size_t v = 0; v < n; ++v) {
        for (std::size_t z = 0; z < n; ++z) col_sum[v] += g.weights(z, v);
    }
    lexsum::Matrix system(n, n, 0.0);
    for (std::size_t u = 0; u < n; ++u) {
        for (std::size_t v = 0; v < n; ++v) {
            double t = 0.0;
            if (col_sum[v] > 0.0) t = g.weights(u, v) / col_sum[v];
            system(u, v) = (u == v ? 1.0 : 0.0) - (1.0 - damping) * t;
        }
    }
    std::vector<double> rhs(n, damping / static_cast<double>(n));
    std::vector<double> p = solve_dense(system, rhs);
    double sum = 0.0;
    for (double x : p) sum += x;
    for (double& x : p) x /= sum;
    return p;
}

// Random symmetric thresholded graph; roughly `density` of the off-diagonal
// pairs carry an edge with weight in [threshold, 1].
inline lexsum::SentenceGraph random_graph(lexsum::Rng& rng, std::size_t n,
                                          double density, double threshold = 0.2) {
    lexsum::SentenceGraph g;
    g.n = n;
    g.threshold = threshold;
    g.weights = lexsum::Matrix(n, n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (rng.uniform() < density) {
                const double w = threshold + (1.0 - threshold) * rng.uniform();
                g.weights(i, j) = w;
                g.weights(j, i) = w;
            }
        }
    }
    return g;
}

// Random preprocessed sentences over a small shared vocabulary.
inline std::vector<lexsum::Sentence> random_sentences(lexsum::Rng& rng,
                                                      std::size_t count,
                                                      std::size_t vocab = 10,
                                                      std::size_t max_len = 8) {
    std::vector<lexsum::Sentence> sentences(count);
    for (std::size_t i = 0; i < count; ++i) {
        sentences[i].index = i;
        const std::size_t len = 1 + rng.below(max_len);
        for (std::size_t t = 0; t < len; ++t) {
            sentences[i].tokens.push_back("w" + std::to_string(rng.below(vocab)));
        }
        for (const auto& tok : sentences[i].tokens) {
            if (!sentences[i].text.empty()) sentences[i].text += ' ';
            sentences[i].text += tok;
        }
    }
    return sentences;
}

// Quadratic dynamic program for the longest common subsequence length.
inline std::size_t lcs_length(const std::vector<std::string>& a,
                              const std::vector<std::string>& b) {
    std::vector<std::vector<std::size_t>> dp(a.size() + 1,
                                             std::vector<std::size_t>(b.size() + 1, 0));
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            if (a[i - 1] == b[j - 1]) {
                dp[i][j] = dp[i - 1][j - 1] + 1;
            } else {
                dp[i][j] = std::max(dp[i - 1][j], dp[i][j - 1]);
            }
        }
    }
    return dp[a.size()][b.size()];
}

// Exhaustive enumeration of all common subsequences of a, checking which
// also occur in b; exponential, for short inputs only.
inline std::size_t lcs_length_bruteforce(const std::vector<std::string>& a,
                                         const std::vector<std::string>& b) {
    const std::size_t n = a.size();
    if (n > 20) throw std::invalid_argument("lcs_length_bruteforce: input too long");
    std::size_t best = 0;
    for (std::size_t mask = 0; mask < (std::size_t(1) << n); ++mask) {
        std::vector<std::string> sub;
        for (std::size_t i = 0; i < n; ++i) {
            if (mask & (std::size_t(1) << i)) sub.push_back(a[i]);
        }
        if (sub.size() <= best) continue;
        // greedy subsequence containment check
        std::size_t j = 0;
        for (const auto& tok : b) {
            if (j < sub.size() && tok == sub[j]) ++j;
        }
        if (j == sub.size()) best = sub.size();
    }
    return best;
}

struct BruteAlignment {
    std::size_t matches = 0;
    std::size_t chunks = 0;
};

// Enumerates every injective candidate-to-reference matching and keeps the
// fewest chunks among those of maximum size; exponential, short inputs only.
inline BruteAlignment brute_force_alignment(const std::vector<std::string>& cand,
                                            const std::vector<std::string>& ref,
                                            bool stem_match) {
    if (cand.size() > 8 || ref.size() > 8) {
        throw std::invalid_argument("brute_force_alignment: input too long");
    }
    const auto compatible = [&](const std::string& a, const std::string& b) {
        if (a == b) return true;
        return stem_match && lexsum::porter_stem(a) == lexsum::porter_stem(b);
    };
    BruteAlignment best;
    std::vector<int> ref_of(cand.size(), -1);
    std::vector<char> used(ref.size(), 0);
    const auto score = [&]() {
        std::size_t matches = 0, chunks = 0;
        int prev_i = -2, prev_j = -2;
        for (std::size_t i = 0; i < cand.size(); ++i) {
            if (ref_of[i] < 0) continue;
            ++matches;
            if (!(static_cast<int>(i) == prev_i + 1 && ref_of[i] == prev_j + 1)) ++chunks;
            prev_i = static_cast<int>(i);
            prev_j = ref_of[i];
        }
        if (matches > best.matches ||
            (matches == best.matches && chunks < best.chunks)) {
            best.matches = matches;
            best.chunks = chunks;
        }
    };
    const std::function<void(std::size_t)> walk = [&](std::size_t i) {
        if (i == cand.size()) {
            score();
            return;
        }
        walk(i + 1);
        for (std::size_t j = 0; j < ref.size(); ++j) {
            if (!used[j] && compatible(cand[i], ref[j])) {
                used[j] = 1;
                ref_of[i] = static_cast<int>(j);
                walk(i + 1);
                ref_of[i] = -1;
                used[j] = 0;
            }
        }
    };
    walk(0);
    return best;
}

}  // namespace oracles
