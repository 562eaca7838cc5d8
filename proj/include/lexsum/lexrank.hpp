#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "lexsum/errors.hpp"
#include "lexsum/matrix.hpp"
#include "lexsum/preprocess.hpp"

namespace lexsum {

struct TermVector {
    std::map<std::string, std::size_t> counts;
};

struct IdfTable {
    std::map<std::string, double> idf;
    std::size_t n_units = 0;

    double weight(const std::string& token) const {
        const auto it = idf.find(token);
        return it == idf.end() ? 0.0 : it->second;
    }
};

enum class SimilarityMode { idf, count };

struct SentenceGraph {
    std::size_t n = 0;
    Matrix weights;
    double threshold = 0.2;
};

struct CentralityVector {
    std::vector<double> scores;
    double damping = 0.85;
    std::size_t iterations_used = 0;
    bool converged = false;
};

struct RankedSentence {
    std::size_t index = 0;
    double score = 0.0;
};

struct LexRankConfig {
    double threshold = 0.2;
    double damping = 0.85;
    double tol = 1e-6;
    std::size_t max_iter = 100;
    SimilarityMode mode = SimilarityMode::idf;
};

inline std::vector<TermVector> count_vectorize(const std::vector<Sentence>& sentences) {
    std::vector<TermVector> vectors(sentences.size());
    for (std::size_t i = 0; i < sentences.size(); ++i) {
        for (const auto& tok : sentences[i].tokens) {
            ++vectors[i].counts[tok];
        }
    }
    return vectors;
}

inline IdfTable compute_idf(const std::vector<Sentence>& sentences) {
    IdfTable table;
    table.n_units = sentences.size();
    std::map<std::string, std::size_t> df;
    for (const auto& s : sentences) {
        std::map<std::string, bool> seen;
        for (const auto& tok : s.tokens) {
            if (!seen[tok]) {
                seen[tok] = true;
                ++df[tok];
            }
        }
    }
    for (const auto& [tok, count] : df) {
        table.idf[tok] = std::log(static_cast<double>(table.n_units) /
                                  static_cast<double>(count));
    }
    return table;
}

namespace detail {

inline double idf_weighted_norm(const TermVector& v, const IdfTable& idf) {
    double sum = 0.0;
    for (const auto& [tok, count] : v.counts) {
        const double x = static_cast<double>(count) * idf.weight(tok);
        sum += x * x;
    }
    return std::sqrt(sum);
}

}  // namespace detail

// Summation walks the sorted key intersection, so swapping the arguments
// produces the same floating-point result bit for bit.
inline double idf_modified_cosine(const TermVector& u, const TermVector& v,
                                  const IdfTable& idf) {
    const double norm_u = detail::idf_weighted_norm(u, idf);
    const double norm_v = detail::idf_weighted_norm(v, idf);
    if (norm_u == 0.0 || norm_v == 0.0) return 0.0;
    double num = 0.0;
    auto iu = u.counts.begin();
    auto iv = v.counts.begin();
    while (iu != u.counts.end() && iv != v.counts.end()) {
        if (iu->first < iv->first) {
            ++iu;
        } else if (iv->first < iu->first) {
            ++iv;
        } else {
            const double w = idf.weight(iu->first);
            num += static_cast<double>(iu->second) *
                   static_cast<double>(iv->second) * w * w;
            ++iu;
            ++iv;
        }
    }
    return num / (norm_u * norm_v);
}

inline IdfTable unit_idf(const std::vector<Sentence>& sentences) {
    IdfTable table = compute_idf(sentences);
    for (auto& [tok, w] : table.idf) w = 1.0;
    return table;
}

inline SentenceGraph build_graph(const std::vector<Sentence>& sentences,
                                 double threshold = 0.2,
                                 SimilarityMode mode = SimilarityMode::idf) {
    const std::size_t n = sentences.size();
    SentenceGraph g;
    g.n = n;
    g.threshold = threshold;
    g.weights = Matrix(n, n, 0.0);
    const auto vectors = count_vectorize(sentences);
    const IdfTable table =
        mode == SimilarityMode::idf ? compute_idf(sentences) : unit_idf(sentences);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double sim = idf_modified_cosine(vectors[i], vectors[j], table);
            if (sim >= threshold) {
                g.weights(i, j) = sim;
                g.weights(j, i) = sim;
            }
        }
    }
    return g;
}

// Damped centrality iteration. Each node keeps a floor of damping/n; the
// graph term redistributes the rest along column-normalized edge weights.
// Nodes without edges contribute nothing, so the iterate sum can fall
// below one; scores are renormalized to sum to one at the end.
inline CentralityVector power_iteration(const SentenceGraph& graph,
                                        double damping = 0.85,
                                        double tol = 1e-6,
                                        std::size_t max_iter = 100) {
    if (graph.n < 1) throw ConfigError("power_iteration: empty graph");
    if (!(damping > 0.0 && damping < 1.0)) {
        throw ConfigError("power_iteration: damping must lie in (0,1)");
    }
    if (tol <= 0.0) throw ConfigError("power_iteration: tol must be positive");
    if (max_iter < 1) throw ConfigError("power_iteration: max_iter must be >= 1");

    const std::size_t n = graph.n;
    std::vector<double> col_sum(n, 0.0);
    for (std::size_t v = 0; v < n; ++v) {
        double s = 0.0;
        for (std::size_t z = 0; z < n; ++z) s += graph.weights(z, v);
        col_sum[v] = s;
    }

    CentralityVector out;
    out.damping = damping;
    std::vector<double> p(n, 1.0 / static_cast<double>(n));
    std::vector<double> next(n, 0.0);
    const double teleport = damping / static_cast<double>(n);
    for (std::size_t iter = 1; iter <= max_iter; ++iter) {
        for (std::size_t u = 0; u < n; ++u) {
            double acc = 0.0;
            for (std::size_t v = 0; v < n; ++v) {
                const double w = graph.weights(u, v);
                if (w != 0.0) acc += (w / col_sum[v]) * p[v];
            }
            next[u] = teleport + (1.0 - damping) * acc;
        }
        double l1 = 0.0;
        for (std::size_t u = 0; u < n; ++u) l1 += std::abs(next[u] - p[u]);
        p.swap(next);
        out.iterations_used = iter;
        if (l1 < tol) {
            out.converged = true;
            break;
        }
    }

    double sum = 0.0;
    for (double x : p) sum += x;
    for (double& x : p) x /= sum;
    out.scores = std::move(p);
    return out;
}

inline std::vector<RankedSentence> rank_from_centrality(const CentralityVector& c) {
    std::vector<RankedSentence> ranked(c.scores.size());
    for (std::size_t i = 0; i < c.scores.size(); ++i) {
        ranked[i] = {i, c.scores[i]};
    }
    std::sort(ranked.begin(), ranked.end(),
              [](const RankedSentence& a, const RankedSentence& b) {
                  if (a.score != b.score) return a.score > b.score;
                  return a.index < b.index;
              });
    return ranked;
}

inline std::vector<RankedSentence> rank_sentences(const std::vector<Sentence>& sentences,
                                                  const LexRankConfig& cfg = {}) {
    if (sentences.empty()) return {};
    const SentenceGraph g = build_graph(sentences, cfg.threshold, cfg.mode);
    const CentralityVector c = power_iteration(g, cfg.damping, cfg.tol, cfg.max_iter);
    return rank_from_centrality(c);
}

enum class ExtractOrdering { rank, source };

struct Extract {
    std::string text;
    std::size_t token_count = 0;
    // source indices of the included sentences, in output order
    std::vector<std::size_t> indices;
};

// Walks the ranking, taking whole sentences while they fit and cutting the
// first overflowing sentence at the token that lands exactly on the
// budget. Ordering controls presentation only; selection is always by
// rank.
inline Extract select_for_budget(const std::vector<Sentence>& sentences,
                                 const std::vector<RankedSentence>& ranked,
                                 std::size_t budget_tokens = 1024,
                                 ExtractOrdering ordering = ExtractOrdering::rank) {
    if (budget_tokens < 1) {
        throw ConfigError("select_for_budget: budget must be >= 1");
    }
    struct Piece {
        std::size_t index;
        std::string text;
    };
    std::vector<Piece> pieces;
    Extract out;
    std::size_t used = 0;
    for (const auto& r : ranked) {
        const Sentence& s = sentences.at(r.index);
        const auto spans = token_spans(s.text);
        if (used + spans.size() <= budget_tokens) {
            pieces.push_back({r.index, s.text});
            used += spans.size();
            continue;
        }
        const std::size_t keep = budget_tokens - used;
        if (keep > 0) {
            const std::size_t cut = spans[keep - 1].second;
            pieces.push_back({r.index, s.text.substr(0, cut)});
            used += keep;
        }
        break;
    }
    if (ordering == ExtractOrdering::source) {
        std::sort(pieces.begin(), pieces.end(),
                  [](const Piece& a, const Piece& b) { return a.index < b.index; });
    }
    for (std::size_t i = 0; i < pieces.size(); ++i) {
        if (i > 0) out.text += ' ';
        out.text += pieces[i].text;
        out.indices.push_back(pieces[i].index);
    }
    out.token_count = used;
    return out;
}

inline SimilarityMode parse_similarity_mode(const std::string& s) {
    if (s == "idf") return SimilarityMode::idf;
    if (s == "count") return SimilarityMode::count;
    throw ConfigError("unknown similarity mode: " + s);
}

inline ExtractOrdering parse_ordering(const std::string& s) {
    if (s == "rank") return ExtractOrdering::rank;
    if (s == "source") return ExtractOrdering::source;
    throw ConfigError("unknown ordering: " + s);
}

}  // namespace lexsum
