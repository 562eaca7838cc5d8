#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "lexsum/errors.hpp"
#include "lexsum/porter.hpp"
#include "lexsum/preprocess.hpp"

namespace lexsum {

struct MetricResult {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

inline MetricResult make_metric(double precision, double recall) {
    MetricResult r;
    r.precision = precision;
    r.recall = recall;
    if (precision + recall > 0.0) {
        r.f1 = 2.0 * precision * recall / (precision + recall);
    }
    return r;
}

// Scoring tokenization: lowercase, punctuation stripped, stopwords kept.
inline std::vector<std::string> metric_tokenize(const std::string& text) {
    PreprocessConfig cfg;
    cfg.lowercase = true;
    cfg.remove_stopwords = false;
    cfg.stem = false;
    return tokenize_words(text, cfg);
}

inline MetricResult rouge_n(const std::vector<std::string>& candidate,
                            const std::vector<std::string>& reference,
                            std::size_t n) {
    if (n < 1) throw ConfigError("rouge_n: n must be >= 1");
    const auto ngram_counts = [n](const std::vector<std::string>& tokens) {
        std::map<std::string, std::size_t> counts;
        if (tokens.size() >= n) {
            for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
                std::string key;
                for (std::size_t t = 0; t < n; ++t) {
                    if (t > 0) key += '\x1f';
                    key += tokens[i + t];
                }
                ++counts[key];
            }
        }
        return counts;
    };
    const auto cand = ngram_counts(candidate);
    const auto ref = ngram_counts(reference);
    std::size_t cand_total = 0, ref_total = 0, overlap = 0;
    for (const auto& [key, c] : cand) cand_total += c;
    for (const auto& [key, c] : ref) ref_total += c;
    for (const auto& [key, c] : cand) {
        const auto it = ref.find(key);
        if (it != ref.end()) overlap += std::min(c, it->second);
    }
    const double p = cand_total ? static_cast<double>(overlap) / cand_total : 0.0;
    const double r = ref_total ? static_cast<double>(overlap) / ref_total : 0.0;
    return make_metric(p, r);
}

inline std::size_t lcs_length(const std::vector<std::string>& a,
                              const std::vector<std::string>& b) {
    if (a.empty() || b.empty()) return 0;
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            if (a[i - 1] == b[j - 1]) {
                cur[j] = prev[j - 1] + 1;
            } else {
                cur[j] = std::max(prev[j], cur[j - 1]);
            }
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

inline MetricResult rouge_l(const std::vector<std::string>& candidate,
                            const std::vector<std::string>& reference) {
    const std::size_t lcs = lcs_length(candidate, reference);
    const double p = candidate.empty() ? 0.0
                                       : static_cast<double>(lcs) / candidate.size();
    const double r = reference.empty() ? 0.0
                                       : static_cast<double>(lcs) / reference.size();
    return make_metric(p, r);
}

namespace detail {

inline std::vector<std::string> lsum_sentences(const std::string& text) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        const std::size_t nl = text.find('\n', start);
        const std::string piece = nl == std::string::npos
                                      ? text.substr(start)
                                      : text.substr(start, nl - start);
        for (const auto& s : split_sentences(piece)) out.push_back(s.text);
        if (nl == std::string::npos) break;
        start = nl + 1;
    }
    return out;
}

}  // namespace detail

// Index-aligned sentence pairing; precision, recall and f1 are each the
// arithmetic mean of the per-pair values, so the aggregate f1 is not
// recomputed from the aggregate precision and recall.
inline MetricResult rouge_lsum(const std::string& candidate,
                               const std::string& reference) {
    const auto cand = detail::lsum_sentences(candidate);
    const auto ref = detail::lsum_sentences(reference);
    if (cand.empty() || ref.empty()) return MetricResult{};
    const std::size_t pairs = std::min(cand.size(), ref.size());
    MetricResult sum;
    for (std::size_t i = 0; i < pairs; ++i) {
        const MetricResult r = rouge_l(metric_tokenize(cand[i]), metric_tokenize(ref[i]));
        sum.precision += r.precision;
        sum.recall += r.recall;
        sum.f1 += r.f1;
    }
    sum.precision /= static_cast<double>(pairs);
    sum.recall /= static_cast<double>(pairs);
    sum.f1 /= static_cast<double>(pairs);
    return sum;
}

struct MeteorOptions {
    bool stem_match = true;
    // exhaustive chunk-minimization search gives up past this many visited
    // states and falls back to a greedy alignment
    std::size_t search_budget = 200000;
};

struct AlignmentPair {
    std::size_t cand = 0;
    std::size_t ref = 0;
};

struct Alignment {
    std::size_t matches = 0;
    std::size_t chunks = 0;
    std::vector<AlignmentPair> pairs;
    bool exact = true;
};

namespace detail {

inline std::size_t count_chunks(const std::vector<AlignmentPair>& pairs) {
    std::size_t chunks = 0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (i == 0 || pairs[i].cand != pairs[i - 1].cand + 1 ||
            pairs[i].ref != pairs[i - 1].ref + 1) {
            ++chunks;
        }
    }
    return chunks;
}

// Matching compatibility collapses to equality of class keys: the token
// itself, or its stem when stem matching is on.
inline std::vector<std::size_t> class_ids(const std::vector<std::string>& tokens,
                                          bool stem_match,
                                          std::map<std::string, std::size_t>& table) {
    std::vector<std::size_t> ids(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const std::string key = stem_match ? porter_stem(tokens[i]) : tokens[i];
        const auto it = table.find(key);
        if (it == table.end()) {
            const std::size_t id = table.size();
            table.emplace(key, id);
            ids[i] = id;
        } else {
            ids[i] = it->second;
        }
    }
    return ids;
}

struct AlignSearch {
    const std::vector<std::size_t>& cand_cls;
    const std::vector<std::size_t>& ref_cls;
    std::size_t n_classes;
    std::size_t target = 0;

    std::vector<std::size_t> remaining_cand;  // class -> cand occurrences not yet passed
    std::vector<std::size_t> free_ref;        // class -> unmatched ref occurrences
    std::vector<std::vector<std::size_t>> ref_positions;  // class -> ref indices
    std::vector<char> ref_used;
    std::size_t potential = 0;  // sum over classes of min(remaining_cand, free_ref)

    std::vector<AlignmentPair> current;
    std::vector<AlignmentPair> best_pairs;
    std::size_t best_chunks = 0;
    bool found = false;

    std::size_t nodes = 0;
    std::size_t budget = 0;
    bool aborted = false;

    AlignSearch(const std::vector<std::size_t>& cc, const std::vector<std::size_t>& rc,
                std::size_t classes, std::size_t node_budget)
        : cand_cls(cc), ref_cls(rc), n_classes(classes),
          remaining_cand(classes, 0), free_ref(classes, 0),
          ref_positions(classes), ref_used(rc.size(), 0), budget(node_budget) {
        for (const auto c : cand_cls) ++remaining_cand[c];
        for (std::size_t j = 0; j < ref_cls.size(); ++j) {
            ++free_ref[ref_cls[j]];
            ref_positions[ref_cls[j]].push_back(j);
        }
        for (std::size_t c = 0; c < n_classes; ++c) {
            potential += std::min(remaining_cand[c], free_ref[c]);
        }
        target = potential;
        best_chunks = target + 1;
    }

    void take_ref(std::size_t cls) {
        if (free_ref[cls] <= remaining_cand[cls]) --potential;
        --free_ref[cls];
    }
    void give_ref(std::size_t cls) {
        ++free_ref[cls];
        if (free_ref[cls] <= remaining_cand[cls]) ++potential;
    }
    void pass_cand(std::size_t cls) {
        if (remaining_cand[cls] <= free_ref[cls]) --potential;
        --remaining_cand[cls];
    }
    void unpass_cand(std::size_t cls) {
        ++remaining_cand[cls];
        if (remaining_cand[cls] <= free_ref[cls]) ++potential;
    }

    void dfs(std::size_t i, std::size_t matched, std::size_t chunks,
             bool has_last, std::size_t last_i, std::size_t last_j) {
        if (aborted) return;
        if (++nodes > budget) {
            aborted = true;
            return;
        }
        if (matched == target) {
            if (chunks < best_chunks) {
                best_chunks = chunks;
                best_pairs = current;
                found = true;
            }
            return;
        }
        if (chunks >= best_chunks) return;
        if (matched + potential < target) return;
        if (i >= cand_cls.size()) return;

        const std::size_t cls = cand_cls[i];
        if (free_ref[cls] > 0) {
            // chunk-extending choice first so good bounds arrive early
            const bool can_extend = has_last && i == last_i + 1 &&
                                    last_j + 1 < ref_cls.size() &&
                                    !ref_used[last_j + 1] &&
                                    ref_cls[last_j + 1] == cls;
            std::vector<std::size_t> order;
            if (can_extend) order.push_back(last_j + 1);
            for (const std::size_t j : ref_positions[cls]) {
                if (!ref_used[j] && !(can_extend && j == last_j + 1)) {
                    order.push_back(j);
                }
            }
            for (const std::size_t j : order) {
                const bool extends = has_last && i == last_i + 1 && j == last_j + 1;
                ref_used[j] = 1;
                take_ref(cls);
                pass_cand(cls);
                current.push_back({i, j});
                dfs(i + 1, matched + 1, chunks + (extends ? 0 : 1), true, i, j);
                current.pop_back();
                unpass_cand(cls);
                give_ref(cls);
                ref_used[j] = 0;
                if (aborted) return;
            }
        }
        pass_cand(cls);
        dfs(i + 1, matched, chunks, has_last, last_i, last_j);
        unpass_cand(cls);
    }

    // Greedy fallback: walk candidates in order, prefer the ref position
    // that extends the current chunk, otherwise the smallest free one.
    std::vector<AlignmentPair> greedy() {
        std::fill(ref_used.begin(), ref_used.end(), 0);
        std::vector<std::size_t> free_count(n_classes);
        for (std::size_t c = 0; c < n_classes; ++c) {
            free_count[c] = ref_positions[c].size();
        }
        std::vector<AlignmentPair> pairs;
        bool has_last = false;
        std::size_t last_i = 0, last_j = 0;
        for (std::size_t i = 0; i < cand_cls.size(); ++i) {
            const std::size_t cls = cand_cls[i];
            if (free_count[cls] == 0) continue;
            std::size_t pick = ref_cls.size();
            if (has_last && i == last_i + 1 && last_j + 1 < ref_cls.size() &&
                !ref_used[last_j + 1] && ref_cls[last_j + 1] == cls) {
                pick = last_j + 1;
            } else {
                for (const std::size_t j : ref_positions[cls]) {
                    if (!ref_used[j]) {
                        pick = j;
                        break;
                    }
                }
            }
            ref_used[pick] = 1;
            --free_count[cls];
            pairs.push_back({i, pick});
            has_last = true;
            last_i = i;
            last_j = pick;
        }
        return pairs;
    }
};

}  // namespace detail

// Maximum-size unigram alignment; among maximal alignments the chunk count
// is minimized exactly (within the search budget, then greedily).
inline Alignment align_unigrams(const std::vector<std::string>& candidate,
                                const std::vector<std::string>& reference,
                                const MeteorOptions& opts = {}) {
    std::map<std::string, std::size_t> table;
    const auto cand_cls = detail::class_ids(candidate, opts.stem_match, table);
    const auto ref_cls = detail::class_ids(reference, opts.stem_match, table);

    detail::AlignSearch search(cand_cls, ref_cls, table.size(), opts.search_budget);
    Alignment out;
    out.matches = search.target;
    if (search.target == 0) {
        out.chunks = 0;
        return out;
    }
    search.dfs(0, 0, 0, false, 0, 0);
    if (search.found) {
        out.pairs = search.best_pairs;
        out.chunks = search.best_chunks;
        out.exact = !search.aborted;
    } else {
        out.pairs = search.greedy();
        out.chunks = detail::count_chunks(out.pairs);
        out.exact = false;
    }
    return out;
}

inline double meteor(const std::vector<std::string>& candidate,
                     const std::vector<std::string>& reference,
                     const MeteorOptions& opts = {}) {
    const Alignment alignment = align_unigrams(candidate, reference, opts);
    if (alignment.matches == 0) return 0.0;
    const double m = static_cast<double>(alignment.matches);
    const double p = m / static_cast<double>(candidate.size());
    const double r = m / static_cast<double>(reference.size());
    const double f_mean = 10.0 * p * r / (r + 9.0 * p);
    const double frag = static_cast<double>(alignment.chunks) / m;
    const double penalty = 0.5 * frag * frag * frag;
    return f_mean * (1.0 - penalty);
}

struct EmbeddingTable {
    std::map<std::string, std::vector<double>> vectors;
    std::size_t width = 0;

    const std::vector<double>* find(const std::string& token) const {
        const auto it = vectors.find(token);
        return it == vectors.end() ? nullptr : &it->second;
    }
};

// One token per line followed by whitespace-separated reals.
inline EmbeddingTable load_embeddings(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open embedding file: " + path);
    EmbeddingTable table;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::istringstream parts(line);
        std::string token;
        parts >> token;
        std::vector<double> vec;
        double v;
        while (parts >> v) vec.push_back(v);
        if (vec.empty()) {
            throw DataError("embedding line " + std::to_string(line_no) +
                            " has no values");
        }
        if (table.width == 0) {
            table.width = vec.size();
        } else if (vec.size() != table.width) {
            throw DataError("embedding line " + std::to_string(line_no) +
                            " has width " + std::to_string(vec.size()) +
                            ", expected " + std::to_string(table.width));
        }
        if (!table.vectors.emplace(token, std::move(vec)).second) {
            throw DataError("duplicate embedding token at line " +
                            std::to_string(line_no) + ": " + token);
        }
    }
    return table;
}

inline double cosine_similarity(const std::vector<double>& a,
                                const std::vector<double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    const std::size_t n = std::min(a.size(), b.size());
    for (std::size_t i = 0; i < n; ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

struct EmbedScore {
    MetricResult result;
    bool candidate_all_oov = false;
    bool reference_all_oov = false;
};

// Greedy matching: each token on one side scores its best cosine match on
// the other; out-of-vocabulary tokens carry a zero vector.
inline EmbedScore embed_score(const std::vector<std::string>& candidate,
                              const std::vector<std::string>& reference,
                              const EmbeddingTable& emb) {
    if (emb.width < 1) throw ConfigError("embed_score: embedding width must be >= 1");
    EmbedScore out;
    const auto any_known = [&](const std::vector<std::string>& tokens) {
        for (const auto& t : tokens) {
            if (emb.find(t) != nullptr) return true;
        }
        return false;
    };
    out.candidate_all_oov = !any_known(candidate);
    out.reference_all_oov = !any_known(reference);
    if (out.candidate_all_oov || out.reference_all_oov) return out;

    const std::vector<double> zero(emb.width, 0.0);
    const auto vec_of = [&](const std::string& t) -> const std::vector<double>& {
        const auto* v = emb.find(t);
        return v ? *v : zero;
    };
    const auto side_mean = [&](const std::vector<std::string>& from,
                               const std::vector<std::string>& to) {
        double sum = 0.0;
        for (const auto& ft : from) {
            double best = 0.0;
            for (const auto& tt : to) {
                best = std::max(best, cosine_similarity(vec_of(ft), vec_of(tt)));
            }
            sum += best;
        }
        return sum / static_cast<double>(from.size());
    };
    const double recall = side_mean(reference, candidate);
    const double precision = side_mean(candidate, reference);
    out.result = make_metric(precision, recall);
    return out;
}

struct EvalPair {
    std::string id;
    std::string candidate;
    std::string reference;
};

struct MetricsConfig {
    std::string model_id = "model";
    bool rouge1 = true;
    bool rouge2 = true;
    bool rougeL = true;
    bool rougeLsum = true;
    bool meteor = true;
    MeteorOptions meteor_options;
    const EmbeddingTable* embeddings = nullptr;
};

struct EvalReport {
    std::string model_id;
    std::size_t n_pairs = 0;
    MetricResult rouge1, rouge2, rougeL, rougeLsum;
    double meteor = 0.0;
    MetricResult embed;
    bool has_rouge1 = false, has_rouge2 = false, has_rougeL = false;
    bool has_rougeLsum = false, has_meteor = false, has_embed = false;
};

// Macro-average over pairs, accumulated in id order so reports do not
// depend on input ordering.
inline EvalReport evaluate_corpus(const std::vector<EvalPair>& pairs,
                                  const MetricsConfig& cfg = {}) {
    if (pairs.empty()) throw DataError("evaluate_corpus: no pairs supplied");
    std::vector<std::size_t> order(pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return pairs[a].id < pairs[b].id;
    });

    EvalReport report;
    report.model_id = cfg.model_id;
    report.n_pairs = pairs.size();
    report.has_rouge1 = cfg.rouge1;
    report.has_rouge2 = cfg.rouge2;
    report.has_rougeL = cfg.rougeL;
    report.has_rougeLsum = cfg.rougeLsum;
    report.has_meteor = cfg.meteor;
    report.has_embed = cfg.embeddings != nullptr;

    const auto add = [](MetricResult& acc, const MetricResult& r) {
        acc.precision += r.precision;
        acc.recall += r.recall;
        acc.f1 += r.f1;
    };
    for (const std::size_t idx : order) {
        const auto cand = metric_tokenize(pairs[idx].candidate);
        const auto ref = metric_tokenize(pairs[idx].reference);
        if (cfg.rouge1) add(report.rouge1, rouge_n(cand, ref, 1));
        if (cfg.rouge2) add(report.rouge2, rouge_n(cand, ref, 2));
        if (cfg.rougeL) add(report.rougeL, rouge_l(cand, ref));
        if (cfg.rougeLsum) {
            add(report.rougeLsum, rouge_lsum(pairs[idx].candidate, pairs[idx].reference));
        }
        if (cfg.meteor) report.meteor += meteor(cand, ref, cfg.meteor_options);
        if (cfg.embeddings) {
            add(report.embed, embed_score(cand, ref, *cfg.embeddings).result);
        }
    }
    const double n = static_cast<double>(pairs.size());
    const auto scale = [n](MetricResult& r) {
        r.precision /= n;
        r.recall /= n;
        r.f1 /= n;
    };
    scale(report.rouge1);
    scale(report.rouge2);
    scale(report.rougeL);
    scale(report.rougeLsum);
    report.meteor /= n;
    scale(report.embed);
    return report;
}

namespace detail {

inline std::string format_score(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace detail

inline std::string report_csv(const EvalReport& r) {
    std::string out =
        "model_id,n_pairs,rouge1_f,rouge2_f,rougeL_f,rougeLsum_f,meteor,embed_f\n";
    out += r.model_id + ',' + std::to_string(r.n_pairs) + ',';
    out += (r.has_rouge1 ? detail::format_score(r.rouge1.f1) : "") + std::string(",");
    out += (r.has_rouge2 ? detail::format_score(r.rouge2.f1) : "") + std::string(",");
    out += (r.has_rougeL ? detail::format_score(r.rougeL.f1) : "") + std::string(",");
    out += (r.has_rougeLsum ? detail::format_score(r.rougeLsum.f1) : "") + std::string(",");
    out += (r.has_meteor ? detail::format_score(r.meteor) : "") + std::string(",");
    out += (r.has_embed ? detail::format_score(r.embed.f1) : "") + std::string("\n");
    return out;
}

inline std::string report_markdown(const EvalReport& r) {
    std::string out;
    out += "# Evaluation report\n\n";
    out += "ROUGE and embedding columns report F1; precision and recall are\n";
    out += "retained in the API results.\n\n";
    out += "| model_id | n_pairs | rouge1_f | rouge2_f | rougeL_f | rougeLsum_f "
           "| meteor | embed_f |\n";
    out += "|---|---|---|---|---|---|---|---|\n";
    const auto cell = [](bool has, double v) {
        return has ? detail::format_score(v) : std::string("-");
    };
    out += "| " + r.model_id + " | " + std::to_string(r.n_pairs) + " | " +
           cell(r.has_rouge1, r.rouge1.f1) + " | " + cell(r.has_rouge2, r.rouge2.f1) +
           " | " + cell(r.has_rougeL, r.rougeL.f1) + " | " +
           cell(r.has_rougeLsum, r.rougeLsum.f1) + " | " +
           cell(r.has_meteor, r.meteor) + " | " + cell(r.has_embed, r.embed.f1) +
           " |\n";
    return out;
}

}  // namespace lexsum
