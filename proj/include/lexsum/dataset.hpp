#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lexsum/errors.hpp"
#include "lexsum/preprocess.hpp"
#include "lexsum/rng.hpp"

namespace lexsum {

struct PatentRecord {
    std::string id;
    std::string description;
    std::string abstract;
    std::string domain_code;
    bool few_shot = false;
    std::size_t source_line = 0;
};

struct DomainManifest {
    std::vector<std::string> domains;

    bool contains(const std::string& code) const {
        return std::find(domains.begin(), domains.end(), code) != domains.end();
    }
};

inline DomainManifest load_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open manifest: " + path);
    nlohmann::json doc = nlohmann::json::parse(in, nullptr, false);
    if (doc.is_discarded() || !doc.is_object() || !doc.contains("domains") ||
        !doc["domains"].is_array()) {
        throw DataError("manifest must be an object with a domains array: " + path);
    }
    DomainManifest manifest;
    for (const auto& d : doc["domains"]) {
        if (!d.is_string()) throw DataError("manifest domain codes must be strings");
        manifest.domains.push_back(d.get<std::string>());
    }
    if (manifest.domains.empty()) throw DataError("manifest declares no domains");
    std::set<std::string> seen(manifest.domains.begin(), manifest.domains.end());
    if (seen.size() != manifest.domains.size()) {
        throw DataError("manifest declares a duplicate domain code");
    }
    return manifest;
}

namespace detail {

inline std::string require_string_field(const nlohmann::json& obj,
                                        const std::string& field,
                                        std::size_t line_no) {
    const auto it = obj.find(field);
    if (it == obj.end()) {
        throw DataError("line " + std::to_string(line_no) + ": missing field " + field);
    }
    if (!it->is_string()) {
        throw DataError("line " + std::to_string(line_no) + ": field " + field +
                        " must be a string");
    }
    return it->get<std::string>();
}

}  // namespace detail

inline std::vector<PatentRecord> load_records(const std::string& path,
                                              const DomainManifest* manifest = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open record file: " + path);
    std::vector<PatentRecord> records;
    std::set<std::string> ids;
    std::set<std::string> descriptions;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        nlohmann::json obj = nlohmann::json::parse(line, nullptr, false);
        if (obj.is_discarded() || !obj.is_object()) {
            throw DataError("line " + std::to_string(line_no) + ": malformed record");
        }
        PatentRecord rec;
        rec.id = detail::require_string_field(obj, "id", line_no);
        rec.description = detail::require_string_field(obj, "description", line_no);
        rec.abstract = detail::require_string_field(obj, "abstract", line_no);
        rec.domain_code = detail::require_string_field(obj, "domain_code", line_no);
        rec.source_line = line_no;
        if (obj.contains("few_shot")) {
            if (!obj["few_shot"].is_boolean()) {
                throw DataError("line " + std::to_string(line_no) +
                                ": field few_shot must be a boolean");
            }
            rec.few_shot = obj["few_shot"].get<bool>();
        }
        if (rec.id.empty()) {
            throw DataError("line " + std::to_string(line_no) + ": empty field id");
        }
        if (rec.description.empty()) {
            throw DataError("line " + std::to_string(line_no) +
                            ": empty field description");
        }
        if (rec.abstract.empty()) {
            throw DataError("line " + std::to_string(line_no) + ": empty field abstract");
        }
        if (manifest && !manifest->contains(rec.domain_code)) {
            throw DataError("line " + std::to_string(line_no) +
                            ": domain_code not in manifest: " + rec.domain_code);
        }
        if (!ids.insert(rec.id).second) {
            throw DataError("line " + std::to_string(line_no) + ": duplicate id " +
                            rec.id);
        }
        if (!descriptions.insert(rec.description).second) {
            throw DataError("line " + std::to_string(line_no) +
                            ": duplicate description (id " + rec.id + ")");
        }
        records.push_back(std::move(rec));
    }
    return records;
}

inline std::string record_to_json(const PatentRecord& rec) {
    nlohmann::json obj;
    obj["id"] = rec.id;
    obj["description"] = rec.description;
    obj["abstract"] = rec.abstract;
    obj["domain_code"] = rec.domain_code;
    if (rec.few_shot) obj["few_shot"] = true;
    return obj.dump();
}

inline std::string records_to_jsonl(const std::vector<PatentRecord>& records) {
    std::string out;
    for (const auto& rec : records) {
        out += record_to_json(rec);
        out += '\n';
    }
    return out;
}

inline void write_records(const std::string& path,
                          const std::vector<PatentRecord>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write record file: " + path);
    out << records_to_jsonl(records);
}

struct SplitSpec {
    double train_frac = 0.70;
    double test_frac = 0.20;
    double val_frac = 0.10;
    std::uint64_t seed = 0;
};

struct SplitResult {
    std::vector<PatentRecord> train;
    std::vector<PatentRecord> test;
    std::vector<PatentRecord> validation;
};

// Floor allocation; leftover records go one each to train, then test, then
// validation.
inline SplitResult split(const std::vector<PatentRecord>& records,
                         const SplitSpec& spec) {
    const double sum = spec.train_frac + spec.test_frac + spec.val_frac;
    if (std::abs(sum - 1.0) > 1e-9) {
        throw ConfigError("split fractions must sum to 1");
    }
    if (spec.train_frac < 0.0 || spec.test_frac < 0.0 || spec.val_frac < 0.0) {
        throw ConfigError("split fractions must be non-negative");
    }
    const std::size_t n = records.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(spec.seed);
    rng.shuffle(order);

    std::size_t sizes[3] = {
        static_cast<std::size_t>(std::floor(static_cast<double>(n) * spec.train_frac)),
        static_cast<std::size_t>(std::floor(static_cast<double>(n) * spec.test_frac)),
        static_cast<std::size_t>(std::floor(static_cast<double>(n) * spec.val_frac)),
    };
    std::size_t rem = n - (sizes[0] + sizes[1] + sizes[2]);
    for (std::size_t i = 0; rem > 0; i = (i + 1) % 3, --rem) ++sizes[i];

    SplitResult result;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < sizes[0]; ++i) result.train.push_back(records[order[pos++]]);
    for (std::size_t i = 0; i < sizes[1]; ++i) result.test.push_back(records[order[pos++]]);
    for (std::size_t i = 0; i < sizes[2]; ++i) {
        result.validation.push_back(records[order[pos++]]);
    }
    return result;
}

struct Distribution {
    std::size_t min = 0;
    std::size_t max = 0;
    double mean = 0.0;
    double median = 0.0;
};

struct FieldStats {
    Distribution words;
    Distribution sentences;
};

struct CorpusStats {
    std::size_t n_records = 0;
    FieldStats description;
    FieldStats abstract;
};

namespace detail {

inline Distribution summarize(std::vector<std::size_t> values) {
    Distribution d;
    if (values.empty()) return d;
    std::sort(values.begin(), values.end());
    d.min = values.front();
    d.max = values.back();
    double sum = 0.0;
    for (const auto v : values) sum += static_cast<double>(v);
    d.mean = sum / static_cast<double>(values.size());
    const std::size_t mid = values.size() / 2;
    d.median = values.size() % 2 == 1
                   ? static_cast<double>(values[mid])
                   : (static_cast<double>(values[mid - 1]) +
                      static_cast<double>(values[mid])) /
                         2.0;
    return d;
}

}  // namespace detail

inline CorpusStats corpus_stats(const std::vector<PatentRecord>& records) {
    if (records.empty()) throw DataError("corpus_stats: no records supplied");
    PreprocessConfig raw;
    raw.lowercase = false;
    raw.remove_stopwords = false;
    raw.stem = false;
    std::vector<std::size_t> desc_words, desc_sents, abs_words, abs_sents;
    for (const auto& rec : records) {
        desc_words.push_back(tokenize_words(rec.description, raw).size());
        desc_sents.push_back(split_sentences(rec.description).size());
        abs_words.push_back(tokenize_words(rec.abstract, raw).size());
        abs_sents.push_back(split_sentences(rec.abstract).size());
    }
    CorpusStats stats;
    stats.n_records = records.size();
    stats.description.words = detail::summarize(std::move(desc_words));
    stats.description.sentences = detail::summarize(std::move(desc_sents));
    stats.abstract.words = detail::summarize(std::move(abs_words));
    stats.abstract.sentences = detail::summarize(std::move(abs_sents));
    return stats;
}

// Appends k sampled records per extra domain; the incoming train sequence is
// preserved untouched at the front. Sampling draws a per-domain sub-seed so
// one domain's draw does not disturb another's.
inline std::vector<PatentRecord> few_shot_augment(
    const std::vector<PatentRecord>& train,
    const std::map<std::string, std::vector<PatentRecord>>& pools,
    std::size_t k = 10, std::uint64_t seed = 0) {
    std::vector<PatentRecord> out = train;
    for (const auto& [domain, pool] : pools) {
        if (pool.size() < k) {
            throw DataError("few_shot_augment: domain " + domain + " has " +
                            std::to_string(pool.size()) + " records, need " +
                            std::to_string(k));
        }
        std::vector<std::size_t> order(pool.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng rng(derive_seed(seed, "few_shot." + domain));
        rng.shuffle(order);
        for (std::size_t i = 0; i < k; ++i) {
            PatentRecord rec = pool[order[i]];
            rec.few_shot = true;
            rec.domain_code = domain;
            out.push_back(std::move(rec));
        }
    }
    return out;
}

constexpr std::size_t kEvalSplitSize = 2259;

struct EvalSplits {
    std::vector<PatentRecord> split_1;
    std::vector<PatentRecord> split_2;
};

namespace detail {

inline std::vector<PatentRecord> sample_pool(
    const std::map<std::string, std::vector<PatentRecord>>& pools,
    const std::string& domain, std::size_t want, std::uint64_t seed,
    const std::string& seed_tag, const std::set<std::string>* exclude_ids) {
    std::vector<const PatentRecord*> usable;
    const auto it = pools.find(domain);
    if (it != pools.end()) {
        for (const auto& rec : it->second) {
            if (!exclude_ids || exclude_ids->count(rec.id) == 0) {
                usable.push_back(&rec);
            }
        }
    }
    if (usable.size() < want) {
        throw DataError("eval split: domain " + domain + " has " +
                        std::to_string(usable.size()) + " usable records, need " +
                        std::to_string(want) + " (short " +
                        std::to_string(want - usable.size()) + ")");
    }
    std::vector<std::size_t> order(usable.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(seed, seed_tag));
    rng.shuffle(order);
    std::vector<PatentRecord> out;
    out.reserve(want);
    for (std::size_t i = 0; i < want; ++i) out.push_back(*usable[order[i]]);
    return out;
}

}  // namespace detail

// split_1 draws only from the first declared domain; split_2 spreads the
// same total near-equally over every declared domain, leftovers to the
// earlier ones.
inline EvalSplits build_eval_splits(
    const std::map<std::string, std::vector<PatentRecord>>& pools,
    const DomainManifest& manifest, double scale = 1.0, std::uint64_t seed = 0,
    const std::set<std::string>* exclude_train_ids = nullptr) {
    if (manifest.domains.empty()) throw ConfigError("eval split: empty manifest");
    if (!(scale > 0.0)) throw ConfigError("eval split: scale must be positive");
    const auto total = static_cast<std::size_t>(std::max<long long>(
        1, std::llround(static_cast<double>(kEvalSplitSize) * scale)));

    EvalSplits out;
    out.split_1 = detail::sample_pool(pools, manifest.domains.front(), total, seed,
                                      "eval.split_1", exclude_train_ids);
    const std::size_t n_domains = manifest.domains.size();
    for (std::size_t i = 0; i < n_domains; ++i) {
        const std::size_t want = total / n_domains + (i < total % n_domains ? 1 : 0);
        auto drawn = detail::sample_pool(pools, manifest.domains[i], want, seed,
                                         "eval.split_2." + manifest.domains[i],
                                         exclude_train_ids);
        for (auto& rec : drawn) out.split_2.push_back(std::move(rec));
    }
    return out;
}

}  // namespace lexsum
