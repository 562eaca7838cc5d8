#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lexsum/backend.hpp"
#include "lexsum/config.hpp"
#include "lexsum/dataset.hpp"
#include "lexsum/errors.hpp"
#include "lexsum/lexrank.hpp"
#include "lexsum/log.hpp"
#include "lexsum/metrics.hpp"
#include "lexsum/model.hpp"
#include "lexsum/preprocess.hpp"
#include "lexsum/training.hpp"

namespace lexsum {

struct PipelineConfig {
    PreprocessConfig preprocess;
    LexRankConfig lexrank;
    std::size_t budget = 1024;
    ExtractOrdering ordering = ExtractOrdering::rank;
    std::string backend_kind = "toy";
    std::string model_path;
    std::string endpoint;
    double timeout_seconds = 60.0;
    std::size_t output_cap = 512;
    std::uint64_t seed = 0;
    std::size_t jobs = 1;
};

inline PipelineConfig pipeline_from_config(const Config& c) {
    PipelineConfig p;
    p.preprocess.lowercase = c.get_bool("preprocess.lowercase", true);
    p.preprocess.remove_stopwords = c.get_bool("preprocess.remove_stopwords", true);
    p.preprocess.stem = c.get_bool("preprocess.stem", false);
    p.lexrank.threshold = c.get_double("lexrank.threshold", 0.2);
    p.lexrank.damping = c.get_double("lexrank.damping", 0.85);
    p.lexrank.tol = c.get_double("lexrank.tol", 1e-6);
    p.lexrank.max_iter = c.get_size("lexrank.max_iter", 100);
    p.lexrank.mode =
        parse_similarity_mode(c.get_string("lexrank.similarity", "idf"));
    p.budget = c.get_size("extract.budget", 1024);
    p.ordering = parse_ordering(c.get_string("extract.ordering", "rank"));
    p.backend_kind = c.get_string("backend.kind", "toy");
    p.model_path = c.get_string("backend.model", "");
    p.endpoint = c.get_string("backend.endpoint", "");
    p.timeout_seconds = c.get_double("backend.timeout_seconds", 60.0);
    p.output_cap = c.get_size("summary.output_cap", 512);
    p.seed = c.get_seed("seed", 0);
    p.jobs = c.get_size("jobs", 1);
    return p;
}

inline std::unique_ptr<SummarizerBackend> make_backend(const PipelineConfig& cfg) {
    if (cfg.backend_kind == "toy") {
        if (cfg.model_path.empty()) {
            throw ConfigError("toy backend needs backend.model");
        }
        return std::make_unique<ToyBackend>(load_model(cfg.model_path));
    }
    if (cfg.backend_kind == "remote") {
        if (cfg.endpoint.empty()) {
            throw ConfigError("remote backend needs backend.endpoint");
        }
        return std::make_unique<RemoteBackend>(
            RemoteConfig{cfg.endpoint, cfg.timeout_seconds});
    }
    throw ConfigError("unknown backend kind: " + cfg.backend_kind +
                      " (valid: toy, remote)");
}

struct SummaryRecord {
    std::string id;
    std::string extract;
    std::size_t extract_tokens = 0;
    std::string summary;
    std::size_t summary_tokens = 0;
    bool degenerate = false;
    double rank_ms = 0.0;       // logged, never serialized
    double summarize_ms = 0.0;  // logged, never serialized
};

inline nlohmann::json summary_record_json(const SummaryRecord& rec) {
    nlohmann::json obj;
    obj["id"] = rec.id;
    obj["extract"] = rec.extract;
    obj["extract_tokens"] = rec.extract_tokens;
    obj["summary"] = rec.summary;
    obj["summary_tokens"] = rec.summary_tokens;
    if (rec.degenerate) obj["degenerate"] = true;
    return obj;
}

inline std::string summary_records_jsonl(const std::vector<SummaryRecord>& recs) {
    std::string out;
    for (const auto& rec : recs) {
        out += summary_record_json(rec).dump();
        out += '\n';
    }
    return out;
}

inline SummaryRecord summarize_document(const std::string& id,
                                        const std::string& text,
                                        const PipelineConfig& cfg,
                                        SummarizerBackend& backend) {
    using clock = std::chrono::steady_clock;
    SummaryRecord rec;
    rec.id = id;
    const auto t0 = clock::now();
    const std::vector<Sentence> sentences =
        preprocess_document(text, cfg.preprocess);
    if (sentences.empty()) {
        throw PipelineError("document " + id + " has no sentences");
    }
    const std::vector<RankedSentence> ranked =
        rank_sentences(sentences, cfg.lexrank);
    const Extract extract =
        select_for_budget(sentences, ranked, cfg.budget, cfg.ordering);
    rec.extract = extract.text;
    rec.extract_tokens = extract.token_count;
    const auto t1 = clock::now();
    rec.rank_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();

    rec.summary = backend.summarize(rec.extract, cfg.output_cap);
    rec.summary_tokens = count_word_tokens(rec.summary);
    rec.degenerate = rec.summary == rec.extract;
    const auto t2 = clock::now();
    rec.summarize_ms = std::chrono::duration<double, std::milli>(t2 - t1).count();

    if (rec.extract_tokens > cfg.budget || rec.summary_tokens > cfg.output_cap) {
        throw PipelineError("budget violated for document " + id);
    }
    return rec;
}

struct DocumentFailure {
    std::string id;
    std::string message;
};

struct SummarizeRun {
    std::vector<SummaryRecord> records;  // sorted by id
    std::vector<DocumentFailure> failures;
};

inline SummarizeRun run_summarize(const std::vector<PatentRecord>& docs,
                                  const PipelineConfig& cfg,
                                  SummarizerBackend& backend) {
    const std::size_t n = docs.size();
    std::vector<SummaryRecord> slots(n);
    std::vector<char> good(n, 0);
    std::vector<DocumentFailure> failures;
    std::mutex failures_mu;
    std::atomic<std::size_t> next{0};

    const auto worker = [&] {
        for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
            const PatentRecord& doc = docs[i];
            try {
                SummaryRecord rec =
                    summarize_document(doc.id, doc.description, cfg, backend);
                log_event("document",
                          {{"id", rec.id},
                           {"extract_tokens", rec.extract_tokens},
                           {"summary_tokens", rec.summary_tokens},
                           {"degenerate", rec.degenerate},
                           {"rank_ms", rec.rank_ms},
                           {"summarize_ms", rec.summarize_ms}});
                slots[i] = std::move(rec);
                good[i] = 1;
            } catch (const Error& e) {
                log_event("document_failed",
                          {{"id", doc.id}, {"error", e.what()}});
                std::lock_guard<std::mutex> lock(failures_mu);
                failures.push_back({doc.id, e.what()});
            }
        }
    };

    const std::size_t jobs = std::max<std::size_t>(1, std::min(cfg.jobs, n));
    if (jobs <= 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (std::size_t j = 0; j < jobs; ++j) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }

    SummarizeRun run;
    for (std::size_t i = 0; i < n; ++i) {
        if (good[i]) run.records.push_back(std::move(slots[i]));
    }
    std::sort(run.records.begin(), run.records.end(),
              [](const SummaryRecord& a, const SummaryRecord& b) {
                  return a.id < b.id;
              });
    std::sort(failures.begin(), failures.end(),
              [](const DocumentFailure& a, const DocumentFailure& b) {
                  return a.id < b.id;
              });
    run.failures = std::move(failures);
    return run;
}

// Re-reads an emitted summary file and replays the budget invariants;
// catches writer bugs before the process reports success.
inline std::size_t verify_summary_file(const std::string& path,
                                       const PipelineConfig& cfg) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PipelineError("verification cannot reopen " + path);
    std::string line;
    std::size_t line_no = 0;
    std::size_t checked = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const nlohmann::json obj = nlohmann::json::parse(line, nullptr, false);
        if (obj.is_discarded() || !obj.is_object()) {
            throw PipelineError("verification: line " + std::to_string(line_no) +
                                " is not a record");
        }
        for (const char* field :
             {"id", "extract", "extract_tokens", "summary", "summary_tokens"}) {
            if (!obj.contains(field)) {
                throw PipelineError("verification: line " +
                                    std::to_string(line_no) + " missing " +
                                    field);
            }
        }
        const auto extract = obj["extract"].get<std::string>();
        const auto summary = obj["summary"].get<std::string>();
        const auto extract_tokens = obj["extract_tokens"].get<std::size_t>();
        const auto summary_tokens = obj["summary_tokens"].get<std::size_t>();
        const std::string id = obj["id"].get<std::string>();
        if (extract_tokens != count_word_tokens(extract) ||
            summary_tokens != count_word_tokens(summary)) {
            throw PipelineError("verification: token counts drifted for " + id);
        }
        if (extract_tokens > cfg.budget || summary_tokens > cfg.output_cap) {
            throw PipelineError("verification: budget exceeded for " + id);
        }
        ++checked;
    }
    return checked;
}

inline SummarizeRun cmd_summarize(const std::vector<PatentRecord>& docs,
                                  const std::string& output_path,
                                  const PipelineConfig& cfg,
                                  SummarizerBackend& backend) {
    SummarizeRun run = run_summarize(docs, cfg, backend);
    std::ofstream out(output_path, std::ios::binary);
    if (!out) throw DataError("cannot write output file: " + output_path);
    out << summary_records_jsonl(run.records);
    out.close();
    const std::size_t verified = verify_summary_file(output_path, cfg);
    if (verified != run.records.size()) {
        throw PipelineError("verification saw " + std::to_string(verified) +
                            " records, expected " +
                            std::to_string(run.records.size()));
    }
    log_event("run_complete", {{"ok", run.records.size()},
                               {"failed", run.failures.size()},
                               {"output", output_path}});
    return run;
}

struct RankRow {
    std::size_t index = 0;
    double score = 0.0;
    std::string text;
};

inline std::vector<RankRow> rank_document(const std::string& text,
                                          const PipelineConfig& cfg) {
    const std::vector<Sentence> sentences =
        preprocess_document(text, cfg.preprocess);
    if (sentences.empty()) throw PipelineError("document has no sentences");
    std::vector<RankRow> rows;
    for (const auto& r : rank_sentences(sentences, cfg.lexrank)) {
        rows.push_back({r.index, r.score, sentences[r.index].text});
    }
    return rows;
}

namespace detail {

inline std::string csv_quote(const std::string& s) {
    std::string out = "\"";
    for (const char c : s) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += '"';
    return out;
}

}  // namespace detail

inline std::string rank_csv(const std::vector<RankRow>& rows) {
    std::string out = "index,score,text\n";
    char buf[32];
    for (const auto& row : rows) {
        std::snprintf(buf, sizeof(buf), "%.6f", row.score);
        out += std::to_string(row.index) + ',' + buf + ',' +
               detail::csv_quote(row.text) + '\n';
    }
    return out;
}

struct ToyTrainSpec {
    TinyModelConfig geometry;
    std::size_t min_freq = 2;
    std::set<std::string> targets = {"q_proj", "k_proj", "v_proj"};
    std::size_t rank = 16;
    double alpha = 32.0;
    TrainingConfig training;
    double val_fraction = 0.0;
    std::uint64_t seed = 0;
};

inline ToyTrainSpec toy_train_from_config(const Config& c) {
    ToyTrainSpec spec;
    spec.geometry.d_model = c.get_size("model.d_model", 32);
    spec.geometry.n_heads = c.get_size("model.n_heads", 2);
    spec.geometry.n_layers = c.get_size("model.n_layers", 2);
    spec.geometry.d_ff = c.get_size("model.d_ff", 128);
    spec.geometry.max_input_tokens = c.get_size("model.max_input_tokens", 1024);
    spec.geometry.max_output_tokens = c.get_size("model.max_output_tokens", 512);
    spec.min_freq = c.get_size("vocab.min_freq", 2);
    spec.rank = c.get_size("lora.rank", 16);
    spec.alpha = c.get_double("lora.alpha", 32.0);
    if (c.has("lora.targets")) {
        spec.targets.clear();
        std::istringstream in(c.get_string("lora.targets", ""));
        std::string item;
        while (std::getline(in, item, ',')) {
            if (!item.empty()) spec.targets.insert(item);
        }
    }
    spec.training.epochs = c.get_size("train.epochs", 100);
    spec.training.lr = c.get_double("train.lr", 1e-4);
    spec.training.patience = c.get_size("train.patience", 7);
    const std::string monitor = c.get_string("train.monitor", "val_loss");
    if (monitor == "val_loss") {
        spec.training.monitor = Monitor::kValLoss;
    } else if (monitor == "train_loss") {
        spec.training.monitor = Monitor::kTrainLoss;
    } else {
        throw ConfigError("config key train.monitor: invalid value '" + monitor +
                          "'");
    }
    const std::string opt = c.get_string("train.optimizer", "sgd");
    if (opt == "sgd") {
        spec.training.optimizer = Optimizer::kSgd;
    } else if (opt == "adam") {
        spec.training.optimizer = Optimizer::kAdam;
    } else {
        throw ConfigError("config key train.optimizer: invalid value '" + opt +
                          "'");
    }
    spec.training.train_embeddings = c.get_bool("train.embeddings", true);
    spec.val_fraction = c.get_double("train.val_fraction", 0.0);
    spec.seed = c.get_seed("seed", 0);
    spec.training.seed = spec.seed;
    return spec;
}

struct ToyTrainResult {
    TinyModel model;
    TrainingHistory history;
};

inline ToyTrainResult train_toy(const std::vector<PatentRecord>& records,
                                const ToyTrainSpec& spec) {
    if (records.empty()) throw DataError("training corpus is empty");
    if (spec.val_fraction < 0.0 || spec.val_fraction >= 1.0) {
        throw ConfigError("train.val_fraction must be in [0, 1)");
    }
    std::vector<std::vector<std::string>> sequences;
    for (const auto& rec : records) {
        sequences.push_back(model_tokenize(rec.description));
        sequences.push_back(model_tokenize(rec.abstract));
    }
    const Vocab vocab = build_vocab(sequences, spec.min_freq);
    ToyTrainResult result{
        init_model(spec.geometry, vocab, derive_seed(spec.seed, "toy_model.init")),
        {}};
    attach_lora(result.model, spec.targets, spec.rank, spec.alpha,
                derive_seed(spec.seed, "toy_model.lora"));

    std::vector<TrainExample> examples;
    for (std::size_t i = 0; i < records.size(); ++i) {
        examples.push_back(encode_example(result.model, sequences[2 * i],
                                          sequences[2 * i + 1]));
    }
    std::vector<TrainExample> train_set = examples;
    std::vector<TrainExample> val_set;
    const auto n_val = static_cast<std::size_t>(
        std::floor(spec.val_fraction * static_cast<double>(examples.size())));
    if (n_val > 0) {
        std::vector<std::size_t> order(examples.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng rng(derive_seed(spec.seed, "toy_model.val_split"));
        rng.shuffle(order);
        train_set.clear();
        for (std::size_t i = 0; i < order.size(); ++i) {
            if (i < order.size() - n_val) {
                train_set.push_back(examples[order[i]]);
            } else {
                val_set.push_back(examples[order[i]]);
            }
        }
    }
    result.history = train(result.model, train_set, val_set, spec.training);
    return result;
}

inline std::vector<EvalPair> load_eval_pairs(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open eval file: " + path);
    std::vector<EvalPair> pairs;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const nlohmann::json obj = nlohmann::json::parse(line, nullptr, false);
        if (obj.is_discarded() || !obj.is_object()) {
            throw DataError("line " + std::to_string(line_no) +
                            ": malformed record");
        }
        EvalPair pair;
        for (const char* field : {"id", "candidate", "reference"}) {
            if (!obj.contains(field)) {
                throw DataError("line " + std::to_string(line_no) +
                                ": missing field " + field);
            }
            if (!obj[field].is_string()) {
                throw DataError("line " + std::to_string(line_no) + ": field " +
                                field + " must be a string");
            }
        }
        pair.id = obj["id"].get<std::string>();
        pair.candidate = obj["candidate"].get<std::string>();
        pair.reference = obj["reference"].get<std::string>();
        pairs.push_back(std::move(pair));
    }
    return pairs;
}

struct ReportRow {
    std::string model_id;
    std::string n_pairs;
    // formatted scores in column order; empty cell when a metric was off
    std::vector<std::string> cells;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (const char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

constexpr const char* kReportHeader =
    "model_id,n_pairs,rouge1_f,rouge2_f,rougeL_f,rougeLsum_f,meteor,embed_f";

}  // namespace detail

inline std::vector<ReportRow> parse_report_csv(const std::string& text,
                                               const std::string& origin) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) {
        throw DataError(origin + ": empty report file");
    }
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != detail::kReportHeader) {
        throw DataError(origin + ": unexpected report header");
    }
    std::vector<ReportRow> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::vector<std::string> cols = detail::split_csv_line(line);
        if (cols.size() != 8) {
            throw DataError(origin + " line " + std::to_string(line_no) +
                            ": expected 8 columns, got " +
                            std::to_string(cols.size()));
        }
        ReportRow row;
        row.model_id = cols[0];
        row.n_pairs = cols[1];
        row.cells.assign(cols.begin() + 2, cols.end());
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::string merged_report_markdown(const std::vector<ReportRow>& rows) {
    std::string out;
    out += "# Evaluation report\n\n";
    out += "ROUGE and embedding columns report F1; precision and recall are\n";
    out += "retained in the API results.\n\n";
    out += "| model_id | n_pairs | rouge1_f | rouge2_f | rougeL_f | rougeLsum_f "
           "| meteor | embed_f |\n";
    out += "|---|---|---|---|---|---|---|---|\n";
    for (const auto& row : rows) {
        out += "| " + row.model_id + " | " + row.n_pairs;
        for (const auto& cell : row.cells) {
            out += " | " + (cell.empty() ? std::string("-") : cell);
        }
        out += " |\n";
    }
    return out;
}

inline std::vector<ReportRow> cmd_report(const std::vector<std::string>& csv_paths,
                                         const std::string& output_path) {
    if (csv_paths.empty()) throw ConfigError("report needs at least one input");
    std::vector<ReportRow> rows;
    for (const auto& path : csv_paths) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw DataError("cannot open report input: " + path);
        std::ostringstream buf;
        buf << in.rdbuf();
        for (auto& row : parse_report_csv(buf.str(), path)) {
            rows.push_back(std::move(row));
        }
    }
    std::ofstream out(output_path, std::ios::binary);
    if (!out) throw DataError("cannot write report file: " + output_path);
    out << merged_report_markdown(rows);
    return rows;
}

inline nlohmann::json distribution_json(const Distribution& d) {
    nlohmann::json obj;
    obj["min"] = d.min;
    obj["max"] = d.max;
    obj["mean"] = d.mean;
    obj["median"] = d.median;
    return obj;
}

inline nlohmann::json corpus_stats_json(const CorpusStats& stats) {
    nlohmann::json obj;
    obj["n_records"] = stats.n_records;
    obj["description"]["words"] = distribution_json(stats.description.words);
    obj["description"]["sentences"] =
        distribution_json(stats.description.sentences);
    obj["abstract"]["words"] = distribution_json(stats.abstract.words);
    obj["abstract"]["sentences"] = distribution_json(stats.abstract.sentences);
    return obj;
}

}  // namespace lexsum
