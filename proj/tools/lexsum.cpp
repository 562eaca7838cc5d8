#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lexsum/pipeline.hpp"

using namespace lexsum;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write file: " + path);
    out << content;
    if (!out) throw DataError("write failed: " + path);
}

// CLI flags land on top of the config file; every value is validated by
// the typed getters so errors name the key.
struct KeyedOption {
    CLI::Option* opt = nullptr;
    std::string key;
    std::string value;
};

class OptionSet {
  public:
    void add(CLI::App* cmd, const std::string& flag, const std::string& key,
             const std::string& help) {
        items_.push_back(std::make_unique<KeyedOption>());
        KeyedOption* item = items_.back().get();
        item->key = key;
        item->opt = cmd->add_option(flag, item->value, help);
    }

    void apply(Config& cfg) const {
        for (const auto& item : items_) {
            if (item->opt->count() > 0) cfg.set(item->key, item->value);
        }
    }

  private:
    std::vector<std::unique_ptr<KeyedOption>> items_;
};

std::string format_f1(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"lexsum: extractive-abstractive patent summarization toolkit"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::string seed_value;
    std::string jobs_value;
    auto* config_opt = app.add_option("--config", config_path,
                                      "key=value settings file");
    auto* seed_opt = app.add_option("--seed", seed_value,
                                    "root seed for all randomized stages");
    auto* jobs_opt = app.add_option("--jobs", jobs_value,
                                    "parallel documents for summarize");

    std::function<int()> action;
    const auto base_config = [&]() {
        Config cfg;
        if (config_opt->count() > 0) cfg = Config::from_file(config_path);
        if (seed_opt->count() > 0) cfg.set("seed", seed_value);
        if (jobs_opt->count() > 0) cfg.set("jobs", jobs_value);
        return cfg;
    };

    // summarize
    auto* sum = app.add_subcommand("summarize",
                                   "run the extract-then-abstract pipeline");
    std::string sum_input, sum_text, sum_text_id = "doc", sum_output;
    sum->add_option("--input", sum_input, "JSONL corpus of records");
    sum->add_option("--text", sum_text, "summarize one raw document instead");
    sum->add_option("--id", sum_text_id, "document id used with --text");
    sum->add_option("--output", sum_output, "JSONL output path")->required();
    OptionSet sum_keys;
    sum_keys.add(sum, "--backend", "backend.kind", "toy or remote");
    sum_keys.add(sum, "--model", "backend.model", "toy model weights path");
    sum_keys.add(sum, "--endpoint", "backend.endpoint", "remote endpoint URL");
    sum_keys.add(sum, "--timeout", "backend.timeout_seconds",
                 "remote timeout in seconds");
    sum_keys.add(sum, "--budget", "extract.budget", "extract token budget");
    sum_keys.add(sum, "--output-cap", "summary.output_cap",
                 "summary token cap");
    sum_keys.add(sum, "--ordering", "extract.ordering", "rank or source");
    sum_keys.add(sum, "--threshold", "lexrank.threshold",
                 "similarity threshold");
    sum_keys.add(sum, "--damping", "lexrank.damping", "damping factor");
    sum_keys.add(sum, "--similarity", "lexrank.similarity", "idf or count");
    sum->callback([&] {
        action = [&]() -> int {
            Config cfg = base_config();
            sum_keys.apply(cfg);
            const PipelineConfig p = pipeline_from_config(cfg);
            log_event("command_start",
                      {{"command", "summarize"}, {"seed", p.seed}});
            std::vector<PatentRecord> docs;
            if (sum->count("--text") > 0) {
                PatentRecord rec;
                rec.id = sum_text_id;
                rec.description = sum_text;
                docs.push_back(std::move(rec));
            } else if (sum->count("--input") > 0) {
                docs = load_records(sum_input);
            } else {
                throw ConfigError("summarize needs --input or --text");
            }
            auto backend = make_backend(p);
            const SummarizeRun run = cmd_summarize(docs, sum_output, p, *backend);
            std::cout << "summarized " << run.records.size() << "/"
                      << docs.size() << " documents -> " << sum_output << "\n";
            if (!run.failures.empty()) {
                std::cout << "failed ids:";
                for (const auto& f : run.failures) std::cout << ' ' << f.id;
                std::cout << "\n";
                return 1;
            }
            return 0;
        };
    });

    // rank
    auto* rank = app.add_subcommand("rank", "score sentences of one document");
    std::string rank_input, rank_output;
    rank->add_option("--input", rank_input, "plain text document")->required();
    rank->add_option("--output", rank_output, "CSV output path")->required();
    OptionSet rank_keys;
    rank_keys.add(rank, "--threshold", "lexrank.threshold",
                  "similarity threshold");
    rank_keys.add(rank, "--damping", "lexrank.damping", "damping factor");
    rank_keys.add(rank, "--similarity", "lexrank.similarity", "idf or count");
    rank->callback([&] {
        action = [&]() -> int {
            Config cfg = base_config();
            rank_keys.apply(cfg);
            const PipelineConfig p = pipeline_from_config(cfg);
            log_event("command_start", {{"command", "rank"}, {"seed", p.seed}});
            const auto rows = rank_document(slurp(rank_input), p);
            write_file(rank_output, rank_csv(rows));
            std::cout << "ranked " << rows.size() << " sentences -> "
                      << rank_output << "\n";
            return 0;
        };
    });

    // split
    auto* split_cmd = app.add_subcommand("split",
                                         "partition a corpus 70/20/10");
    std::string split_input, split_manifest, split_outdir;
    split_cmd->add_option("--input", split_input, "JSONL corpus")->required();
    split_cmd->add_option("--manifest", split_manifest,
                          "domain manifest for validation");
    split_cmd->add_option("--outdir", split_outdir, "output directory")
        ->required();
    OptionSet split_keys;
    split_keys.add(split_cmd, "--train", "split.train", "train fraction");
    split_keys.add(split_cmd, "--test", "split.test", "test fraction");
    split_keys.add(split_cmd, "--val", "split.val", "validation fraction");
    split_cmd->callback([&] {
        action = [&]() -> int {
            Config cfg = base_config();
            split_keys.apply(cfg);
            SplitSpec spec;
            spec.train_frac = cfg.get_double("split.train", 0.70);
            spec.test_frac = cfg.get_double("split.test", 0.20);
            spec.val_frac = cfg.get_double("split.val", 0.10);
            spec.seed = cfg.get_seed("seed", 0);
            log_event("command_start",
                      {{"command", "split"}, {"seed", spec.seed}});
            std::vector<PatentRecord> records;
            if (split_cmd->count("--manifest") > 0) {
                const DomainManifest manifest = load_manifest(split_manifest);
                records = load_records(split_input, &manifest);
            } else {
                records = load_records(split_input);
            }
            const SplitResult result = split(records, spec);
            std::filesystem::create_directories(split_outdir);
            write_records(split_outdir + "/train.jsonl", result.train);
            write_records(split_outdir + "/test.jsonl", result.test);
            write_records(split_outdir + "/validation.jsonl",
                          result.validation);
            std::cout << "split " << records.size() << " records -> "
                      << result.train.size() << " train, "
                      << result.test.size() << " test, "
                      << result.validation.size() << " validation in "
                      << split_outdir << "\n";
            return 0;
        };
    });

    // stats
    auto* stats_cmd = app.add_subcommand("stats", "corpus length statistics");
    std::string stats_input, stats_output;
    stats_cmd->add_option("--input", stats_input, "JSONL corpus")->required();
    stats_cmd->add_option("--output", stats_output, "JSON output path")
        ->required();
    stats_cmd->callback([&] {
        action = [&]() -> int {
            Config cfg = base_config();
            log_event("command_start", {{"command", "stats"},
                                        {"seed", cfg.get_seed("seed", 0)}});
            const auto records = load_records(stats_input);
            const CorpusStats stats = corpus_stats(records);
            write_file(stats_output, corpus_stats_json(stats).dump() + "\n");
            std::cout << "stats for " << stats.n_records << " records -> "
                      << stats_output << "\n";
            return 0;
        };
    });

    // train-toy
    auto* tt = app.add_subcommand("train-toy",
                                  "train the bundled desk-scale model");
    std::string tt_input, tt_model_out, tt_history_out;
    tt->add_option("--input", tt_input, "JSONL training corpus")->required();
    tt->add_option("--model-out", tt_model_out, "weights output path")
        ->required();
    tt->add_option("--history-out", tt_history_out, "loss CSV output path")
        ->required();
    OptionSet tt_keys;
    tt_keys.add(tt, "--epochs", "train.epochs", "training epochs");
    tt_keys.add(tt, "--lr", "train.lr", "learning rate");
    tt_keys.add(tt, "--patience", "train.patience", "early stop patience");
    tt_keys.add(tt, "--monitor", "train.monitor", "val_loss or train_loss");
    tt_keys.add(tt, "--optimizer", "train.optimizer", "sgd or adam");
    tt_keys.add(tt, "--min-freq", "vocab.min_freq", "vocabulary cutoff");
    tt_keys.add(tt, "--val-fraction", "train.val_fraction",
                "held-out fraction");
    tt_keys.add(tt, "--lora-rank", "lora.rank", "adapter rank");
    tt_keys.add(tt, "--lora-alpha", "lora.alpha", "adapter scale");
    tt->callback([&] {
        action = [&]() -> int {
            Config cfg = base_config();
            tt_keys.apply(cfg);
            const ToyTrainSpec spec = toy_train_from_config(cfg);
            log_event("command_start",
                      {{"command", "train-toy"}, {"seed", spec.seed}});
            const auto records = load_records(tt_input);
            ToyTrainResult result = train_toy(records, spec);
            save_model(result.model, tt_model_out);
            write_file(tt_history_out, history_csv(result.history));
            log_event("training_complete",
                      {{"epochs", result.history.epochs.size()},
                       {"stop_epoch", result.history.stop_epoch},
                       {"stop_reason", result.history.stop_reason},
                       {"best_epoch", result.history.best_epoch}});
            std::cout << "trained " << result.history.epochs.size()
                      << " epochs (" << result.history.stop_reason
                      << " at epoch " << result.history.stop_epoch << ", best "
                      << result.history.best_epoch << ") -> " << tt_model_out
                      << "\n";
            return 0;
        };
    });

    // eval
    auto* eval_cmd = app.add_subcommand("eval",
                                        "score candidate/reference pairs");
    std::string eval_input, eval_output;
    eval_cmd->add_option("--input", eval_input,
                         "JSONL pairs with id, candidate, reference")
        ->required();
    eval_cmd->add_option("--output", eval_output, "CSV output path")
        ->required();
    OptionSet eval_keys;
    eval_keys.add(eval_cmd, "--model-id", "eval.model_id", "row label");
    eval_keys.add(eval_cmd, "--embeddings", "eval.embeddings",
                  "token embedding table path");
    eval_cmd->callback([&] {
        action = [&]() -> int {
            Config cfg = base_config();
            eval_keys.apply(cfg);
            log_event("command_start", {{"command", "eval"},
                                        {"seed", cfg.get_seed("seed", 0)}});
            const auto pairs = load_eval_pairs(eval_input);
            MetricsConfig mc;
            mc.model_id = cfg.get_string("eval.model_id", "model");
            mc.rouge1 = cfg.get_bool("metrics.rouge1", true);
            mc.rouge2 = cfg.get_bool("metrics.rouge2", true);
            mc.rougeL = cfg.get_bool("metrics.rougeL", true);
            mc.rougeLsum = cfg.get_bool("metrics.rougeLsum", true);
            mc.meteor = cfg.get_bool("metrics.meteor", true);
            mc.meteor_options.stem_match =
                cfg.get_bool("metrics.meteor_stem", true);
            EmbeddingTable table;
            const std::string emb_path = cfg.get_string("eval.embeddings", "");
            if (!emb_path.empty()) {
                table = load_embeddings(emb_path);
                mc.embeddings = &table;
            }
            const EvalReport report = evaluate_corpus(pairs, mc);
            write_file(eval_output, report_csv(report));
            std::cout << "evaluated " << report.n_pairs << " pairs as "
                      << report.model_id;
            if (report.has_rouge1) {
                std::cout << " (rouge1_f " << format_f1(report.rouge1.f1) << ")";
            }
            std::cout << " -> " << eval_output << "\n";
            return 0;
        };
    });

    // report
    auto* rep = app.add_subcommand("report", "merge eval CSVs into Markdown");
    std::vector<std::string> rep_inputs;
    std::string rep_output;
    rep->add_option("--input", rep_inputs, "eval CSV files")->required();
    rep->add_option("--output", rep_output, "Markdown output path")->required();
    rep->callback([&] {
        action = [&]() -> int {
            Config cfg = base_config();
            log_event("command_start", {{"command", "report"},
                                        {"seed", cfg.get_seed("seed", 0)}});
            const auto rows = cmd_report(rep_inputs, rep_output);
            std::cout << "merged " << rows.size() << " report rows -> "
                      << rep_output << "\n";
            return 0;
        };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        return action ? action() : 2;
    } catch (const ConfigError& e) {
        log_event("error", {{"kind", "config"}, {"message", e.what()}});
        std::cout << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        log_event("error", {{"kind", "run"}, {"message", e.what()}});
        std::cout << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        log_event("error", {{"kind", "unexpected"}, {"message", e.what()}});
        std::cout << "error: " << e.what() << "\n";
        return 1;
    }
}
