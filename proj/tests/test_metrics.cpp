#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "lexsum/metrics.hpp"
#include "lexsum/rng.hpp"
#include "oracles.hpp"

using namespace lexsum;

namespace {

std::vector<std::string> random_tokens(Rng& rng, std::size_t max_len,
                                       const std::vector<std::string>& vocab) {
    std::vector<std::string> out(rng.below(max_len + 1));
    for (auto& t : out) t = vocab[rng.below(vocab.size())];
    return out;
}

void check_f1_algebra(const MetricResult& r) {
    if (r.precision + r.recall == 0.0) {
        CHECK(r.f1 == 0.0);
    } else {
        const double want = 2.0 * r.precision * r.recall / (r.precision + r.recall);
        CHECK(std::abs(r.f1 - want) <= 1e-12);
    }
}

}  // namespace

TEST_CASE("rouge-1 on the mat sentences") {
    const auto cand = metric_tokenize("The cat sat on the mat.");
    const auto ref = metric_tokenize("The cat is on the mat.");
    REQUIRE(cand.size() == 6);
    const auto r = rouge_n(cand, ref, 1);
    CHECK(r.precision == Catch::Approx(5.0 / 6.0).margin(1e-12));
    CHECK(r.recall == Catch::Approx(5.0 / 6.0).margin(1e-12));
    CHECK(r.f1 == Catch::Approx(5.0 / 6.0).margin(1e-12));
}

TEST_CASE("rouge-2 on the mat sentences") {
    const auto cand = metric_tokenize("The cat sat on the mat.");
    const auto ref = metric_tokenize("The cat is on the mat.");
    const auto r = rouge_n(cand, ref, 2);
    CHECK(r.precision == Catch::Approx(3.0 / 5.0).margin(1e-12));
    CHECK(r.recall == Catch::Approx(3.0 / 5.0).margin(1e-12));
}

TEST_CASE("rouge-n degenerate inputs") {
    const std::vector<std::string> some = {"pump", "seal"};
    const std::vector<std::string> none;
    CHECK(rouge_n(none, some, 1).f1 == 0.0);
    CHECK(rouge_n(some, none, 1).f1 == 0.0);
    CHECK(rouge_n(some, some, 3).f1 == 0.0);
    CHECK(rouge_n(some, some, 1).f1 == 1.0);
    CHECK(rouge_n(some, some, 2).f1 == 1.0);
    CHECK_THROWS_AS(rouge_n(some, some, 0), ConfigError);
}

TEST_CASE("rouge-n clips repeated n-grams") {
    const std::vector<std::string> cand = {"pump", "pump", "pump"};
    const std::vector<std::string> ref = {"pump"};
    const auto r = rouge_n(cand, ref, 1);
    CHECK(r.precision == Catch::Approx(1.0 / 3.0).margin(1e-12));
    CHECK(r.recall == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("rouge-l on reordered tokens") {
    const auto cand = metric_tokenize("the cat sat");
    const auto ref = metric_tokenize("the sat cat");
    const auto r = rouge_l(cand, ref);
    CHECK(r.precision == Catch::Approx(2.0 / 3.0).margin(1e-12));
    CHECK(r.recall == Catch::Approx(2.0 / 3.0).margin(1e-12));
    CHECK(r.f1 == Catch::Approx(2.0 / 3.0).margin(1e-12));
}

TEST_CASE("lcs agrees with exhaustive search") {
    const std::vector<std::string> vocab = {"a", "b", "c", "d"};
    Rng rng(411);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto a = random_tokens(rng, 8, vocab);
        const auto b = random_tokens(rng, 8, vocab);
        REQUIRE(lcs_length(a, b) == oracles::lcs_length_bruteforce(a, b));
    }
}

TEST_CASE("precision and recall swap with the argument order") {
    const std::vector<std::string> vocab = {"pump", "seal", "rotor", "flow", "valve"};
    Rng rng(412);
    for (int trial = 0; trial < 200; ++trial) {
        const auto a = random_tokens(rng, 10, vocab);
        const auto b = random_tokens(rng, 10, vocab);
        for (std::size_t n = 1; n <= 2; ++n) {
            const auto fwd = rouge_n(a, b, n);
            const auto rev = rouge_n(b, a, n);
            CHECK(fwd.precision == rev.recall);
            CHECK(fwd.recall == rev.precision);
            CHECK(fwd.f1 == Catch::Approx(rev.f1).margin(1e-15));
        }
        const auto fwd = rouge_l(a, b);
        const auto rev = rouge_l(b, a);
        CHECK(fwd.precision == rev.recall);
        CHECK(fwd.recall == rev.precision);
    }
}

TEST_CASE("scores stay in range and obey the f1 identity") {
    const std::vector<std::string> vocab = {"pump", "seal", "rotor", "flow"};
    Rng rng(413);
    for (int trial = 0; trial < 300; ++trial) {
        const auto a = random_tokens(rng, 9, vocab);
        const auto b = random_tokens(rng, 9, vocab);
        for (const auto& r : {rouge_n(a, b, 1), rouge_n(a, b, 2), rouge_l(a, b)}) {
            CHECK(r.precision >= 0.0);
            CHECK(r.precision <= 1.0);
            CHECK(r.recall >= 0.0);
            CHECK(r.recall <= 1.0);
            CHECK(r.f1 >= 0.0);
            CHECK(r.f1 <= 1.0);
            check_f1_algebra(r);
        }
        const double m = meteor(a, b);
        CHECK(m >= 0.0);
        CHECK(m <= 1.0);
    }
}

TEST_CASE("recall never drops when the candidate gains a reference token") {
    const std::vector<std::string> vocab = {"pump", "seal", "rotor"};
    Rng rng(414);
    for (int trial = 0; trial < 300; ++trial) {
        auto cand = random_tokens(rng, 8, vocab);
        auto ref = random_tokens(rng, 8, vocab);
        if (ref.empty()) continue;
        const double before = rouge_n(cand, ref, 1).recall;
        cand.push_back(ref[rng.below(ref.size())]);
        const double after = rouge_n(cand, ref, 1).recall;
        CHECK(after >= before - 1e-15);
    }
}

TEST_CASE("rouge-lsum equals rouge-l for one identical sentence") {
    const std::string text = "A pump moves fluid through the housing.";
    const auto lsum = rouge_lsum(text, text);
    const auto tokens = metric_tokenize(text);
    const auto ll = rouge_l(tokens, tokens);
    CHECK(lsum.precision == ll.precision);
    CHECK(lsum.recall == ll.recall);
    CHECK(lsum.f1 == ll.f1);
}

TEST_CASE("rouge-lsum averages per-sentence scores") {
    const std::string cand = "The pump spins. Cats purr.";
    const std::string ref = "The pump spins. Dogs bark.";
    const auto r = rouge_lsum(cand, ref);
    CHECK(r.precision == Catch::Approx(0.5).margin(1e-12));
    CHECK(r.recall == Catch::Approx(0.5).margin(1e-12));
    CHECK(r.f1 == Catch::Approx(0.5).margin(1e-12));
}

TEST_CASE("rouge-lsum ignores unpaired trailing sentences") {
    const std::string ref = "The pump spins. Dogs bark.";
    const auto base = rouge_lsum("The pump spins. Cats purr.", ref);
    const auto extra =
        rouge_lsum("The pump spins. Cats purr. A third sentence here.", ref);
    CHECK(extra.precision == base.precision);
    CHECK(extra.recall == base.recall);
    CHECK(extra.f1 == base.f1);
}

TEST_CASE("rouge-lsum treats newlines as sentence boundaries") {
    const auto r = rouge_lsum("first line\nsecond line", "first line\nsecond line");
    CHECK(r.f1 == Catch::Approx(1.0).margin(1e-12));
    const auto mixed = rouge_lsum("first line\nsecond line", "first line\nother words");
    CHECK(mixed.f1 == Catch::Approx(0.5).margin(1e-12));
}

TEST_CASE("rouge-lsum returns zeros when a side has no sentences") {
    const auto r = rouge_lsum("", "Some reference text.");
    CHECK(r.precision == 0.0);
    CHECK(r.recall == 0.0);
    CHECK(r.f1 == 0.0);
}

TEST_CASE("meteor on identical four-token texts") {
    const auto tokens = metric_tokenize("the pump moves fluid");
    REQUIRE(tokens.size() == 4);
    CHECK(meteor(tokens, tokens) == Catch::Approx(127.0 / 128.0).margin(1e-12));
}

TEST_CASE("meteor with one shared token out of two") {
    const auto cand = metric_tokenize("the pump");
    const auto ref = metric_tokenize("the seal");
    CHECK(meteor(cand, ref) == Catch::Approx(0.25).margin(1e-12));
}

TEST_CASE("meteor is zero without matches") {
    CHECK(meteor({"pump"}, {"seal"}) == 0.0);
    CHECK(meteor({}, {"seal"}) == 0.0);
    CHECK(meteor({"pump"}, {}) == 0.0);
}

TEST_CASE("stem matching can be toggled") {
    MeteorOptions on;
    MeteorOptions off;
    off.stem_match = false;
    CHECK(meteor({"pumping"}, {"pumped"}, on) == Catch::Approx(0.5).margin(1e-12));
    CHECK(meteor({"pumping"}, {"pumped"}, off) == 0.0);
}

TEST_CASE("alignment picks the fewest chunks among maximal matchings") {
    const std::vector<std::string> cand = {"w1", "w2", "w3"};
    const std::vector<std::string> ref = {"w2", "w3", "w1"};
    const auto a = align_unigrams(cand, ref);
    CHECK(a.matches == 3);
    CHECK(a.chunks == 2);
    CHECK(a.exact);
}

TEST_CASE("alignment agrees with exhaustive enumeration") {
    const std::vector<std::string> vocab = {"pump",  "pumps", "sealed", "seal",
                                            "rotor", "flow",  "spin"};
    Rng rng(415);
    for (int trial = 0; trial < 500; ++trial) {
        const auto cand = random_tokens(rng, 6, vocab);
        const auto ref = random_tokens(rng, 6, vocab);
        const bool stem = trial % 2 == 0;
        MeteorOptions opts;
        opts.stem_match = stem;
        const auto got = align_unigrams(cand, ref, opts);
        const auto want = oracles::brute_force_alignment(cand, ref, stem);
        REQUIRE(got.matches == want.matches);
        REQUIRE(got.chunks == want.chunks);
        REQUIRE(got.exact);
        REQUIRE(got.pairs.size() == got.matches);
    }
}

TEST_CASE("embedding scores on identical and disjoint token lists") {
    EmbeddingTable emb;
    emb.width = 3;
    emb.vectors["pump"] = {1.0, 0.0, 0.0};
    emb.vectors["seal"] = {0.0, 1.0, 0.0};
    emb.vectors["flow"] = {0.0, 0.0, 1.0};

    const auto same = embed_score({"pump", "seal"}, {"pump", "seal"}, emb);
    CHECK(same.result.precision == Catch::Approx(1.0).margin(1e-12));
    CHECK(same.result.recall == Catch::Approx(1.0).margin(1e-12));
    CHECK(same.result.f1 == Catch::Approx(1.0).margin(1e-12));
    CHECK_FALSE(same.candidate_all_oov);

    const auto disjoint = embed_score({"pump"}, {"seal"}, emb);
    CHECK(disjoint.result.precision == 0.0);
    CHECK(disjoint.result.recall == 0.0);
    CHECK_FALSE(disjoint.candidate_all_oov);
    CHECK_FALSE(disjoint.reference_all_oov);
}

TEST_CASE("embedding score on a small hand-checked case") {
    const double s = 1.0 / std::sqrt(2.0);
    EmbeddingTable emb;
    emb.width = 2;
    emb.vectors["ta"] = {1.0, 0.0};
    emb.vectors["tb"] = {0.0, 1.0};
    emb.vectors["tc"] = {s, s};
    const auto got = embed_score({"ta", "tc"}, {"tb", "tc"}, emb);
    const double want = (1.0 + s) / 2.0;
    CHECK(got.result.recall == Catch::Approx(want).margin(1e-12));
    CHECK(got.result.precision == Catch::Approx(want).margin(1e-12));
}

TEST_CASE("out-of-vocabulary handling") {
    EmbeddingTable emb;
    emb.width = 2;
    emb.vectors["pump"] = {1.0, 0.0};

    const auto all_oov = embed_score({"rotor", "valve"}, {"pump"}, emb);
    CHECK(all_oov.candidate_all_oov);
    CHECK_FALSE(all_oov.reference_all_oov);
    CHECK(all_oov.result.precision == 0.0);
    CHECK(all_oov.result.recall == 0.0);
    CHECK(all_oov.result.f1 == 0.0);

    const auto empty = embed_score({}, {"pump"}, emb);
    CHECK(empty.candidate_all_oov);

    // a partially known candidate still matches on the known token
    const auto partial = embed_score({"pump", "rotor"}, {"pump"}, emb);
    CHECK(partial.result.recall == Catch::Approx(1.0).margin(1e-12));
    CHECK(partial.result.precision == Catch::Approx(0.5).margin(1e-12));
    check_f1_algebra(partial.result);
}

TEST_CASE("embedding file loading") {
    const std::string path = "/tmp/lexsum_emb_test.txt";
    {
        std::ofstream out(path);
        out << "pump 1.0 0.0\n";
        out << "\n";
        out << "seal 0.0 1.0\n";
    }
    const auto emb = load_embeddings(path);
    CHECK(emb.width == 2);
    CHECK(emb.vectors.size() == 2);
    REQUIRE(emb.find("pump") != nullptr);
    CHECK((*emb.find("pump"))[0] == 1.0);

    {
        std::ofstream out(path);
        out << "pump 1.0 0.0\n";
        out << "seal 1.0\n";
    }
    CHECK_THROWS_AS(load_embeddings(path), DataError);
    {
        std::ofstream out(path);
        out << "pump 1.0\n";
        out << "pump 2.0\n";
    }
    CHECK_THROWS_AS(load_embeddings(path), DataError);
    CHECK_THROWS_AS(load_embeddings("/tmp/lexsum_no_such_emb.txt"), DataError);
    std::remove(path.c_str());
}

TEST_CASE("corpus evaluation on identical pairs") {
    EmbeddingTable emb;
    emb.width = 2;
    emb.vectors["the"] = {1.0, 0.5};
    emb.vectors["pump"] = {0.5, 1.0};
    emb.vectors["spins"] = {0.3, 0.9};
    MetricsConfig cfg;
    cfg.model_id = "identity";
    cfg.embeddings = &emb;
    std::vector<EvalPair> pairs;
    for (int i = 0; i < 3; ++i) {
        EvalPair p;
        p.id = "p" + std::to_string(i);
        p.candidate = "The pump spins.";
        p.reference = "The pump spins.";
        pairs.push_back(p);
    }
    const auto report = evaluate_corpus(pairs, cfg);
    CHECK(report.n_pairs == 3);
    CHECK(report.rouge1.f1 == Catch::Approx(1.0).margin(1e-12));
    CHECK(report.rouge2.f1 == Catch::Approx(1.0).margin(1e-12));
    CHECK(report.rougeL.f1 == Catch::Approx(1.0).margin(1e-12));
    CHECK(report.rougeLsum.f1 == Catch::Approx(1.0).margin(1e-12));
    CHECK(report.meteor > 0.9);
    CHECK(report.embed.f1 == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("corpus evaluation rejects an empty pair list") {
    CHECK_THROWS_AS(evaluate_corpus({}, MetricsConfig{}), DataError);
}

TEST_CASE("report bytes do not depend on pair order") {
    std::vector<EvalPair> pairs = {
        {"b", "A pump moves fluid.", "The pump moves fluid quickly."},
        {"a", "The seal holds pressure.", "A seal keeps the pressure inside."},
        {"c", "Rotors spin.", "The rotor spins in the housing."},
    };
    MetricsConfig cfg;
    cfg.model_id = "m";
    const auto csv1 = report_csv(evaluate_corpus(pairs, cfg));
    std::swap(pairs[0], pairs[2]);
    std::swap(pairs[1], pairs[2]);
    const auto csv2 = report_csv(evaluate_corpus(pairs, cfg));
    CHECK(csv1 == csv2);
}

TEST_CASE("report layout") {
    std::vector<EvalPair> pairs = {{"p1", "The pump spins.", "The pump spins."}};
    MetricsConfig cfg;
    cfg.model_id = "toy-v1";
    const auto report = evaluate_corpus(pairs, cfg);
    const auto csv = report_csv(report);
    const std::string header =
        "model_id,n_pairs,rouge1_f,rouge2_f,rougeL_f,rougeLsum_f,meteor,embed_f\n";
    REQUIRE(csv.substr(0, header.size()) == header);
    const std::string row = csv.substr(header.size());
    CHECK(row.substr(0, 9) == "toy-v1,1,");
    CHECK(std::count(row.begin(), row.end(), ',') == 7);
    // no embedding table configured, so the last field is empty
    CHECK(row.substr(row.size() - 2) == ",\n");

    const auto md = report_markdown(report);
    CHECK(md.find("F1") != std::string::npos);
    CHECK(md.find("| model_id | n_pairs |") != std::string::npos);
    CHECK(md.find("| toy-v1 | 1 |") != std::string::npos);
    CHECK(md.find(" - |") != std::string::npos);
    CHECK(md.find("1.000000") != std::string::npos);
}
