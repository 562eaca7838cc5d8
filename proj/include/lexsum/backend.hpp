#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "lexsum/errors.hpp"
#include "lexsum/model.hpp"
#include "lexsum/preprocess.hpp"

namespace lexsum {

// Tokenization shared by toy training and inference: case-folded words,
// nothing removed.
inline std::vector<std::string> model_tokenize(const std::string& text) {
    PreprocessConfig cfg;
    cfg.lowercase = true;
    cfg.remove_stopwords = false;
    cfg.stem = false;
    return tokenize_words(text, cfg);
}

class SummarizerBackend {
  public:
    virtual ~SummarizerBackend() = default;
    virtual std::string id() const = 0;
    virtual std::string summarize(const std::string& extract,
                                  std::size_t max_output_tokens) = 0;
};

class ToyBackend : public SummarizerBackend {
  public:
    explicit ToyBackend(TinyModel model) : model_(std::move(model)) {}

    std::string id() const override { return "toy"; }

    std::string summarize(const std::string& extract,
                          std::size_t max_output_tokens) override {
        const std::vector<std::string> words = model_tokenize(extract);
        if (words.empty()) {
            throw PipelineError("empty extract reached the summarizer");
        }
        const std::size_t cap =
            std::min(max_output_tokens, model_.cfg.max_output_tokens);
        const std::vector<int> out =
            greedy_decode(model_, model_.vocab.encode(words), cap);
        std::string summary;
        for (const int id : out) {
            if (!summary.empty()) summary += ' ';
            summary += model_.vocab.token_of(id);
        }
        return summary;
    }

    TinyModel& model() { return model_; }
    const TinyModel& model() const { return model_; }

  private:
    TinyModel model_;
};

struct RemoteConfig {
    std::string url;
    double timeout_seconds = 60.0;
};

namespace detail {

// scheme://host:port and path halves of an endpoint URL
inline std::pair<std::string, std::string> split_url(const std::string& url) {
    const std::size_t scheme = url.find("://");
    if (scheme == std::string::npos) {
        throw ConfigError("endpoint url must include a scheme: " + url);
    }
    const std::size_t slash = url.find('/', scheme + 3);
    if (slash == std::string::npos) return {url, "/"};
    return {url.substr(0, slash), url.substr(slash)};
}

}  // namespace detail

class RemoteBackend : public SummarizerBackend {
  public:
    explicit RemoteBackend(RemoteConfig cfg) : cfg_(std::move(cfg)) {
        if (cfg_.url.empty()) throw ConfigError("endpoint url is empty");
        if (!(cfg_.timeout_seconds > 0.0)) {
            throw ConfigError("timeout must be positive");
        }
    }

    std::string id() const override { return "remote"; }

    std::string summarize(const std::string& extract,
                          std::size_t max_output_tokens) override {
        if (model_tokenize(extract).empty()) {
            throw PipelineError("empty extract reached the summarizer");
        }
        const auto [base, path] = detail::split_url(cfg_.url);
        httplib::Client client(base);
        const auto timeout = std::chrono::milliseconds(
            static_cast<long long>(std::llround(cfg_.timeout_seconds * 1000.0)));
        client.set_connection_timeout(timeout);
        client.set_read_timeout(timeout);
        client.set_write_timeout(timeout);

        nlohmann::json request;
        request["text"] = extract;
        request["max_tokens"] = max_output_tokens;
        const httplib::Result res =
            client.Post(path, request.dump(), "application/json");
        if (!res) {
            throw TransportError("backend unreachable: " + cfg_.url + " (" +
                                 httplib::to_string(res.error()) + ")");
        }
        if (res->status < 200 || res->status >= 300) {
            throw BackendError("backend returned status " +
                               std::to_string(res->status));
        }
        const nlohmann::json body =
            nlohmann::json::parse(res->body, nullptr, false);
        if (body.is_discarded() || !body.is_object() ||
            !body.contains("summary") || !body["summary"].is_string()) {
            throw BackendError("malformed backend response");
        }
        const std::string summary = body["summary"].get<std::string>();
        const std::size_t produced = count_word_tokens(summary);
        if (produced > max_output_tokens) {
            throw OverLengthError("backend returned " + std::to_string(produced) +
                                  " tokens, cap " +
                                  std::to_string(max_output_tokens));
        }
        return summary;
    }

  private:
    RemoteConfig cfg_;
};

}  // namespace lexsum
