#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "lexsum/errors.hpp"
#include "lexsum/model.hpp"

namespace lexsum {

struct TrainExample {
    std::vector<int> input_ids;
    std::vector<int> target_ids;
};

inline TrainExample encode_example(const TinyModel& m,
                                   const std::vector<std::string>& input_words,
                                   const std::vector<std::string>& target_words) {
    TrainExample ex;
    ex.input_ids = m.vocab.encode(input_words);
    if (ex.input_ids.size() > m.cfg.max_input_tokens) {
        ex.input_ids.resize(m.cfg.max_input_tokens);
    }
    ex.target_ids = m.vocab.encode(target_words);
    if (ex.target_ids.size() > m.cfg.max_output_tokens) {
        ex.target_ids.resize(m.cfg.max_output_tokens);
    }
    return ex;
}

enum class Monitor { kValLoss, kTrainLoss };
enum class Optimizer { kSgd, kAdam };

struct TrainingConfig {
    std::size_t epochs = 100;
    double lr = 1e-4;
    std::size_t patience = 7;
    Monitor monitor = Monitor::kValLoss;
    Optimizer optimizer = Optimizer::kSgd;
    bool train_embeddings = true;
    std::uint64_t seed = 0;

    void validate() const {
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (!(lr > 0.0)) throw ConfigError("lr must be positive");
        if (patience < 1) throw ConfigError("patience must be >= 1");
    }
};

// Strict-improvement early stopping: training halts once `patience` epochs
// pass without the monitored value dropping below its best.
struct EarlyStopper {
    std::size_t patience = 7;
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0;

    explicit EarlyStopper(std::size_t patience_epochs = 7)
        : patience(patience_epochs) {}

    bool observe(std::size_t epoch, double value) {
        if (value < best) {
            best = value;
            best_epoch = epoch;
            return false;
        }
        return epoch >= best_epoch + patience;
    }
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = std::numeric_limits<double>::quiet_NaN();
};

struct TrainingHistory {
    std::vector<EpochRecord> epochs;
    std::size_t stop_epoch = 0;
    std::string stop_reason;
    std::size_t best_epoch = 0;
    double best_value = std::numeric_limits<double>::infinity();
};

class TrainingDiverged : public Error {
  public:
    TrainingDiverged(const std::string& message, TrainingHistory history)
        : Error(message), history_(std::move(history)) {}

    const TrainingHistory& history() const { return history_; }

  private:
    TrainingHistory history_;
};

namespace detail {

struct AdamState {
    std::size_t t = 0;
    std::vector<Matrix> m;
    std::vector<Matrix> v;
};

inline void apply_sgd(const std::vector<std::pair<Matrix*, Matrix*>>& slots,
                      double lr) {
    for (const auto& [value, grad] : slots) add_scaled(*value, *grad, -lr);
}

inline void apply_adam(const std::vector<std::pair<Matrix*, Matrix*>>& slots,
                       AdamState& state, double lr) {
    constexpr double kBeta1 = 0.9;
    constexpr double kBeta2 = 0.999;
    constexpr double kEps = 1e-8;
    if (state.m.empty()) {
        for (const auto& [value, grad] : slots) {
            state.m.emplace_back(value->rows(), value->cols());
            state.v.emplace_back(value->rows(), value->cols());
        }
    }
    ++state.t;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.t));
    for (std::size_t s = 0; s < slots.size(); ++s) {
        Matrix& value = *slots[s].first;
        const Matrix& grad = *slots[s].second;
        Matrix& m1 = state.m[s];
        Matrix& m2 = state.v[s];
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double g = grad.data()[i];
            m1.data()[i] = kBeta1 * m1.data()[i] + (1.0 - kBeta1) * g;
            m2.data()[i] = kBeta2 * m2.data()[i] + (1.0 - kBeta2) * g * g;
            const double mhat = m1.data()[i] / bc1;
            const double vhat = m2.data()[i] / bc2;
            value.data()[i] -= lr * mhat / (std::sqrt(vhat) + kEps);
        }
    }
}

}  // namespace detail

// One optimizer step per example, in the given order. The reported train
// loss for an epoch is the mean of the losses seen before each update.
inline TrainingHistory train(TinyModel& model,
                             const std::vector<TrainExample>& train_set,
                             const std::vector<TrainExample>& val_set,
                             const TrainingConfig& cfg) {
    cfg.validate();
    if (train_set.empty()) throw DataError("training set is empty");
    if (cfg.monitor == Monitor::kValLoss && val_set.empty()) {
        throw ConfigError("monitoring val_loss requires a validation set");
    }
    const auto slots = collect_trainables(model, cfg.train_embeddings);
    if (slots.empty()) throw ConfigError("model has no trainable parameters");

    detail::AdamState adam;
    EarlyStopper stopper(cfg.patience);
    TrainingHistory history;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        double train_sum = 0.0;
        for (const auto& ex : train_set) {
            zero_grads(model);
            train_sum +=
                teacher_forced_loss(model, ex.input_ids, ex.target_ids, true);
            if (cfg.optimizer == Optimizer::kSgd) {
                detail::apply_sgd(slots, cfg.lr);
            } else {
                detail::apply_adam(slots, adam, cfg.lr);
            }
        }
        const double train_loss = train_sum / static_cast<double>(train_set.size());
        double val_loss = std::numeric_limits<double>::quiet_NaN();
        if (!val_set.empty()) {
            double val_sum = 0.0;
            for (const auto& ex : val_set) {
                val_sum +=
                    teacher_forced_loss(model, ex.input_ids, ex.target_ids, false);
            }
            val_loss = val_sum / static_cast<double>(val_set.size());
        }
        const bool diverged = !std::isfinite(train_loss) ||
                              (!val_set.empty() && !std::isfinite(val_loss));
        if (diverged) {
            history.stop_epoch =
                history.epochs.empty() ? 0 : history.epochs.back().epoch;
            history.stop_reason = "diverged";
            history.best_epoch = stopper.best_epoch;
            history.best_value = stopper.best;
            throw TrainingDiverged(
                "training diverged at epoch " + std::to_string(epoch), history);
        }
        history.epochs.push_back({epoch, train_loss, val_loss});
        const double monitored =
            cfg.monitor == Monitor::kValLoss ? val_loss : train_loss;
        if (stopper.observe(epoch, monitored)) {
            history.stop_epoch = epoch;
            history.stop_reason = "early_stop";
            history.best_epoch = stopper.best_epoch;
            history.best_value = stopper.best;
            return history;
        }
    }
    history.stop_epoch = cfg.epochs;
    history.stop_reason = "max_epochs";
    history.best_epoch = stopper.best_epoch;
    history.best_value = stopper.best;
    return history;
}

inline std::string history_csv(const TrainingHistory& history) {
    std::string out = "epoch,train_loss,val_loss\n";
    char buf[64];
    for (const auto& rec : history.epochs) {
        out += std::to_string(rec.epoch);
        std::snprintf(buf, sizeof(buf), ",%.6f,", rec.train_loss);
        out += buf;
        if (std::isfinite(rec.val_loss)) {
            std::snprintf(buf, sizeof(buf), "%.6f", rec.val_loss);
            out += buf;
        }
        out += '\n';
    }
    return out;
}

}  // namespace lexsum
