#include <algorithm>
#include <cmath>
#include <random>

#include "icr/probe.hpp"

namespace icr {

double PlateauScheduler::step(double metric, double lr) {
    if (!has_best_ || metric < best_ - threshold_) {
        best_ = metric;
        has_best_ = true;
        bad_epochs_ = 0;
        return lr;
    }
    if (++bad_epochs_ > patience_) {
        bad_epochs_ = 0;
        return lr * factor_;
    }
    return lr;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(
    std::span<const int> labels, double held_out_fraction, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> kept, held;
    for (int cls : {0, 1}) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == cls) members.push_back(i);
        std::shuffle(members.begin(), members.end(), rng);
        std::size_t n_out = 0;
        if (held_out_fraction > 0.0 && members.size() >= 2) {
            const auto want = static_cast<std::size_t>(
                std::llround(held_out_fraction * static_cast<double>(members.size())));
            n_out = std::clamp<std::size_t>(want, 1, members.size() - 1);
        }
        held.insert(held.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_out));
        kept.insert(kept.end(), members.begin() + static_cast<std::ptrdiff_t>(n_out), members.end());
    }
    std::sort(kept.begin(), kept.end());
    std::sort(held.begin(), held.end());
    return {std::move(kept), std::move(held)};
}

namespace {

Matrix gather_rows(const Matrix& features, std::span<const std::size_t> idx) {
    Matrix out(idx.size(), features.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) {
        const auto src = features.row(idx[r]);
        std::copy(src.begin(), src.end(), out.row(r).begin());
    }
    return out;
}

std::vector<int> gather_labels(std::span<const int> labels, std::span<const std::size_t> idx) {
    std::vector<int> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(labels[i]);
    return out;
}

class AdamState {
public:
    explicit AdamState(std::size_t n) : m_(n, 0.0), v_(n, 0.0) {}

    void step(std::vector<double>& params, std::span<const double> grad, const ProbeConfig& c,
              double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(c.adam_beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(c.adam_beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i] = c.adam_beta1 * m_[i] + (1.0 - c.adam_beta1) * grad[i];
            v_[i] = c.adam_beta2 * v_[i] + (1.0 - c.adam_beta2) * grad[i] * grad[i];
            const double m_hat = m_[i] / bc1;
            const double v_hat = v_[i] / bc2;
            params[i] -= lr * m_hat / (std::sqrt(v_hat) + c.adam_eps);
        }
    }

private:
    std::vector<double> m_, v_;
    std::size_t t_ = 0;
};

}  // namespace

TrainResult train_probe(const Matrix& features, std::span<const int> labels,
                        const ProbeConfig& config) {
    config.validate();
    if (features.rows() != labels.size()) throw ProbeError("feature rows and label count differ");
    if (features.cols() != config.input_dim) throw ProbeError("feature width does not match probe input");
    if (features.rows() < 10) throw ProbeError("training needs at least 10 examples");
    std::size_t positives = 0;
    for (int y : labels) {
        if (y != 0 && y != 1) throw ProbeError("labels must be 0 or 1");
        positives += static_cast<std::size_t>(y);
    }
    if (positives == 0 || positives == labels.size()) throw ProbeError("single-class labels");
    for (double v : features.data())
        if (!std::isfinite(v)) throw ProbeError("non-finite features");

    const auto [train_idx, val_idx] =
        stratified_split(labels, config.validation_fraction, derive_seed(config.seed, 2));
    const Matrix val_x = gather_rows(features, val_idx);
    const auto val_y = gather_labels(labels, val_idx);

    TrainResult result{init_probe(config), {}};
    ProbeModel& model = result.model;
    model.training = true;

    std::vector<double> params = flatten_parameters(model);
    AdamState adam(params.size());
    PlateauScheduler scheduler(config.plateau_factor, config.plateau_patience, config.plateau_threshold);
    std::mt19937_64 shuffle_rng(derive_seed(config.seed, 3));
    std::mt19937_64 dropout_rng(derive_seed(config.seed, 4));
    const std::size_t min_batch = model.norms.empty() ? 1 : 2;

    double lr = config.learning_rate;
    std::vector<std::size_t> order = train_idx;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double loss_sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t stop = std::min(order.size(), start + config.batch_size);
            // A trailing singleton cannot form batch statistics; it sits out
            // this epoch and is reshuffled into the next.
            if (stop - start < min_batch) continue;
            const std::span<const std::size_t> idx(order.data() + start, stop - start);
            const Matrix x = gather_rows(features, idx);
            const auto y = gather_labels(labels, idx);

            const auto step = loss_and_grad(model, x, y, dropout_rng());
            update_running_stats(model, step.stats);
            if (config.optimizer == Optimizer::adam) {
                adam.step(params, step.gradient, config, lr);
            } else {
                for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * step.gradient[i];
            }
            assign_parameters(model, params);
            loss_sum += step.loss * static_cast<double>(idx.size());
            seen += idx.size();
        }
        const double train_loss = seen > 0 ? loss_sum / static_cast<double>(seen) : 0.0;
        const double val_loss = val_idx.empty() ? train_loss : eval_loss(model, val_x, val_y);
        result.history.push_back({train_loss, val_loss, lr});
        lr = scheduler.step(val_loss, lr);
    }

    model.training = false;
    round_to_float(model);
    return result;
}

}  // namespace icr
