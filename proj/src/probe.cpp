#include "icr/probe.hpp"

#include <cmath>
#include <random>

namespace icr {

namespace {

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow.
double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

struct HiddenCache {
    Matrix input;      // input to the affine map
    Matrix xhat;       // normalized pre-activation
    std::vector<double> inv_std;
    Matrix bn_out;     // gamma * xhat + beta, the leaky-ReLU input
    Matrix mask;       // dropout scale per element (0 or 1/(1-p))
};

struct ForwardCache {
    std::vector<HiddenCache> hidden;
    Matrix head_input;
    std::vector<double> logits;
    BatchStats stats;
};

void affine(const DenseLayer& layer, const Matrix& in, Matrix& out) {
    const std::size_t rows = in.rows(), n_out = layer.weight.rows(), n_in = layer.weight.cols();
    out = Matrix(rows, n_out);
    for (std::size_t b = 0; b < rows; ++b) {
        const double* x = in.row(b).data();
        double* y = out.row(b).data();
        for (std::size_t o = 0; o < n_out; ++o) {
            const double* w = layer.weight.row(o).data();
            double acc = layer.bias[o];
            for (std::size_t i = 0; i < n_in; ++i) acc += w[i] * x[i];
            y[o] = acc;
        }
    }
}

ForwardCache run_forward(const ProbeModel& model, const Matrix& batch, Mode mode,
                         std::uint64_t dropout_seed, bool keep_cache) {
    const auto& cfg = model.config;
    if (batch.cols() != cfg.input_dim) {
        throw ProbeError("feature width " + std::to_string(batch.cols()) + " does not match probe input " +
                         std::to_string(cfg.input_dim));
    }
    const std::size_t rows = batch.rows();
    if (mode == Mode::train && !model.norms.empty() && rows < 2) {
        throw ProbeError("train-mode batch needs at least 2 rows for batch statistics");
    }

    ForwardCache cache;
    std::mt19937_64 rng(dropout_seed);
    std::bernoulli_distribution keep(1.0 - cfg.dropout);
    const double keep_scale = 1.0 / (1.0 - cfg.dropout);

    Matrix current = batch;
    for (std::size_t k = 0; k < model.norms.size(); ++k) {
        const auto& bn = model.norms[k];
        Matrix z;
        affine(model.dense[k], current, z);
        const std::size_t width = z.cols();

        HiddenCache h;
        h.xhat = Matrix(rows, width);
        h.bn_out = Matrix(rows, width);
        h.inv_std.resize(width);
        std::vector<double> mean(width, 0.0), var(width, 0.0);
        if (mode == Mode::train) {
            for (std::size_t b = 0; b < rows; ++b)
                for (std::size_t o = 0; o < width; ++o) mean[o] += z(b, o);
            for (double& m : mean) m /= static_cast<double>(rows);
            for (std::size_t b = 0; b < rows; ++b)
                for (std::size_t o = 0; o < width; ++o) {
                    const double c = z(b, o) - mean[o];
                    var[o] += c * c;
                }
            std::vector<double> unbiased(width);
            for (std::size_t o = 0; o < width; ++o) {
                unbiased[o] = var[o] / static_cast<double>(rows - 1);
                var[o] /= static_cast<double>(rows);
            }
            cache.stats.mean.push_back(mean);
            cache.stats.var_unbiased.push_back(std::move(unbiased));
        } else {
            mean = bn.running_mean;
            var = bn.running_var;
        }
        for (std::size_t o = 0; o < width; ++o) h.inv_std[o] = 1.0 / std::sqrt(var[o] + cfg.batchnorm_eps);

        Matrix next(rows, width);
        if (mode == Mode::train) h.mask = Matrix(rows, width, 1.0);
        for (std::size_t b = 0; b < rows; ++b) {
            for (std::size_t o = 0; o < width; ++o) {
                const double xh = (z(b, o) - mean[o]) * h.inv_std[o];
                const double y = bn.gamma[o] * xh + bn.beta[o];
                h.xhat(b, o) = xh;
                h.bn_out(b, o) = y;
                double a = y > 0.0 ? y : cfg.leaky_slope * y;
                if (mode == Mode::train && cfg.dropout > 0.0) {
                    const double m = keep(rng) ? keep_scale : 0.0;
                    h.mask(b, o) = m;
                    a *= m;
                }
                next(b, o) = a;
            }
        }
        if (keep_cache) {
            h.input = std::move(current);
            cache.hidden.push_back(std::move(h));
        }
        current = std::move(next);
    }

    Matrix out;
    affine(model.dense.back(), current, out);
    cache.logits.resize(rows);
    for (std::size_t b = 0; b < rows; ++b) cache.logits[b] = out(b, 0);
    if (keep_cache) cache.head_input = std::move(current);
    return cache;
}

void check_labels(std::span<const int> labels, std::size_t rows) {
    if (labels.size() != rows) throw ProbeError("label count does not match batch rows");
    for (int y : labels) {
        if (y != 0 && y != 1) throw ProbeError("labels must be 0 or 1");
    }
}

double mean_bce(std::span<const double> logits, std::span<const int> labels) {
    double loss = 0.0;
    for (std::size_t b = 0; b < logits.size(); ++b) {
        loss += softplus(logits[b]) - static_cast<double>(labels[b]) * logits[b];
    }
    return loss / static_cast<double>(logits.size());
}

}  // namespace

ProbeConfig ProbeConfig::logistic_regression(std::size_t input_dim) {
    ProbeConfig c;
    c.input_dim = input_dim;
    c.hidden_widths.clear();
    c.dropout = 0.0;
    c.optimizer = Optimizer::sgd;
    c.batch_size = 1;
    return c;
}

void ProbeConfig::validate() const {
    if (input_dim == 0) throw ProbeError("probe input dimension must be positive");
    for (auto w : hidden_widths)
        if (w == 0) throw ProbeError("hidden widths must be positive");
    auto in_unit = [](double v) { return v >= 0.0 && v < 1.0; };
    if (!in_unit(dropout)) throw ProbeError("dropout must lie in [0, 1)");
    if (!(learning_rate > 0.0)) throw ProbeError("learning rate must be positive");
    if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) throw ProbeError("plateau factor must lie in (0, 1)");
    if (!(batchnorm_momentum > 0.0 && batchnorm_momentum <= 1.0)) throw ProbeError("batchnorm momentum must lie in (0, 1]");
    if (!in_unit(validation_fraction)) throw ProbeError("validation fraction must lie in [0, 1)");
    if (batch_size == 0) throw ProbeError("batch size must be positive");
}

nlohmann::json to_json(const ProbeConfig& c) {
    return {{"input_dim", c.input_dim},
            {"hidden_widths", c.hidden_widths},
            {"leaky_slope", c.leaky_slope},
            {"dropout", c.dropout},
            {"learning_rate", c.learning_rate},
            {"optimizer", c.optimizer == Optimizer::adam ? "adam" : "sgd"},
            {"adam_beta1", c.adam_beta1},
            {"adam_beta2", c.adam_beta2},
            {"adam_eps", c.adam_eps},
            {"batch_size", c.batch_size},
            {"epochs", c.epochs},
            {"plateau_factor", c.plateau_factor},
            {"plateau_patience", c.plateau_patience},
            {"plateau_threshold", c.plateau_threshold},
            {"batchnorm_momentum", c.batchnorm_momentum},
            {"batchnorm_eps", c.batchnorm_eps},
            {"validation_fraction", c.validation_fraction},
            {"seed", c.seed}};
}

ProbeConfig probe_config_from_json(const nlohmann::json& j) {
    ProbeConfig c;
    c.input_dim = j.at("input_dim").get<std::size_t>();
    c.hidden_widths = j.at("hidden_widths").get<std::vector<std::size_t>>();
    c.leaky_slope = j.at("leaky_slope").get<double>();
    c.dropout = j.at("dropout").get<double>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.optimizer = j.at("optimizer").get<std::string>() == "sgd" ? Optimizer::sgd : Optimizer::adam;
    c.adam_beta1 = j.at("adam_beta1").get<double>();
    c.adam_beta2 = j.at("adam_beta2").get<double>();
    c.adam_eps = j.at("adam_eps").get<double>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.epochs = j.at("epochs").get<std::size_t>();
    c.plateau_factor = j.at("plateau_factor").get<double>();
    c.plateau_patience = j.at("plateau_patience").get<std::size_t>();
    c.plateau_threshold = j.at("plateau_threshold").get<double>();
    c.batchnorm_momentum = j.at("batchnorm_momentum").get<double>();
    c.batchnorm_eps = j.at("batchnorm_eps").get<double>();
    c.validation_fraction = j.at("validation_fraction").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

std::vector<std::span<double>> ProbeModel::parameters() {
    std::vector<std::span<double>> out;
    for (std::size_t k = 0; k < dense.size(); ++k) {
        out.emplace_back(dense[k].weight.data());
        out.emplace_back(dense[k].bias);
        if (k < norms.size()) {
            out.emplace_back(norms[k].gamma);
            out.emplace_back(norms[k].beta);
        }
    }
    return out;
}

std::vector<std::span<const double>> ProbeModel::parameters() const {
    std::vector<std::span<const double>> out;
    for (std::size_t k = 0; k < dense.size(); ++k) {
        out.emplace_back(dense[k].weight.data());
        out.emplace_back(dense[k].bias);
        if (k < norms.size()) {
            out.emplace_back(norms[k].gamma);
            out.emplace_back(norms[k].beta);
        }
    }
    return out;
}

std::vector<std::span<double>> ProbeModel::buffers() {
    std::vector<std::span<double>> out;
    for (auto& bn : norms) {
        out.emplace_back(bn.running_mean);
        out.emplace_back(bn.running_var);
    }
    return out;
}

std::vector<std::span<const double>> ProbeModel::buffers() const {
    std::vector<std::span<const double>> out;
    for (const auto& bn : norms) {
        out.emplace_back(bn.running_mean);
        out.emplace_back(bn.running_var);
    }
    return out;
}

std::size_t ProbeModel::parameter_size() const {
    std::size_t n = 0;
    for (auto block : parameters()) n += block.size();
    return n;
}

ProbeModel init_probe(const ProbeConfig& config) {
    config.validate();
    ProbeModel model;
    model.config = config;
    std::mt19937_64 rng(derive_seed(config.seed, 1));
    const double gain_sq = 2.0 / (1.0 + config.leaky_slope * config.leaky_slope);

    std::size_t fan_in = config.input_dim;
    std::vector<std::size_t> widths = config.hidden_widths;
    widths.push_back(1);
    for (std::size_t k = 0; k < widths.size(); ++k) {
        const std::size_t fan_out = widths[k];
        std::normal_distribution<double> normal(0.0, std::sqrt(gain_sq / static_cast<double>(fan_in)));
        DenseLayer layer{Matrix(fan_out, fan_in), std::vector<double>(fan_out, 0.0)};
        for (double& w : layer.weight.data()) w = normal(rng);
        model.dense.push_back(std::move(layer));
        if (k + 1 < widths.size()) {
            model.norms.push_back({std::vector<double>(fan_out, 1.0), std::vector<double>(fan_out, 0.0),
                                   std::vector<double>(fan_out, 0.0), std::vector<double>(fan_out, 1.0)});
        }
        fan_in = fan_out;
    }
    return model;
}

std::vector<double> forward_logits(const ProbeModel& model, const Matrix& batch, Mode mode,
                                   std::uint64_t dropout_seed) {
    return run_forward(model, batch, mode, dropout_seed, false).logits;
}

std::vector<Matrix> relu_inputs(const ProbeModel& model, const Matrix& batch, Mode mode,
                                std::uint64_t dropout_seed) {
    auto cache = run_forward(model, batch, mode, dropout_seed, true);
    std::vector<Matrix> out;
    for (auto& h : cache.hidden) out.push_back(std::move(h.bn_out));
    return out;
}

std::vector<double> forward(const ProbeModel& model, const Matrix& batch, Mode mode,
                            std::uint64_t dropout_seed) {
    auto logits = forward_logits(model, batch, mode, dropout_seed);
    for (double& z : logits) z = sigmoid(z);
    return logits;
}

LossAndGrad loss_and_grad(const ProbeModel& model, const Matrix& batch, std::span<const int> labels,
                          std::uint64_t dropout_seed) {
    check_labels(labels, batch.rows());
    auto cache = run_forward(model, batch, Mode::train, dropout_seed, true);
    const std::size_t rows = batch.rows();
    const double inv_rows = 1.0 / static_cast<double>(rows);

    LossAndGrad result;
    result.loss = mean_bce(cache.logits, labels);
    result.gradient.assign(model.parameter_size(), 0.0);

    // Offsets of each layer's blocks inside the flat gradient.
    std::vector<std::size_t> offsets;
    {
        std::size_t off = 0;
        for (auto block : model.parameters()) {
            offsets.push_back(off);
            off += block.size();
        }
    }

    auto backprop_dense = [&](const DenseLayer& layer, const Matrix& input, const Matrix& dout,
                              std::size_t weight_block, Matrix* din) {
        const std::size_t n_out = layer.weight.rows(), n_in = layer.weight.cols();
        double* dw = result.gradient.data() + offsets[weight_block];
        double* db = result.gradient.data() + offsets[weight_block + 1];
        if (din) *din = Matrix(rows, n_in);
        for (std::size_t b = 0; b < rows; ++b) {
            const double* x = input.row(b).data();
            for (std::size_t o = 0; o < n_out; ++o) {
                const double g = dout(b, o);
                if (g == 0.0) continue;
                db[o] += g;
                double* dwr = dw + o * n_in;
                for (std::size_t i = 0; i < n_in; ++i) dwr[i] += g * x[i];
                if (din) {
                    const double* w = layer.weight.row(o).data();
                    double* dx = din->row(b).data();
                    for (std::size_t i = 0; i < n_in; ++i) dx[i] += g * w[i];
                }
            }
        }
    };

    Matrix dlogits(rows, 1);
    for (std::size_t b = 0; b < rows; ++b) {
        dlogits(b, 0) = (sigmoid(cache.logits[b]) - static_cast<double>(labels[b])) * inv_rows;
    }

    // Block index of each dense layer's weight: hidden layers own 4 blocks.
    auto weight_block = [&](std::size_t k) { return 4 * std::min(k, model.norms.size()); };

    Matrix dh;
    const std::size_t head = model.dense.size() - 1;
    backprop_dense(model.dense[head], cache.head_input, dlogits, weight_block(head),
                   head > 0 ? &dh : nullptr);

    for (std::size_t k = model.norms.size(); k-- > 0;) {
        const auto& h = cache.hidden[k];
        const auto& bn = model.norms[k];
        const std::size_t width = bn.gamma.size();
        double* dgamma = result.gradient.data() + offsets[weight_block(k) + 2];
        double* dbeta = result.gradient.data() + offsets[weight_block(k) + 3];

        Matrix dxhat(rows, width);
        for (std::size_t b = 0; b < rows; ++b) {
            for (std::size_t o = 0; o < width; ++o) {
                double g = dh(b, o) * h.mask(b, o);
                g *= h.bn_out(b, o) > 0.0 ? 1.0 : model.config.leaky_slope;
                dgamma[o] += g * h.xhat(b, o);
                dbeta[o] += g;
                dxhat(b, o) = g * bn.gamma[o];
            }
        }
        Matrix dz(rows, width);
        for (std::size_t o = 0; o < width; ++o) {
            double sum = 0.0, sum_x = 0.0;
            for (std::size_t b = 0; b < rows; ++b) {
                sum += dxhat(b, o);
                sum_x += dxhat(b, o) * h.xhat(b, o);
            }
            for (std::size_t b = 0; b < rows; ++b) {
                dz(b, o) = h.inv_std[o] * inv_rows *
                           (static_cast<double>(rows) * dxhat(b, o) - sum - h.xhat(b, o) * sum_x);
            }
        }
        Matrix dprev;
        backprop_dense(model.dense[k], h.input, dz, weight_block(k), k > 0 ? &dprev : nullptr);
        dh = std::move(dprev);
    }

    result.stats = std::move(cache.stats);
    return result;
}

double eval_loss(const ProbeModel& model, const Matrix& batch, std::span<const int> labels) {
    check_labels(labels, batch.rows());
    return mean_bce(forward_logits(model, batch, Mode::eval), labels);
}

void update_running_stats(ProbeModel& model, const BatchStats& stats) {
    const double m = model.config.batchnorm_momentum;
    for (std::size_t k = 0; k < model.norms.size() && k < stats.mean.size(); ++k) {
        auto& bn = model.norms[k];
        for (std::size_t o = 0; o < bn.running_mean.size(); ++o) {
            bn.running_mean[o] = (1.0 - m) * bn.running_mean[o] + m * stats.mean[k][o];
            bn.running_var[o] = (1.0 - m) * bn.running_var[o] + m * stats.var_unbiased[k][o];
        }
    }
}

double predict(const ProbeModel& model, std::span<const double> feature) {
    if (feature.size() != model.config.input_dim) {
        throw ProbeError("feature width " + std::to_string(feature.size()) + " does not match probe input " +
                         std::to_string(model.config.input_dim));
    }
    const Matrix row(1, feature.size(), std::vector<double>(feature.begin(), feature.end()));
    return forward(model, row, Mode::eval).front();
}

std::size_t param_count(const ProbeModel& model, bool include_batchnorm) {
    std::size_t n = 0;
    for (const auto& layer : model.dense) n += layer.weight.data().size() + layer.bias.size();
    if (include_batchnorm) {
        for (const auto& bn : model.norms) n += bn.gamma.size() + bn.beta.size();
    }
    return n;
}

std::vector<double> flatten_parameters(const ProbeModel& model) {
    std::vector<double> flat;
    flat.reserve(model.parameter_size());
    for (auto block : model.parameters()) flat.insert(flat.end(), block.begin(), block.end());
    return flat;
}

void assign_parameters(ProbeModel& model, std::span<const double> flat) {
    if (flat.size() != model.parameter_size()) throw ProbeError("parameter vector size mismatch");
    std::size_t off = 0;
    for (auto block : model.parameters()) {
        std::copy(flat.begin() + off, flat.begin() + off + block.size(), block.begin());
        off += block.size();
    }
}

void round_to_float(ProbeModel& model) {
    for (auto block : model.parameters())
        for (double& v : block) v = static_cast<double>(static_cast<float>(v));
    for (auto block : model.buffers())
        for (double& v : block) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace icr
