#pragma once

// ICR probe: a small MLP binary classifier over pooled per-layer ICR features.
//
//   input -> [affine -> batchnorm -> leaky ReLU -> dropout] x H -> affine -> sigmoid
//
// Output is the probability that the answer is hallucinated (label 1).
// Everything runs in double precision; trained models are rounded to float32
// so that checkpoints reload bit-exactly.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "icr/matrix.hpp"
#include "icr/seed.hpp"

namespace icr {

class ProbeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Optimizer { adam, sgd };

struct ProbeConfig {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden_widths{128, 64, 32};
    double leaky_slope = 0.01;
    double dropout = 0.3;
    double learning_rate = 5e-4;
    Optimizer optimizer = Optimizer::adam;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t batch_size = 32;
    std::size_t epochs = 50;
    double plateau_factor = 0.5;
    std::size_t plateau_patience = 5;
    double plateau_threshold = 1e-4;  // absolute
    double batchnorm_momentum = 0.1;
    double batchnorm_eps = 1e-5;
    double validation_fraction = 0.1;
    std::uint64_t seed = 0;

    /// Single affine layer + sigmoid trained with per-example SGD.
    static ProbeConfig logistic_regression(std::size_t input_dim);

    void validate() const;
};

nlohmann::json to_json(const ProbeConfig& config);
ProbeConfig probe_config_from_json(const nlohmann::json& j);

struct DenseLayer {
    Matrix weight;  // (out, in)
    std::vector<double> bias;
};

struct BatchNormLayer {
    std::vector<double> gamma;
    std::vector<double> beta;
    std::vector<double> running_mean;
    std::vector<double> running_var;
};

struct ProbeModel {
    ProbeConfig config;
    std::vector<DenseLayer> dense;       // hidden layers then the output layer
    std::vector<BatchNormLayer> norms;   // one per hidden layer
    bool training = false;

    /// Trainable parameter blocks in checkpoint order: for each layer, weight
    /// then bias, followed by that layer's batchnorm gamma and beta.
    std::vector<std::span<double>> parameters();
    std::vector<std::span<const double>> parameters() const;

    /// Running statistics in checkpoint order (mean then var per batchnorm).
    std::vector<std::span<double>> buffers();
    std::vector<std::span<const double>> buffers() const;

    std::size_t parameter_size() const;
};

enum class Mode { train, eval };

/// Kaiming-normal weights (fan-in, leaky-ReLU gain), zero biases, gamma = 1,
/// beta = 0, running stats (0, 1). Deterministic in config.seed.
ProbeModel init_probe(const ProbeConfig& config);

/// Batch statistics gathered by a train-mode forward pass.
struct BatchStats {
    std::vector<std::vector<double>> mean;
    std::vector<std::vector<double>> var_unbiased;
};

/// Probabilities for every row of `batch`. Train mode uses batch statistics
/// and a dropout mask drawn from `dropout_seed`; eval mode is pure.
std::vector<double> forward(const ProbeModel& model, const Matrix& batch, Mode mode,
                            std::uint64_t dropout_seed = 0);

/// Logits (pre-sigmoid) for every row.
std::vector<double> forward_logits(const ProbeModel& model, const Matrix& batch, Mode mode,
                                   std::uint64_t dropout_seed = 0);

/// Leaky-ReLU inputs of every hidden layer, one (B, width) matrix each.
std::vector<Matrix> relu_inputs(const ProbeModel& model, const Matrix& batch, Mode mode,
                                std::uint64_t dropout_seed = 0);

struct LossAndGrad {
    double loss = 0.0;
    std::vector<double> gradient;  // flattened in parameters() order
    BatchStats stats;
};

/// Mean binary cross-entropy (natural log) of a train-mode pass and its exact
/// gradient, including through the batch statistics.
LossAndGrad loss_and_grad(const ProbeModel& model, const Matrix& batch,
                          std::span<const int> labels, std::uint64_t dropout_seed);

/// Mean BCE of an eval-mode pass.
double eval_loss(const ProbeModel& model, const Matrix& batch, std::span<const int> labels);

/// Blends batch statistics into the running statistics (momentum update).
void update_running_stats(ProbeModel& model, const BatchStats& stats);

double predict(const ProbeModel& model, std::span<const double> feature);

/// Weights and biases; optionally the batchnorm affine parameters.
std::size_t param_count(const ProbeModel& model, bool include_batchnorm);

std::vector<double> flatten_parameters(const ProbeModel& model);
void assign_parameters(ProbeModel& model, std::span<const double> flat);

/// Rounds every parameter and buffer to float32 precision.
void round_to_float(ProbeModel& model);

// --- training ----------------------------------------------------------------

struct EpochRecord {
    double train_loss = 0.0;
    double val_loss = 0.0;
    double learning_rate = 0.0;
};

using TrainHistory = std::vector<EpochRecord>;

struct TrainResult {
    ProbeModel model;
    TrainHistory history;
};

/// Full training recipe: stratified validation hold-out, shuffled mini-batches,
/// Adam (or SGD), plateau learning-rate schedule on validation loss. Returns
/// the final model in eval mode, rounded to float32.
TrainResult train_probe(const Matrix& features, std::span<const int> labels,
                        const ProbeConfig& config);

/// Reduce-on-plateau schedule (mode "min", absolute threshold).
class PlateauScheduler {
public:
    PlateauScheduler(double factor, std::size_t patience, double threshold)
        : factor_(factor), patience_(patience), threshold_(threshold) {}

    /// Feeds one epoch's metric; returns the (possibly reduced) rate.
    double step(double metric, double lr);

private:
    double factor_;
    std::size_t patience_;
    double threshold_;
    double best_ = 0.0;
    bool has_best_ = false;
    std::size_t bad_epochs_ = 0;
};

/// Per-class shuffled split; each class with at least two members keeps one
/// on each side. Returns (kept, held_out) index lists, ascending.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(
    std::span<const int> labels, double held_out_fraction, std::uint64_t seed);

// --- checkpoints ---------------------------------------------------------------

void save_checkpoint(const ProbeModel& model, const std::filesystem::path& path);
ProbeModel load_checkpoint(const std::filesystem::path& path);

std::vector<std::byte> encode_checkpoint(const ProbeModel& model);
ProbeModel decode_checkpoint(std::span<const std::byte> bytes);

}  // namespace icr
