#pragma once

// Experiment harness: stratified 80/20 split, multi-seed probe training with
// AUROC averaged over seeds, cross-dataset generalization grids and the
// component / layer-group ablations.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "icr/dump.hpp"
#include "icr/icr_score.hpp"
#include "icr/matrix.hpp"
#include "icr/metrics.hpp"
#include "icr/probe.hpp"
#include "icr/report.hpp"

namespace icr {

struct HarnessConfig {
    ProbeConfig probe;  // input_dim is set per call from the feature width
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    double test_fraction = 0.2;
    std::uint64_t split_seed = 0;

    nlohmann::json to_json() const;
};

struct EvalReport {
    std::string dataset;
    std::string setting;
    double auroc = 0.5;                  // mean over seeds
    std::vector<double> seed_auroc;
    std::vector<double> per_layer_auroc; // on all examples
    std::vector<bool> per_layer_flipped;
    std::vector<double> test_scores;     // first seed's test predictions
    std::vector<int> test_labels;
    std::vector<std::uint64_t> seeds;
};

struct Dataset {
    std::string name;
    Matrix features;
    std::vector<int> labels;
};

struct DataSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

DataSplit train_test_split(std::span<const int> labels, const HarnessConfig& config);

Matrix select_rows(const Matrix& features, std::span<const std::size_t> rows);
std::vector<int> select_labels(std::span<const int> labels, std::span<const std::size_t> rows);

/// Trains one probe per seed on the train split and reports mean test AUROC.
EvalReport evaluate_features(const Matrix& features, std::span<const int> labels,
                             const HarnessConfig& config);

struct GeneralizationMatrix {
    std::vector<std::string> datasets;
    Matrix auroc;  // rows = train dataset, cols = test dataset
    double in_domain = 0.0;
    double cross_domain = 0.0;
    double drop_percent = 0.0;
};

/// 100 * (in - cross) / in.
double relative_drop_percent(double in_domain, double cross_domain);

GeneralizationMatrix generalization_matrix(std::span<const Dataset> datasets, const HarnessConfig& config);

inline constexpr std::array<IcrMode, 3> kAblationModes{IcrMode::none, IcrMode::hs_only, IcrMode::full};

/// Pooled features of one dataset under each ablation setting, in
/// kAblationModes order.
struct ComponentFeatures {
    std::string name;
    std::array<Matrix, 3> features;
    std::vector<int> labels;
};

/// Builds ComponentFeatures one record at a time.
class ComponentFeatureBuilder {
public:
    ComponentFeatureBuilder(std::string name, std::size_t top_k, PoolScope scope = PoolScope::answer)
        : name_(std::move(name)), top_k_(top_k), scope_(scope) {}

    void add(const ActivationRecord& record);
    ComponentFeatures finish() const;

private:
    std::string name_;
    std::size_t top_k_;
    PoolScope scope_;
    std::size_t width_ = 0;
    std::array<std::vector<double>, 3> rows_;
    std::vector<int> labels_;
};

ComponentFeatures component_features(std::string name, std::span<const ActivationRecord> records,
                                     std::size_t top_k, PoolScope scope = PoolScope::answer);

/// Rows none / hs-only / full, one column per dataset.
Table run_component_ablation(std::span<const ComponentFeatures> datasets, const HarnessConfig& config);

/// Rows: all layers, then without each group. Removal deletes the group's
/// columns and retrains on the narrower input.
Table run_layer_ablation(const Matrix& features, std::span<const int> labels, const LayerGroups& groups,
                         const HarnessConfig& config);

}  // namespace icr
