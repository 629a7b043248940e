#include "icr/harness.hpp"

#include <algorithm>

namespace icr {

nlohmann::json HarnessConfig::to_json() const {
    auto probe_json = icr::to_json(probe);
    probe_json.erase("input_dim");
    probe_json.erase("seed");
    return {{"probe", probe_json},
            {"seeds", seeds},
            {"test_fraction", test_fraction},
            {"split_seed", split_seed}};
}

DataSplit train_test_split(std::span<const int> labels, const HarnessConfig& config) {
    auto [train, test] = stratified_split(labels, config.test_fraction, derive_seed(config.split_seed, 7));
    return {std::move(train), std::move(test)};
}

Matrix select_rows(const Matrix& features, std::span<const std::size_t> rows) {
    Matrix out(rows.size(), features.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto src = features.row(rows[r]);
        std::copy(src.begin(), src.end(), out.row(r).begin());
    }
    return out;
}

std::vector<int> select_labels(std::span<const int> labels, std::span<const std::size_t> rows) {
    std::vector<int> out;
    out.reserve(rows.size());
    for (auto r : rows) out.push_back(labels[r]);
    return out;
}

namespace {

ProbeModel train_for_seed(const Matrix& x, std::span<const int> y, const HarnessConfig& config,
                          std::uint64_t seed) {
    ProbeConfig pc = config.probe;
    pc.input_dim = x.cols();
    pc.seed = seed;
    return train_probe(x, y, pc).model;
}

double test_auroc(const ProbeModel& model, const Matrix& x, std::span<const int> y) {
    return auroc(forward(model, x, Mode::eval), y);
}

void check_seeds(const HarnessConfig& config) {
    if (config.seeds.empty()) throw MetricsError("harness: seed list is empty");
}

}  // namespace

EvalReport evaluate_features(const Matrix& features, std::span<const int> labels,
                             const HarnessConfig& config) {
    check_seeds(config);
    if (features.rows() != labels.size()) throw MetricsError("feature rows and label count differ");
    const auto split = train_test_split(labels, config);
    const Matrix train_x = select_rows(features, split.train);
    const auto train_y = select_labels(labels, split.train);
    const Matrix test_x = select_rows(features, split.test);
    const auto test_y = select_labels(labels, split.test);

    EvalReport report;
    report.seeds = config.seeds;
    double sum = 0.0;
    for (auto seed : config.seeds) {
        const auto model = train_for_seed(train_x, train_y, config, seed);
        const auto scores = forward(model, test_x, Mode::eval);
        const double a = auroc(scores, test_y);
        report.seed_auroc.push_back(a);
        sum += a;
        if (report.test_scores.empty()) {
            report.test_scores = scores;
            report.test_labels = test_y;
        }
    }
    report.auroc = sum / static_cast<double>(config.seeds.size());
    const auto layers = layerwise_auroc(features, labels);
    report.per_layer_auroc = layers.auroc;
    report.per_layer_flipped = layers.flipped;
    return report;
}

double relative_drop_percent(double in_domain, double cross_domain) {
    if (in_domain <= 0.0) throw MetricsError("relative drop needs a positive in-domain AUROC");
    return 100.0 * (in_domain - cross_domain) / in_domain;
}

GeneralizationMatrix generalization_matrix(std::span<const Dataset> datasets, const HarnessConfig& config) {
    check_seeds(config);
    if (datasets.size() < 2) throw MetricsError("generalization matrix needs at least two datasets");
    const std::size_t width = datasets.front().features.cols();
    std::vector<DataSplit> splits;
    for (const auto& ds : datasets) {
        if (ds.features.cols() != width) throw MetricsError("datasets disagree on feature width");
        if (ds.features.rows() != ds.labels.size()) throw MetricsError(ds.name + ": feature rows and label count differ");
        splits.push_back(train_test_split(ds.labels, config));
    }

    const std::size_t n = datasets.size();
    GeneralizationMatrix out;
    out.auroc = Matrix(n, n);
    for (const auto& ds : datasets) out.datasets.push_back(ds.name);

    for (std::size_t r = 0; r < n; ++r) {
        const Matrix train_x = select_rows(datasets[r].features, splits[r].train);
        const auto train_y = select_labels(datasets[r].labels, splits[r].train);
        std::vector<double> sums(n, 0.0);
        for (auto seed : config.seeds) {
            const auto model = train_for_seed(train_x, train_y, config, seed);
            for (std::size_t c = 0; c < n; ++c) {
                const Matrix test_x = select_rows(datasets[c].features, splits[c].test);
                const auto test_y = select_labels(datasets[c].labels, splits[c].test);
                sums[c] += test_auroc(model, test_x, test_y);
            }
        }
        for (std::size_t c = 0; c < n; ++c) out.auroc(r, c) = sums[c] / static_cast<double>(config.seeds.size());
    }

    double in_sum = 0.0, cross_sum = 0.0;
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c) (r == c ? in_sum : cross_sum) += out.auroc(r, c);
    out.in_domain = in_sum / static_cast<double>(n);
    out.cross_domain = cross_sum / static_cast<double>(n * (n - 1));
    out.drop_percent = relative_drop_percent(out.in_domain, out.cross_domain);
    return out;
}

void ComponentFeatureBuilder::add(const ActivationRecord& record) {
    if (labels_.empty()) width_ = record.n_layers;
    if (record.n_layers != width_) throw MetricsError(name_ + ": records disagree on layer count");
    for (std::size_t m = 0; m < kAblationModes.size(); ++m) {
        const auto f = record_features(record, {kAblationModes[m], top_k_}, scope_);
        rows_[m].insert(rows_[m].end(), f.begin(), f.end());
    }
    labels_.push_back(record.label);
}

ComponentFeatures ComponentFeatureBuilder::finish() const {
    ComponentFeatures out;
    out.name = name_;
    for (std::size_t m = 0; m < kAblationModes.size(); ++m) {
        out.features[m] = Matrix(labels_.size(), width_, rows_[m]);
    }
    out.labels = labels_;
    return out;
}

ComponentFeatures component_features(std::string name, std::span<const ActivationRecord> records,
                                     std::size_t top_k, PoolScope scope) {
    ComponentFeatureBuilder builder(std::move(name), top_k, scope);
    for (const auto& r : records) builder.add(r);
    return builder.finish();
}

Table run_component_ablation(std::span<const ComponentFeatures> datasets, const HarnessConfig& config) {
    Table table;
    table.name = "component_ablation";
    for (auto mode : kAblationModes) table.rows.push_back(to_string(mode));
    for (const auto& ds : datasets) table.cols.push_back(ds.name);
    table.values = Matrix(kAblationModes.size(), datasets.size());
    for (std::size_t c = 0; c < datasets.size(); ++c) {
        for (std::size_t m = 0; m < kAblationModes.size(); ++m) {
            table.values(m, c) = evaluate_features(datasets[c].features[m], datasets[c].labels, config).auroc;
        }
    }
    return table;
}

Table run_layer_ablation(const Matrix& features, std::span<const int> labels, const LayerGroups& groups,
                         const HarnessConfig& config) {
    const std::size_t n_layers = features.cols();
    groups.validate(n_layers);
    Table table;
    table.name = "layer_ablation";
    table.cols = {"auroc"};
    table.rows = {"all_layers", "without_early", "without_middle", "without_deep"};
    table.values = Matrix(4, 1);
    table.values(0, 0) = evaluate_features(features, labels, config).auroc;
    const LayerGroups::Range ranges[3] = {groups.early, groups.middle, groups.deep};
    for (std::size_t g = 0; g < 3; ++g) {
        const auto cols = LayerGroups::columns(ranges[g], n_layers);
        const Matrix reduced = delete_columns(features, cols);
        table.values(g + 1, 0) = evaluate_features(reduced, labels, config).auroc;
    }
    return table;
}

}  // namespace icr
