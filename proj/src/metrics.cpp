#include "icr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace icr {

namespace {

void check_binary(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw MetricsError("auroc: score and label counts differ");
    std::size_t pos = 0;
    for (int y : labels) {
        if (y != 0 && y != 1) throw MetricsError("auroc: labels must be 0 or 1");
        pos += static_cast<std::size_t>(y);
    }
    if (pos == 0 || pos == labels.size()) throw MetricsError("auroc: single-class input");
    for (double s : scores)
        if (std::isnan(s)) throw MetricsError("auroc: NaN score");
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const int> labels) {
    check_binary(scores, labels);
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });

    // Sum of midranks of the positives. Ranks are halves of integers, so the
    // sum is exact for any realistic n.
    double rank_sum = 0.0;
    std::size_t positives = 0;
    for (std::size_t lo = 0; lo < n;) {
        std::size_t hi = lo;
        while (hi < n && scores[order[hi]] == scores[order[lo]]) ++hi;
        const double midrank = 0.5 * static_cast<double>(lo + 1 + hi);
        for (std::size_t k = lo; k < hi; ++k) {
            if (labels[order[k]] == 1) {
                rank_sum += midrank;
                ++positives;
            }
        }
        lo = hi;
    }
    const double np = static_cast<double>(positives);
    const double nn = static_cast<double>(n - positives);
    const double u = rank_sum - np * (np + 1.0) / 2.0;
    return u / (np * nn);
}

LayerwiseAuroc layerwise_auroc(const Matrix& features, std::span<const int> labels) {
    LayerwiseAuroc out;
    std::vector<double> column(features.rows());
    for (std::size_t c = 0; c < features.cols(); ++c) {
        for (std::size_t r = 0; r < features.rows(); ++r) column[r] = features(r, c);
        const double a = auroc(column, labels);
        out.flipped.push_back(a < 0.5);
        out.auroc.push_back(std::max(a, 1.0 - a));
    }
    return out;
}

LayerwiseAuroc layerwise_auroc(std::span<const IcrMatrix> matrices, std::span<const AnswerSpan> spans,
                               std::span<const int> labels) {
    if (matrices.size() != spans.size() || matrices.size() != labels.size()) {
        throw MetricsError("layerwise_auroc: matrix, span and label counts differ");
    }
    if (matrices.empty()) throw MetricsError("layerwise_auroc: no examples");
    Matrix features(matrices.size(), matrices.front().n_layers());
    for (std::size_t r = 0; r < matrices.size(); ++r) {
        const auto f = pool_features(matrices[r], spans[r]);
        if (f.size() != features.cols()) throw MetricsError("layerwise_auroc: layer counts differ");
        std::copy(f.begin(), f.end(), features.row(r).begin());
    }
    return layerwise_auroc(features, labels);
}

Matrix class_layer_means(const Matrix& features, std::span<const int> labels) {
    if (features.rows() != labels.size()) throw MetricsError("class_layer_means: row count mismatch");
    Matrix means(2, features.cols());
    std::size_t counts[2] = {0, 0};
    for (std::size_t r = 0; r < features.rows(); ++r) {
        const int y = labels[r];
        if (y != 0 && y != 1) throw MetricsError("labels must be 0 or 1");
        ++counts[y];
        for (std::size_t c = 0; c < features.cols(); ++c) means(y, c) += features(r, c);
    }
    for (int y : {0, 1})
        for (std::size_t c = 0; c < features.cols(); ++c)
            means(y, c) = counts[y] ? means(y, c) / static_cast<double>(counts[y]) : 0.0;
    return means;
}

Histogram histogram(std::span<const double> values, std::size_t bins, double lo, double hi) {
    if (bins == 0 || !(hi > lo)) throw MetricsError("histogram: need bins > 0 and hi > lo");
    Histogram h;
    h.counts.assign(bins, 0);
    const double width = (hi - lo) / static_cast<double>(bins);
    for (std::size_t b = 0; b <= bins; ++b) h.edges.push_back(lo + width * static_cast<double>(b));
    h.edges.back() = hi;
    for (double v : values) {
        if (!(v >= lo && v <= hi)) continue;
        auto b = static_cast<std::size_t>((v - lo) / width);
        h.counts[std::min(b, bins - 1)]++;
    }
    return h;
}

std::vector<std::size_t> LayerGroups::columns(Range range, std::size_t n_layers) {
    std::vector<std::size_t> cols;
    for (std::size_t l = std::max<std::size_t>(range.first, 1); l <= range.last && l <= n_layers; ++l) {
        cols.push_back(l - 1);
    }
    return cols;
}

void LayerGroups::validate(std::size_t n_layers) const {
    const Range groups[3] = {early, middle, deep};
    std::vector<int> owner(n_layers + 1, 0);
    for (const auto& g : groups) {
        if (g.first == 0) throw MetricsError("layer groups are 1-based");
        for (auto c : columns(g, n_layers)) {
            if (owner[c + 1]++) throw MetricsError("layer groups overlap at layer " + std::to_string(c + 1));
        }
    }
}

Matrix delete_columns(const Matrix& features, std::span<const std::size_t> columns) {
    std::vector<bool> drop(features.cols(), false);
    for (auto c : columns) {
        if (c >= features.cols()) throw MetricsError("delete_columns: column out of range");
        drop[c] = true;
    }
    std::vector<std::size_t> keep;
    for (std::size_t c = 0; c < features.cols(); ++c)
        if (!drop[c]) keep.push_back(c);
    if (keep.empty()) throw MetricsError("layer removal leaves an empty feature");
    Matrix out(features.rows(), keep.size());
    for (std::size_t r = 0; r < features.rows(); ++r)
        for (std::size_t k = 0; k < keep.size(); ++k) out(r, k) = features(r, keep[k]);
    return out;
}

std::vector<double> token_level_detect(const ProbeModel& model, const IcrMatrix& matrix) {
    if (matrix.n_layers() != model.config.input_dim) {
        throw MetricsError("token_level_detect: matrix width does not match probe input");
    }
    std::vector<double> out;
    out.reserve(matrix.n_tokens());
    for (std::size_t i = 0; i < matrix.n_tokens(); ++i) out.push_back(predict(model, matrix.scores.row(i)));
    return out;
}

double baseline_ppl(std::span<const double> answer_logprob) {
    if (answer_logprob.empty()) throw MetricsError("baseline_ppl: empty span");
    double sum = 0.0;
    for (double lp : answer_logprob) {
        if (!std::isfinite(lp)) throw MetricsError("baseline_ppl: non-finite log-probability");
        sum += lp;
    }
    return std::exp(-sum / static_cast<double>(answer_logprob.size()));
}

double baseline_ppl(const ActivationRecord& record) {
    if (!record.logprob) throw MetricsError("baseline_ppl: missing logprob tensor in " + record.example_id);
    const auto& lp = *record.logprob;
    std::vector<double> span(lp.begin() + static_cast<std::ptrdiff_t>(record.answer_span.begin),
                             lp.begin() + static_cast<std::ptrdiff_t>(record.answer_span.end));
    return baseline_ppl(span);
}

double kernel_logdet(std::span<const double> kernel, std::size_t m) {
    if (kernel.size() != m * m) throw MetricsError("kernel_logdet: kernel is not m x m");
    double sum = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
        const double diag = kernel[j * m + j];
        if (!(diag > 0.0)) {
            throw MetricsError("kernel_logdet: nonpositive diagonal entry at position " + std::to_string(j));
        }
        sum += std::log(diag);
    }
    return sum;
}

double mean_head_logdet(std::span<const Matrix> kernels) {
    if (kernels.empty()) throw MetricsError("mean_head_logdet: no heads");
    double sum = 0.0;
    for (std::size_t h = 0; h < kernels.size(); ++h) {
        if (kernels[h].rows() != kernels[h].cols()) throw MetricsError("mean_head_logdet: kernel not square");
        try {
            sum += kernel_logdet(kernels[h].data(), kernels[h].rows());
        } catch (const MetricsError& e) {
            throw MetricsError(std::string(e.what()) + " (head " + std::to_string(h) + ")");
        }
    }
    return sum / static_cast<double>(kernels.size());
}

double baseline_attn_logdet(const ActivationRecord& record) {
    if (record.n_heads == 0) {
        throw MetricsError("baseline_attn_logdet: missing attn_perhead tensor in " + record.example_id);
    }
    const std::size_t n = record.n_tokens;
    double total = 0.0;
    for (std::size_t layer = 1; layer <= record.n_layers; ++layer) {
        std::vector<Matrix> kernels;
        for (std::size_t h = 0; h < record.n_heads; ++h) {
            Matrix kernel(n, n);
            for (std::size_t i = 0; i < n; ++i) {
                const auto dist = causal_attention_distribution(record.attn_head_row(layer, h, i), i,
                                                                record.attn_kind);
                std::copy(dist.begin(), dist.end(), kernel.row(i).begin());
            }
            kernels.push_back(std::move(kernel));
        }
        try {
            total += mean_head_logdet(kernels);
        } catch (const MetricsError& e) {
            throw MetricsError(std::string(e.what()) + " at layer " + std::to_string(layer));
        }
    }
    return total / static_cast<double>(record.n_layers);
}

}  // namespace icr
