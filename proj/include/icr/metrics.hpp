#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "icr/dump.hpp"
#include "icr/icr_score.hpp"
#include "icr/matrix.hpp"
#include "icr/probe.hpp"

namespace icr {

class MetricsError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Rank-based (Mann-Whitney) AUROC with ties counted one half. Label 1 is the
/// positive class; higher scores mean "more likely positive".
double auroc(std::span<const double> scores, std::span<const int> labels);

struct LayerwiseAuroc {
    std::vector<double> auroc;    // oriented: max(a, 1 - a)
    std::vector<bool> flipped;    // true where the raw score ranked negatives higher
};

/// AUROC of each feature column used directly as a score.
LayerwiseAuroc layerwise_auroc(const Matrix& features, std::span<const int> labels);

/// Pools each matrix over its span first.
LayerwiseAuroc layerwise_auroc(std::span<const IcrMatrix> matrices, std::span<const AnswerSpan> spans,
                               std::span<const int> labels);

/// Per-layer class means of pooled features; rows = {faithful, hallucinated}.
Matrix class_layer_means(const Matrix& features, std::span<const int> labels);

struct Histogram {
    std::vector<double> edges;  // bins + 1
    std::vector<std::size_t> counts;
};

/// Fixed-width bins on [lo, hi]; the last bin is closed. Values outside are dropped.
Histogram histogram(std::span<const double> values, std::size_t bins, double lo, double hi);

/// Layer-group boundaries, 1-based inclusive. A group may be empty (first > last).
struct LayerGroups {
    struct Range {
        std::size_t first = 1;
        std::size_t last = 0;
    };
    Range early{1, 14};
    Range middle{15, 28};
    Range deep{29, 1000000};

    /// Zero-based feature columns of `range` clipped to L layers.
    static std::vector<std::size_t> columns(Range range, std::size_t n_layers);
    void validate(std::size_t n_layers) const;
};

/// Copy of `features` without the listed zero-based columns.
Matrix delete_columns(const Matrix& features, std::span<const std::size_t> columns);

/// Probe applied to every token row of an ICR matrix.
std::vector<double> token_level_detect(const ProbeModel& model, const IcrMatrix& matrix);

/// exp(-mean log-probability).
double baseline_ppl(std::span<const double> answer_logprob);

/// Perplexity over the record's answer span.
double baseline_ppl(const ActivationRecord& record);

/// Sum of log diagonal entries of a lower-triangular m x m kernel map.
double kernel_logdet(std::span<const double> kernel, std::size_t m);

/// Mean over heads of kernel_logdet.
double mean_head_logdet(std::span<const Matrix> kernels);

/// Attention log-determinant score from per-head scores: each head's causal
/// attention map is the kernel; the score is the mean of per-head
/// log-determinants over all layers and heads.
double baseline_attn_logdet(const ActivationRecord& record);

}  // namespace icr
