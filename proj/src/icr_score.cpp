#include "icr/icr_score.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace icr {

namespace {

constexpr double kDistributionTolerance = 1e-6;

void check_distribution(std::span<const double> p, const char* name) {
    double sum = 0.0;
    for (double v : p) {
        if (!(v >= 0.0)) throw IcrError(std::string("not a distribution: negative or NaN entry in ") + name);
        sum += v;
    }
    if (std::abs(sum - 1.0) > kDistributionTolerance) {
        throw IcrError(std::string("not a distribution: ") + name + " sums to " + std::to_string(sum));
    }
}

// Hidden states of one layer, widened to double, with their norms.
struct LayerContext {
    std::vector<double> states;
    std::vector<double> norms;
    std::size_t dim = 0;

    LayerContext(std::span<const float> layer_hidden, std::size_t hidden_dim, std::size_t count)
        : states(layer_hidden.begin(), layer_hidden.begin() + count * hidden_dim),
          norms(count),
          dim(hidden_dim) {
        for (std::size_t j = 0; j < count; ++j) {
            double sq = 0.0;
            for (std::size_t c = 0; c < dim; ++c) sq += states[j * dim + c] * states[j * dim + c];
            norms[j] = std::sqrt(sq);
        }
    }

    std::vector<double> project(std::span<const double> delta, std::size_t i) const {
        if (delta.size() != dim) throw IcrError("projection: dimension mismatch");
        std::vector<double> p(i + 1);
        for (std::size_t j = 0; j <= i; ++j) {
            if (norms[j] == 0.0) {
                throw IcrError("zero-norm context hidden state at token " + std::to_string(j));
            }
            const double* x = states.data() + j * dim;
            double dot = 0.0;
            for (std::size_t c = 0; c < dim; ++c) dot += delta[c] * x[c];
            p[j] = dot / norms[j];
        }
        return p;
    }
};

std::vector<double> uniform(std::size_t n) {
    return std::vector<double>(n, 1.0 / static_cast<double>(n));
}

double score_from_distributions(std::span<const double> attn_dist,
                                std::span<const double> proj_dist, std::size_t k) {
    const auto top = top_k_restrict(attn_dist, proj_dist, k);
    return jsd(top.proj, top.attn);
}

double score_token(const ActivationRecord& r, const LayerContext& ctx, std::size_t layer,
                   std::size_t i, const IcrSetting& setting) {
    if (setting.mode == IcrMode::none) return 0.0;
    const auto delta = delta_hidden(r.hidden_row(layer - 1, i), r.hidden_row(layer, i));
    const auto proj = softmax(ctx.project(delta, i));
    const auto attn = setting.mode == IcrMode::hs_only
                          ? uniform(i + 1)
                          : causal_attention_distribution(r.attn_row(layer, i), i, r.attn_kind);
    return score_from_distributions(attn, proj, setting.top_k);
}

void check_record(const ActivationRecord& r, const IcrSetting& setting) {
    if (setting.top_k == 0) throw IcrError("top_k must be positive");
    const auto report = validate_dump(r);
    if (!report.ok()) {
        throw IcrError("invalid record " + r.example_id + ": " + report.violations.front().message);
    }
}

}  // namespace

std::string to_string(IcrMode mode) {
    switch (mode) {
        case IcrMode::full: return "full";
        case IcrMode::hs_only: return "hs-only";
        case IcrMode::none: return "none";
    }
    return "?";
}

IcrMode icr_mode_from_string(const std::string& s) {
    if (s == "full") return IcrMode::full;
    if (s == "hs-only" || s == "hs_only") return IcrMode::hs_only;
    if (s == "none") return IcrMode::none;
    throw IcrError("unknown ICR setting '" + s + "'");
}

std::vector<double> softmax(std::span<const double> logits) {
    std::vector<double> out(logits.size());
    if (logits.empty()) return out;
    const double peak = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < logits.size(); ++j) {
        out[j] = std::exp(logits[j] - peak);
        sum += out[j];
    }
    for (double& v : out) v /= sum;
    return out;
}

std::vector<double> causal_attention_distribution(std::span<const float> attn_row, std::size_t i,
                                                  AttnKind kind) {
    if (i >= attn_row.size()) throw IcrError("token index outside attention row");
    std::vector<double> support(attn_row.begin(), attn_row.begin() + i + 1);
    for (std::size_t j = 0; j <= i; ++j) {
        if (!std::isfinite(support[j])) {
            throw IcrError("non-finite attention score at column " + std::to_string(j));
        }
    }
    if (kind == AttnKind::pre_softmax) return softmax(support);

    double sum = 0.0;
    for (double v : support) {
        if (v < 0.0) throw IcrError("negative post-softmax attention weight");
        sum += v;
    }
    if (sum <= 0.0) throw IcrError("post-softmax attention row has no mass on its support");
    for (double& v : support) v /= sum;
    return support;
}

std::vector<double> delta_hidden(std::span<const float> x_prev, std::span<const float> x_curr) {
    if (x_prev.size() != x_curr.size()) throw IcrError("delta_hidden: dimension mismatch");
    std::vector<double> out(x_curr.size());
    for (std::size_t c = 0; c < out.size(); ++c) {
        out[c] = static_cast<double>(x_curr[c]) - static_cast<double>(x_prev[c]);
    }
    return out;
}

std::vector<double> raw_projections(std::span<const double> delta,
                                    std::span<const float> layer_hidden, std::size_t hidden_dim,
                                    std::size_t i) {
    if (hidden_dim == 0 || layer_hidden.size() < (i + 1) * hidden_dim) {
        throw IcrError("projection: layer hidden states do not cover token " + std::to_string(i));
    }
    return LayerContext(layer_hidden, hidden_dim, i + 1).project(delta, i);
}

std::vector<double> projection_distribution(std::span<const double> delta,
                                            std::span<const float> layer_hidden,
                                            std::size_t hidden_dim, std::size_t i) {
    return softmax(raw_projections(delta, layer_hidden, hidden_dim, i));
}

double jsd(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw IcrError("jsd: length mismatch");
    check_distribution(p, "P");
    check_distribution(q, "Q");
    double total = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
        const double m = 0.5 * (p[j] + q[j]);
        const double a = p[j] > 0.0 ? p[j] * std::log2(p[j] / m) : 0.0;
        const double b = q[j] > 0.0 ? q[j] * std::log2(q[j] / m) : 0.0;
        total += a + b;
    }
    return std::clamp(0.5 * total, 0.0, 1.0);
}

TopK top_k_restrict(std::span<const double> attn_dist, std::span<const double> proj_dist,
                    std::size_t k) {
    if (attn_dist.size() != proj_dist.size()) throw IcrError("top_k_restrict: length mismatch");
    if (k == 0) throw IcrError("top_k_restrict: k must be positive");
    const std::size_t n = attn_dist.size();

    TopK out;
    if (k >= n) {
        out.indices.resize(n);
        std::iota(out.indices.begin(), out.indices.end(), std::size_t{0});
        out.attn.assign(attn_dist.begin(), attn_dist.end());
        out.proj.assign(proj_dist.begin(), proj_dist.end());
        return out;
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) {
                          if (attn_dist[a] != attn_dist[b]) return attn_dist[a] > attn_dist[b];
                          return a < b;
                      });
    order.resize(k);
    std::sort(order.begin(), order.end());

    double attn_sum = 0.0, proj_sum = 0.0;
    for (auto j : order) {
        attn_sum += attn_dist[j];
        proj_sum += proj_dist[j];
    }
    out.indices = order;
    out.attn.reserve(k);
    out.proj.reserve(k);
    for (auto j : order) {
        out.attn.push_back(attn_dist[j] / attn_sum);
        out.proj.push_back(proj_dist[j] / proj_sum);
    }
    return out;
}

double icr_score_token(const ActivationRecord& record, std::size_t layer, std::size_t i,
                       const IcrSetting& setting) {
    check_record(record, setting);
    if (layer < 1 || layer > record.n_layers) throw IcrError("layer index out of range");
    if (i >= record.n_tokens) throw IcrError("token index out of range");
    if (setting.mode == IcrMode::none) return 0.0;
    const std::size_t d = record.hidden_dim;
    const auto slice = std::span<const float>(record.hidden).subspan(layer * record.n_tokens * d,
                                                                     (i + 1) * d);
    const LayerContext ctx(slice, d, i + 1);
    return score_token(record, ctx, layer, i, setting);
}

IcrMatrix icr_matrix(const ActivationRecord& record, const IcrSetting& setting) {
    check_record(record, setting);
    const std::size_t n = record.n_tokens, layers = record.n_layers, d = record.hidden_dim;
    IcrMatrix out{Matrix(n, layers, 0.0)};
    if (setting.mode == IcrMode::none) return out;

    for (std::size_t layer = 1; layer <= layers; ++layer) {
        const auto slice = std::span<const float>(record.hidden).subspan(layer * n * d, n * d);
        const LayerContext ctx(slice, d, n);
        for (std::size_t i = 0; i < n; ++i) {
            out.scores(i, layer - 1) = score_token(record, ctx, layer, i, setting);
        }
    }
    return out;
}

IcrFeature pool_features(const IcrMatrix& matrix, AnswerSpan span) {
    if (span.begin >= span.end) throw IcrError("pool_features: empty span");
    if (span.end > matrix.n_tokens()) throw IcrError("pool_features: span exceeds token count");
    IcrFeature out(matrix.n_layers(), 0.0);
    for (std::size_t i = span.begin; i < span.end; ++i) {
        const auto row = matrix.scores.row(i);
        for (std::size_t c = 0; c < out.size(); ++c) out[c] += row[c];
    }
    const double count = static_cast<double>(span.size());
    for (double& v : out) v /= count;
    return out;
}

IcrFeature record_features(const ActivationRecord& record, const IcrSetting& setting,
                           PoolScope scope) {
    const auto matrix = icr_matrix(record, setting);
    const AnswerSpan span =
        scope == PoolScope::answer ? record.answer_span : AnswerSpan{0, record.n_tokens};
    return pool_features(matrix, span);
}

}  // namespace icr
