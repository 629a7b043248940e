#include "icr/oracle.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace icr {

namespace {

using ld = long double;

std::vector<ld> softmax_ld(const std::vector<ld>& z) {
    ld peak = z[0];
    for (ld v : z)
        if (v > peak) peak = v;
    std::vector<ld> out(z.size());
    ld total = 0;
    for (std::size_t j = 0; j < z.size(); ++j) {
        out[j] = std::exp(z[j] - peak);
        total += out[j];
    }
    for (ld& v : out) v /= total;
    return out;
}

ld kl_to_mixture(const std::vector<ld>& p, const std::vector<ld>& m) {
    ld acc = 0;
    for (std::size_t j = 0; j < p.size(); ++j)
        if (p[j] > 0) acc += p[j] * std::log2(p[j] / m[j]);
    return acc;
}

}  // namespace

IcrMatrix oracle_icr(const ActivationRecord& r, const IcrSetting& setting) {
    const std::size_t n = r.n_tokens, layers = r.n_layers, d = r.hidden_dim;
    IcrMatrix out{Matrix(n, layers, 0.0)};
    if (setting.mode == IcrMode::none) return out;

    auto h = [&](std::size_t slice, std::size_t tok, std::size_t c) -> ld {
        return r.hidden[(slice * n + tok) * d + c];
    };

    for (std::size_t l = 1; l <= layers; ++l) {
        for (std::size_t i = 1; i < n; ++i) {
            const std::size_t support = i + 1;

            // projections of the update onto each context state
            std::vector<ld> proj_logits(support);
            for (std::size_t j = 0; j < support; ++j) {
                ld dot = 0, sq = 0;
                for (std::size_t c = 0; c < d; ++c) {
                    dot += (h(l, i, c) - h(l - 1, i, c)) * h(l, j, c);
                    sq += h(l, j, c) * h(l, j, c);
                }
                proj_logits[j] = dot / std::sqrt(sq);
            }
            std::vector<ld> proj = softmax_ld(proj_logits);

            std::vector<ld> attn(support);
            if (setting.mode == IcrMode::hs_only) {
                for (ld& v : attn) v = ld(1) / ld(support);
            } else {
                std::vector<ld> row(support);
                for (std::size_t j = 0; j < support; ++j) row[j] = r.attn[((l - 1) * n + i) * n + j];
                if (r.attn_kind == AttnKind::post_softmax) {
                    ld total = 0;
                    for (ld v : row) total += v;
                    for (std::size_t j = 0; j < support; ++j) attn[j] = row[j] / total;
                } else {
                    attn = softmax_ld(row);
                }
            }

            // top-k by repeated argmax; strict comparison keeps the lower index on ties
            const std::size_t k = setting.top_k < support ? setting.top_k : support;
            std::vector<bool> taken(support, false);
            for (std::size_t round = 0; round < k; ++round) {
                std::size_t best = support;
                for (std::size_t j = 0; j < support; ++j) {
                    if (taken[j]) continue;
                    if (best == support || attn[j] > attn[best]) best = j;
                }
                taken[best] = true;
            }
            std::vector<ld> p, q;
            ld sp = 0, sq = 0;
            for (std::size_t j = 0; j < support; ++j) {
                if (!taken[j]) continue;
                p.push_back(proj[j]);
                q.push_back(attn[j]);
                sp += proj[j];
                sq += attn[j];
            }
            std::vector<ld> m(p.size());
            for (std::size_t j = 0; j < p.size(); ++j) {
                p[j] /= sp;
                q[j] /= sq;
                m[j] = (p[j] + q[j]) / 2;
            }
            ld value = (kl_to_mixture(p, m) + kl_to_mixture(q, m)) / 2;
            if (value < 0) value = 0;
            if (value > 1) value = 1;
            out.scores(i, l - 1) = static_cast<double>(value);
        }
    }
    return out;
}

double oracle_auroc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw std::invalid_argument("oracle_auroc: size mismatch");
    std::size_t pos = 0, neg = 0;
    for (int y : labels) (y == 1 ? pos : neg)++;
    if (pos == 0 || neg == 0) throw std::invalid_argument("oracle_auroc: single-class input");
    double twice = 0.0;  // 2 * (concordant + 0.5 * tied), an integer
    for (std::size_t a = 0; a < scores.size(); ++a) {
        if (labels[a] != 1) continue;
        for (std::size_t b = 0; b < scores.size(); ++b) {
            if (labels[b] == 1) continue;
            if (scores[a] > scores[b]) twice += 2.0;
            else if (scores[a] == scores[b]) twice += 1.0;
        }
    }
    return twice / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

}  // namespace icr
