#pragma once

// ICR score: per token and layer, the Jensen-Shannon divergence between the
// softmax of the hidden-state update's projections onto the context states
// and the head-averaged attention distribution, both restricted to the top-k
// attended context tokens.

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "icr/dump.hpp"
#include "icr/matrix.hpp"

namespace icr {

class IcrError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Which signals enter the score. hs_only replaces the attention distribution
/// with a uniform one over the causal support; none yields zero everywhere.
enum class IcrMode { full, hs_only, none };

std::string to_string(IcrMode mode);
IcrMode icr_mode_from_string(const std::string& s);

inline constexpr std::size_t kDefaultTopK = 20;

struct IcrSetting {
    IcrMode mode = IcrMode::full;
    std::size_t top_k = kDefaultTopK;
};

/// Scores of shape (N, L); column l-1 holds decoder layer l.
struct IcrMatrix {
    Matrix scores;

    std::size_t n_tokens() const { return scores.rows(); }
    std::size_t n_layers() const { return scores.cols(); }
    double at(std::size_t token, std::size_t layer) const { return scores(token, layer - 1); }
};

/// Pooled length-L feature.
using IcrFeature = std::vector<double>;

// --- distribution building blocks -----------------------------------------

/// Softmax over the causal support {0..i} of an attention score row.
/// Post-softmax rows are renormalized over the support instead.
std::vector<double> causal_attention_distribution(std::span<const float> attn_row, std::size_t i,
                                                  AttnKind kind = AttnKind::pre_softmax);

std::vector<double> delta_hidden(std::span<const float> x_prev, std::span<const float> x_curr);

/// Raw projection lengths (delta . x_j) / |x_j| for j <= i. `layer_hidden`
/// holds one row per token.
std::vector<double> raw_projections(std::span<const double> delta,
                                    std::span<const float> layer_hidden, std::size_t hidden_dim,
                                    std::size_t i);

/// softmax(raw_projections(...)).
std::vector<double> projection_distribution(std::span<const double> delta,
                                            std::span<const float> layer_hidden,
                                            std::size_t hidden_dim, std::size_t i);

/// Numerically stable softmax.
std::vector<double> softmax(std::span<const double> logits);

/// Jensen-Shannon divergence in bits; 0 <= jsd <= 1.
double jsd(std::span<const double> p, std::span<const double> q);

struct TopK {
    std::vector<std::size_t> indices;  // ascending token order
    std::vector<double> attn;          // renormalized slice
    std::vector<double> proj;          // renormalized slice
};

/// Keeps the k largest attention entries (ties to the lower index) and
/// renormalizes both slices.
TopK top_k_restrict(std::span<const double> attn_dist, std::span<const double> proj_dist,
                    std::size_t k);

// --- record-level pipeline --------------------------------------------------

/// ICR of token i at decoder layer `layer` (1-based).
double icr_score_token(const ActivationRecord& record, std::size_t layer, std::size_t i,
                       const IcrSetting& setting);

IcrMatrix icr_matrix(const ActivationRecord& record, const IcrSetting& setting);

/// Layer-wise mean over the tokens of `span`.
IcrFeature pool_features(const IcrMatrix& matrix, AnswerSpan span);

enum class PoolScope { answer, all };

/// icr_matrix followed by pooling over the answer span or the whole sequence.
IcrFeature record_features(const ActivationRecord& record, const IcrSetting& setting,
                           PoolScope scope = PoolScope::answer);

}  // namespace icr
