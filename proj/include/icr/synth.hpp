#pragma once

// Synthetic activation records and planted feature sets for desk-scale
// verification without a language model.
//
// Record construction runs backwards from the last layer. For each decoder
// layer l the context states x^l are fixed first; every token's update is
//
//   dx_i = scale * ((1 - w_l) * sum_{j<=i} a_ij * x_j / |x_j| + w_l * eta_i)
//
// with a_i the causal softmax of the attention logits actually used and eta_i
// a random "feed-forward injection" direction. Then x^{l-1}_i = x^l_i - dx_i,
// so hidden trajectories obey the additive residual update exactly (in double
// precision) and projections are taken against the same context states the
// mixture used. The injection weight w_l comes from the class profile, so
// hallucinated examples carry more update mass that is unexplained by
// attention.

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "icr/dump.hpp"

namespace icr {

struct SynthSpec {
    std::uint64_t seed = 0;
    std::size_t n_tokens = 16;
    std::size_t n_layers = 12;
    std::size_t hidden_dim = 32;
    std::size_t answer_len = 6;  // the answer is the last answer_len tokens
    double noise_sigma = 0.05;

    // Mean per-layer profile for labels 0 and 1. Empty means default_profile().
    std::vector<double> profile_faithful;
    std::vector<double> profile_hallucinated;

    // Record-level knobs.
    double ffn_weight = 1.0;         // multiplies the per-layer injection weight
    double attn_temperature = 2.0;   // std-dev of attention logits
    double mixture_scale = 4.0;      // length scale of the update
    // Per class: how much of the stored attention logits is replaced by
    // independent noise, i.e. attention that does not explain the update.
    std::array<double, 2> attn_decoupling{0.0, 0.0};
    bool orthonormal_context = false;  // last-layer states = unit basis (needs d >= N)
    std::size_t n_heads = 0;           // > 0 adds per-head scores averaging to attn
    bool logprobs = true;
    double logprob_shift = 0.3;        // extra mean surprisal for label 1

    void validate() const;
    const std::vector<double>& profile(int label) const;
};

/// Rise-peak-decline curve in [0, 1]^L: low early, peaking around 30% depth.
std::vector<double> default_profile(std::size_t n_layers, int label);

/// SynthSpec with default profiles filled in for its layer count.
SynthSpec with_default_profiles(SynthSpec spec);

/// The double-precision construction behind a synthetic record.
struct SynthTrace {
    std::vector<double> hidden;         // (L+1, N, d)
    std::vector<double> used_logits;    // (L, N, N), drive the mixture
    std::vector<double> stored_logits;  // (L, N, N), written to the record
    std::vector<double> injection;      // (L), w_l
};

SynthTrace gen_synthetic_trace(const SynthSpec& spec, int label);

/// Float32 record of gen_synthetic_trace; passes validate_dump.
ActivationRecord gen_synthetic_record(const SynthSpec& spec, int label);

/// n records with balanced labels and per-example seeds derived from spec.seed.
std::vector<ActivationRecord> gen_record_dataset(const SynthSpec& spec, std::size_t n,
                                                 const std::string& dataset);

struct PlantedDataset {
    std::vector<double> features;  // row-major (n, L)
    std::size_t n_layers = 0;
    std::vector<int> labels;
};

/// Class profile + N(0, sigma^2) noise, clipped to [0, 1]; balanced labels.
PlantedDataset gen_planted_dataset(const SynthSpec& spec, std::size_t n_examples);

/// Balanced shuffled labels (counts differ by at most one).
std::vector<int> balanced_labels(std::size_t n, std::uint64_t seed);

}  // namespace icr
