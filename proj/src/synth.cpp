#include "icr/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <stdexcept>

#include "icr/seed.hpp"

namespace icr {

void SynthSpec::validate() const {
    if (n_tokens < 2) throw std::invalid_argument("synth: need at least 2 tokens");
    if (n_layers < 1) throw std::invalid_argument("synth: need at least 1 layer");
    if (hidden_dim < 1) throw std::invalid_argument("synth: need hidden_dim >= 1");
    if (answer_len < 1 || answer_len > n_tokens) throw std::invalid_argument("synth: answer_len out of range");
    if (noise_sigma < 0.0) throw std::invalid_argument("synth: noise sigma must be >= 0");
    if (orthonormal_context && hidden_dim < n_tokens) {
        throw std::invalid_argument("synth: orthonormal context needs hidden_dim >= n_tokens");
    }
    for (int label : {0, 1}) {
        const auto& p = profile(label);
        if (p.size() != n_layers) throw std::invalid_argument("synth: profile length must equal n_layers");
        for (double v : p)
            if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("synth: profile values must lie in [0, 1]");
    }
    for (double g : attn_decoupling)
        if (!(g >= 0.0 && g <= 1.0)) throw std::invalid_argument("synth: attn_decoupling must lie in [0, 1]");
}

const std::vector<double>& SynthSpec::profile(int label) const {
    return label == 1 ? profile_hallucinated : profile_faithful;
}

std::vector<double> default_profile(std::size_t n_layers, int label) {
    const double depth = static_cast<double>(n_layers);
    const double peak = 0.3 * depth;
    const double width = std::max(1.0, 0.25 * depth);
    std::vector<double> out(n_layers);
    for (std::size_t l = 0; l < n_layers; ++l) {
        const double z = (static_cast<double>(l + 1) - peak) / width;
        const double bump = std::exp(-z * z);
        out[l] = 0.25 + 0.35 * bump + (label == 1 ? 0.08 * bump : 0.0);
    }
    return out;
}

SynthSpec with_default_profiles(SynthSpec spec) {
    if (spec.profile_faithful.empty()) spec.profile_faithful = default_profile(spec.n_layers, 0);
    if (spec.profile_hallucinated.empty()) spec.profile_hallucinated = default_profile(spec.n_layers, 1);
    return spec;
}

SynthTrace gen_synthetic_trace(const SynthSpec& raw_spec, int label) {
    const SynthSpec spec = with_default_profiles(raw_spec);
    spec.validate();
    if (label != 0 && label != 1) throw std::invalid_argument("synth: label must be 0 or 1");

    const std::size_t n = spec.n_tokens, layers = spec.n_layers, d = spec.hidden_dim;
    std::mt19937_64 rng(derive_seed(spec.seed, 11));
    std::normal_distribution<double> normal(0.0, 1.0);

    SynthTrace t;
    t.hidden.assign((layers + 1) * n * d, 0.0);
    t.used_logits.assign(layers * n * n, 0.0);
    t.stored_logits.assign(layers * n * n, 0.0);
    t.injection.resize(layers);

    const auto& profile = spec.profile(label);
    for (std::size_t l = 0; l < layers; ++l) {
        const double w = std::clamp(profile[l] + spec.noise_sigma * normal(rng), 0.0, 1.0);
        t.injection[l] = spec.ffn_weight * w;
    }

    auto state = [&](std::size_t slice, std::size_t token) { return t.hidden.data() + (slice * n + token) * d; };

    for (std::size_t j = 0; j < n; ++j) {
        double* x = state(layers, j);
        if (spec.orthonormal_context) {
            x[j] = 1.0;
        } else {
            for (std::size_t c = 0; c < d; ++c) x[c] = normal(rng);
        }
    }

    const double decouple = spec.attn_decoupling[static_cast<std::size_t>(label)];
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<double> unit(n * d), weights(n), eta(d);
    for (std::size_t layer = layers; layer >= 1; --layer) {
        const double w = t.injection[layer - 1];
        for (std::size_t j = 0; j < n; ++j) {
            const double* x = state(layer, j);
            double norm = 0.0;
            for (std::size_t c = 0; c < d; ++c) norm += x[c] * x[c];
            norm = std::sqrt(norm);
            for (std::size_t c = 0; c < d; ++c) unit[j * d + c] = x[c] / norm;
        }
        for (std::size_t i = 0; i < n; ++i) {
            double* used = t.used_logits.data() + ((layer - 1) * n + i) * n;
            double* stored = t.stored_logits.data() + ((layer - 1) * n + i) * n;
            double peak = -INFINITY;
            for (std::size_t j = 0; j <= i; ++j) {
                used[j] = spec.attn_temperature * normal(rng);
                const double noise = spec.attn_temperature * normal(rng);
                stored[j] = decouple > 0.0 ? (1.0 - decouple) * used[j] + decouple * noise : used[j];
                peak = std::max(peak, used[j]);
            }
            double sum = 0.0;
            for (std::size_t j = 0; j <= i; ++j) sum += weights[j] = std::exp(used[j] - peak);
            for (std::size_t c = 0; c < d; ++c) eta[c] = normal(rng) * inv_sqrt_d;

            const double* x_curr = state(layer, i);
            double* x_prev = state(layer - 1, i);
            for (std::size_t c = 0; c < d; ++c) {
                double mix = 0.0;
                for (std::size_t j = 0; j <= i; ++j) mix += weights[j] / sum * unit[j * d + c];
                const double update = spec.mixture_scale * ((1.0 - w) * mix + w * eta[c]);
                x_prev[c] = x_curr[c] - update;
            }
        }
    }
    return t;
}

ActivationRecord gen_synthetic_record(const SynthSpec& raw_spec, int label) {
    const SynthSpec spec = with_default_profiles(raw_spec);
    const auto trace = gen_synthetic_trace(spec, label);
    const std::size_t n = spec.n_tokens, layers = spec.n_layers, d = spec.hidden_dim;

    ActivationRecord r;
    r.example_id = "synth-" + std::to_string(spec.seed);
    r.dataset = "synth";
    r.resize(n, layers, d);
    std::transform(trace.hidden.begin(), trace.hidden.end(), r.hidden.begin(),
                   [](double v) { return static_cast<float>(v); });
    std::transform(trace.stored_logits.begin(), trace.stored_logits.end(), r.attn.begin(),
                   [](double v) { return static_cast<float>(v); });
    r.answer_span = {n - spec.answer_len, n};
    r.label = label;
    r.tokens.reserve(n);
    for (std::size_t i = 0; i < n; ++i) r.tokens.push_back("t" + std::to_string(i));
    r.extra = {{"generator", "synth"},
               {"injection_weight", trace.injection},
               {"attn_decoupling", spec.attn_decoupling[static_cast<std::size_t>(label)]}};

    std::mt19937_64 rng(derive_seed(spec.seed, 12));
    std::normal_distribution<double> normal(0.0, 1.0);
    if (spec.logprobs) {
        std::vector<float> lp(n);
        for (auto& v : lp) {
            v = static_cast<float>(-(0.5 + 0.5 * std::abs(normal(rng)) + spec.logprob_shift * label));
        }
        r.logprob = std::move(lp);
    }
    if (spec.n_heads > 0) {
        const std::size_t heads = spec.n_heads;
        r.n_heads = heads;
        r.attn_perhead.assign(layers * heads * n * n, 0.0f);
        std::vector<double> noise(heads);
        for (std::size_t l = 0; l < layers; ++l) {
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j <= i; ++j) {
                    double mean = 0.0;
                    for (auto& e : noise) mean += e = spec.attn_temperature * normal(rng);
                    mean /= static_cast<double>(heads);
                    const double base = trace.stored_logits[(l * n + i) * n + j];
                    for (std::size_t h = 0; h < heads; ++h) {
                        r.attn_perhead[((l * heads + h) * n + i) * n + j] =
                            static_cast<float>(base + noise[h] - mean);
                    }
                }
            }
        }
    }
    return r;
}

std::vector<int> balanced_labels(std::size_t n, std::uint64_t seed) {
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = i < n / 2 ? 0 : 1;
    std::mt19937_64 rng(seed);
    std::shuffle(labels.begin(), labels.end(), rng);
    return labels;
}

std::vector<ActivationRecord> gen_record_dataset(const SynthSpec& spec, std::size_t n,
                                                 const std::string& dataset) {
    const auto labels = balanced_labels(n, derive_seed(spec.seed, 13));
    std::vector<ActivationRecord> out;
    out.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
        SynthSpec s = spec;
        s.seed = derive_seed(spec.seed, 1000 + k);
        auto r = gen_synthetic_record(s, labels[k]);
        char id[32];
        std::snprintf(id, sizeof id, "%06zu", k);
        r.example_id = id;
        r.dataset = dataset;
        out.push_back(std::move(r));
    }
    return out;
}

PlantedDataset gen_planted_dataset(const SynthSpec& raw_spec, std::size_t n_examples) {
    const SynthSpec spec = with_default_profiles(raw_spec);
    spec.validate();
    if (n_examples < 20) throw std::invalid_argument("planted dataset needs at least 20 examples");
    PlantedDataset out;
    out.n_layers = spec.n_layers;
    out.labels = balanced_labels(n_examples, derive_seed(spec.seed, 14));
    out.features.resize(n_examples * spec.n_layers);
    std::mt19937_64 rng(derive_seed(spec.seed, 15));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t r = 0; r < n_examples; ++r) {
        const auto& profile = spec.profile(out.labels[r]);
        for (std::size_t l = 0; l < spec.n_layers; ++l) {
            const double noise = spec.noise_sigma > 0.0 ? spec.noise_sigma * normal(rng) : 0.0;
            out.features[r * spec.n_layers + l] = std::clamp(profile[l] + noise, 0.0, 1.0);
        }
    }
    return out;
}

}  // namespace icr
