#pragma once

// ICRD v1: single-example activation dump.
//
// Layout, in order:
//   "ICRD" | u32 version (=1) | u64 header length | UTF-8 JSON header |
//   zero padding to a 64-byte boundary | tensor payloads
//
// The JSON header carries every scalar field of the record plus a tensor
// directory {name, shape, dtype, offset, length}. Offsets are absolute file
// offsets, 64-byte aligned. All tensors are little-endian float32.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace icr {

class DumpError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kDumpVersion = 1;
inline constexpr std::size_t kDumpAlignment = 64;

/// Half-open token interval [begin, end) of the generated answer.
struct AnswerSpan {
    std::size_t begin = 0;
    std::size_t end = 0;

    std::size_t size() const { return end > begin ? end - begin : 0; }
    bool operator==(const AnswerSpan&) const = default;
};

/// What the stored attention values are. Pre-softmax scores get a causal
/// softmax downstream; post-softmax maps are only renormalized.
enum class AttnKind { pre_softmax, post_softmax };

std::string to_string(AttnKind kind);
AttnKind attn_kind_from_string(const std::string& s);

/// One teacher-forced (question, answer) forward pass.
///
/// hidden has shape (L+1, N, d): slice 0 is the embedding output, slice l the
/// output of decoder layer l. attn has shape (L, N, N) and holds head-averaged
/// attention scores; row i is only meaningful for columns j <= i.
struct ActivationRecord {
    std::string example_id;
    std::string dataset;
    std::size_t n_tokens = 0;
    std::size_t n_layers = 0;
    std::size_t hidden_dim = 0;
    std::vector<float> hidden;
    std::vector<float> attn;
    AnswerSpan answer_span;
    int label = 0;
    std::optional<std::vector<float>> logprob;
    std::vector<std::string> tokens;
    AttnKind attn_kind = AttnKind::pre_softmax;

    // Optional per-head scores, shape (L, H, N, N), for the log-determinant
    // baseline. n_heads == 0 when absent.
    std::size_t n_heads = 0;
    std::vector<float> attn_perhead;

    // Free-form extractor metadata (model id, soft-capping choice, prompt
    // template...). Round-trips verbatim.
    nlohmann::json extra = nlohmann::json::object();

    /// Hidden state of `token` in hidden slice `slice` (0 = embedding).
    std::span<const float> hidden_row(std::size_t slice, std::size_t token) const;
    std::span<float> hidden_row(std::size_t slice, std::size_t token);

    /// Attention score row of query `token` at decoder layer `layer` (1-based).
    std::span<const float> attn_row(std::size_t layer, std::size_t token) const;
    std::span<float> attn_row(std::size_t layer, std::size_t token);

    /// Per-head score row; layer 1-based, head 0-based.
    std::span<const float> attn_head_row(std::size_t layer, std::size_t head,
                                         std::size_t token) const;

    /// Allocates zeroed tensors for the given shape.
    void resize(std::size_t tokens, std::size_t layers, std::size_t dim);
};

/// Field-by-field equality, bitwise on tensors (NaN payloads compare by bits).
bool records_equal(const ActivationRecord& a, const ActivationRecord& b);

struct Violation {
    std::string message;
    std::string location;
};

struct ValidationReport {
    std::vector<Violation> violations;

    bool ok() const { return violations.empty(); }
    bool contains(const std::string& message) const;
};

/// Lists every violated record invariant. Never throws.
ValidationReport validate_dump(const ActivationRecord& record);

/// Serializes `record` to the ICRD byte layout. Upper-triangle attention
/// entries (j > i) are written as zero. Throws DumpError on an invalid record.
std::vector<std::byte> encode_dump(const ActivationRecord& record);

/// Parses ICRD bytes. Throws DumpError on any structural problem.
ActivationRecord decode_dump(std::span<const std::byte> bytes);

void write_dump(const ActivationRecord& record, const std::filesystem::path& path);
ActivationRecord read_dump(const std::filesystem::path& path);

/// All *.icrd files directly under `dir`, sorted by filename.
std::vector<std::filesystem::path> list_dumps(const std::filesystem::path& dir);

}  // namespace icr
