#include "icr/dump.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

namespace icr {

static_assert(std::endian::native == std::endian::little,
              "ICRD payloads are read and written as native little-endian");

namespace {

constexpr char kMagic[4] = {'I', 'C', 'R', 'D'};
constexpr std::size_t kPreambleSize = 16;

std::size_t align_up(std::size_t n) {
    return (n + kDumpAlignment - 1) / kDumpAlignment * kDumpAlignment;
}

template <typename T>
void put_le(std::vector<std::byte>& out, T value) {
    const auto* p = reinterpret_cast<const std::byte*>(&value);
    out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T get_le(std::span<const std::byte> bytes, std::size_t offset) {
    T value;
    std::memcpy(&value, bytes.data() + offset, sizeof(T));
    return value;
}

struct TensorEntry {
    std::string name;
    std::vector<std::size_t> shape;
    const std::vector<float>* data;
};

bool bits_equal(const std::vector<float>& a, const std::vector<float>& b) {
    return a.size() == b.size() &&
           (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
}

std::string index_string(std::initializer_list<std::size_t> idx) {
    std::ostringstream os;
    os << '[';
    bool first = true;
    for (auto v : idx) {
        if (!first) os << ',';
        os << v;
        first = false;
    }
    os << ']';
    return os.str();
}

}  // namespace

std::string to_string(AttnKind kind) {
    return kind == AttnKind::pre_softmax ? "pre_softmax" : "post_softmax";
}

AttnKind attn_kind_from_string(const std::string& s) {
    if (s == "pre_softmax") return AttnKind::pre_softmax;
    if (s == "post_softmax") return AttnKind::post_softmax;
    throw DumpError("unknown attn_kind '" + s + "'");
}

std::span<const float> ActivationRecord::hidden_row(std::size_t slice, std::size_t token) const {
    return {hidden.data() + (slice * n_tokens + token) * hidden_dim, hidden_dim};
}

std::span<float> ActivationRecord::hidden_row(std::size_t slice, std::size_t token) {
    return {hidden.data() + (slice * n_tokens + token) * hidden_dim, hidden_dim};
}

std::span<const float> ActivationRecord::attn_row(std::size_t layer, std::size_t token) const {
    return {attn.data() + ((layer - 1) * n_tokens + token) * n_tokens, n_tokens};
}

std::span<float> ActivationRecord::attn_row(std::size_t layer, std::size_t token) {
    return {attn.data() + ((layer - 1) * n_tokens + token) * n_tokens, n_tokens};
}

std::span<const float> ActivationRecord::attn_head_row(std::size_t layer, std::size_t head,
                                                       std::size_t token) const {
    const std::size_t n = n_tokens;
    return {attn_perhead.data() + (((layer - 1) * n_heads + head) * n + token) * n, n};
}

void ActivationRecord::resize(std::size_t tokens, std::size_t layers, std::size_t dim) {
    n_tokens = tokens;
    n_layers = layers;
    hidden_dim = dim;
    hidden.assign((layers + 1) * tokens * dim, 0.0f);
    attn.assign(layers * tokens * tokens, 0.0f);
}

bool records_equal(const ActivationRecord& a, const ActivationRecord& b) {
    if (a.example_id != b.example_id || a.dataset != b.dataset || a.n_tokens != b.n_tokens ||
        a.n_layers != b.n_layers || a.hidden_dim != b.hidden_dim ||
        a.answer_span != b.answer_span || a.label != b.label || a.tokens != b.tokens ||
        a.attn_kind != b.attn_kind || a.n_heads != b.n_heads || a.extra != b.extra) {
        return false;
    }
    if (a.logprob.has_value() != b.logprob.has_value()) return false;
    if (a.logprob && !bits_equal(*a.logprob, *b.logprob)) return false;
    return bits_equal(a.hidden, b.hidden) && bits_equal(a.attn, b.attn) &&
           bits_equal(a.attn_perhead, b.attn_perhead);
}

bool ValidationReport::contains(const std::string& message) const {
    return std::any_of(violations.begin(), violations.end(),
                       [&](const Violation& v) { return v.message == message; });
}

ValidationReport validate_dump(const ActivationRecord& r) {
    ValidationReport report;
    auto flag = [&](std::string message, std::string location = {}) {
        report.violations.push_back({std::move(message), std::move(location)});
    };

    const std::size_t n = r.n_tokens, layers = r.n_layers, d = r.hidden_dim;
    if (n == 0) flag("zero token count", "n_tokens");
    if (layers == 0) flag("zero layer count", "n_layers");
    if (d == 0) flag("zero hidden dim", "hidden_dim");

    if (r.answer_span.begin >= r.answer_span.end) {
        flag("empty answer span", "answer_span");
    } else if (r.answer_span.end > n) {
        flag("span exceeds token count", "answer_span");
    }
    if (r.label != 0 && r.label != 1) flag("label not binary", "label");

    const bool hidden_shape_ok = r.hidden.size() == (layers + 1) * n * d;
    const bool attn_shape_ok = r.attn.size() == layers * n * n;
    if (!hidden_shape_ok) flag("hidden shape mismatch", "hidden");
    if (!attn_shape_ok) flag("attn shape mismatch", "attn");

    if (hidden_shape_ok) {
        for (std::size_t idx = 0; idx < r.hidden.size(); ++idx) {
            if (!std::isfinite(r.hidden[idx])) {
                const std::size_t slice = idx / (n * d), rem = idx % (n * d);
                flag("non-finite hidden", "hidden" + index_string({slice, rem / d, rem % d}));
            }
        }
    }
    if (attn_shape_ok) {
        for (std::size_t l = 1; l <= layers; ++l) {
            for (std::size_t i = 0; i < n; ++i) {
                auto row = r.attn_row(l, i);
                for (std::size_t j = 0; j <= i; ++j) {
                    if (!std::isfinite(row[j])) {
                        flag("non-finite attn", "attn" + index_string({l - 1, i, j}));
                    }
                }
            }
        }
    }
    if (r.logprob && r.logprob->size() != n) flag("logprob length mismatch", "logprob");
    if (!r.tokens.empty() && r.tokens.size() != n) flag("token list length mismatch", "tokens");
    if (r.n_heads > 0 && r.attn_perhead.size() != layers * r.n_heads * n * n) {
        flag("attn_perhead shape mismatch", "attn_perhead");
    }
    if (r.n_heads == 0 && !r.attn_perhead.empty()) {
        flag("attn_perhead present without head count", "attn_perhead");
    }
    if (!r.extra.is_object()) flag("extra metadata not an object", "extra");
    return report;
}

std::vector<std::byte> encode_dump(const ActivationRecord& r) {
    auto report = validate_dump(r);
    if (!report.ok()) {
        const auto& v = report.violations.front();
        throw DumpError(v.message + (v.location.empty() ? "" : " at " + v.location));
    }

    const std::size_t n = r.n_tokens;
    std::vector<float> attn = r.attn;
    for (std::size_t l = 0; l < r.n_layers; ++l)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) attn[(l * n + i) * n + j] = 0.0f;
    std::vector<float> perhead = r.attn_perhead;
    for (std::size_t row = 0; row < perhead.size() / std::max<std::size_t>(n, 1); ++row) {
        const std::size_t i = row % n;
        for (std::size_t j = i + 1; j < n; ++j) perhead[row * n + j] = 0.0f;
    }

    std::vector<TensorEntry> tensors{
        {"hidden", {r.n_layers + 1, n, r.hidden_dim}, &r.hidden},
        {"attn", {r.n_layers, n, n}, &attn},
    };
    if (r.logprob) tensors.push_back({"logprob", {n}, &*r.logprob});
    if (r.n_heads > 0) tensors.push_back({"attn_perhead", {r.n_layers, r.n_heads, n, n}, &perhead});

    nlohmann::json header;
    header["example_id"] = r.example_id;
    header["dataset"] = r.dataset;
    header["n_tokens"] = n;
    header["n_layers"] = r.n_layers;
    header["hidden_dim"] = r.hidden_dim;
    header["answer_span"] = {r.answer_span.begin, r.answer_span.end};
    header["label"] = r.label;
    header["tokens"] = r.tokens;
    header["attn_kind"] = to_string(r.attn_kind);
    header["n_heads"] = r.n_heads;
    header["extra"] = r.extra;

    // Offsets are absolute, so they depend on the header length. Iterate
    // until the header size (and hence the payload base) stops moving.
    std::string text;
    std::size_t base = align_up(kPreambleSize);
    for (;;) {
        nlohmann::json dir = nlohmann::json::array();
        std::size_t offset = base;
        for (const auto& t : tensors) {
            const std::size_t length = t.data->size() * sizeof(float);
            dir.push_back({{"name", t.name},
                           {"shape", t.shape},
                           {"dtype", "f32le"},
                           {"offset", offset},
                           {"length", length}});
            offset = align_up(offset + length);
        }
        header["tensors"] = dir;
        text = header.dump();
        const std::size_t next_base = align_up(kPreambleSize + text.size());
        if (next_base == base) break;
        base = next_base;
    }

    std::vector<std::byte> out;
    out.reserve(base);
    for (char c : kMagic) out.push_back(static_cast<std::byte>(c));
    put_le<std::uint32_t>(out, kDumpVersion);
    put_le<std::uint64_t>(out, text.size());
    for (char c : text) out.push_back(static_cast<std::byte>(c));
    out.resize(base, std::byte{0});
    for (const auto& t : tensors) {
        const auto* p = reinterpret_cast<const std::byte*>(t.data->data());
        out.insert(out.end(), p, p + t.data->size() * sizeof(float));
        out.resize(align_up(out.size()), std::byte{0});
    }
    return out;
}

ActivationRecord decode_dump(std::span<const std::byte> bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw DumpError("bad magic");
    }
    if (bytes.size() < kPreambleSize) throw DumpError("truncated payload");
    const auto version = get_le<std::uint32_t>(bytes, 4);
    if (version != kDumpVersion) {
        throw DumpError("unsupported version " + std::to_string(version));
    }
    const auto header_len = get_le<std::uint64_t>(bytes, 8);
    if (header_len > bytes.size() - kPreambleSize) throw DumpError("truncated payload");

    nlohmann::json header;
    try {
        const auto* text = reinterpret_cast<const char*>(bytes.data() + kPreambleSize);
        header = nlohmann::json::parse(text, text + header_len);
    } catch (const nlohmann::json::exception& e) {
        throw DumpError(std::string("malformed header: ") + e.what());
    }

    ActivationRecord r;
    try {
        r.example_id = header.at("example_id").get<std::string>();
        r.dataset = header.at("dataset").get<std::string>();
        r.n_tokens = header.at("n_tokens").get<std::size_t>();
        r.n_layers = header.at("n_layers").get<std::size_t>();
        r.hidden_dim = header.at("hidden_dim").get<std::size_t>();
        const auto& span = header.at("answer_span");
        r.answer_span = {span.at(0).get<std::size_t>(), span.at(1).get<std::size_t>()};
        r.label = header.at("label").get<int>();
        r.tokens = header.value("tokens", std::vector<std::string>{});
        r.attn_kind = attn_kind_from_string(header.value("attn_kind", std::string("pre_softmax")));
        r.n_heads = header.value("n_heads", std::size_t{0});
        r.extra = header.value("extra", nlohmann::json::object());
    } catch (const nlohmann::json::exception& e) {
        throw DumpError(std::string("malformed header: ") + e.what());
    }

    const std::size_t payload_base = align_up(kPreambleSize + header_len);
    std::map<std::string, std::vector<float>> tensors;
    std::vector<std::pair<std::size_t, std::size_t>> extents;
    try {
        for (const auto& entry : header.at("tensors")) {
            const auto name = entry.at("name").get<std::string>();
            const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
            const auto dtype = entry.at("dtype").get<std::string>();
            const auto offset = entry.at("offset").get<std::size_t>();
            const auto length = entry.at("length").get<std::size_t>();
            if (dtype != "f32le") throw DumpError("unsupported dtype '" + dtype + "' for " + name);
            std::size_t count = 1;
            for (auto s : shape) count *= s;
            if (length != count * sizeof(float)) {
                throw DumpError("tensor length does not match shape for " + name);
            }
            if (offset % kDumpAlignment != 0 || offset < payload_base) {
                throw DumpError("directory out of bounds: misplaced offset for " + name);
            }
            if (offset > bytes.size() || length > bytes.size() - offset) {
                // Extents that start inside the file but run past its end are a
                // short file; anything else is a broken directory.
                throw DumpError(offset < bytes.size() ? "truncated payload"
                                                      : "directory out of bounds: " + name);
            }
            extents.emplace_back(offset, offset + length);
            std::vector<float> data(count);
            if (length > 0) std::memcpy(data.data(), bytes.data() + offset, length);
            tensors.emplace(name, std::move(data));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DumpError(std::string("malformed header: ") + e.what());
    }
    std::sort(extents.begin(), extents.end());
    for (std::size_t k = 1; k < extents.size(); ++k) {
        if (extents[k].first < extents[k - 1].second) {
            throw DumpError("directory out of bounds: overlapping tensors");
        }
    }

    auto take = [&](const char* name) -> std::vector<float> {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw DumpError(std::string("missing tensor ") + name);
        return std::move(it->second);
    };
    r.hidden = take("hidden");
    r.attn = take("attn");
    if (tensors.count("logprob")) r.logprob = take("logprob");
    if (r.n_heads > 0) r.attn_perhead = take("attn_perhead");

    auto report = validate_dump(r);
    if (!report.ok()) {
        const auto& v = report.violations.front();
        throw DumpError("invalid record: " + v.message +
                        (v.location.empty() ? "" : " at " + v.location));
    }
    return r;
}

void write_dump(const ActivationRecord& record, const std::filesystem::path& path) {
    const auto bytes = encode_dump(record);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DumpError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DumpError("write failed for " + path.string());
}

ActivationRecord read_dump(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DumpError("cannot open " + path.string());
    std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::span<const std::byte> bytes(reinterpret_cast<const std::byte*>(raw.data()), raw.size());
    return decode_dump(bytes);
}

std::vector<std::filesystem::path> list_dumps(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) {
        throw DumpError("not a directory: " + dir.string());
    }
    std::vector<std::filesystem::path> out;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".icrd") {
            out.push_back(entry.path());
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace icr
