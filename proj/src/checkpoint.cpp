// Probe checkpoint: "ICRP" | u32 version | u64 header length | JSON header |
// zero padding to 64 bytes | float32 payload.
//
// Payload order, per layer k: weight (row-major, out x in), bias, and for
// hidden layers gamma, beta, running_mean, running_var.

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "icr/probe.hpp"

namespace icr {

namespace {

constexpr char kMagic[4] = {'I', 'C', 'R', 'P'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kAlign = 64;

std::vector<std::span<const double>> payload_blocks(const ProbeModel& model) {
    std::vector<std::span<const double>> blocks;
    for (std::size_t k = 0; k < model.dense.size(); ++k) {
        blocks.emplace_back(model.dense[k].weight.data());
        blocks.emplace_back(model.dense[k].bias);
        if (k < model.norms.size()) {
            const auto& bn = model.norms[k];
            blocks.emplace_back(bn.gamma);
            blocks.emplace_back(bn.beta);
            blocks.emplace_back(bn.running_mean);
            blocks.emplace_back(bn.running_var);
        }
    }
    return blocks;
}

std::vector<std::span<double>> payload_blocks(ProbeModel& model) {
    std::vector<std::span<double>> blocks;
    for (std::size_t k = 0; k < model.dense.size(); ++k) {
        blocks.emplace_back(model.dense[k].weight.data());
        blocks.emplace_back(model.dense[k].bias);
        if (k < model.norms.size()) {
            auto& bn = model.norms[k];
            blocks.emplace_back(bn.gamma);
            blocks.emplace_back(bn.beta);
            blocks.emplace_back(bn.running_mean);
            blocks.emplace_back(bn.running_var);
        }
    }
    return blocks;
}

}  // namespace

std::vector<std::byte> encode_checkpoint(const ProbeModel& model) {
    static_assert(std::endian::native == std::endian::little);
    nlohmann::json header;
    header["format"] = "icr-probe";
    header["config"] = to_json(model.config);
    nlohmann::json shapes = nlohmann::json::array();
    std::size_t count = 0;
    for (const auto& layer : model.dense) {
        shapes.push_back({layer.weight.rows(), layer.weight.cols()});
    }
    for (auto block : payload_blocks(model)) count += block.size();
    header["layer_shapes"] = shapes;
    header["payload_floats"] = count;
    header["dtype"] = "f32le";
    const std::string text = header.dump();

    std::vector<std::byte> out;
    auto put = [&](const void* p, std::size_t n) {
        const auto* b = static_cast<const std::byte*>(p);
        out.insert(out.end(), b, b + n);
    };
    put(kMagic, 4);
    put(&kVersion, 4);
    const std::uint64_t len = text.size();
    put(&len, 8);
    put(text.data(), text.size());
    out.resize((out.size() + kAlign - 1) / kAlign * kAlign, std::byte{0});
    for (auto block : payload_blocks(model)) {
        for (double v : block) {
            const float f = static_cast<float>(v);
            put(&f, sizeof f);
        }
    }
    return out;
}

ProbeModel decode_checkpoint(std::span<const std::byte> bytes) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw ProbeError("checkpoint: bad magic");
    }
    std::uint32_t version;
    std::uint64_t len;
    std::memcpy(&version, bytes.data() + 4, 4);
    std::memcpy(&len, bytes.data() + 8, 8);
    if (version != kVersion) throw ProbeError("checkpoint: unsupported version");
    if (len > bytes.size() - 16) throw ProbeError("checkpoint: truncated header");

    nlohmann::json header;
    ProbeConfig config;
    try {
        const auto* text = reinterpret_cast<const char*>(bytes.data() + 16);
        header = nlohmann::json::parse(text, text + len);
        config = probe_config_from_json(header.at("config"));
    } catch (const nlohmann::json::exception& e) {
        throw ProbeError(std::string("checkpoint: malformed header: ") + e.what());
    }

    ProbeModel model = init_probe(config);
    std::size_t offset = (16 + len + kAlign - 1) / kAlign * kAlign;
    for (auto block : payload_blocks(model)) {
        if (offset + block.size() * sizeof(float) > bytes.size()) {
            throw ProbeError("checkpoint: truncated payload");
        }
        for (double& v : block) {
            float f;
            std::memcpy(&f, bytes.data() + offset, sizeof f);
            v = f;
            offset += sizeof f;
        }
    }
    model.training = false;
    return model;
}

void save_checkpoint(const ProbeModel& model, const std::filesystem::path& path) {
    const auto bytes = encode_checkpoint(model);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ProbeError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ProbeError("write failed for " + path.string());
}

ProbeModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ProbeError("cannot open " + path.string());
    std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint({reinterpret_cast<const std::byte*>(raw.data()), raw.size()});
}

}  // namespace icr
