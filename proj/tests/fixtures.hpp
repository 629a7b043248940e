#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <unistd.h>

#include "icr/synth.hpp"

namespace icr::test {

inline ActivationRecord small_record(std::uint64_t seed, std::size_t n = 8, std::size_t layers = 3,
                                     std::size_t d = 6, int label = 0) {
    SynthSpec spec;
    spec.seed = seed;
    spec.n_tokens = n;
    spec.n_layers = layers;
    spec.hidden_dim = d;
    spec.answer_len = n / 2;
    return gen_synthetic_record(spec, label);
}

/// Fresh scratch directory removed on scope exit.
class ScratchDir {
public:
    explicit ScratchDir(const std::string& tag)
        : path_(std::filesystem::temp_directory_path() /
                ("icr_" + tag + "_" + std::to_string(::getpid()))) {
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~ScratchDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    ScratchDir(const ScratchDir&) = delete;
    ScratchDir& operator=(const ScratchDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

}  // namespace icr::test
