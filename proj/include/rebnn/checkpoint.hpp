#pragma once

#include <string>

#include "rebnn/model.hpp"

namespace rebnn {

// Raised when a checkpoint's format version is unsupported (CLI exit code 4).
class CheckpointVersionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class CheckpointFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Binary ".rbnn" checkpoint: magic "RBNN", little-endian, version 1, a config
// snapshot, then one record per layer (kind, shapes, float32 weights, alpha,
// gamma, batchnorm stats, and an optional packed-weight section for
// inference-only export). Loading reproduces a model whose forward outputs
// are bitwise identical on any input.
void save_checkpoint(const Model& model, const std::string& config_json, const std::string& path,
                     bool include_packed = true);

struct LoadedCheckpoint {
    Model model;
    std::string config_json;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace rebnn
