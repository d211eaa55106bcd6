#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "rebnn/binarize.hpp"
#include "rebnn/bitkernel.hpp"
#include "rebnn/nn_ops.hpp"
#include "rebnn/optimizer.hpp"
#include "rebnn/rng.hpp"
#include "rebnn/tensor.hpp"

// Sequential model for the desk-scale experiments: a real-valued first conv,
// binary conv blocks with batchnorm + hardtanh, and a real-valued linear
// classifier head. First layer, shortcut-free interior, and last layer stay
// real-valued.

namespace rebnn {

using Batch = std::vector<Tensor>;

struct Conv2dLayer {
    Tensor weight;  // [C_out, C_in, K, K]
    int stride = 1, padding = 0;
    Tensor velocity;
};

struct BinaryConvLayer {
    BinaryLayer core;
    int stride = 1, padding = 0;
    BinarySgdState<float> opt;
    // refreshed by prepare_packed(); used on the packed inference path
    std::optional<PackedBitTensor> packed_weights;
};

struct BatchNormLayer {
    BatchNormParams<float> params;
    std::vector<float> v_gamma, v_beta;
    explicit BatchNormLayer(std::size_t channels = 0)
        : params(channels), v_gamma(channels, 0.0f), v_beta(channels, 0.0f) {}
};

struct HardtanhLayer {};

struct LinearLayer {
    Tensor weight;  // [out, in]
    std::vector<float> bias;
    Tensor v_weight;
    std::vector<float> v_bias;
};

using Layer = std::variant<Conv2dLayer, BinaryConvLayer, BatchNormLayer, HardtanhLayer, LinearLayer>;

const char* layer_kind_name(const Layer& layer);

struct ModelConfig {
    std::string arch = "cnn4";
    std::vector<std::size_t> widths = {8, 8, 16};
};

struct Model {
    std::vector<Layer> layers;
    std::vector<std::size_t> input_shape;  // [C, H, W]
    std::size_t num_classes = 10;

    std::vector<std::size_t> binary_layer_indices() const;
    const BinaryConvLayer& binary_at(std::size_t layer_index) const;
    BinaryConvLayer& binary_at(std::size_t layer_index);

    // Pack every binary layer's weight signs for the XNOR/popcount path.
    void prepare_packed();
};

// The 4-layer CNN: real conv -> (BN, hardtanh) -> binary conv -> (BN,
// hardtanh) -> binary conv -> (BN, hardtanh) -> real linear head.
Model build_cnn4(const ModelConfig& cfg, const std::vector<std::size_t>& input_shape,
                 std::size_t num_classes, std::uint64_t seed);

// Forward pass through every layer for one sample (eval mode batch-norm).
// use_packed selects the XNOR/popcount kernels for binary convolutions.
Tensor forward_eval_sample(const Model& model, const Tensor& input, bool use_packed);

// Total ops/bytes accounting over the model at its configured input shape.
OpsReport count_ops(const Model& model);

}  // namespace rebnn
