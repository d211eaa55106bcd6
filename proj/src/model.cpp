#include "rebnn/model.hpp"

#include <cmath>
#include <stdexcept>

namespace rebnn {

const char* layer_kind_name(const Layer& layer) {
    switch (layer.index()) {
        case 0: return "conv2d";
        case 1: return "binary_conv";
        case 2: return "batchnorm";
        case 3: return "hardtanh";
        case 4: return "linear";
        default: return "unknown";
    }
}

std::vector<std::size_t> Model::binary_layer_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < layers.size(); ++i)
        if (std::holds_alternative<BinaryConvLayer>(layers[i])) out.push_back(i);
    return out;
}

const BinaryConvLayer& Model::binary_at(std::size_t layer_index) const {
    return std::get<BinaryConvLayer>(layers.at(layer_index));
}

BinaryConvLayer& Model::binary_at(std::size_t layer_index) {
    return std::get<BinaryConvLayer>(layers.at(layer_index));
}

void Model::prepare_packed() {
    for (Layer& l : layers)
        if (auto* b = std::get_if<BinaryConvLayer>(&l)) b->packed_weights = pack_weight_signs(b->core);
}

namespace {

Tensor kaiming_uniform(const std::vector<std::size_t>& shape, std::size_t fan_in, Rng& rng) {
    Tensor w(shape);
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (float& v : w.data) v = static_cast<float>(rng.uniform(-bound, bound));
    return w;
}

BinaryConvLayer make_binary_conv(std::size_t c_in, std::size_t c_out, std::size_t k, int stride,
                                 int padding, double gamma_init, Rng& rng) {
    BinaryConvLayer layer;
    layer.stride = stride;
    layer.padding = padding;
    layer.core.latent_weight = kaiming_uniform({c_out, c_in, k, k}, c_in * k * k, rng);
    layer.core.alpha.resize(c_out);
    const std::size_t m = layer.core.fan_in();
    for (std::size_t i = 0; i < c_out; ++i)
        layer.core.alpha[i] = std::max(cam_scale(layer.core.channel(i), m), 1e-8f);
    layer.core.gamma.assign(c_out, static_cast<float>(gamma_init));
    const PackedBitTensor signs = pack_weight_signs(layer.core);
    layer.core.prev_sign = signs;
    layer.core.prev_prev_sign = signs;
    return layer;
}

}  // namespace

Model build_cnn4(const ModelConfig& cfg, const std::vector<std::size_t>& input_shape,
                 std::size_t num_classes, std::uint64_t seed) {
    if (cfg.arch != "cnn4")
        throw std::invalid_argument("model: unknown arch '" + cfg.arch + "'");
    if (cfg.widths.size() != 3)
        throw std::invalid_argument("model: cnn4 needs 3 widths, got " +
                                    std::to_string(cfg.widths.size()));
    if (input_shape.size() != 3)
        throw DimensionError("model: input shape must be [C,H,W]");

    Rng rng(seed ^ 0x5eedf00dULL);
    const std::size_t c0 = input_shape[0], h0 = input_shape[1], w0 = input_shape[2];
    const std::size_t c1 = cfg.widths[0], c2 = cfg.widths[1], c3 = cfg.widths[2];

    Model model;
    model.input_shape = input_shape;
    model.num_classes = num_classes;

    // real first conv, 3x3, stride 1, pad 1
    Conv2dLayer conv1;
    conv1.weight = kaiming_uniform({c1, c0, 3, 3}, c0 * 9, rng);
    conv1.stride = 1;
    conv1.padding = 1;
    model.layers.emplace_back(std::move(conv1));
    model.layers.emplace_back(BatchNormLayer(c1));
    model.layers.emplace_back(HardtanhLayer{});

    // two binary conv blocks, 3x3, stride 2, pad 1 (halve spatial extent)
    model.layers.emplace_back(make_binary_conv(c1, c2, 3, 2, 1, 0.0, rng));
    model.layers.emplace_back(BatchNormLayer(c2));
    model.layers.emplace_back(HardtanhLayer{});
    model.layers.emplace_back(make_binary_conv(c2, c3, 3, 2, 1, 0.0, rng));
    model.layers.emplace_back(BatchNormLayer(c3));
    model.layers.emplace_back(HardtanhLayer{});

    // real classifier head on the flattened features; spatial extent after a
    // stride-2 pad-1 K=3 conv is floor((n - 1) / 2) + 1
    auto halved = [](std::size_t n) { return (n - 1) / 2 + 1; };
    const std::size_t hf = halved(halved(h0));
    const std::size_t wf = halved(halved(w0));
    LinearLayer head;
    head.weight = kaiming_uniform({num_classes, c3 * hf * wf}, c3 * hf * wf, rng);
    head.bias.assign(num_classes, 0.0f);
    model.layers.emplace_back(std::move(head));
    return model;
}

Tensor forward_eval_sample(const Model& model, const Tensor& input, bool use_packed) {
    // single-sample unit of work: serial kernels throughout so callers may
    // parallelize across samples
    Tensor x = input;
    for (const Layer& l : model.layers) {
        if (const auto* conv = std::get_if<Conv2dLayer>(&l)) {
            x = serial::conv2d_forward(x, conv->weight, conv->stride, conv->padding);
        } else if (const auto* bin = std::get_if<BinaryConvLayer>(&l)) {
            if (use_packed) {
                if (!bin->packed_weights)
                    throw std::logic_error("model: packed weights not prepared");
                x = serial::binary_conv_packed(sign_binarize(x), *bin->packed_weights,
                                               bin->core.alpha, bin->core.latent_weight.shape[2],
                                               bin->stride, bin->padding);
            } else {
                const Tensor sign_w = sign_binarize(bin->core.latent_weight);
                Tensor raw = serial::sign_conv_raw(sign_binarize(x), sign_w, bin->stride,
                                                   bin->padding);
                const std::size_t plane = raw.shape[1] * raw.shape[2];
                for (std::size_t oc = 0; oc < raw.shape[0]; ++oc) {
                    float* p = raw.data.data() + oc * plane;
                    const float a = bin->core.alpha[oc];
                    for (std::size_t i = 0; i < plane; ++i) p[i] *= a;
                }
                x = std::move(raw);
            }
        } else if (const auto* bn = std::get_if<BatchNormLayer>(&l)) {
            const auto& p = bn->params;
            Tensor y(x.shape);
            const std::size_t spatial = x.size() / p.channels();
            for (std::size_t c = 0; c < p.channels(); ++c) {
                const float inv = 1.0f / std::sqrt(p.running_var[c] + p.eps);
                const float* px = x.data.data() + c * spatial;
                float* py = y.data.data() + c * spatial;
                for (std::size_t i = 0; i < spatial; ++i)
                    py[i] = p.gamma[c] * (px[i] - p.running_mean[c]) * inv + p.beta[c];
            }
            x = std::move(y);
        } else if (std::holds_alternative<HardtanhLayer>(l)) {
            x = hardtanh_forward(x);
        } else if (const auto* lin = std::get_if<LinearLayer>(&l)) {
            const std::size_t n = x.size();
            Tensor flat({n}, std::move(x.data));
            x = serial::linear_forward(flat, lin->weight, lin->bias);
        }
    }
    return x;
}

OpsReport count_ops(const Model& model) {
    OpsReport total;
    std::vector<std::size_t> shape = model.input_shape;  // [C,H,W]
    for (const Layer& l : model.layers) {
        if (const auto* conv = std::get_if<Conv2dLayer>(&l)) {
            Tensor dummy(shape);
            const ConvGeom g = conv_geometry(dummy, conv->weight, conv->stride, conv->padding,
                                             "count_ops");
            total += real_conv_ops(g.c_out, g.c_in, g.k, g.h_out, g.w_out);
            shape = {g.c_out, g.h_out, g.w_out};
        } else if (const auto* bin = std::get_if<BinaryConvLayer>(&l)) {
            Tensor dummy(shape);
            const ConvGeom g = conv_geometry(dummy, bin->core.latent_weight, bin->stride,
                                             bin->padding, "count_ops");
            total += binary_conv_ops(g.c_out, g.c_in, g.k, g.h_out, g.w_out);
            shape = {g.c_out, g.h_out, g.w_out};
        } else if (const auto* bn = std::get_if<BatchNormLayer>(&l)) {
            std::size_t spatial = 1;
            for (std::size_t i = 1; i < shape.size(); ++i) spatial *= shape[i];
            total += batchnorm_ops(bn->params.channels(), spatial);
        } else if (std::holds_alternative<HardtanhLayer>(l)) {
            std::size_t n = 1;
            for (std::size_t d : shape) n *= d;
            OpsReport r;
            r.flops = n;
            total += r;
        } else if (const auto* lin = std::get_if<LinearLayer>(&l)) {
            total += linear_ops(lin->weight.shape[0], lin->weight.shape[1]);
            shape = {lin->weight.shape[0]};
        }
    }
    return total;
}

}  // namespace rebnn
