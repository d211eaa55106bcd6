#include "rebnn/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace rebnn {

namespace {

constexpr char kMagic[4] = {'R', 'B', 'N', 'N'};

enum class LayerKind : std::uint8_t {
    conv2d = 0,
    binary_conv = 1,
    batchnorm = 2,
    hardtanh = 3,
    linear = 4,
};

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T)))
        throw CheckpointFormatError("checkpoint: truncated file");
    return v;
}

void write_floats(std::ostream& out, const float* p, std::size_t n) {
    out.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(float)));
}

void read_floats(std::istream& in, float* p, std::size_t n) {
    if (!in.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(float))))
        throw CheckpointFormatError("checkpoint: truncated float payload");
}

void write_string(std::ostream& out, const std::string& s) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
    const auto n = read_pod<std::uint32_t>(in);
    std::string s(n, '\0');
    if (n && !in.read(s.data(), n)) throw CheckpointFormatError("checkpoint: truncated string");
    return s;
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& config_json, const std::string& path,
                     bool include_packed) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot write '" + path + "'");

    out.write(kMagic, 4);
    write_pod<std::uint32_t>(out, kCheckpointVersion);
    write_string(out, config_json);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(model.input_shape[0]));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(model.input_shape[1]));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(model.input_shape[2]));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(model.num_classes));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(model.layers.size()));

    for (const Layer& layer : model.layers) {
        if (const auto* conv = std::get_if<Conv2dLayer>(&layer)) {
            write_pod(out, static_cast<std::uint8_t>(LayerKind::conv2d));
            for (std::size_t d : conv->weight.shape) write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(d));
            write_pod<std::int32_t>(out, conv->stride);
            write_pod<std::int32_t>(out, conv->padding);
            write_floats(out, conv->weight.data.data(), conv->weight.size());
        } else if (const auto* bin = std::get_if<BinaryConvLayer>(&layer)) {
            write_pod(out, static_cast<std::uint8_t>(LayerKind::binary_conv));
            for (std::size_t d : bin->core.latent_weight.shape)
                write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(d));
            write_pod<std::int32_t>(out, bin->stride);
            write_pod<std::int32_t>(out, bin->padding);
            write_floats(out, bin->core.latent_weight.data.data(), bin->core.latent_weight.size());
            write_floats(out, bin->core.alpha.data(), bin->core.alpha.size());
            write_floats(out, bin->core.gamma.data(), bin->core.gamma.size());
            const std::uint8_t has_packed = include_packed ? 1 : 0;
            write_pod(out, has_packed);
            if (include_packed) {
                // words row-major over (C_out, word index), little-endian
                const PackedBitTensor packed = pack_weight_signs(bin->core);
                write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(packed.words_per_row));
                out.write(reinterpret_cast<const char*>(packed.words.data()),
                          static_cast<std::streamsize>(packed.words.size() * sizeof(std::uint64_t)));
            }
        } else if (const auto* bn = std::get_if<BatchNormLayer>(&layer)) {
            write_pod(out, static_cast<std::uint8_t>(LayerKind::batchnorm));
            const auto& p = bn->params;
            write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(p.channels()));
            write_floats(out, p.gamma.data(), p.channels());
            write_floats(out, p.beta.data(), p.channels());
            write_floats(out, p.running_mean.data(), p.channels());
            write_floats(out, p.running_var.data(), p.channels());
            write_pod<float>(out, p.eps);
            write_pod<float>(out, p.momentum);
        } else if (std::holds_alternative<HardtanhLayer>(layer)) {
            write_pod(out, static_cast<std::uint8_t>(LayerKind::hardtanh));
        } else if (const auto* lin = std::get_if<LinearLayer>(&layer)) {
            write_pod(out, static_cast<std::uint8_t>(LayerKind::linear));
            write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(lin->weight.shape[0]));
            write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(lin->weight.shape[1]));
            write_floats(out, lin->weight.data.data(), lin->weight.size());
            write_floats(out, lin->bias.data(), lin->bias.size());
        }
    }
    if (!out) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot read '" + path + "'");

    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw CheckpointFormatError("checkpoint: bad magic, expected \"RBNN\"");
    const auto version = read_pod<std::uint32_t>(in);
    if (version != kCheckpointVersion)
        throw CheckpointVersionError("checkpoint: unsupported version " + std::to_string(version) +
                                     ", this build reads version " +
                                     std::to_string(kCheckpointVersion));

    LoadedCheckpoint loaded;
    loaded.config_json = read_string(in);
    Model& model = loaded.model;
    model.input_shape = {read_pod<std::uint32_t>(in), read_pod<std::uint32_t>(in),
                         read_pod<std::uint32_t>(in)};
    model.num_classes = read_pod<std::uint32_t>(in);
    const auto n_layers = read_pod<std::uint32_t>(in);

    for (std::uint32_t l = 0; l < n_layers; ++l) {
        const auto kind = static_cast<LayerKind>(read_pod<std::uint8_t>(in));
        switch (kind) {
            case LayerKind::conv2d: {
                Conv2dLayer conv;
                std::vector<std::size_t> shape(4);
                for (auto& d : shape) d = read_pod<std::uint32_t>(in);
                conv.stride = read_pod<std::int32_t>(in);
                conv.padding = read_pod<std::int32_t>(in);
                conv.weight = Tensor(shape);
                read_floats(in, conv.weight.data.data(), conv.weight.size());
                model.layers.emplace_back(std::move(conv));
                break;
            }
            case LayerKind::binary_conv: {
                BinaryConvLayer bin;
                std::vector<std::size_t> shape(4);
                for (auto& d : shape) d = read_pod<std::uint32_t>(in);
                bin.stride = read_pod<std::int32_t>(in);
                bin.padding = read_pod<std::int32_t>(in);
                bin.core.latent_weight = Tensor(shape);
                read_floats(in, bin.core.latent_weight.data.data(), bin.core.latent_weight.size());
                bin.core.alpha.resize(shape[0]);
                bin.core.gamma.resize(shape[0]);
                read_floats(in, bin.core.alpha.data(), shape[0]);
                read_floats(in, bin.core.gamma.data(), shape[0]);
                const auto has_packed = read_pod<std::uint8_t>(in);
                if (has_packed) {
                    PackedBitTensor packed;
                    packed.logical_shape = shape;
                    packed.rows = shape[0];
                    packed.valid_len = shape[1] * shape[2] * shape[3];
                    packed.words_per_row = read_pod<std::uint32_t>(in);
                    if (packed.words_per_row != (packed.valid_len + 63) / 64)
                        throw CheckpointFormatError("checkpoint: packed section geometry mismatch");
                    packed.words.resize(packed.rows * packed.words_per_row);
                    if (!in.read(reinterpret_cast<char*>(packed.words.data()),
                                 static_cast<std::streamsize>(packed.words.size() *
                                                              sizeof(std::uint64_t))))
                        throw CheckpointFormatError("checkpoint: truncated packed section");
                    bin.packed_weights = std::move(packed);
                }
                const PackedBitTensor signs = pack_weight_signs(bin.core);
                bin.core.prev_sign = signs;
                bin.core.prev_prev_sign = signs;
                model.layers.emplace_back(std::move(bin));
                break;
            }
            case LayerKind::batchnorm: {
                const auto c = read_pod<std::uint32_t>(in);
                BatchNormLayer bn(c);
                read_floats(in, bn.params.gamma.data(), c);
                read_floats(in, bn.params.beta.data(), c);
                read_floats(in, bn.params.running_mean.data(), c);
                read_floats(in, bn.params.running_var.data(), c);
                bn.params.eps = read_pod<float>(in);
                bn.params.momentum = read_pod<float>(in);
                model.layers.emplace_back(std::move(bn));
                break;
            }
            case LayerKind::hardtanh:
                model.layers.emplace_back(HardtanhLayer{});
                break;
            case LayerKind::linear: {
                LinearLayer lin;
                const auto out_n = read_pod<std::uint32_t>(in);
                const auto in_n = read_pod<std::uint32_t>(in);
                lin.weight = Tensor({out_n, in_n});
                read_floats(in, lin.weight.data.data(), lin.weight.size());
                lin.bias.resize(out_n);
                read_floats(in, lin.bias.data(), out_n);
                model.layers.emplace_back(std::move(lin));
                break;
            }
            default:
                throw CheckpointFormatError("checkpoint: unknown layer kind " +
                                            std::to_string(static_cast<int>(kind)));
        }
    }
    return loaded;
}

}  // namespace rebnn
