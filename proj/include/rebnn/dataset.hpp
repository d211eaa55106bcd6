#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rebnn/tensor.hpp"

namespace rebnn {

// Raised when dataset files are missing or unreadable (CLI exit code 2).
class DatasetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Raised on malformed dataset files (bad magic, truncation).
class DatasetFormatError : public DatasetError {
public:
    using DatasetError::DatasetError;
};

struct DatasetSpec {
    std::string name = "synthetic";  // mnist | cifar10 | synthetic
    std::string path;                // dataset root; REBNN_DATA_DIR is the fallback
    std::string split = "train";     // train | test
    std::size_t subset_size = 0;     // 0 = full split; selection is seed-deterministic
    std::uint64_t seed = 1;
    // synthetic generator geometry
    std::size_t channels = 1, height = 28, width = 28, classes = 10;
    // per-channel normalization; filled with per-dataset defaults when empty
    std::vector<float> normalize_mean, normalize_std;
};

struct Dataset {
    std::vector<std::size_t> image_shape;  // [C, H, W]
    std::vector<float> images;             // n * C*H*W, normalized
    std::vector<std::uint8_t> labels;
    std::size_t num_classes = 10;

    std::size_t size() const { return labels.size(); }
    std::size_t sample_values() const {
        return image_shape[0] * image_shape[1] * image_shape[2];
    }
    Tensor sample(std::size_t i) const {
        Tensor t(image_shape);
        const float* src = images.data() + i * sample_values();
        std::copy(src, src + sample_values(), t.data.begin());
        return t;
    }
};

// IDX-format MNIST pair (images magic 0x803, labels magic 0x801, big-endian
// headers). Pixels are scaled to [0,1] before normalization.
Dataset load_mnist_idx(const std::string& dir, const std::string& split,
                       const std::vector<float>& mean, const std::vector<float>& stddev);

// CIFAR-10 binary batches (3073-byte records: label byte + 3072 pixels).
Dataset load_cifar10(const std::string& dir, const std::string& split,
                     const std::vector<float>& mean, const std::vector<float>& stddev);

// Gaussian class-cluster images: each class has a fixed smooth prototype plus
// per-sample noise. Fully deterministic from the seed; no files needed.
Dataset make_synthetic(const DatasetSpec& spec);

// Resolves name/path/split/subsetting and normalization defaults.
Dataset load_dataset(const DatasetSpec& spec);

// Seed-deterministic subset: stable shuffle of [0,n), keep the first k.
Dataset take_subset(const Dataset& full, std::size_t k, std::uint64_t seed);

// Effective dataset root: spec path, else REBNN_DATA_DIR, else "data".
std::string resolve_data_dir(const std::string& configured);

}  // namespace rebnn
