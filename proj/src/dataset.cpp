#include "rebnn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>

#include "rebnn/rng.hpp"

namespace rebnn {

namespace {

std::uint32_t read_be32(std::istream& in, const char* what) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw DatasetFormatError(std::string("dataset: truncated header reading ") + what);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
           std::uint32_t(b[3]);
}

std::ifstream open_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DatasetError("dataset: missing file '" + path + "'");
    return in;
}

void normalize(std::vector<float>& images, std::size_t channels, std::size_t plane,
               const std::vector<float>& mean, const std::vector<float>& stddev) {
    const std::size_t per_sample = channels * plane;
    const std::size_t n = images.size() / per_sample;
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t c = 0; c < channels; ++c) {
            float* p = images.data() + s * per_sample + c * plane;
            for (std::size_t i = 0; i < plane; ++i) p[i] = (p[i] - mean[c]) / stddev[c];
        }
}

}  // namespace

std::string resolve_data_dir(const std::string& configured) {
    if (!configured.empty()) return configured;
    if (const char* env = std::getenv("REBNN_DATA_DIR"); env && *env) return env;
    return "data";
}

Dataset load_mnist_idx(const std::string& dir, const std::string& split,
                       const std::vector<float>& mean, const std::vector<float>& stddev) {
    const bool train = split == "train";
    const std::string img_path =
        dir + (train ? "/train-images-idx3-ubyte" : "/t10k-images-idx3-ubyte");
    const std::string lbl_path =
        dir + (train ? "/train-labels-idx1-ubyte" : "/t10k-labels-idx1-ubyte");

    std::ifstream img = open_file(img_path);
    const std::uint32_t img_magic = read_be32(img, "image magic");
    if (img_magic != 0x00000803u)
        throw DatasetFormatError("dataset: bad IDX image magic, expected 0x00000803 got 0x" +
                                 [&] { char b[16]; std::snprintf(b, sizeof(b), "%08x", img_magic); return std::string(b); }());
    const std::uint32_t n = read_be32(img, "image count");
    const std::uint32_t rows = read_be32(img, "rows");
    const std::uint32_t cols = read_be32(img, "cols");

    std::ifstream lbl = open_file(lbl_path);
    const std::uint32_t lbl_magic = read_be32(lbl, "label magic");
    if (lbl_magic != 0x00000801u)
        throw DatasetFormatError("dataset: bad IDX label magic, expected 0x00000801 got 0x" +
                                 [&] { char b[16]; std::snprintf(b, sizeof(b), "%08x", lbl_magic); return std::string(b); }());
    const std::uint32_t n_lbl = read_be32(lbl, "label count");
    if (n != n_lbl)
        throw DatasetFormatError("dataset: image/label count mismatch " + std::to_string(n) +
                                 " vs " + std::to_string(n_lbl));

    Dataset ds;
    ds.image_shape = {1, rows, cols};
    ds.num_classes = 10;
    const std::size_t plane = static_cast<std::size_t>(rows) * cols;
    ds.images.resize(static_cast<std::size_t>(n) * plane);
    ds.labels.resize(n);

    std::vector<unsigned char> buf(plane);
    for (std::uint32_t i = 0; i < n; ++i) {
        if (!img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(plane)))
            throw DatasetFormatError("dataset: truncated image file at record " + std::to_string(i));
        float* dst = ds.images.data() + static_cast<std::size_t>(i) * plane;
        for (std::size_t j = 0; j < plane; ++j) dst[j] = buf[j] / 255.0f;
    }
    if (!lbl.read(reinterpret_cast<char*>(ds.labels.data()), static_cast<std::streamsize>(n)))
        throw DatasetFormatError("dataset: truncated label file");
    for (std::uint8_t l : ds.labels)
        if (l > 9) throw DatasetFormatError("dataset: label out of range");

    normalize(ds.images, 1, plane, mean, stddev);
    return ds;
}

Dataset load_cifar10(const std::string& dir, const std::string& split,
                     const std::vector<float>& mean, const std::vector<float>& stddev) {
    std::vector<std::string> files;
    if (split == "train")
        for (int b = 1; b <= 5; ++b) files.push_back(dir + "/data_batch_" + std::to_string(b) + ".bin");
    else
        files.push_back(dir + "/test_batch.bin");

    constexpr std::size_t kPlane = 32 * 32;
    constexpr std::size_t kRecord = 1 + 3 * kPlane;

    Dataset ds;
    ds.image_shape = {3, 32, 32};
    ds.num_classes = 10;
    std::vector<unsigned char> rec(kRecord);
    for (const std::string& f : files) {
        std::ifstream in = open_file(f);
        in.seekg(0, std::ios::end);
        const auto bytes = static_cast<std::size_t>(in.tellg());
        if (bytes % kRecord != 0)
            throw DatasetFormatError("dataset: '" + f + "' size " + std::to_string(bytes) +
                                     " is not a multiple of the 3073-byte record");
        in.seekg(0);
        const std::size_t n = bytes / kRecord;
        for (std::size_t i = 0; i < n; ++i) {
            if (!in.read(reinterpret_cast<char*>(rec.data()), kRecord))
                throw DatasetFormatError("dataset: truncated CIFAR batch '" + f + "'");
            if (rec[0] > 9) throw DatasetFormatError("dataset: CIFAR label out of range");
            ds.labels.push_back(rec[0]);
            const std::size_t base = ds.images.size();
            ds.images.resize(base + 3 * kPlane);
            for (std::size_t j = 0; j < 3 * kPlane; ++j) ds.images[base + j] = rec[1 + j] / 255.0f;
        }
    }
    normalize(ds.images, 3, kPlane, mean, stddev);
    return ds;
}

Dataset make_synthetic(const DatasetSpec& spec) {
    const std::size_t n = spec.subset_size == 0 ? 1000 : spec.subset_size;
    const std::size_t c = spec.channels, h = spec.height, w = spec.width;
    const std::size_t plane = h * w, per_sample = c * plane;

    // class prototypes: sums of a few random smooth bumps
    Rng proto_rng(spec.seed * 2654435761ULL + 12345);
    std::vector<std::vector<float>> protos(spec.classes, std::vector<float>(per_sample, 0.0f));
    for (std::size_t cls = 0; cls < spec.classes; ++cls)
        for (int bump = 0; bump < 4; ++bump) {
            const double cx = proto_rng.uniform(0.15, 0.85) * static_cast<double>(w);
            const double cy = proto_rng.uniform(0.15, 0.85) * static_cast<double>(h);
            const double sigma = proto_rng.uniform(0.08, 0.2) * static_cast<double>(std::min(h, w));
            const double amp = proto_rng.uniform(-0.9, 0.9);
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t y = 0; y < h; ++y)
                    for (std::size_t x = 0; x < w; ++x) {
                        const double dx = (static_cast<double>(x) - cx) / sigma;
                        const double dy = (static_cast<double>(y) - cy) / sigma;
                        protos[cls][ch * plane + y * w + x] +=
                            static_cast<float>(amp * std::exp(-0.5 * (dx * dx + dy * dy)));
                    }
        }

    Dataset ds;
    ds.image_shape = {c, h, w};
    ds.num_classes = spec.classes;
    ds.images.resize(n * per_sample);
    ds.labels.resize(n);
    Rng rng(spec.seed);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t cls = static_cast<std::size_t>(rng.next_below(spec.classes));
        ds.labels[i] = static_cast<std::uint8_t>(cls);
        float* dst = ds.images.data() + i * per_sample;
        for (std::size_t j = 0; j < per_sample; ++j)
            dst[j] = protos[cls][j] + static_cast<float>(1.8 * rng.gaussian());
    }
    return ds;
}

Dataset take_subset(const Dataset& full, std::size_t k, std::uint64_t seed) {
    if (k == 0 || k >= full.size()) return full;
    std::vector<std::size_t> idx(full.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed ^ 0xda7a5e7ULL);
    for (std::size_t i = idx.size() - 1; i > 0; --i)
        std::swap(idx[i], idx[rng.next_below(i + 1)]);
    idx.resize(k);

    Dataset out;
    out.image_shape = full.image_shape;
    out.num_classes = full.num_classes;
    const std::size_t per_sample = full.sample_values();
    out.images.resize(k * per_sample);
    out.labels.resize(k);
    for (std::size_t i = 0; i < k; ++i) {
        out.labels[i] = full.labels[idx[i]];
        std::copy_n(full.images.data() + idx[i] * per_sample, per_sample,
                    out.images.data() + i * per_sample);
    }
    return out;
}

Dataset load_dataset(const DatasetSpec& spec) {
    if (spec.name == "synthetic") {
        return make_synthetic(spec);
    }
    const std::string dir = resolve_data_dir(spec.path);
    Dataset full;
    if (spec.name == "mnist") {
        std::vector<float> mean = spec.normalize_mean.empty() ? std::vector<float>{0.1307f}
                                                              : spec.normalize_mean;
        std::vector<float> stddev = spec.normalize_std.empty() ? std::vector<float>{0.3081f}
                                                               : spec.normalize_std;
        full = load_mnist_idx(dir, spec.split, mean, stddev);
    } else if (spec.name == "cifar10") {
        std::vector<float> mean = spec.normalize_mean.empty()
                                      ? std::vector<float>{0.4914f, 0.4822f, 0.4465f}
                                      : spec.normalize_mean;
        std::vector<float> stddev = spec.normalize_std.empty()
                                        ? std::vector<float>{0.2470f, 0.2435f, 0.2616f}
                                        : spec.normalize_std;
        full = load_cifar10(dir, spec.split, mean, stddev);
    } else {
        throw DatasetError("dataset: unknown name '" + spec.name + "'");
    }
    return take_subset(full, spec.subset_size, spec.seed);
}

}  // namespace rebnn
