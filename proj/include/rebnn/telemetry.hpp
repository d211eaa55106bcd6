#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "rebnn/binarize.hpp"
#include "rebnn/tensor.hpp"

// Run telemetry: per-iteration loss/lr, per-epoch per-layer oscillation
// aggregates, and latent-weight histograms on a fixed 64-bin grid over
// [-1.5, 1.5]. Exported as CSV (one row per epoch x layer) and as JSON with
// the full nested structure. Files are byte-stable across same-seed runs
// except for the single run_meta header line.

namespace rebnn {

inline constexpr int kHistogramBins = 64;
inline constexpr double kHistogramLo = -1.5;
inline constexpr double kHistogramHi = 1.5;
inline constexpr int kTelemetrySchemaVersion = 1;

struct IterationRecord {
    int epoch = 0;
    long long iteration = 0;  // global iteration index
    double loss = 0.0;        // task loss (batch mean)
    double recon_loss = 0.0;  // weighted reconstruction loss, all layers
    double lr = 0.0;
};

struct LayerEpochRecord {
    int epoch = 0;
    std::size_t layer = 0;  // index into Model::layers
    double flip_proportion = 0.0;   // epoch mean, exact counts
    double sequential_ratio = 0.0;  // epoch mean, exact counts
    double gamma_mean = 0.0;
    double alpha_mean = 0.0;
    double near_zero_fraction = 0.0;  // |w| < 0.05 at epoch end
    std::uint64_t flip_count = 0;
    std::uint64_t sequential_count = 0;
    std::uint64_t weight_iterations = 0;  // weight_count * iterations
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;  // epoch mean task loss
    double recon_loss = 0.0;
    double eval_accuracy = -1.0;  // -1 when not evaluated
    std::vector<LayerEpochRecord> layers;
};

struct HistogramRecord {
    int epoch = 0;
    std::size_t layer = 0;
    std::array<std::uint64_t, kHistogramBins> counts{};
};

struct RunLog {
    std::string run_id;
    std::string config_json;  // canonical snapshot of the run configuration
    std::vector<IterationRecord> iterations;
    std::vector<EpochRecord> epochs;
    std::vector<HistogramRecord> histograms;
};

// 64-bin histogram of a layer's latent weights; out-of-range values land in
// the edge bins so counts always sum to the weight count.
template <typename T>
HistogramRecord snapshot_histogram(const BinaryLayerT<T>& layer, int epoch,
                                   std::size_t layer_index) {
    HistogramRecord rec;
    rec.epoch = epoch;
    rec.layer = layer_index;
    const double scale = kHistogramBins / (kHistogramHi - kHistogramLo);
    for (const T& w : layer.latent_weight.data) {
        int bin = static_cast<int>((static_cast<double>(w) - kHistogramLo) * scale);
        bin = bin < 0 ? 0 : (bin >= kHistogramBins ? kHistogramBins - 1 : bin);
        ++rec.counts[static_cast<std::size_t>(bin)];
    }
    return rec;
}

// Fraction of latent weights with |w| < epsilon: the tri-modal vs. bi-modal
// distribution discriminator.
template <typename T>
double near_zero_fraction(const BinaryLayerT<T>& layer, double epsilon = 0.05) {
    std::size_t n = 0;
    for (const T& w : layer.latent_weight.data)
        if (std::abs(static_cast<double>(w)) < epsilon) ++n;
    return static_cast<double>(n) / static_cast<double>(layer.latent_weight.size());
}

// CSV schema:
//   epoch,layer,flip_proportion,sequential_ratio,gamma_mean,alpha_mean,near_zero_fraction,train_loss
void export_csv(const RunLog& log, const std::string& path);

// JSON export with a top-level "schema_version": 1; import inverts it.
void export_json(const RunLog& log, const std::string& path);
RunLog import_json(const std::string& path);

}  // namespace rebnn
