#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rebnn/dataset.hpp"
#include "rebnn/model.hpp"
#include "rebnn/optimizer.hpp"
#include "rebnn/telemetry.hpp"

namespace rebnn {

// Raised when the training loss turns non-finite; names the first offending
// layer and the iteration (CLI exit code 3).
class TrainAbortError : public std::runtime_error {
public:
    TrainAbortError(const std::string& msg, long long iter) : std::runtime_error(msg), iteration(iter) {}
    long long iteration;
};

struct EpochStats {
    double train_loss = 0.0;  // mean task loss over the epoch
    double recon_loss = 0.0;
    long long iterations = 0;
};

// Owns the per-layer optimizer state and the minibatch plumbing around the
// resilient update rule. Per iteration: forward with binarized weights and
// activations, task + reconstruction loss, backward, per-channel max |d
// loss/d w_hat| and a packed sign snapshot, the SGD step, and finally the
// balanced-parameter update from this iteration's flip statistics so the new
// gamma applies to the next iteration.
class Trainer {
public:
    Trainer(Model& model, const TrainConfig& cfg);

    EpochStats train_epoch(const Dataset& data, int epoch, RunLog* log);

    // Full loop: epochs, telemetry (histograms, per-epoch aggregates),
    // optional per-epoch eval.
    void train(const Dataset& data, RunLog* log, const Dataset* eval_data = nullptr);

    long long iteration() const { return iteration_; }

private:
    void apply_gamma_mode_initial();
    double run_batch(const Dataset& data, const std::vector<std::size_t>& order,
                     std::size_t begin, std::size_t end, double lr, RunLog* log, int epoch);

    Model& model_;
    TrainConfig cfg_;
    long long iteration_ = 0;
    // per-layer flip-count accumulators, reset at each epoch start
    struct EpochAccum {
        std::uint64_t flips = 0, sequential = 0, weight_iters = 0;
    };
    std::vector<EpochAccum> accum_;
};

// Top-1 accuracy over a dataset; packed selects the XNOR/popcount path.
double evaluate(const Model& model, const Dataset& data, bool packed);

}  // namespace rebnn
