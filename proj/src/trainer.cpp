#include "rebnn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rebnn/rng.hpp"

namespace rebnn {

namespace {

// Caches produced by one minibatch forward pass.
struct ForwardCache {
    // inputs[l] is the batch the l-th layer consumed; back() holds the logits
    std::vector<Batch> inputs;
    // binary conv caches, keyed by layer index
    struct BinCache {
        Batch input_signs;  // sign(x) per sample
        Batch raw;          // pre-alpha sign-sign convolution outputs
    };
    std::vector<BinCache> bin;            // parallel to bin_index
    std::vector<int> bin_slot;            // layer index -> slot in bin, or -1
    std::vector<BatchNormCache<float>> bn;  // parallel to bn_slot
    std::vector<int> bn_slot;
};

double mean_of(const std::vector<float>& v) {
    double s = 0.0;
    for (float x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

Trainer::Trainer(Model& model, const TrainConfig& cfg) : model_(model), cfg_(cfg) {
    cfg_.validate();
    accum_.assign(model_.layers.size(), EpochAccum{});
    apply_gamma_mode_initial();
}

void Trainer::apply_gamma_mode_initial() {
    for (Layer& l : model_.layers) {
        auto* bin = std::get_if<BinaryConvLayer>(&l);
        if (!bin) continue;
        float g0 = 0.0f;
        switch (cfg_.gamma_mode) {
            case GammaMode::off: g0 = 0.0f; break;
            case GammaMode::constant: g0 = static_cast<float>(cfg_.gamma_constant); break;
            case GammaMode::adaptive:
            case GammaMode::max_grad_only: g0 = static_cast<float>(cfg_.gamma_init); break;
        }
        std::fill(bin->core.gamma.begin(), bin->core.gamma.end(), g0);
        // sign history restarts from the current latent signs
        const PackedBitTensor signs = pack_weight_signs(bin->core);
        bin->core.prev_sign = signs;
        bin->core.prev_prev_sign = signs;
    }
}

double Trainer::run_batch(const Dataset& data, const std::vector<std::size_t>& order,
                          std::size_t begin, std::size_t end, double lr, RunLog* log, int epoch) {
    const std::size_t bsz = end - begin;
    ForwardCache cache;
    cache.inputs.resize(model_.layers.size() + 1);
    cache.bin_slot.assign(model_.layers.size(), -1);
    cache.bn_slot.assign(model_.layers.size(), -1);

    Batch x;
    x.reserve(bsz);
    for (std::size_t i = begin; i < end; ++i) x.push_back(data.sample(order[i]));

    const std::int64_t bsz_i = static_cast<std::int64_t>(bsz);

    // ---- forward ----
    // Parallelism lives at the sample level: each sample's tensors are
    // written by exactly one thread through the serial kernels, so results
    // are bitwise independent of the thread count. Batch norm reduces across
    // samples and stays single-threaded in fixed order.
    for (std::size_t l = 0; l < model_.layers.size(); ++l) {
        cache.inputs[l] = x;
        Layer& layer = model_.layers[l];
        if (auto* conv = std::get_if<Conv2dLayer>(&layer)) {
            Batch y(bsz);
#pragma omp parallel for schedule(static)
            for (std::int64_t s = 0; s < bsz_i; ++s)
                y[s] = serial::conv2d_forward(x[s], conv->weight, conv->stride, conv->padding);
            x = std::move(y);
        } else if (auto* bin = std::get_if<BinaryConvLayer>(&layer)) {
            const Tensor sign_w = sign_binarize(bin->core.latent_weight);
            ForwardCache::BinCache bc;
            bc.input_signs.resize(bsz);
            bc.raw.resize(bsz);
            Batch y(bsz);
            const std::size_t c_out = bin->core.out_channels();
#pragma omp parallel for schedule(static)
            for (std::int64_t s = 0; s < bsz_i; ++s) {
                bc.input_signs[s] = sign_binarize(x[s]);
                bc.raw[s] =
                    serial::sign_conv_raw(bc.input_signs[s], sign_w, bin->stride, bin->padding);
                Tensor out(bc.raw[s].shape);
                const std::size_t plane = out.shape[1] * out.shape[2];
                for (std::size_t oc = 0; oc < c_out; ++oc) {
                    const float a = bin->core.alpha[oc];
                    const float* pr = bc.raw[s].data.data() + oc * plane;
                    float* po = out.data.data() + oc * plane;
                    for (std::size_t i = 0; i < plane; ++i) po[i] = a * pr[i];
                }
                y[s] = std::move(out);
            }
            cache.bin_slot[l] = static_cast<int>(cache.bin.size());
            cache.bin.push_back(std::move(bc));
            x = std::move(y);
        } else if (auto* bn = std::get_if<BatchNormLayer>(&layer)) {
            BatchNormCache<float> c;
            x = batchnorm_forward(x, bn->params, /*training=*/true, &c);
            cache.bn_slot[l] = static_cast<int>(cache.bn.size());
            cache.bn.push_back(std::move(c));
        } else if (std::holds_alternative<HardtanhLayer>(layer)) {
#pragma omp parallel for schedule(static)
            for (std::int64_t s = 0; s < bsz_i; ++s) x[s] = hardtanh_forward(x[s]);
        } else if (auto* lin = std::get_if<LinearLayer>(&layer)) {
#pragma omp parallel for schedule(static)
            for (std::int64_t s = 0; s < bsz_i; ++s) {
                const std::size_t n = x[s].size();
                Tensor flat({n}, std::move(x[s].data));
                x[s] = serial::linear_forward(flat, lin->weight, lin->bias);
            }
        }
    }
    cache.inputs[model_.layers.size()] = x;  // logits

    // ---- loss ----
    double task_loss = 0.0;
    Batch d_out(bsz);
    for (std::size_t s = 0; s < bsz; ++s) {
        auto [loss, d_logits] = softmax_xent(x[s], data.labels[order[begin + s]]);
        task_loss += loss;
        for (float& v : d_logits.data) v /= static_cast<float>(bsz);
        d_out[s] = std::move(d_logits);
    }
    task_loss /= static_cast<double>(bsz);

    double recon = 0.0;
    for (std::size_t l : model_.binary_layer_indices())
        recon += reconstruction_loss(model_.binary_at(l).core);

    if (!std::isfinite(task_loss + recon)) {
        // name the first layer whose output went non-finite
        std::string who = "loss";
        for (std::size_t l = 0; l < model_.layers.size(); ++l) {
            bool bad = false;
            for (const Tensor& t : cache.inputs[l + 1])
                if (!all_finite(t)) { bad = true; break; }
            if (bad) {
                who = std::string(layer_kind_name(model_.layers[l])) + " (layer " +
                      std::to_string(l) + ")";
                break;
            }
        }
        throw TrainAbortError("training aborted: non-finite loss at iteration " +
                                  std::to_string(iteration_) + ", first non-finite output in " + who,
                              iteration_);
    }

    // ---- backward + parameter step ----
    // Per-sample gradient pieces are computed in parallel into per-sample
    // slots and reduced serially in sample order.
    for (std::size_t li = model_.layers.size(); li-- > 0;) {
        Layer& layer = model_.layers[li];
        const Batch& layer_in = cache.inputs[li];
        if (auto* lin = std::get_if<LinearLayer>(&layer)) {
            std::vector<LayerGrads> per_sample(bsz);
#pragma omp parallel for schedule(static)
            for (std::int64_t s = 0; s < bsz_i; ++s) {
                Tensor flat({layer_in[s].size()});
                flat.data = layer_in[s].data;
                per_sample[s] = serial::linear_backward(flat, lin->weight, d_out[s]);
            }
            Tensor d_weight(lin->weight.shape);
            std::vector<float> d_bias(lin->bias.size(), 0.0f);
            Batch d_in(bsz);
            for (std::size_t s = 0; s < bsz; ++s) {
                LayerGrads& g = per_sample[s];
                for (std::size_t i = 0; i < d_weight.size(); ++i) d_weight[i] += g.d_weight[i];
                for (std::size_t i = 0; i < d_bias.size(); ++i) d_bias[i] += g.d_bias[i];
                g.d_input.shape = layer_in[s].shape;  // unflatten
                d_in[s] = std::move(g.d_input);
            }
            if (lin->v_weight.size() != lin->weight.size()) lin->v_weight = Tensor(lin->weight.shape);
            if (lin->v_bias.size() != lin->bias.size()) lin->v_bias.assign(lin->bias.size(), 0.0f);
            sgd_update(lin->weight.data.data(), lin->v_weight.data.data(), d_weight.data.data(),
                       lin->weight.size(), lr, cfg_.momentum, cfg_.weight_decay);
            sgd_update(lin->bias.data(), lin->v_bias.data(), d_bias.data(), lin->bias.size(), lr,
                       cfg_.momentum, cfg_.weight_decay);
            d_out = std::move(d_in);
        } else if (std::holds_alternative<HardtanhLayer>(layer)) {
#pragma omp parallel for schedule(static)
            for (std::int64_t s = 0; s < bsz_i; ++s)
                d_out[s] = hardtanh_backward(d_out[s], layer_in[s]);
        } else if (auto* bn = std::get_if<BatchNormLayer>(&layer)) {
            const BatchNormCache<float>& c = cache.bn[cache.bn_slot[li]];
            BatchNormGrads<float> g = batchnorm_backward(d_out, c, bn->params);
            sgd_update(bn->params.gamma.data(), bn->v_gamma.data(), g.d_gamma.data(),
                       bn->params.channels(), lr, cfg_.momentum, cfg_.weight_decay);
            sgd_update(bn->params.beta.data(), bn->v_beta.data(), g.d_beta.data(),
                       bn->params.channels(), lr, cfg_.momentum, cfg_.weight_decay);
            d_out = std::move(g.d_xs);
        } else if (auto* bin = std::get_if<BinaryConvLayer>(&layer)) {
            const ForwardCache::BinCache& bc = cache.bin[cache.bin_slot[li]];
            const std::size_t c_out = bin->core.out_channels();
            const std::size_t m = bin->core.fan_in();

            // effective weight alpha * sign(w) for the input gradient
            Tensor w_eff = sign_binarize(bin->core.latent_weight);
            for (std::size_t oc = 0; oc < c_out; ++oc) {
                float* pw = w_eff.data.data() + oc * m;
                const float a = bin->core.alpha[oc];
                for (std::size_t j = 0; j < m; ++j) pw[j] *= a;
            }

            std::vector<Tensor> g_per_sample(bsz);
            std::vector<std::vector<float>> a_per_sample(bsz);
            Batch d_in(bsz);
#pragma omp parallel for schedule(static)
            for (std::int64_t s = 0; s < bsz_i; ++s) {
                g_per_sample[s] =
                    serial::sign_conv_weight_grad(bc.input_signs[s], d_out[s],
                                                  bin->core.latent_weight.shape, bin->stride,
                                                  bin->padding);
                const std::size_t plane = d_out[s].shape[1] * d_out[s].shape[2];
                a_per_sample[s].resize(c_out);
                for (std::size_t oc = 0; oc < c_out; ++oc) {
                    const float* pd = d_out[s].data.data() + oc * plane;
                    const float* pr = bc.raw[s].data.data() + oc * plane;
                    double acc = 0.0;
                    for (std::size_t i = 0; i < plane; ++i)
                        acc += static_cast<double>(pd[i]) * static_cast<double>(pr[i]);
                    a_per_sample[s][oc] = static_cast<float>(acc);
                }
                if (li > 0) {
                    Tensor grad = serial::conv2d_input_grad(layer_in[s].shape, w_eff, d_out[s],
                                                            bin->stride, bin->padding);
                    d_in[s] = activation_ste_backward(grad, layer_in[s]);
                }
            }

            // d(loss)/d(w_hat) and the alpha task gradient: reduce in order
            Tensor g_hat(bin->core.latent_weight.shape);
            std::vector<float> d_alpha_task(c_out, 0.0f);
            for (std::size_t s = 0; s < bsz; ++s) {
                for (std::size_t i = 0; i < g_hat.size(); ++i) g_hat[i] += g_per_sample[s][i];
                for (std::size_t oc = 0; oc < c_out; ++oc)
                    d_alpha_task[oc] += a_per_sample[s][oc];
            }
            if (li > 0) d_out = std::move(d_in);

            // the largest task-gradient magnitude per channel, before the
            // reconstruction term enters
            std::vector<float> max_grad(c_out, 0.0f);
            for (std::size_t oc = 0; oc < c_out; ++oc) {
                const float* pg = g_hat.data.data() + oc * m;
                float mg = 0.0f;
                for (std::size_t j = 0; j < m; ++j) mg = std::max(mg, std::abs(pg[j]));
                max_grad[oc] = mg;
            }

            // resilient gradient and the parameter step
            Tensor delta = resilient_grad_all(g_hat, bin->core);
            std::vector<float> d_alpha(c_out);
            for (std::size_t oc = 0; oc < c_out; ++oc)
                d_alpha[oc] = alpha_grad(bin->core, oc, d_alpha_task[oc]);
            sgd_step(bin->core, bin->opt, delta, d_alpha, lr, cfg_);

            // oscillation bookkeeping on the new signs
            PackedBitTensor curr = pack_weight_signs(bin->core);
            OscillationRecord rec =
                detect_oscillation(bin->core.prev_prev_sign, bin->core.prev_sign, curr);
            rec.layer_id = li;
            rec.iteration = iteration_;
            rec.max_grad_mag = max_grad;
            accum_[li].flips += rec.flip_count;
            accum_[li].sequential += rec.sequential_count;
            accum_[li].weight_iters += rec.weight_count;

            // balanced parameter for the next iteration
            switch (cfg_.gamma_mode) {
                case GammaMode::adaptive:
                    for (std::size_t oc = 0; oc < c_out; ++oc)
                        bin->core.gamma[oc] = gamma_update(
                            packed_row(bin->core.prev_sign, oc), packed_row(curr, oc),
                            max_grad[oc], cfg_.gamma_min, cfg_.gamma_max);
                    break;
                case GammaMode::max_grad_only:
                    for (std::size_t oc = 0; oc < c_out; ++oc)
                        bin->core.gamma[oc] = static_cast<float>(std::clamp(
                            static_cast<double>(max_grad[oc]), cfg_.gamma_min, cfg_.gamma_max));
                    break;
                case GammaMode::constant:
                case GammaMode::off: break;  // fixed
            }
            bin->core.prev_prev_sign = std::move(bin->core.prev_sign);
            bin->core.prev_sign = std::move(curr);
        } else if (auto* conv = std::get_if<Conv2dLayer>(&layer)) {
            std::vector<Tensor> g_per_sample(bsz);
            Batch d_in;
            if (li > 0) d_in.resize(bsz);
#pragma omp parallel for schedule(static)
            for (std::int64_t s = 0; s < bsz_i; ++s) {
                g_per_sample[s] = serial::conv2d_weight_grad(layer_in[s], conv->weight.shape,
                                                             d_out[s], conv->stride,
                                                             conv->padding);
                if (li > 0)
                    d_in[s] = serial::conv2d_input_grad(layer_in[s].shape, conv->weight, d_out[s],
                                                        conv->stride, conv->padding);
            }
            Tensor d_weight(conv->weight.shape);
            for (std::size_t s = 0; s < bsz; ++s)
                for (std::size_t i = 0; i < d_weight.size(); ++i) d_weight[i] += g_per_sample[s][i];
            if (conv->velocity.size() != conv->weight.size())
                conv->velocity = Tensor(conv->weight.shape);
            sgd_update(conv->weight.data.data(), conv->velocity.data.data(), d_weight.data.data(),
                       conv->weight.size(), lr, cfg_.momentum, cfg_.weight_decay);
            if (li > 0) d_out = std::move(d_in);
        }
    }

    if (log)
        log->iterations.push_back(IterationRecord{epoch, iteration_, task_loss, recon, lr});
    ++iteration_;
    return task_loss;
}

EpochStats Trainer::train_epoch(const Dataset& data, int epoch, RunLog* log) {
    if (data.size() == 0) throw DatasetError("train: empty dataset");
    accum_.assign(model_.layers.size(), EpochAccum{});
    const double lr = lr_at_epoch(cfg_, epoch);

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(cfg_.seed * 0x9e3779b1ULL + static_cast<std::uint64_t>(epoch) + 1);
    for (std::size_t i = order.size() - 1; i > 0; --i)
        std::swap(order[i], order[shuffle_rng.next_below(i + 1)]);

    EpochStats stats;
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < data.size(); begin += cfg_.batch_size) {
        const std::size_t end = std::min(begin + static_cast<std::size_t>(cfg_.batch_size),
                                         data.size());
        loss_sum += run_batch(data, order, begin, end, lr, log, epoch) *
                    static_cast<double>(end - begin);
        ++stats.iterations;
    }
    stats.train_loss = loss_sum / static_cast<double>(data.size());
    for (std::size_t l : model_.binary_layer_indices())
        stats.recon_loss += reconstruction_loss(model_.binary_at(l).core);
    return stats;
}

void Trainer::train(const Dataset& data, RunLog* log, const Dataset* eval_data) {
    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
        const EpochStats stats = train_epoch(data, epoch, log);

        if (log) {
            EpochRecord ep;
            ep.epoch = epoch;
            ep.train_loss = stats.train_loss;
            ep.recon_loss = stats.recon_loss;
            if (cfg_.eval_each_epoch || epoch == cfg_.epochs - 1) {
                model_.prepare_packed();
                ep.eval_accuracy = evaluate(model_, eval_data ? *eval_data : data, true);
            }
            for (std::size_t l : model_.binary_layer_indices()) {
                const BinaryConvLayer& bin = model_.binary_at(l);
                LayerEpochRecord lr_rec;
                lr_rec.epoch = epoch;
                lr_rec.layer = l;
                lr_rec.flip_count = accum_[l].flips;
                lr_rec.sequential_count = accum_[l].sequential;
                lr_rec.weight_iterations = accum_[l].weight_iters;
                lr_rec.flip_proportion = accum_[l].weight_iters == 0
                                             ? 0.0
                                             : static_cast<double>(accum_[l].flips) /
                                                   static_cast<double>(accum_[l].weight_iters);
                lr_rec.sequential_ratio = accum_[l].weight_iters == 0
                                              ? 0.0
                                              : static_cast<double>(accum_[l].sequential) /
                                                    static_cast<double>(accum_[l].weight_iters);
                lr_rec.gamma_mean = mean_of(bin.core.gamma);
                lr_rec.alpha_mean = mean_of(bin.core.alpha);
                lr_rec.near_zero_fraction = near_zero_fraction(bin.core);
                ep.layers.push_back(lr_rec);
            }
            log->epochs.push_back(std::move(ep));

            if (cfg_.histogram_every > 0 && epoch % cfg_.histogram_every == 0)
                for (std::size_t l : model_.binary_layer_indices())
                    log->histograms.push_back(
                        snapshot_histogram(model_.binary_at(l).core, epoch, l));
        }
    }
}

double evaluate(const Model& model, const Dataset& data, bool packed) {
    if (data.size() == 0) throw DatasetError("eval: empty split");
    std::vector<unsigned char> hit(data.size(), 0);
    const std::int64_t n = static_cast<std::int64_t>(data.size());
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
        const Tensor logits = forward_eval_sample(model, data.sample(i), packed);
        std::size_t best = 0;
        for (std::size_t k = 1; k < logits.size(); ++k)
            if (logits[k] > logits[best]) best = k;
        hit[i] = best == data.labels[i] ? 1 : 0;
    }
    std::size_t correct = 0;
    for (unsigned char h : hit) correct += h;
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace rebnn
