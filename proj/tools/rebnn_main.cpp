#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rebnn/checkpoint.hpp"
#include "rebnn/config.hpp"
#include "rebnn/dataset.hpp"
#include "rebnn/model.hpp"
#include "rebnn/telemetry.hpp"
#include "rebnn/trainer.hpp"

namespace fs = std::filesystem;
using namespace rebnn;

namespace {

std::string make_run_id(std::uint64_t seed) {
    const auto now = std::chrono::system_clock::now().time_since_epoch();
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now).count();
    return "run_id=seed" + std::to_string(seed) + "-t" + std::to_string(ms);
}

struct TrainOutputs {
    double final_accuracy = 0.0;
    double final_train_loss = 0.0;
    double mean_sequential_ratio = 0.0;  // exact counts over the whole run
};

TrainOutputs run_training(AppConfig cfg, const std::string& run_label, bool write_outputs) {
    const Dataset data = load_dataset(cfg.dataset);
    Model model = build_cnn4(cfg.model, data.image_shape, data.num_classes, cfg.train.seed);
    Trainer trainer(model, cfg.train);

    RunLog log;
    log.run_id = run_label;
    log.config_json = cfg.canonical_json();
    trainer.train(data, &log);

    model.prepare_packed();
    TrainOutputs out;
    out.final_accuracy = evaluate(model, data, /*packed=*/true);
    out.final_train_loss = log.epochs.empty() ? 0.0 : log.epochs.back().train_loss;

    std::uint64_t seq = 0, denom = 0;
    for (const EpochRecord& ep : log.epochs)
        for (const LayerEpochRecord& lr : ep.layers) {
            seq += lr.sequential_count;
            denom += lr.weight_iterations;
        }
    out.mean_sequential_ratio = denom ? static_cast<double>(seq) / static_cast<double>(denom) : 0.0;

    if (write_outputs) {
        fs::create_directories(cfg.output.dir);
        save_checkpoint(model, cfg.canonical_json(),
                        (fs::path(cfg.output.dir) / cfg.output.checkpoint).string());
        export_csv(log, (fs::path(cfg.output.dir) / cfg.output.telemetry_csv).string());
        export_json(log, (fs::path(cfg.output.dir) / cfg.output.telemetry_json).string());
    }
    return out;
}

int cmd_train(const std::string& config_path) {
    AppConfig cfg = parse_config_file(config_path);
    const TrainOutputs out = run_training(cfg, make_run_id(cfg.train.seed), true);
    std::printf("final train loss: %.6f\n", out.final_train_loss);
    std::printf("final eval accuracy: %.4f\n", out.final_accuracy);
    std::printf("outputs written to %s\n", cfg.output.dir.c_str());
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& dataset_name,
             const std::string& data_path, const std::string& split, std::size_t subset,
             bool float_path, bool packed_path) {
    LoadedCheckpoint loaded = load_checkpoint(ckpt_path);
    loaded.model.prepare_packed();

    DatasetSpec spec;
    spec.name = dataset_name;
    spec.path = data_path;
    spec.split = split;
    spec.subset_size = subset;
    if (dataset_name == "synthetic") {
        // regenerate the generator's geometry and seed from the checkpoint
        spec.channels = loaded.model.input_shape[0];
        spec.height = loaded.model.input_shape[1];
        spec.width = loaded.model.input_shape[2];
        spec.classes = loaded.model.num_classes;
        try {
            const auto snap = nlohmann::json::parse(loaded.config_json);
            if (snap.contains("dataset") && snap["dataset"].contains("seed"))
                spec.seed = snap["dataset"]["seed"].get<std::uint64_t>();
            else if (snap.contains("train") && snap["train"].contains("seed"))
                spec.seed = snap["train"]["seed"].get<std::uint64_t>();
            if (subset == 0 && snap.contains("dataset") && snap["dataset"].contains("subset_size"))
                spec.subset_size = snap["dataset"]["subset_size"].get<std::size_t>();
        } catch (const nlohmann::json::exception&) {
            // older or foreign snapshot: defaults stand
        }
    }
    const Dataset data = load_dataset(spec);
    if (data.image_shape != loaded.model.input_shape)
        throw std::runtime_error("eval: dataset shape does not match checkpoint input shape");

    const bool both = float_path && packed_path;
    const bool use_packed = !float_path || both;
    if (both) {
        // both paths requested: require bitwise agreement sample by sample
        for (std::size_t i = 0; i < data.size(); ++i) {
            const Tensor a = forward_eval_sample(loaded.model, data.sample(i), true);
            const Tensor b = forward_eval_sample(loaded.model, data.sample(i), false);
            for (std::size_t k = 0; k < a.size(); ++k)
                if (a[k] != b[k])
                    throw std::runtime_error("eval: packed/float disagreement at sample " +
                                             std::to_string(i));
        }
        std::printf("packed and float paths agree on all %zu samples\n", data.size());
    }
    const double acc = evaluate(loaded.model, data, use_packed);
    std::printf("top-1 accuracy: %.4f (%s path, %zu samples)\n", acc,
                use_packed ? "packed" : "float", data.size());
    return 0;
}

int cmd_ablate_gamma(const std::string& config_path) {
    const AppConfig base = parse_config_file(config_path);
    std::printf("%-16s %12s %10s %18s\n", "gamma_mode", "final_loss", "accuracy", "mean_seq_ratio");

    fs::create_directories(base.output.dir);
    std::ofstream table(fs::path(base.output.dir) / "ablation.csv");
    table << "gamma_mode,final_loss,accuracy,mean_sequential_ratio\n";

    for (const GammaModeSpec& mode : base.ablate_modes) {
        AppConfig cfg = base;
        cfg.train.gamma_mode = mode.mode;
        if (mode.mode == GammaMode::constant) cfg.train.gamma_constant = mode.constant;
        const TrainOutputs out = run_training(cfg, make_run_id(cfg.train.seed), false);
        std::printf("%-16s %12.6f %10.4f %18.8f\n", mode.label.c_str(), out.final_train_loss,
                    out.final_accuracy, out.mean_sequential_ratio);
        table << mode.label << ',' << out.final_train_loss << ',' << out.final_accuracy << ','
              << out.mean_sequential_ratio << "\n";
    }
    std::printf("table written to %s/ablation.csv\n", base.output.dir.c_str());
    return 0;
}

int cmd_bench(const std::vector<std::size_t>& sizes) {
    std::printf("%-8s %14s %14s %10s %8s\n", "M", "packed_ns/dot", "float_ns/dot", "speedup",
                "agree");
    for (std::size_t m : sizes) {
        const DotBenchResult r = bench_dot(m, 9);
        std::printf("%-8zu %14.1f %14.1f %9.2fx %8s\n", m, r.packed_ns, r.float_ns, r.speedup,
                    r.results_agree ? "yes" : "NO");
    }

    // ops/bytes accounting for the default desk-scale model
    ModelConfig mc;
    Model model = build_cnn4(mc, {1, 28, 28}, 10, 1);
    const OpsReport rep = count_ops(model);
    std::printf("\ndefault cnn4 on 1x28x28:\n");
    std::printf("  bops:  %llu\n", static_cast<unsigned long long>(rep.bops));
    std::printf("  flops: %llu\n", static_cast<unsigned long long>(rep.flops));
    std::printf("  total ops (bops/64 + flops): %.0f\n", rep.total_ops());
    std::printf("  bytes: %llu binary vs %llu float (%.2fx compression)\n",
                static_cast<unsigned long long>(rep.model_bytes_binary),
                static_cast<unsigned long long>(rep.model_bytes_float), rep.compression_ratio());

    const OpsReport big = binary_conv_ops(256, 256, 3, 1, 1);
    std::printf("  256x256x3x3 binary layer storage: %.2fx compression\n",
                static_cast<double>(big.model_bytes_float) /
                    static_cast<double>(big.model_bytes_binary));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"binary neural network training with oscillation-resilient updates"};
    app.require_subcommand(1);

    std::string config_path;
    auto* train = app.add_subcommand("train", "train a model from a JSON config");
    train->add_option("-c,--config", config_path, "config JSON path")->required();

    std::string ckpt_path, eval_dataset = "mnist", eval_data_path, eval_split = "test";
    std::size_t eval_subset = 0;
    bool float_path = false, packed_path = false;
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    eval->add_option("-c,--checkpoint", ckpt_path, "checkpoint .rbnn path")->required();
    eval->add_option("-d,--dataset", eval_dataset, "mnist | cifar10 | synthetic");
    eval->add_option("--path", eval_data_path, "dataset root (REBNN_DATA_DIR fallback)");
    eval->add_option("--split", eval_split, "train | test");
    eval->add_option("--subset", eval_subset, "evaluate on a seed-deterministic subset");
    eval->add_flag("--float-path", float_path, "use the float simulated path");
    eval->add_flag("--packed-path", packed_path,
                   "use the packed path (with --float-path: run both and compare)");

    std::string ablate_config;
    auto* ablate = app.add_subcommand("ablate-gamma", "compare gamma calculation modes");
    ablate->add_option("-c,--config", ablate_config, "config JSON path")->required();

    std::vector<std::size_t> sizes{1024, 4096};
    auto* bench = app.add_subcommand("bench", "kernel microbenchmark and ops accounting");
    bench->add_option("--sizes", sizes, "dot-product lengths")->delimiter(',');

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return cmd_train(config_path);
        if (eval->parsed())
            return cmd_eval(ckpt_path, eval_dataset, eval_data_path, eval_split, eval_subset,
                            float_path, packed_path);
        if (ablate->parsed()) return cmd_ablate_gamma(ablate_config);
        if (bench->parsed()) return cmd_bench(sizes);
    } catch (const DatasetError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const TrainAbortError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const CheckpointVersionError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
