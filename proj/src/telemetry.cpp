#include "rebnn/telemetry.hpp"

#include <charconv>
#include <fstream>
#include <stdexcept>
#include <system_error>

#include <json.hpp>

namespace rebnn {

namespace {

// Shortest round-trippable decimal form; keeps exports deterministic without
// locale or iostream formatting state.
std::string fmt(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("telemetry: cannot write '" + path + "'");
    return out;
}

}  // namespace

void export_csv(const RunLog& log, const std::string& path) {
    std::ofstream out = open_out(path);
    out << "# run_meta: " << log.run_id << "\n";
    out << "epoch,layer,flip_proportion,sequential_ratio,gamma_mean,alpha_mean,"
           "near_zero_fraction,train_loss\n";
    for (const EpochRecord& ep : log.epochs)
        for (const LayerEpochRecord& lr : ep.layers)
            out << ep.epoch << ',' << lr.layer << ',' << fmt(lr.flip_proportion) << ','
                << fmt(lr.sequential_ratio) << ',' << fmt(lr.gamma_mean) << ','
                << fmt(lr.alpha_mean) << ',' << fmt(lr.near_zero_fraction) << ','
                << fmt(ep.train_loss) << "\n";
    if (!out) throw std::runtime_error("telemetry: write failed for '" + path + "'");
}

void export_json(const RunLog& log, const std::string& path) {
    nlohmann::json j;
    j["schema_version"] = kTelemetrySchemaVersion;
    j["run_meta"] = log.run_id;
    j["config"] = log.config_json;

    nlohmann::json iters = nlohmann::json::array();
    for (const IterationRecord& r : log.iterations)
        iters.push_back({{"epoch", r.epoch},
                         {"iteration", r.iteration},
                         {"loss", r.loss},
                         {"recon_loss", r.recon_loss},
                         {"lr", r.lr}});
    j["iterations"] = std::move(iters);

    nlohmann::json epochs = nlohmann::json::array();
    for (const EpochRecord& ep : log.epochs) {
        nlohmann::json layers = nlohmann::json::array();
        for (const LayerEpochRecord& lr : ep.layers)
            layers.push_back({{"layer", lr.layer},
                              {"flip_proportion", lr.flip_proportion},
                              {"sequential_ratio", lr.sequential_ratio},
                              {"gamma_mean", lr.gamma_mean},
                              {"alpha_mean", lr.alpha_mean},
                              {"near_zero_fraction", lr.near_zero_fraction},
                              {"flip_count", lr.flip_count},
                              {"sequential_count", lr.sequential_count},
                              {"weight_iterations", lr.weight_iterations}});
        epochs.push_back({{"epoch", ep.epoch},
                          {"train_loss", ep.train_loss},
                          {"recon_loss", ep.recon_loss},
                          {"eval_accuracy", ep.eval_accuracy},
                          {"layers", std::move(layers)}});
    }
    j["epochs"] = std::move(epochs);

    nlohmann::json hists = nlohmann::json::array();
    for (const HistogramRecord& h : log.histograms) {
        nlohmann::json counts = nlohmann::json::array();
        for (std::uint64_t c : h.counts) counts.push_back(c);
        hists.push_back({{"epoch", h.epoch}, {"layer", h.layer}, {"counts", std::move(counts)}});
    }
    j["histograms"] = std::move(hists);

    std::ofstream out = open_out(path);
    out << j.dump(2) << "\n";
    if (!out) throw std::runtime_error("telemetry: write failed for '" + path + "'");
}

RunLog import_json(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("telemetry: cannot read '" + path + "'");
    nlohmann::json j = nlohmann::json::parse(in);
    if (j.at("schema_version").get<int>() != kTelemetrySchemaVersion)
        throw std::runtime_error("telemetry: unsupported schema_version");

    RunLog log;
    log.run_id = j.at("run_meta").get<std::string>();
    log.config_json = j.at("config").get<std::string>();
    for (const auto& r : j.at("iterations")) {
        IterationRecord rec;
        rec.epoch = r.at("epoch").get<int>();
        rec.iteration = r.at("iteration").get<long long>();
        rec.loss = r.at("loss").get<double>();
        rec.recon_loss = r.at("recon_loss").get<double>();
        rec.lr = r.at("lr").get<double>();
        log.iterations.push_back(rec);
    }
    for (const auto& e : j.at("epochs")) {
        EpochRecord ep;
        ep.epoch = e.at("epoch").get<int>();
        ep.train_loss = e.at("train_loss").get<double>();
        ep.recon_loss = e.at("recon_loss").get<double>();
        ep.eval_accuracy = e.at("eval_accuracy").get<double>();
        for (const auto& l : e.at("layers")) {
            LayerEpochRecord lr;
            lr.epoch = ep.epoch;
            lr.layer = l.at("layer").get<std::size_t>();
            lr.flip_proportion = l.at("flip_proportion").get<double>();
            lr.sequential_ratio = l.at("sequential_ratio").get<double>();
            lr.gamma_mean = l.at("gamma_mean").get<double>();
            lr.alpha_mean = l.at("alpha_mean").get<double>();
            lr.near_zero_fraction = l.at("near_zero_fraction").get<double>();
            lr.flip_count = l.at("flip_count").get<std::uint64_t>();
            lr.sequential_count = l.at("sequential_count").get<std::uint64_t>();
            lr.weight_iterations = l.at("weight_iterations").get<std::uint64_t>();
            ep.layers.push_back(lr);
        }
        log.epochs.push_back(std::move(ep));
    }
    for (const auto& h : j.at("histograms")) {
        HistogramRecord rec;
        rec.epoch = h.at("epoch").get<int>();
        rec.layer = h.at("layer").get<std::size_t>();
        const auto& counts = h.at("counts");
        if (counts.size() != rec.counts.size())
            throw std::runtime_error("telemetry: histogram bin count mismatch");
        for (std::size_t i = 0; i < rec.counts.size(); ++i)
            rec.counts[i] = counts[i].get<std::uint64_t>();
        log.histograms.push_back(rec);
    }
    return log;
}

}  // namespace rebnn
