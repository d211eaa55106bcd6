#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "rebnn/telemetry.hpp"
#include "test_util.hpp"

using namespace rebnn;
using namespace rebnn::test;

namespace {

BinaryLayerT<float> layer_with_weights(std::vector<float> w) {
    BinaryLayerT<float> layer;
    const std::size_t n = w.size();
    layer.latent_weight = Tensor({1, 1, 1, n}, std::move(w));
    layer.alpha = {1.0f};
    layer.gamma = {1e-4f};
    return layer;
}

std::string tmp_file(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

RunLog small_log() {
    RunLog log;
    log.run_id = "run_id=test";
    log.config_json = "{}";
    log.iterations.push_back({0, 0, 2.30, 0.001, 0.1});
    log.iterations.push_back({0, 1, 2.21, 0.0011, 0.1});
    EpochRecord ep;
    ep.epoch = 0;
    ep.train_loss = 2.25;
    ep.recon_loss = 0.001;
    ep.eval_accuracy = 0.42;
    LayerEpochRecord lr;
    lr.epoch = 0;
    lr.layer = 3;
    lr.flip_proportion = 0.125;
    lr.sequential_ratio = 0.0625;
    lr.gamma_mean = 1.5e-4;
    lr.alpha_mean = 0.7;
    lr.near_zero_fraction = 0.2;
    lr.flip_count = 16;
    lr.sequential_count = 8;
    lr.weight_iterations = 128;
    ep.layers.push_back(lr);
    log.epochs.push_back(ep);
    HistogramRecord h;
    h.epoch = 0;
    h.layer = 3;
    h.counts[10] = 5;
    h.counts[53] = 5;
    log.histograms.push_back(h);
    return log;
}

}  // namespace

TEST_SUITE_BEGIN("telemetry");

TEST_CASE("histogram: zero weights land in one bin; counts are conserved") {
    auto layer = layer_with_weights(std::vector<float>(10, 0.0f));
    const HistogramRecord rec = snapshot_histogram(layer, 0, 3);
    std::uint64_t total = 0;
    int nonzero_bins = 0;
    for (std::uint64_t c : rec.counts) {
        total += c;
        if (c) ++nonzero_bins;
    }
    CHECK(total == 10);
    CHECK(nonzero_bins == 1);
    CHECK(rec.counts[32] == 10);  // 0.0 maps to the first bin right of center
}

TEST_CASE("histogram: +/-1 weights fill two symmetric bins with equal counts") {
    std::vector<float> w;
    for (int i = 0; i < 8; ++i) w.push_back(i % 2 ? 1.0f : -1.0f);
    auto layer = layer_with_weights(w);
    const HistogramRecord rec = snapshot_histogram(layer, 0, 0);
    std::size_t lo_bin = 0, hi_bin = 0;
    for (std::size_t b = 0; b < rec.counts.size(); ++b) {
        if (rec.counts[b] && b < 32) lo_bin = b;
        if (rec.counts[b] && b >= 32) hi_bin = b;
    }
    CHECK(rec.counts[lo_bin] == 4);
    CHECK(rec.counts[hi_bin] == 4);
    CHECK(lo_bin == 63 - hi_bin);  // symmetric about the grid center

    // counts sum equals C_out*C_in*K*K even with out-of-range outliers
    auto wide = layer_with_weights({-3.0f, 2.5f, 0.1f});
    const HistogramRecord rec2 = snapshot_histogram(wide, 0, 0);
    std::uint64_t total = 0;
    for (std::uint64_t c : rec2.counts) total += c;
    CHECK(total == wide.latent_weight.size());
}

TEST_CASE("near_zero_fraction discriminates the distribution shapes") {
    auto pm1 = layer_with_weights({1.0f, -1.0f, 1.0f, -1.0f});
    CHECK(near_zero_fraction(pm1) == 0.0);
    auto zeros = layer_with_weights(std::vector<float>(6, 0.0f));
    CHECK(near_zero_fraction(zeros) == 1.0);
    auto mixed = layer_with_weights({0.0f, 0.0f, 1.0f, -1.0f});
    CHECK(near_zero_fraction(mixed) == 0.5);
    // epsilon is an open bound
    auto edge = layer_with_weights({0.05f, 0.049f});
    CHECK(near_zero_fraction(edge) == 0.5);
}

TEST_CASE("csv export: header, schema row, and values match the log") {
    const RunLog log = small_log();
    const std::string path = tmp_file("rebnn_test_telemetry.csv");
    export_csv(log, path);
    std::ifstream in(path);
    std::string line1, line2, line3;
    std::getline(in, line1);
    std::getline(in, line2);
    std::getline(in, line3);
    CHECK(line1 == "# run_meta: run_id=test");
    CHECK(line2 ==
          "epoch,layer,flip_proportion,sequential_ratio,gamma_mean,alpha_mean,"
          "near_zero_fraction,train_loss");
    CHECK(line3 == "0,3,0.125,0.0625,0.00015,0.7,0.2,2.25");
    std::filesystem::remove(path);
}

TEST_CASE("a model without binary layers exports a header-only CSV") {
    RunLog log;
    log.run_id = "run_id=headeronly";
    EpochRecord ep;
    ep.epoch = 0;
    ep.train_loss = 1.0;
    log.epochs.push_back(ep);  // no layer records
    const std::string path = tmp_file("rebnn_test_headeronly.csv");
    export_csv(log, path);
    std::ifstream in(path);
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) ++lines;
    CHECK(lines == 2);  // run_meta + column header
    std::filesystem::remove(path);
}

TEST_CASE("json export round-trips every record") {
    const RunLog log = small_log();
    const std::string path = tmp_file("rebnn_test_telemetry.json");
    export_json(log, path);
    const RunLog back = import_json(path);
    REQUIRE(back.iterations.size() == log.iterations.size());
    CHECK(back.iterations[1].loss == log.iterations[1].loss);
    REQUIRE(back.epochs.size() == 1);
    REQUIRE(back.epochs[0].layers.size() == 1);
    CHECK(back.epochs[0].layers[0].sequential_ratio == log.epochs[0].layers[0].sequential_ratio);
    CHECK(back.epochs[0].layers[0].flip_count == 16);
    CHECK(back.epochs[0].eval_accuracy == 0.42);
    REQUIRE(back.histograms.size() == 1);
    CHECK(back.histograms[0].counts == log.histograms[0].counts);
    std::filesystem::remove(path);
}

TEST_CASE("exports are byte-stable and isolate run metadata to one line") {
    RunLog log = small_log();
    const std::string p1 = tmp_file("rebnn_tel_a.csv"), p2 = tmp_file("rebnn_tel_b.csv");
    export_csv(log, p1);
    log.run_id = "run_id=different";  // only the header line may change
    export_csv(log, p2);
    std::istringstream a(slurp(p1)), b(slurp(p2));
    std::string la, lb;
    std::getline(a, la);
    std::getline(b, lb);
    CHECK(la != lb);
    std::string rest_a((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    std::string rest_b((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(rest_a == rest_b);
    std::filesystem::remove(p1);
    std::filesystem::remove(p2);
}

TEST_SUITE_END();
