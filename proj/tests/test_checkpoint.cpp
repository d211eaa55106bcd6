#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "rebnn/checkpoint.hpp"
#include "rebnn/trainer.hpp"
#include "test_util.hpp"

using namespace rebnn;
namespace fs = std::filesystem;

namespace {

Model tiny_trained_model(std::uint64_t seed) {
    DatasetSpec dspec;
    dspec.name = "synthetic";
    dspec.subset_size = 40;
    dspec.seed = seed;
    dspec.height = 12;
    dspec.width = 12;
    const Dataset data = make_synthetic(dspec);

    ModelConfig mc;
    mc.widths = {4, 4, 8};
    Model model = build_cnn4(mc, data.image_shape, data.num_classes, seed);
    TrainConfig tc;
    tc.epochs = 1;
    tc.batch_size = 10;
    tc.seed = seed;
    Trainer trainer(model, tc);
    trainer.train(data, nullptr);
    return model;
}

std::string tmp_path(const char* name) {
    return (fs::temp_directory_path() / name).string();
}

}  // namespace

TEST_SUITE_BEGIN("checkpoint");

TEST_CASE("round-trip reproduces bitwise-identical forward outputs") {
    Model model = tiny_trained_model(5);
    model.prepare_packed();
    const std::string path = tmp_path("rebnn_test_ckpt.rbnn");
    save_checkpoint(model, "{\"test\":1}", path);

    LoadedCheckpoint loaded = load_checkpoint(path);
    CHECK(loaded.config_json == "{\"test\":1}");
    loaded.model.prepare_packed();

    Rng rng(77);
    for (int t = 0; t < 5; ++t) {
        Tensor x({1, 12, 12});
        for (float& v : x.data) v = static_cast<float>(rng.uniform(-2.0, 2.0));
        const Tensor a = forward_eval_sample(model, x, false);
        const Tensor b = forward_eval_sample(loaded.model, x, false);
        const Tensor ap = forward_eval_sample(model, x, true);
        const Tensor bp = forward_eval_sample(loaded.model, x, true);
        REQUIRE(a.size() == b.size());
        CHECK(std::memcmp(a.data.data(), b.data.data(), a.size() * sizeof(float)) == 0);
        CHECK(std::memcmp(ap.data.data(), bp.data.data(), ap.size() * sizeof(float)) == 0);
    }
    fs::remove(path);
}

TEST_CASE("persisted packed section matches freshly packed weights") {
    Model model = tiny_trained_model(6);
    const std::string path = tmp_path("rebnn_test_ckpt_packed.rbnn");
    save_checkpoint(model, "{}", path, /*include_packed=*/true);
    LoadedCheckpoint loaded = load_checkpoint(path);
    for (std::size_t l : loaded.model.binary_layer_indices()) {
        const BinaryConvLayer& bin = loaded.model.binary_at(l);
        REQUIRE(bin.packed_weights.has_value());
        const PackedBitTensor fresh = pack_weight_signs(bin.core);
        CHECK(bin.packed_weights->words == fresh.words);
    }
    fs::remove(path);
}

TEST_CASE("bad magic and unsupported version are distinct errors") {
    const std::string path = tmp_path("rebnn_test_ckpt_bad.rbnn");
    {
        std::ofstream out(path, std::ios::binary);
        out << "XXXX";
    }
    CHECK_THROWS_AS(load_checkpoint(path), CheckpointFormatError);
    {
        std::ofstream out(path, std::ios::binary);
        out << "RBNN";
        const std::uint32_t v = 99;
        out.write(reinterpret_cast<const char*>(&v), 4);
    }
    CHECK_THROWS_AS(load_checkpoint(path), CheckpointVersionError);
    fs::remove(path);
}

TEST_SUITE_END();
