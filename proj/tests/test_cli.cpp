// End-to-end checks of the command-line tool. The binary path arrives via the
// REBNN_BIN environment variable (set by ctest).

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

std::string binary_path() {
    const char* env = std::getenv("REBNN_BIN");
    REQUIRE_MESSAGE(env != nullptr, "REBNN_BIN must point at the rebnn binary");
    return env;
}

int run_cmd(const std::string& cmd) {
    const int status = std::system((cmd + " >/dev/null 2>&1").c_str());
    return status < 0 ? status : WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// file contents with run_meta lines removed
std::string strip_run_meta(const std::string& text) {
    std::istringstream in(text);
    std::ostringstream out;
    std::string line;
    while (std::getline(in, line))
        if (line.find("run_meta") == std::string::npos) out << line << "\n";
    return out.str();
}

struct TempDir {
    fs::path path;
    explicit TempDir(const char* name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

void write_config(const fs::path& p, const fs::path& out_dir, const std::string& gamma_mode,
                  int seed, int epochs = 1) {
    std::ofstream out(p);
    out << R"({
  "dataset": {"name": "synthetic", "subset_size": 60, "height": 12, "width": 12},
  "model": {"widths": [2, 2, 4]},
  "train": {"epochs": )"
        << epochs << R"(, "batch_size": 15, "eta": 0.05, "seed": )" << seed
        << R"(, "gamma_mode": ")" << gamma_mode << R"("},
  "output": {"dir": ")"
        << out_dir.generic_string() << R"("}
})";
}

}  // namespace

TEST_CASE("train smoke: checkpoint and telemetry with the documented schema") {
    TempDir dir("rebnn_cli_smoke");
    const fs::path cfg = dir.path / "config.json";
    write_config(cfg, dir.path / "out", "adaptive", 1);
    CHECK(run_cmd(binary_path() + " train -c " + cfg.string()) == 0);
    CHECK(fs::exists(dir.path / "out/model.rbnn"));
    CHECK(fs::exists(dir.path / "out/telemetry.json"));
    const std::string csv = slurp(dir.path / "out/telemetry.csv");
    CHECK(csv.find("epoch,layer,flip_proportion,sequential_ratio,gamma_mean,alpha_mean,"
                   "near_zero_fraction,train_loss") != std::string::npos);
}

TEST_CASE("identical seeds give byte-identical checkpoints and telemetry") {
    TempDir dir("rebnn_cli_replay");
    const fs::path cfg_a = dir.path / "a.json", cfg_b = dir.path / "b.json";
    write_config(cfg_a, dir.path / "a_out", "adaptive", 42, 2);
    write_config(cfg_b, dir.path / "b_out", "adaptive", 42, 2);
    REQUIRE(run_cmd(binary_path() + " train -c " + cfg_a.string()) == 0);
    REQUIRE(run_cmd(binary_path() + " train -c " + cfg_b.string()) == 0);
    CHECK(slurp(dir.path / "a_out/model.rbnn") == slurp(dir.path / "b_out/model.rbnn"));
    CHECK(strip_run_meta(slurp(dir.path / "a_out/telemetry.csv")) ==
          strip_run_meta(slurp(dir.path / "b_out/telemetry.csv")));
    CHECK(strip_run_meta(slurp(dir.path / "a_out/telemetry.json")) ==
          strip_run_meta(slurp(dir.path / "b_out/telemetry.json")));
}

TEST_CASE("gamma off and adaptive diverge under the same seed") {
    TempDir dir("rebnn_cli_modes");
    const fs::path cfg_off = dir.path / "off.json", cfg_ad = dir.path / "ad.json";
    write_config(cfg_off, dir.path / "off_out", "off", 42, 2);
    write_config(cfg_ad, dir.path / "ad_out", "adaptive", 42, 2);
    REQUIRE(run_cmd(binary_path() + " train -c " + cfg_off.string()) == 0);
    REQUIRE(run_cmd(binary_path() + " train -c " + cfg_ad.string()) == 0);
    CHECK(strip_run_meta(slurp(dir.path / "off_out/telemetry.csv")) !=
          strip_run_meta(slurp(dir.path / "ad_out/telemetry.csv")));
}

TEST_CASE("eval runs both paths on a fresh checkpoint and asserts agreement") {
    TempDir dir("rebnn_cli_eval");
    const fs::path cfg = dir.path / "config.json";
    write_config(cfg, dir.path / "out", "adaptive", 7);
    REQUIRE(run_cmd(binary_path() + " train -c " + cfg.string()) == 0);
    const std::string ckpt = (dir.path / "out/model.rbnn").string();
    CHECK(run_cmd(binary_path() + " eval -c " + ckpt +
                  " -d synthetic --subset 60 --split train --float-path --packed-path") == 0);
    CHECK(run_cmd(binary_path() + " eval -c " + ckpt + " -d synthetic --subset 60") == 0);
}

TEST_CASE("ablate-gamma emits one table row per mode") {
    TempDir dir("rebnn_cli_ablate");
    const fs::path cfg = dir.path / "config.json";
    {
        std::ofstream out(cfg);
        out << R"({
  "dataset": {"name": "synthetic", "subset_size": 40, "height": 12, "width": 12},
  "model": {"widths": [2, 2, 4]},
  "train": {"epochs": 1, "batch_size": 10, "eta": 0.05, "seed": 2},
  "output": {"dir": ")"
            << (dir.path / "out").generic_string() << R"("},
  "ablate": {"modes": ["off", "constant:1e-4", "adaptive"]}
})";
    }
    REQUIRE(run_cmd(binary_path() + " ablate-gamma -c " + cfg.string()) == 0);
    std::istringstream table(slurp(dir.path / "out/ablation.csv"));
    std::string line;
    std::getline(table, line);
    CHECK(line == "gamma_mode,final_loss,accuracy,mean_sequential_ratio");
    int rows = 0;
    while (std::getline(table, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 3);
}

TEST_CASE("error paths map to the documented exit codes") {
    TempDir dir("rebnn_cli_errors");
    // unknown config key -> generic error
    const fs::path bad_cfg = dir.path / "bad.json";
    {
        std::ofstream out(bad_cfg);
        out << R"({"train": {"learning_rate": 0.1}})";
    }
    CHECK(run_cmd(binary_path() + " train -c " + bad_cfg.string()) == 1);

    // missing dataset -> 2
    const fs::path mnist_cfg = dir.path / "mnist.json";
    {
        std::ofstream out(mnist_cfg);
        out << R"({"dataset": {"name": "mnist", "path": ")"
            << (dir.path / "no_such_dir").generic_string() << R"("}, "train": {"epochs": 1}})";
    }
    CHECK(run_cmd(binary_path() + " train -c " + mnist_cfg.string()) == 2);

    // non-finite loss -> 3
    const fs::path hot_cfg = dir.path / "hot.json";
    {
        std::ofstream out(hot_cfg);
        out << R"({
  "dataset": {"name": "synthetic", "subset_size": 30, "height": 12, "width": 12},
  "model": {"widths": [2, 2, 4]},
  "train": {"epochs": 3, "batch_size": 10, "eta": 1e30, "schedule": "constant", "seed": 1},
  "output": {"dir": ")"
            << (dir.path / "hot_out").generic_string() << R"("}
})";
    }
    CHECK(run_cmd(binary_path() + " train -c " + hot_cfg.string()) == 3);

    // checkpoint version mismatch -> 4
    const fs::path bad_ckpt = dir.path / "bad.rbnn";
    {
        std::ofstream out(bad_ckpt, std::ios::binary);
        out << "RBNN";
        const std::uint32_t v = 99;
        out.write(reinterpret_cast<const char*>(&v), 4);
    }
    CHECK(run_cmd(binary_path() + " eval -c " + bad_ckpt.string() + " -d synthetic") == 4);
}

TEST_CASE("bench subcommand reports requested sizes") {
    const int status = std::system((binary_path() + " bench --sizes 64,128 > /dev/null").c_str());
    CHECK(WEXITSTATUS(status) == 0);
}
