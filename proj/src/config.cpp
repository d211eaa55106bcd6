#include "rebnn/config.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

namespace rebnn {

namespace {

using nlohmann::json;

void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed,
                         const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!allowed.count(it.key()))
            throw ConfigError("config: unknown key '" + where + "." + it.key() + "'");
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback) {
    if (!obj.contains(key)) return fallback;
    return obj.at(key).get<T>();
}

LrSchedule parse_schedule(const std::string& s) {
    if (s == "cosine") return LrSchedule::cosine;
    if (s == "constant") return LrSchedule::constant;
    if (s == "linear") return LrSchedule::linear;
    throw ConfigError("config: unknown schedule '" + s + "'");
}

std::string schedule_name(LrSchedule s) {
    switch (s) {
        case LrSchedule::cosine: return "cosine";
        case LrSchedule::constant: return "constant";
        case LrSchedule::linear: return "linear";
    }
    return "cosine";
}

}  // namespace

GammaModeSpec parse_gamma_mode(const std::string& text) {
    GammaModeSpec spec;
    spec.label = text;
    if (text == "off") {
        spec.mode = GammaMode::off;
    } else if (text == "adaptive") {
        spec.mode = GammaMode::adaptive;
    } else if (text == "max-grad-only") {
        spec.mode = GammaMode::max_grad_only;
    } else if (text.rfind("constant:", 0) == 0) {
        spec.mode = GammaMode::constant;
        try {
            spec.constant = std::stod(text.substr(9));
        } catch (const std::exception&) {
            throw ConfigError("config: bad constant in gamma mode '" + text + "'");
        }
    } else if (text == "constant") {
        spec.mode = GammaMode::constant;
    } else {
        throw ConfigError("config: unknown gamma mode '" + text + "'");
    }
    return spec;
}

AppConfig parse_config_json(const std::string& json_text) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: JSON parse error: ") + e.what());
    }
    reject_unknown_keys(root, {"dataset", "model", "train", "output", "ablate"}, "");

    AppConfig cfg;

    bool dataset_seed_given = false;
    if (root.contains("dataset")) {
        const json& d = root.at("dataset");
        reject_unknown_keys(d,
                            {"name", "path", "split", "subset_size", "channels", "height", "width",
                             "classes", "normalize_mean", "normalize_std", "seed"},
                            "dataset");
        if (d.contains("seed")) {
            cfg.dataset.seed = d.at("seed").get<std::uint64_t>();
            dataset_seed_given = true;
        }
        cfg.dataset.name = get_or<std::string>(d, "name", cfg.dataset.name);
        cfg.dataset.path = get_or<std::string>(d, "path", cfg.dataset.path);
        cfg.dataset.split = get_or<std::string>(d, "split", cfg.dataset.split);
        cfg.dataset.subset_size = get_or<std::size_t>(d, "subset_size", cfg.dataset.subset_size);
        cfg.dataset.channels = get_or<std::size_t>(d, "channels", cfg.dataset.channels);
        cfg.dataset.height = get_or<std::size_t>(d, "height", cfg.dataset.height);
        cfg.dataset.width = get_or<std::size_t>(d, "width", cfg.dataset.width);
        cfg.dataset.classes = get_or<std::size_t>(d, "classes", cfg.dataset.classes);
        if (d.contains("normalize_mean"))
            cfg.dataset.normalize_mean = d.at("normalize_mean").get<std::vector<float>>();
        if (d.contains("normalize_std"))
            cfg.dataset.normalize_std = d.at("normalize_std").get<std::vector<float>>();
        if (cfg.dataset.name != "mnist" && cfg.dataset.name != "cifar10" &&
            cfg.dataset.name != "synthetic")
            throw ConfigError("config: unknown dataset '" + cfg.dataset.name + "'");
    }

    if (root.contains("model")) {
        const json& m = root.at("model");
        reject_unknown_keys(m, {"arch", "widths"}, "model");
        cfg.model.arch = get_or<std::string>(m, "arch", cfg.model.arch);
        if (m.contains("widths")) cfg.model.widths = m.at("widths").get<std::vector<std::size_t>>();
    }

    if (root.contains("train")) {
        const json& t = root.at("train");
        reject_unknown_keys(t,
                            {"eta", "momentum", "weight_decay", "epochs", "batch_size", "schedule",
                             "gamma_mode", "gamma_constant", "gamma_min", "gamma_max", "gamma_init",
                             "seed", "eval_each_epoch", "histogram_every"},
                            "train");
        cfg.train.eta = get_or<double>(t, "eta", cfg.train.eta);
        cfg.train.momentum = get_or<double>(t, "momentum", cfg.train.momentum);
        cfg.train.weight_decay = get_or<double>(t, "weight_decay", cfg.train.weight_decay);
        cfg.train.epochs = get_or<int>(t, "epochs", cfg.train.epochs);
        cfg.train.batch_size = get_or<int>(t, "batch_size", cfg.train.batch_size);
        cfg.train.schedule = parse_schedule(get_or<std::string>(t, "schedule", "cosine"));
        if (t.contains("gamma_mode")) {
            const GammaModeSpec g = parse_gamma_mode(t.at("gamma_mode").get<std::string>());
            cfg.train.gamma_mode = g.mode;
            if (g.mode == GammaMode::constant && g.label != "constant")
                cfg.train.gamma_constant = g.constant;
        }
        cfg.train.gamma_constant = get_or<double>(t, "gamma_constant", cfg.train.gamma_constant);
        cfg.train.gamma_min = get_or<double>(t, "gamma_min", cfg.train.gamma_min);
        cfg.train.gamma_max = get_or<double>(t, "gamma_max", cfg.train.gamma_max);
        cfg.train.gamma_init = get_or<double>(t, "gamma_init", cfg.train.gamma_init);
        cfg.train.seed = get_or<std::uint64_t>(t, "seed", cfg.train.seed);
        cfg.train.eval_each_epoch = get_or<bool>(t, "eval_each_epoch", cfg.train.eval_each_epoch);
        cfg.train.histogram_every = get_or<int>(t, "histogram_every", cfg.train.histogram_every);
        cfg.train.validate();
    }

    if (root.contains("output")) {
        const json& o = root.at("output");
        reject_unknown_keys(o, {"dir", "checkpoint", "telemetry_csv", "telemetry_json"}, "output");
        cfg.output.dir = get_or<std::string>(o, "dir", cfg.output.dir);
        cfg.output.checkpoint = get_or<std::string>(o, "checkpoint", cfg.output.checkpoint);
        cfg.output.telemetry_csv = get_or<std::string>(o, "telemetry_csv", cfg.output.telemetry_csv);
        cfg.output.telemetry_json =
            get_or<std::string>(o, "telemetry_json", cfg.output.telemetry_json);
    }

    if (root.contains("ablate")) {
        const json& a = root.at("ablate");
        reject_unknown_keys(a, {"modes"}, "ablate");
        if (a.contains("modes"))
            for (const auto& m : a.at("modes"))
                cfg.ablate_modes.push_back(parse_gamma_mode(m.get<std::string>()));
    }
    if (cfg.ablate_modes.empty()) {
        // mirror the gamma-calculation comparison: none, constants, the
        // max-gradient term alone, and the full adaptive rule
        for (const char* m : {"off", "constant:1e-5", "constant:1e-4", "constant:1e-3",
                              "constant:1e-2", "max-grad-only", "adaptive"})
            cfg.ablate_modes.push_back(parse_gamma_mode(m));
    }
    // subset selection and synthetic generation follow the training seed
    // unless pinned explicitly
    if (!dataset_seed_given) cfg.dataset.seed = cfg.train.seed;
    return cfg;
}

AppConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot read '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_config_json(text);
}

std::string AppConfig::canonical_json() const {
    json j;
    j["dataset"] = {{"name", dataset.name},
                    {"path", dataset.path},
                    {"split", dataset.split},
                    {"subset_size", dataset.subset_size},
                    {"seed", dataset.seed},
                    {"channels", dataset.channels},
                    {"height", dataset.height},
                    {"width", dataset.width},
                    {"classes", dataset.classes}};
    j["model"] = {{"arch", model.arch}, {"widths", model.widths}};
    std::string mode;
    switch (train.gamma_mode) {
        case GammaMode::off: mode = "off"; break;
        case GammaMode::adaptive: mode = "adaptive"; break;
        case GammaMode::max_grad_only: mode = "max-grad-only"; break;
        case GammaMode::constant: mode = "constant"; break;
    }
    j["train"] = {{"eta", train.eta},
                  {"momentum", train.momentum},
                  {"weight_decay", train.weight_decay},
                  {"epochs", train.epochs},
                  {"batch_size", train.batch_size},
                  {"schedule", schedule_name(train.schedule)},
                  {"gamma_mode", mode},
                  {"gamma_constant", train.gamma_constant},
                  {"gamma_min", train.gamma_min},
                  {"gamma_max", train.gamma_max},
                  {"gamma_init", train.gamma_init},
                  {"seed", train.seed}};
    return j.dump();
}

}  // namespace rebnn
