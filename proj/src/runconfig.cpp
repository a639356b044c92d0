#include "kspace/runconfig.hpp"

#include <filesystem>
#include <fstream>

#include "kspace/error.hpp"

namespace kspace {

nlohmann::json RunConfig::to_json() const {
    std::vector<std::string> regime_names;
    for (auto r : regimes) regime_names.push_back(eval::to_string(r));
    return {{"manifest", manifest_path},
            {"out_dir", out_dir},
            {"backbone", model::to_json(backbone)},
            {"features", kspace::to_json(features)},
            {"train",
             {{"lr", train.opt.lr},
              {"beta1", train.opt.beta1},
              {"beta2", train.opt.beta2},
              {"eps", train.opt.eps},
              {"weight_decay", train.opt.weight_decay},
              {"epochs", train.epochs},
              {"n_support", train.n_support},
              {"n_query", train.n_query},
              {"detach_support", train.detach_support}}},
            {"regimes", regime_names},
            {"variants", variants},
            {"seeds", seeds},
            {"targets", targets},
            {"emit_plot", emit_plot}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    RunConfig cfg;
    try {
        cfg.manifest_path = j.value("manifest", cfg.manifest_path);
        cfg.out_dir = j.value("out_dir", cfg.out_dir);
        if (j.contains("backbone")) cfg.backbone = model::backbone_config_from_json(j.at("backbone"));
        if (j.contains("features")) cfg.features = feature_config_from_json(j.at("features"));
        if (j.contains("train")) {
            const auto& t = j.at("train");
            cfg.train.opt.lr = t.value("lr", cfg.train.opt.lr);
            cfg.train.opt.beta1 = t.value("beta1", cfg.train.opt.beta1);
            cfg.train.opt.beta2 = t.value("beta2", cfg.train.opt.beta2);
            cfg.train.opt.eps = t.value("eps", cfg.train.opt.eps);
            cfg.train.opt.weight_decay = t.value("weight_decay", cfg.train.opt.weight_decay);
            cfg.train.epochs = t.value("epochs", cfg.train.epochs);
            cfg.train.n_support = t.value("n_support", cfg.train.n_support);
            cfg.train.n_query = t.value("n_query", cfg.train.n_query);
            cfg.train.detach_support = t.value("detach_support", cfg.train.detach_support);
        }
        if (j.contains("regimes")) {
            cfg.regimes.clear();
            for (const auto& r : j.at("regimes")) cfg.regimes.push_back(eval::regime_from_string(r.get<std::string>()));
        }
        if (j.contains("variants")) cfg.variants = j.at("variants").get<std::vector<std::string>>();
        if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<uint64_t>>();
        if (j.contains("targets")) cfg.targets = j.at("targets").get<std::vector<std::string>>();
        cfg.emit_plot = j.value("emit_plot", cfg.emit_plot);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("run config: ") + e.what());
    }
    return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("run config: cannot open " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("run config: " + path + ": " + e.what());
    }
    return from_json(j);
}

void RunConfig::validate() const {
    if (manifest_path.empty()) throw ConfigError("run config: 'manifest' is required");
    if (!std::filesystem::exists(manifest_path))
        throw ConfigError("run config: manifest path does not exist: " + manifest_path);
    if (seeds.empty()) throw ConfigError("run config: 'seeds' must be nonempty");
    if (variants.empty()) throw ConfigError("run config: 'variants' must be nonempty");
    if (regimes.empty()) throw ConfigError("run config: 'regimes' must be nonempty");
    for (const auto& v : variants)
        if (v != "base" && v != "adv") throw ConfigError("run config: variants entries must be 'base' or 'adv'");
    backbone.validate();
    train.validate();
}

}  // namespace kspace
