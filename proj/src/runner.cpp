#include "kspace/runner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "kspace/csv.hpp"
#include "kspace/error.hpp"
#include "kspace/metrics.hpp"

namespace kspace::eval {

namespace {

namespace fs = std::filesystem;

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string fmt3(double v) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
    std::string out;
    for (size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

struct ModelKey {
    std::vector<std::string> training_tasks;  // sorted
    std::string variant;
    uint64_t seed;

    std::string file_stem() const {
        return join(training_tasks, "+") + "." + variant + ".seed" + std::to_string(seed);
    }
    bool operator<(const ModelKey& o) const {
        return std::tie(training_tasks, variant, seed) < std::tie(o.training_tasks, o.variant, o.seed);
    }
};

uint64_t cell_digest(const RunConfig& cfg, const ModelKey& key) {
    nlohmann::json j{{"backbone", model::to_json(cfg.backbone)},
                     {"features", to_json(cfg.features)},
                     {"train",
                      {{"lr", cfg.train.opt.lr},
                       {"beta1", cfg.train.opt.beta1},
                       {"beta2", cfg.train.opt.beta2},
                       {"eps", cfg.train.opt.eps},
                       {"weight_decay", cfg.train.opt.weight_decay},
                       {"epochs", cfg.train.epochs},
                       {"n_support", cfg.train.n_support},
                       {"n_query", cfg.train.n_query},
                       {"detach_support", cfg.train.detach_support}}},
                     {"training_tasks", key.training_tasks},
                     {"variant", key.variant},
                     {"seed", key.seed}};
    return fnv1a64(j.dump());
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? std::nan("") : s / static_cast<double>(v.size());
}

}  // namespace

std::string render_csv(const std::vector<EvalResult>& results) {
    CsvTable t;
    t.header = {"task", "regime", "variant", "seed", "auroc", "n_queries", "training_tasks", "note"};
    for (const auto& r : results)
        t.rows.push_back({r.task, to_string(r.regime), r.variant, std::to_string(r.seed),
                          r.auroc ? fmt17(*r.auroc) : "", std::to_string(r.n_queries), r.training_tasks, r.note});
    std::string out;
    for (size_t i = 0; i < t.header.size(); ++i) out += (i ? "," : "") + csv_escape(t.header[i]);
    out += '\n';
    for (const auto& row : t.rows) {
        for (size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + csv_escape(row[i]);
        out += '\n';
    }
    return out;
}

std::vector<EvalResult> parse_results_csv(const std::string& text) {
    const CsvTable t = parse_csv(text, "results.csv");
    std::vector<EvalResult> out;
    for (const auto& row : t.rows) {
        EvalResult r;
        r.task = row[0];
        r.regime = regime_from_string(row[1]);
        r.variant = row[2];
        r.seed = std::stoull(row[3]);
        if (!row[4].empty()) r.auroc = std::stod(row[4]);
        r.n_queries = std::stoll(row[5]);
        r.training_tasks = row[6];
        r.note = row[7];
        out.push_back(std::move(r));
    }
    return out;
}

std::string render_markdown(const std::vector<EvalResult>& results) {
    std::vector<Regime> regimes;
    std::set<std::string> task_set;
    for (Regime r : {Regime::kSt, Regime::kWd, Regime::kCd, Regime::kAll})
        for (const auto& e : results)
            if (e.regime == r) {
                if (regimes.empty() || regimes.back() != r) regimes.push_back(r);
                break;
            }
    for (const auto& e : results) task_set.insert(e.task);

    auto cell_mean = [&](const std::string& task, Regime regime, const std::string& variant) -> std::optional<double> {
        std::vector<double> vals;
        for (const auto& e : results)
            if (e.task == task && e.regime == regime && e.variant == variant && e.auroc) vals.push_back(*e.auroc);
        if (vals.empty()) return std::nullopt;
        return mean_of(vals);
    };

    std::string md = "| Task |";
    for (Regime r : regimes) md += " " + to_string(r) + " Base | " + to_string(r) + " Adv. | " + to_string(r) + " Δ |";
    md += "\n|---|";
    for (size_t i = 0; i < regimes.size() * 3; ++i) md += "---|";
    md += "\n";

    std::map<Regime, std::pair<std::vector<double>, std::vector<double>>> col_acc;
    for (const auto& task : task_set) {
        md += "| " + task + " |";
        for (Regime r : regimes) {
            const auto base = cell_mean(task, r, "base");
            const auto adv = cell_mean(task, r, "adv");
            md += base ? " " + fmt3(*base) + " |" : " — |";
            md += adv ? " " + fmt3(*adv) + " |" : " — |";
            md += (base && adv) ? " " + fmt3(*adv - *base) + " |" : " — |";
            if (base) col_acc[r].first.push_back(*base);
            if (adv) col_acc[r].second.push_back(*adv);
        }
        md += "\n";
    }
    md += "| **Average** |";
    for (Regime r : regimes) {
        const auto& [bases, advs] = col_acc[r];
        md += bases.empty() ? " — |" : " " + fmt3(mean_of(bases)) + " |";
        md += advs.empty() ? " — |" : " " + fmt3(mean_of(advs)) + " |";
        md += (bases.empty() || advs.empty()) ? " — |" : " " + fmt3(mean_of(advs) - mean_of(bases)) + " |";
    }
    md += "\n";
    return md;
}

std::string render_svg(const std::vector<EvalResult>& results) {
    std::vector<Regime> regimes;
    for (Regime r : {Regime::kSt, Regime::kWd, Regime::kCd, Regime::kAll})
        for (const auto& e : results)
            if (e.regime == r && e.auroc) {
                regimes.push_back(r);
                break;
            }
    auto mean_for = [&](Regime r, const std::string& variant) -> std::optional<double> {
        std::vector<double> vals;
        for (const auto& e : results)
            if (e.regime == r && e.variant == variant && e.auroc) vals.push_back(*e.auroc);
        if (vals.empty()) return std::nullopt;
        return mean_of(vals);
    };

    const int width = 120 + static_cast<int>(regimes.size()) * 140;
    const int height = 320;
    const int base_y = 280, plot_h = 240;
    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) + "\" height=\"" +
                      std::to_string(height) + "\">\n";
    svg += "<text x=\"20\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">AUROC by regime</text>\n";
    for (int g = 0; g <= 5; ++g) {
        const int y = base_y - g * plot_h / 5;
        svg += "<line x1=\"50\" y1=\"" + std::to_string(y) + "\" x2=\"" + std::to_string(width - 20) + "\" y2=\"" +
               std::to_string(y) + "\" stroke=\"#ddd\"/>\n";
        svg += "<text x=\"18\" y=\"" + std::to_string(y + 4) + "\" font-family=\"sans-serif\" font-size=\"10\">" +
               fmt3(g / 5.0).substr(0, 3) + "</text>\n";
    }
    int x = 80;
    for (Regime r : regimes) {
        int bar_x = x;
        for (const std::string variant : {"base", "adv"}) {
            const auto m = mean_for(r, variant);
            if (m) {
                const int h = static_cast<int>(*m * plot_h);
                svg += "<rect x=\"" + std::to_string(bar_x) + "\" y=\"" + std::to_string(base_y - h) +
                       "\" width=\"40\" height=\"" + std::to_string(h) + "\" fill=\"" +
                       (variant == std::string("base") ? "#5778a4" : "#e49444") + "\"/>\n";
                svg += "<text x=\"" + std::to_string(bar_x + 2) + "\" y=\"" + std::to_string(base_y - h - 4) +
                       "\" font-family=\"sans-serif\" font-size=\"10\">" + fmt3(*m) + "</text>\n";
            }
            bar_x += 48;
        }
        svg += "<text x=\"" + std::to_string(x + 24) + "\" y=\"" + std::to_string(base_y + 16) +
               "\" font-family=\"sans-serif\" font-size=\"12\">" + to_string(r) + "</text>\n";
        x += 140;
    }
    svg += "<rect x=\"50\" y=\"36\" width=\"10\" height=\"10\" fill=\"#5778a4\"/>"
           "<text x=\"64\" y=\"45\" font-family=\"sans-serif\" font-size=\"10\">base</text>\n";
    svg += "<rect x=\"110\" y=\"36\" width=\"10\" height=\"10\" fill=\"#e49444\"/>"
           "<text x=\"124\" y=\"45\" font-family=\"sans-serif\" font-size=\"10\">adv</text>\n";
    svg += "</svg>\n";
    return svg;
}

MatrixOutput run_matrix(const RunConfig& cfg, bool train_missing, bool evaluate) {
    cfg.validate();
    const fs::path manifest_path(cfg.manifest_path);
    const SchemaManifest manifest = SchemaManifest::load(cfg.manifest_path);
    const RelationalBundle bundle = ingest(manifest, manifest_path.parent_path().string());
    const HeteroGraph graph = HeteroGraph::build(bundle);

    const fs::path out_dir(cfg.out_dir);
    fs::create_directories(out_dir);
    fs::create_directories(out_dir / "checkpoints");
    fs::create_directories(out_dir / "logs");
    {
        std::ofstream f(out_dir / "run_config.frozen.json", std::ios::trunc);
        f << cfg.to_json().dump(2) << '\n';
    }

    std::vector<TaskRef> task_refs;
    for (const auto& t : manifest.tasks) task_refs.push_back({t.name, manifest.database});
    std::vector<RegimeSpec> specs = build_regimes(task_refs, cfg.regimes);
    if (!cfg.targets.empty()) {
        std::vector<RegimeSpec> kept;
        for (auto& s : specs)
            if (std::find(cfg.targets.begin(), cfg.targets.end(), s.target) != cfg.targets.end())
                kept.push_back(std::move(s));
        specs = std::move(kept);
    }

    std::map<std::string, train::TaskRuntime> runtimes;
    for (const auto& t : manifest.tasks) runtimes.emplace(t.name, train::make_task_runtime(bundle, t.name));

    // distinct models to produce
    std::set<ModelKey> model_keys;
    for (const auto& spec : specs) {
        if (!spec.computable) continue;
        ModelKey key;
        key.training_tasks = spec.training_tasks;
        std::sort(key.training_tasks.begin(), key.training_tasks.end());
        for (const auto& variant : cfg.variants)
            for (uint64_t seed : cfg.seeds) {
                key.variant = variant;
                key.seed = seed;
                model_keys.insert(key);
            }
    }

    // shared feature/encoder context per (training set, seed)
    std::map<std::pair<std::vector<std::string>, uint64_t>, std::unique_ptr<train::PipelineContext>> contexts;
    struct ModelSlot {
        std::unique_ptr<train::Trainer> trainer;
        bool available = false;
    };
    std::map<ModelKey, ModelSlot> models;

    for (const ModelKey& key : model_keys) {
        std::vector<train::TaskRuntime> training;
        for (const auto& name : key.training_tasks) training.push_back(runtimes.at(name));

        const auto ctx_key = std::make_pair(key.training_tasks, key.seed);
        auto ctx_it = contexts.find(ctx_key);
        if (ctx_it == contexts.end()) {
            const uint64_t walk_seed = RngStream(key.seed).derive("walks").seed();
            auto ctx = std::make_unique<train::PipelineContext>(
                train::PipelineContext::make(bundle, graph, cfg.backbone, cfg.features, training, walk_seed));
            ctx_it = contexts.emplace(ctx_key, std::move(ctx)).first;
        }

        train::TrainConfig tcfg = cfg.train;
        tcfg.adversarial = key.variant == "adv";
        tcfg.seed = key.seed;
        auto trainer = std::make_unique<train::Trainer>(bundle, graph, *ctx_it->second, training, tcfg);

        const fs::path ckpt_path = out_dir / "checkpoints" / (key.file_stem() + ".ckpt");
        const uint64_t digest = cell_digest(cfg, key);
        bool loaded = false;
        if (fs::exists(ckpt_path)) {
            try {
                Checkpoint ck = Checkpoint::load(ckpt_path.string());
                if (ck.meta.value("cell_digest", uint64_t{0}) == digest) {
                    trainer->restore_params(ck);
                    loaded = true;
                }
            } catch (const std::exception& e) {
                std::cerr << "warning: ignoring unreadable checkpoint " << ckpt_path << ": " << e.what() << '\n';
            }
        }
        if (!loaded) {
            if (!train_missing) {
                models.emplace(key, ModelSlot{});  // marked missing
                continue;
            }
            std::cerr << "training " << key.file_stem() << " ...\n";
            train::FitResult fit = trainer->fit();
            fit.checkpoint.meta["cell_digest"] = digest;
            fit.checkpoint.save(ckpt_path.string());
            {
                std::ofstream log(out_dir / "logs" / (key.file_stem() + ".jsonl"), std::ios::trunc);
                for (const auto& line : fit.log_lines) log << line << '\n';
            }
            trainer->restore_params(fit.checkpoint);
        }
        ModelSlot slot;
        slot.trainer = std::move(trainer);
        slot.available = true;
        models.emplace(key, std::move(slot));
    }

    MatrixOutput out;
    if (!evaluate) return out;

    // evaluate every cell
    for (const auto& spec : specs) {
        for (const auto& variant : cfg.variants) {
            for (uint64_t seed : cfg.seeds) {
                EvalResult r;
                r.task = spec.target;
                r.regime = spec.regime;
                r.variant = variant;
                r.seed = seed;
                r.training_tasks = join(spec.training_tasks, "+");
                if (!spec.computable) {
                    r.note = spec.note;
                    out.results.push_back(std::move(r));
                    continue;
                }
                ModelKey key;
                key.training_tasks = spec.training_tasks;
                std::sort(key.training_tasks.begin(), key.training_tasks.end());
                key.variant = variant;
                key.seed = seed;
                const ModelSlot& slot = models.at(key);
                if (!slot.available) {
                    r.note = "missing checkpoint";
                    out.complete = false;
                    out.results.push_back(std::move(r));
                    continue;
                }
                const train::TaskRuntime& target = runtimes.at(spec.target);
                r.n_queries = static_cast<int64_t>(target.split.test.size());
                const auto a =
                    slot.trainer->evaluate(target, target.split.test, slot.trainer->eval_support_rows(target));
                if (a) r.auroc = *a;
                else r.note = "single-class test split";
                out.results.push_back(std::move(r));
            }
        }
    }

    out.results_csv = (out_dir / "results.csv").string();
    out.results_md = (out_dir / "results.md").string();
    {
        std::ofstream f(out.results_csv, std::ios::trunc);
        f << render_csv(out.results);
    }
    {
        std::ofstream f(out.results_md, std::ios::trunc);
        f << render_markdown(out.results);
    }
    if (cfg.emit_plot) {
        out.plot_svg = (out_dir / "plot.svg").string();
        std::ofstream f(out.plot_svg, std::ios::trunc);
        f << render_svg(out.results);
    }
    return out;
}

}  // namespace kspace::eval
