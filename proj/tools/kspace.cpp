#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "kspace/bundle.hpp"
#include "kspace/error.hpp"
#include "kspace/graph.hpp"
#include "kspace/runconfig.hpp"
#include "kspace/runner.hpp"
#include "kspace/synthetic.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kValidationFailure = 1;
constexpr int kRuntimeFailure = 2;
constexpr int kIncompleteResults = 3;

struct CommonOverrides {
    std::string out_dir;
    std::vector<std::string> variants, regimes, targets;
    std::vector<uint64_t> seeds;
    int epochs = -1;
    bool emit_plot = false;
};

void add_overrides(CLI::App* cmd, CommonOverrides& ov) {
    cmd->add_option("--out", ov.out_dir, "Output directory (overrides config)");
    cmd->add_option("--variant", ov.variants, "Restrict to variants: base, adv");
    cmd->add_option("--regime", ov.regimes, "Restrict to regimes: ST, WD, CD, ALL");
    cmd->add_option("--target", ov.targets, "Restrict evaluation targets to these tasks");
    cmd->add_option("--seed", ov.seeds, "Seed list override");
    cmd->add_option("--epochs", ov.epochs, "Training epochs override");
    cmd->add_flag("--emit-plot", ov.emit_plot, "Write an SVG bar chart of AUROC by regime");
}

kspace::RunConfig resolve(const std::string& config_path, const CommonOverrides& ov) {
    kspace::RunConfig cfg = kspace::RunConfig::load(config_path);
    if (!ov.out_dir.empty()) cfg.out_dir = ov.out_dir;
    if (!ov.variants.empty()) cfg.variants = ov.variants;
    if (!ov.regimes.empty()) {
        cfg.regimes.clear();
        for (const auto& r : ov.regimes) cfg.regimes.push_back(kspace::eval::regime_from_string(r));
    }
    if (!ov.targets.empty()) cfg.targets = ov.targets;
    if (!ov.seeds.empty()) cfg.seeds = ov.seeds;
    if (ov.epochs >= 0) cfg.train.epochs = ov.epochs;
    if (ov.emit_plot) cfg.emit_plot = true;
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"K-Space relational learning pipeline"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a synthetic relational benchmark");
    kspace::synth::LeakageSpec spec;
    std::string synth_out = "data/synth";
    synth->add_option("--out", synth_out, "Output directory");
    synth->add_option("--users", spec.users, "User count");
    synth->add_option("--items", spec.items, "Item count");
    synth->add_option("--interactions", spec.interactions, "Interaction count");
    synth->add_option("--rho", spec.rho, "Shared relational signal strength [0,1]");
    synth->add_option("--shortcut", spec.shortcut, "Task-A shortcut strength [0,1]");
    synth->add_option("--balance", spec.balance, "Label balance (0,1)");
    synth->add_option("--seed", spec.seed, "Generator seed");

    // ingest
    auto* ing = app.add_subcommand("ingest", "Validate a manifest, build the graph, print stats");
    std::string ing_manifest;
    std::string dump_edges_path;
    ing->add_option("--manifest", ing_manifest, "Manifest JSON path")->required();
    ing->add_option("--dump-edges", dump_edges_path, "Write the debug edge list to this file");

    // train
    auto* tr = app.add_subcommand("train", "Train every (regime, variant, seed) cell of a run config");
    std::string tr_config;
    CommonOverrides tr_ov;
    tr->add_option("--config", tr_config, "Run config JSON")->required();
    add_overrides(tr, tr_ov);

    // eval
    auto* ev = app.add_subcommand("eval", "Evaluate cells from checkpoints and write reports");
    std::string ev_config;
    bool train_missing = false;
    CommonOverrides ev_ov;
    ev->add_option("--config", ev_config, "Run config JSON")->required();
    ev->add_flag("--train-missing", train_missing, "Train cells whose checkpoint is absent");
    add_overrides(ev, ev_ov);

    // report
    auto* rep = app.add_subcommand("report", "Re-render reports from a results.csv");
    std::string rep_results, rep_md, rep_svg;
    rep->add_option("--results", rep_results, "results.csv path")->required();
    rep->add_option("--out-md", rep_md, "Markdown output path");
    rep->add_option("--out-svg", rep_svg, "SVG output path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth) {
            std::filesystem::create_directories(synth_out);
            kspace::synth::generate(spec, synth_out);
            std::cout << "wrote " << synth_out << "/{users,items,interactions}.csv, manifest.json, ground_truth.json\n";
            return kOk;
        }
        if (*ing) {
            const auto manifest = kspace::SchemaManifest::load(ing_manifest);
            const auto bundle =
                kspace::ingest(manifest, std::filesystem::path(ing_manifest).parent_path().string());
            const auto graph = kspace::HeteroGraph::build(bundle);
            std::cout << "database: " << manifest.database << "\n";
            for (size_t t = 0; t < manifest.tables.size(); ++t)
                std::cout << "  table " << manifest.tables[t].name << ": " << bundle.tables[t].n_rows << " rows\n";
            std::cout << "  nodes: " << graph.num_nodes() << "\n  directed edges (with reversed twins): "
                      << graph.num_directed_edges() << "\n  edge types: " << graph.num_types() << "\n  warnings: "
                      << bundle.warnings.size() << "\n";
            if (!dump_edges_path.empty()) {
                graph.dump_edges(dump_edges_path, bundle);
                std::cout << "edge list written to " << dump_edges_path << "\n";
            }
            return kOk;
        }
        if (*tr) {
            const auto cfg = resolve(tr_config, tr_ov);
            kspace::eval::run_matrix(cfg, /*train_missing=*/true, /*evaluate=*/false);
            std::cout << "checkpoints and logs written under " << cfg.out_dir << "\n";
            return kOk;
        }
        if (*ev) {
            const auto cfg = resolve(ev_config, ev_ov);
            const auto out = kspace::eval::run_matrix(cfg, train_missing, /*evaluate=*/true);
            std::cout << "results: " << out.results_csv << "\n";
            int64_t evaluated = 0;
            for (const auto& r : out.results) evaluated += r.auroc ? 1 : 0;
            if (evaluated == 0) {
                std::cerr << "no cells could be evaluated\n";
                return kIncompleteResults;
            }
            return out.complete ? kOk : kIncompleteResults;
        }
        if (*rep) {
            std::ifstream f(rep_results);
            if (!f) throw kspace::IoError("report: cannot open " + rep_results);
            std::stringstream ss;
            ss << f.rdbuf();
            const auto results = kspace::eval::parse_results_csv(ss.str());
            if (!rep_md.empty()) std::ofstream(rep_md, std::ios::trunc) << kspace::eval::render_markdown(results);
            if (!rep_svg.empty()) std::ofstream(rep_svg, std::ios::trunc) << kspace::eval::render_svg(results);
            if (rep_md.empty() && rep_svg.empty()) std::cout << kspace::eval::render_markdown(results);
            return kOk;
        }
    } catch (const kspace::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidationFailure;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntimeFailure;
    }
    return kValidationFailure;
}
