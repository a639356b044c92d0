#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "kspace/error.hpp"
#include "kspace/graph.hpp"
#include "kspace/metrics.hpp"
#include "kspace/regimes.hpp"
#include "kspace/synthetic.hpp"

using namespace kspace;
using namespace kspace::synth;

namespace {

namespace fs = std::filesystem;

struct TmpDir {
    fs::path path;
    explicit TmpDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("kspace_synth_" + tag + "_" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TmpDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// tiny logistic-regression probe trained by gradient descent; the external
// check for "is this feature set predictive"
struct LogisticProbe {
    std::vector<double> w;
    double b = 0.0;

    void fit(const std::vector<std::vector<double>>& x, const std::vector<int>& y, int iters = 400,
             double lr = 0.5) {
        const size_t n = x.size(), d = x[0].size();
        w.assign(d, 0.0);
        b = 0.0;
        for (int it = 0; it < iters; ++it) {
            std::vector<double> gw(d, 0.0);
            double gb = 0.0;
            for (size_t i = 0; i < n; ++i) {
                double z = b;
                for (size_t j = 0; j < d; ++j) z += w[j] * x[i][j];
                const double p = 1.0 / (1.0 + std::exp(-z));
                const double err = p - y[i];
                for (size_t j = 0; j < d; ++j) gw[j] += err * x[i][j];
                gb += err;
            }
            for (size_t j = 0; j < d; ++j) w[j] -= lr * gw[j] / static_cast<double>(n);
            b -= lr * gb / static_cast<double>(n);
        }
    }
    double score(const std::vector<double>& xi) const {
        double z = b;
        for (size_t j = 0; j < xi.size(); ++j) z += w[j] * xi[j];
        return z;
    }
};

double probe_auroc(const std::vector<std::vector<double>>& x, const std::vector<int>& y) {
    // temporal-style split: first 70% train, last 30% eval
    const size_t n = x.size();
    const size_t cut = n * 7 / 10;
    LogisticProbe probe;
    probe.fit({x.begin(), x.begin() + static_cast<int64_t>(cut)}, {y.begin(), y.begin() + static_cast<int64_t>(cut)});
    std::vector<double> scores;
    std::vector<int> labels;
    for (size_t i = cut; i < n; ++i) {
        scores.push_back(probe.score(x[i]));
        labels.push_back(y[i]);
    }
    return *eval::auroc(scores, labels);
}

}  // namespace

TEST_CASE("generated bundles ingest cleanly and match declared counts") {
    TmpDir dir("roundtrip");
    LeakageSpec spec;
    spec.users = 120;
    spec.items = 16;
    spec.interactions = 600;
    spec.seed = 3;
    const GroundTruth gt = generate(spec, dir.path.string());

    auto manifest = SchemaManifest::load((dir.path / "manifest.json").string());
    auto bundle = ingest(manifest, dir.path.string());
    CHECK(bundle.warnings.empty());
    CHECK(bundle.tables[0].n_rows == 120);
    CHECK(bundle.tables[1].n_rows == 16);
    CHECK(bundle.tables[2].n_rows == 600);

    auto graph = HeteroGraph::build(bundle);
    // 600 interactions x 2 fks, each with a reversed twin
    CHECK(graph.num_directed_edges() == 600 * 2 * 2);

    SUBCASE("degree histogram matches the generator's bookkeeping") {
        // type 0 = (interactions, user_id, users)
        for (int64_t u = 0; u < spec.users; ++u)
            CHECK(graph.in_degree(0, graph.node_id(0, u)) == gt.user_degree[static_cast<size_t>(u)]);
    }
    SUBCASE("ground truth sidecar round-trips") {
        const GroundTruth back = GroundTruth::load((dir.path / "ground_truth.json").string());
        CHECK(back.logit_a == gt.logit_a);
        CHECK(back.user_degree == gt.user_degree);
        CHECK(back.spec.seed == 3);
    }
}

TEST_CASE("generation is byte-deterministic") {
    TmpDir a("det_a"), b("det_b");
    LeakageSpec spec;
    spec.users = 50;
    spec.items = 10;
    spec.interactions = 120;
    spec.seed = 7;
    generate(spec, a.path.string());
    generate(spec, b.path.string());
    for (const char* f : {"users.csv", "items.csv", "interactions.csv", "manifest.json", "ground_truth.json"})
        CHECK(slurp(a.path / f) == slurp(b.path / f));
}

TEST_CASE("label marginals stay within two percent of the configured balance") {
    TmpDir dir("balance");
    LeakageSpec spec;
    spec.users = 2000;
    spec.items = 50;
    spec.interactions = 8000;
    spec.balance = 0.4;
    spec.seed = 11;
    generate(spec, dir.path.string());
    auto bundle = ingest(SchemaManifest::load((dir.path / "manifest.json").string()), dir.path.string());
    for (const char* task : {kTaskA, kTaskB}) {
        const auto labels = bundle.task_labels(task);
        double mean = 0.0;
        for (int y : labels) mean += y;
        mean /= static_cast<double>(labels.size());
        CHECK(std::abs(mean - 0.4) <= 0.02);
    }
}

TEST_CASE("pure-shortcut spec makes task B unpredictable") {
    TmpDir dir("pure_shortcut");
    LeakageSpec spec;
    spec.users = 2500;
    spec.items = 40;
    spec.interactions = 10000;
    spec.rho = 0.0;
    spec.shortcut = 1.0;
    spec.seed = 13;
    const GroundTruth gt = generate(spec, dir.path.string());
    auto bundle = ingest(SchemaManifest::load((dir.path / "manifest.json").string()), dir.path.string());
    CHECK(oracle_auroc(gt, bundle, kTaskB) == doctest::Approx(0.5).epsilon(0.06));  // 0.5 +- 0.03
    CHECK(oracle_auroc(gt, bundle, kTaskA) > 0.85);
}

TEST_CASE("default-strength spec: latent logistic probe reaches 0.85 on both tasks") {
    TmpDir dir("latent_probe");
    LeakageSpec spec;
    spec.users = 2000;
    spec.items = 60;
    spec.interactions = 12000;
    spec.seed = 17;  // rho 0.8, shortcut 1.0 defaults
    const GroundTruth gt = generate(spec, dir.path.string());
    auto bundle = ingest(SchemaManifest::load((dir.path / "manifest.json").string()), dir.path.string());

    for (const char* task : {kTaskA, kTaskB}) {
        const auto labels = bundle.task_labels(task);
        std::vector<std::vector<double>> x(static_cast<size_t>(spec.users));
        for (size_t u = 0; u < x.size(); ++u) x[u] = {gt.user_shared[u], gt.user_shortcut[u]};
        CHECK(probe_auroc(x, labels) >= 0.85);
    }
    SUBCASE("the generative logits upper-bound the probe") {
        const auto labels = bundle.task_labels(kTaskA);
        std::vector<std::vector<double>> x(static_cast<size_t>(spec.users));
        for (size_t u = 0; u < x.size(); ++u) x[u] = {gt.user_shared[u], gt.user_shortcut[u]};
        CHECK(oracle_auroc(gt, bundle, kTaskA) >= probe_auroc(x, labels) - 0.02);
    }
}

TEST_CASE("shortcut strength monotonically raises an in-table probe on task A") {
    std::vector<double> mean_probe;
    for (double strength : {0.0, 0.5, 1.0}) {
        double acc = 0.0;
        for (uint64_t seed = 1; seed <= 5; ++seed) {
            TmpDir dir("mono_" + std::to_string(seed) + "_" + std::to_string(static_cast<int>(strength * 10)));
            LeakageSpec spec;
            spec.users = 800;
            spec.items = 30;
            spec.interactions = 4000;
            spec.shortcut = strength;
            spec.rho = 0.4;
            spec.seed = seed;
            generate(spec, dir.path.string());
            auto bundle = ingest(SchemaManifest::load((dir.path / "manifest.json").string()), dir.path.string());
            const auto labels = bundle.task_labels(kTaskA);
            // in-table probe: user-row columns only (shortcut + noise)
            const TableSpec& users = bundle.manifest.tables[0];
            const auto& shortcut_col = bundle.tables[0].column(users, "shortcut").nums;
            const auto& noise_col = bundle.tables[0].column(users, "noise_feat").nums;
            std::vector<std::vector<double>> x(shortcut_col.size());
            for (size_t u = 0; u < x.size(); ++u) x[u] = {shortcut_col[u], noise_col[u]};
            acc += probe_auroc(x, labels);
        }
        mean_probe.push_back(acc / 5.0);
    }
    CHECK(mean_probe[0] < mean_probe[1]);
    CHECK(mean_probe[1] < mean_probe[2]);
}

TEST_CASE("degenerate spec warns and yields near-random labels") {
    TmpDir dir("degenerate");
    LeakageSpec spec;
    spec.users = 1500;
    spec.items = 20;
    spec.interactions = 5000;
    spec.rho = 0.0;
    spec.shortcut = 0.0;
    spec.seed = 23;
    const GroundTruth gt = generate(spec, dir.path.string());
    auto bundle = ingest(SchemaManifest::load((dir.path / "manifest.json").string()), dir.path.string());
    // all logits equal the intercept: every score ties, oracle is exactly 1/2
    CHECK(oracle_auroc(gt, bundle, kTaskA) == 0.5);
    CHECK(oracle_auroc(gt, bundle, kTaskB) == 0.5);
}

TEST_CASE("spec validation") {
    TmpDir dir("validate");
    LeakageSpec spec;
    spec.users = 5;
    CHECK_THROWS_AS(generate(spec, dir.path.string()), kspace::ConfigError);
    spec.users = 100;
    spec.rho = 1.5;
    CHECK_THROWS_AS(generate(spec, dir.path.string()), kspace::ConfigError);
}
