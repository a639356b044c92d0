#include "kspace/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "kspace/error.hpp"
#include "kspace/metrics.hpp"
#include "kspace/rng.hpp"

namespace kspace::synth {

namespace {

constexpr int64_t kEpochStart = 1600000000;       // generation window start
constexpr int64_t kSpanSeconds = 120LL * 86400;   // 120 days of activity
constexpr double kLogitScale = 5.0;               // overall signal strength

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

void standardize(std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= static_cast<double>(v.size());
    const double inv = var > 1e-12 ? 1.0 / std::sqrt(var) : 1.0;
    for (double& x : v) x = (x - mean) * inv;
}

// intercept b with mean_u sigmoid(z_u + b) = balance, by bisection
double solve_intercept(const std::vector<double>& z, double balance) {
    double lo = -30.0, hi = 30.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        double mean = 0.0;
        for (double x : z) mean += sigmoid(x + mid);
        mean /= static_cast<double>(z.size());
        (mean < balance ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

SchemaManifest make_manifest() {
    SchemaManifest m;
    m.database = "synth";
    m.tables = {
        {"users",
         "users.csv",
         {{"user_id", ColumnKind::kPrimaryKey, ""},
          {"shortcut", ColumnKind::kNumeric, ""},
          {"noise_feat", ColumnKind::kNumeric, ""},
          {"segment", ColumnKind::kCategorical, ""},
          {"task_time", ColumnKind::kTimestamp, ""},
          {"label_a", ColumnKind::kNumeric, ""},
          {"label_b", ColumnKind::kNumeric, ""}}},
        {"items",
         "items.csv",
         {{"item_id", ColumnKind::kPrimaryKey, ""},
          {"quality_obs", ColumnKind::kNumeric, ""},
          {"category", ColumnKind::kCategorical, ""}}},
        {"interactions",
         "interactions.csv",
         {{"inter_id", ColumnKind::kPrimaryKey, ""},
          {"user_id", ColumnKind::kForeignKey, "users"},
          {"item_id", ColumnKind::kForeignKey, "items"},
          {"ts", ColumnKind::kTimestamp, ""},
          {"strength", ColumnKind::kNumeric, ""}}},
    };
    m.tasks = {{kTaskA, "users", "label_a", "task_time"}, {kTaskB, "users", "label_b", "task_time"}};
    return m;
}

}  // namespace

nlohmann::json GroundTruth::to_json() const {
    return {{"user_shared", user_shared},
            {"user_shortcut", user_shortcut},
            {"item_quality", item_quality},
            {"logit_a", logit_a},
            {"logit_b", logit_b},
            {"user_degree", user_degree},
            {"coef", coef},
            {"intercept_a", intercept_a},
            {"intercept_b", intercept_b},
            {"spec",
             {{"users", spec.users},
              {"items", spec.items},
              {"interactions", spec.interactions},
              {"rho", spec.rho},
              {"shortcut", spec.shortcut},
              {"balance", spec.balance},
              {"seed", spec.seed}}}};
}

GroundTruth GroundTruth::from_json(const nlohmann::json& j) {
    GroundTruth gt;
    gt.user_shared = j.at("user_shared").get<std::vector<double>>();
    gt.user_shortcut = j.at("user_shortcut").get<std::vector<double>>();
    gt.item_quality = j.at("item_quality").get<std::vector<double>>();
    gt.logit_a = j.at("logit_a").get<std::vector<double>>();
    gt.logit_b = j.at("logit_b").get<std::vector<double>>();
    gt.user_degree = j.at("user_degree").get<std::vector<int64_t>>();
    gt.coef = j.at("coef").get<double>();
    gt.intercept_a = j.at("intercept_a").get<double>();
    gt.intercept_b = j.at("intercept_b").get<double>();
    const auto& s = j.at("spec");
    gt.spec.users = s.at("users").get<int64_t>();
    gt.spec.items = s.at("items").get<int64_t>();
    gt.spec.interactions = s.at("interactions").get<int64_t>();
    gt.spec.rho = s.at("rho").get<double>();
    gt.spec.shortcut = s.at("shortcut").get<double>();
    gt.spec.balance = s.at("balance").get<double>();
    gt.spec.seed = s.at("seed").get<uint64_t>();
    return gt;
}

void GroundTruth::save(const std::string& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("ground truth: cannot open for write " + path);
    f << to_json().dump() << '\n';
}

GroundTruth GroundTruth::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("ground truth: cannot open " + path);
    nlohmann::json j;
    f >> j;
    return from_json(j);
}

GroundTruth generate(const LeakageSpec& spec, const std::string& out_dir) {
    if (spec.users < 10 || spec.items < 10 || spec.interactions < 10)
        throw ConfigError("synth: entity counts must be at least 10");
    if (spec.rho < 0 || spec.rho > 1 || spec.shortcut < 0 || spec.shortcut > 1)
        throw ConfigError("synth: rho and shortcut must lie in [0,1]");
    if (spec.balance <= 0.0 || spec.balance >= 1.0) throw ConfigError("synth: balance must lie in (0,1)");
    if (spec.rho == 0.0 && spec.shortcut == 0.0)
        std::cerr << "warning: synth: rho and shortcut both zero, labels are noise by construction\n";

    std::filesystem::create_directories(out_dir);
    RngStream root(spec.seed);

    GroundTruth gt;
    gt.spec = spec;
    gt.coef = kLogitScale;

    // items: latent quality, observed with light noise
    RngStream item_rng = root.derive("items");
    gt.item_quality.resize(static_cast<size_t>(spec.items));
    std::vector<double> quality_obs(static_cast<size_t>(spec.items));
    std::vector<int> item_cat(static_cast<size_t>(spec.items));
    for (int64_t i = 0; i < spec.items; ++i) {
        gt.item_quality[static_cast<size_t>(i)] = item_rng.normal();
        quality_obs[static_cast<size_t>(i)] = gt.item_quality[static_cast<size_t>(i)] + 0.1 * item_rng.normal();
        item_cat[static_cast<size_t>(i)] = static_cast<int>(item_rng.uniform_index(8));
    }

    // interactions: uniform user/item endpoints, uniform event times
    RngStream inter_rng = root.derive("interactions");
    std::vector<int64_t> inter_user(static_cast<size_t>(spec.interactions));
    std::vector<int64_t> inter_item(static_cast<size_t>(spec.interactions));
    std::vector<int64_t> inter_ts(static_cast<size_t>(spec.interactions));
    std::vector<double> inter_strength(static_cast<size_t>(spec.interactions));
    for (int64_t e = 0; e < spec.interactions; ++e) {
        inter_user[static_cast<size_t>(e)] = static_cast<int64_t>(inter_rng.uniform_index(static_cast<uint64_t>(spec.users)));
        inter_item[static_cast<size_t>(e)] = static_cast<int64_t>(inter_rng.uniform_index(static_cast<uint64_t>(spec.items)));
        inter_ts[static_cast<size_t>(e)] = kEpochStart + inter_rng.uniform_i64(0, kSpanSeconds);
        inter_strength[static_cast<size_t>(e)] = inter_rng.normal();
    }

    // relational aggregate: mean latent quality over each user's interactions
    gt.user_degree.assign(static_cast<size_t>(spec.users), 0);
    std::vector<double> shared(static_cast<size_t>(spec.users), 0.0);
    std::vector<int64_t> last_ts(static_cast<size_t>(spec.users), kStaticTime);
    for (int64_t e = 0; e < spec.interactions; ++e) {
        const auto u = static_cast<size_t>(inter_user[static_cast<size_t>(e)]);
        shared[u] += gt.item_quality[static_cast<size_t>(inter_item[static_cast<size_t>(e)])];
        gt.user_degree[u]++;
        last_ts[u] = std::max(last_ts[u], inter_ts[static_cast<size_t>(e)]);
    }
    for (int64_t u = 0; u < spec.users; ++u)
        if (gt.user_degree[static_cast<size_t>(u)] > 0)
            shared[static_cast<size_t>(u)] /= static_cast<double>(gt.user_degree[static_cast<size_t>(u)]);

    // users: shortcut column, noise column, segment, task times
    RngStream user_rng = root.derive("users");
    std::vector<double> shortcut(static_cast<size_t>(spec.users));
    std::vector<double> noise_feat(static_cast<size_t>(spec.users));
    std::vector<int> segment(static_cast<size_t>(spec.users));
    std::vector<int64_t> task_time(static_cast<size_t>(spec.users));
    for (int64_t u = 0; u < spec.users; ++u) {
        shortcut[static_cast<size_t>(u)] = user_rng.normal();
        noise_feat[static_cast<size_t>(u)] = user_rng.normal();
        segment[static_cast<size_t>(u)] = static_cast<int>(user_rng.uniform_index(6));
        const int64_t delta = user_rng.uniform_i64(3600, 2 * 86400);
        task_time[static_cast<size_t>(u)] =
            last_ts[static_cast<size_t>(u)] == kStaticTime
                ? kEpochStart + user_rng.uniform_i64(0, kSpanSeconds)
                : last_ts[static_cast<size_t>(u)] + delta;
    }

    gt.user_shared = shared;
    standardize(gt.user_shared);
    gt.user_shortcut = shortcut;
    standardize(gt.user_shortcut);

    // logistic labels over (relational aggregate, shortcut)
    gt.logit_a.resize(static_cast<size_t>(spec.users));
    gt.logit_b.resize(static_cast<size_t>(spec.users));
    for (int64_t u = 0; u < spec.users; ++u) {
        const auto i = static_cast<size_t>(u);
        gt.logit_a[i] = gt.coef * (spec.rho * gt.user_shared[i] + spec.shortcut * gt.user_shortcut[i]);
        gt.logit_b[i] = gt.coef * spec.rho * gt.user_shared[i];
    }
    gt.intercept_a = solve_intercept(gt.logit_a, spec.balance);
    gt.intercept_b = solve_intercept(gt.logit_b, spec.balance);
    for (auto& v : gt.logit_a) v += gt.intercept_a;
    for (auto& v : gt.logit_b) v += gt.intercept_b;

    RngStream label_rng = root.derive("labels");
    std::vector<int> label_a(static_cast<size_t>(spec.users)), label_b(static_cast<size_t>(spec.users));
    for (int64_t u = 0; u < spec.users; ++u) {
        const auto i = static_cast<size_t>(u);
        label_a[i] = label_rng.uniform() < sigmoid(gt.logit_a[i]) ? 1 : 0;
        label_b[i] = label_rng.uniform() < sigmoid(gt.logit_b[i]) ? 1 : 0;
    }

    const auto dir = std::filesystem::path(out_dir);
    {
        std::ofstream f(dir / "users.csv", std::ios::trunc);
        f << "user_id,shortcut,noise_feat,segment,task_time,label_a,label_b\n";
        for (int64_t u = 0; u < spec.users; ++u) {
            const auto i = static_cast<size_t>(u);
            f << 'u' << u << ',' << fmt(shortcut[i]) << ',' << fmt(noise_feat[i]) << ",s" << segment[i] << ','
              << task_time[i] << ',' << label_a[i] << ',' << label_b[i] << '\n';
        }
    }
    {
        std::ofstream f(dir / "items.csv", std::ios::trunc);
        f << "item_id,quality_obs,category\n";
        for (int64_t i = 0; i < spec.items; ++i)
            f << 'i' << i << ',' << fmt(quality_obs[static_cast<size_t>(i)]) << ",c" << item_cat[static_cast<size_t>(i)]
              << '\n';
    }
    {
        std::ofstream f(dir / "interactions.csv", std::ios::trunc);
        f << "inter_id,user_id,item_id,ts,strength\n";
        for (int64_t e = 0; e < spec.interactions; ++e) {
            const auto i = static_cast<size_t>(e);
            f << 'e' << e << ",u" << inter_user[i] << ",i" << inter_item[i] << ',' << inter_ts[i] << ','
              << fmt(inter_strength[i]) << '\n';
        }
    }
    make_manifest().save((dir / "manifest.json").string());
    gt.save((dir / "ground_truth.json").string());
    return gt;
}

double oracle_auroc(const GroundTruth& gt, const RelationalBundle& bundle, const std::string& task,
                    const std::vector<int64_t>* rows) {
    const std::vector<double>& logit = task == kTaskA ? gt.logit_a : gt.logit_b;
    const auto labels = bundle.task_labels(task);
    std::vector<double> scores;
    std::vector<int> y;
    if (rows) {
        for (int64_t r : *rows) {
            scores.push_back(logit[static_cast<size_t>(r)]);
            y.push_back(labels[static_cast<size_t>(r)]);
        }
    } else {
        scores = logit;
        y = labels;
    }
    const auto a = eval::auroc(scores, y);
    if (!a) throw ContractError("oracle_auroc: single-class labels");
    return *a;
}

}  // namespace kspace::synth
