#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "kspace/features.hpp"

using namespace kspace;

namespace {

struct ShopDb {
    std::filesystem::path dir;
    SchemaManifest manifest;
    ShopDb() {
        dir = std::filesystem::temp_directory_path() / ("kspace_shop_" + std::to_string(::getpid()));
        std::filesystem::create_directories(dir);
        std::ofstream(dir / "users.csv") << "user_id,score,tier,joined,label_a\n"
                                            "u1,1.0,gold,100,1\n"
                                            "u2,3.0,silver,200,0\n"
                                            "u3,,,300,1\n"
                                            "u4,5.0,gold,400,0\n";
        std::ofstream(dir / "orders.csv") << "order_id,user_id,amount,placed\n"
                                             "o1,u1,10,150\n"
                                             "o2,u2,20,250\n"
                                             "o3,u1,30,350\n";
        manifest.database = "shop";
        manifest.tables = {
            {"users",
             "users.csv",
             {{"user_id", ColumnKind::kPrimaryKey, ""},
              {"score", ColumnKind::kNumeric, ""},
              {"tier", ColumnKind::kCategorical, ""},
              {"joined", ColumnKind::kTimestamp, ""},
              {"label_a", ColumnKind::kNumeric, ""}}},
            {"orders",
             "orders.csv",
             {{"order_id", ColumnKind::kPrimaryKey, ""},
              {"user_id", ColumnKind::kForeignKey, "users"},
              {"amount", ColumnKind::kNumeric, ""},
              {"placed", ColumnKind::kTimestamp, ""}}},
        };
        manifest.tasks = {{"task_a", "users", "label_a", "joined"}};
    }
    ~ShopDb() { std::filesystem::remove_all(dir); }
};

}  // namespace

TEST_CASE("frozen encoder: determinism, zero rows, label exclusion, oracle") {
    ShopDb db;
    auto bundle = ingest(db.manifest, db.dir.string());
    FeatureConfig cfg;
    cfg.d_enc = 16;
    cfg.hash_buckets = 8;
    auto enc = FrozenRowEncoder::fit(bundle, cfg, /*cutoff=*/400);

    SUBCASE("all-missing row maps to the zero embedding") {
        std::vector<double> out(16, 7.0);
        enc.encode_row(bundle, 0, 2, out.data());  // u3: score and tier missing
        for (double v : out) CHECK(v == 0.0);
    }
    SUBCASE("identical rows give identical embeddings, refits are bitwise equal") {
        std::vector<double> a(16), b(16);
        enc.encode_row(bundle, 0, 0, a.data());
        auto enc2 = FrozenRowEncoder::fit(bundle, cfg, 400);
        enc2.encode_row(bundle, 0, 0, b.data());
        CHECK(a == b);
        CHECK(enc.digest() == enc2.digest());
    }
    SUBCASE("embedding equals an independent standardize-hash-project computation") {
        // straight-line reimplementation for user u2 (score=3, tier=silver)
        const double mean = (1.0 + 3.0 + 5.0) / 3.0;
        const double var = ((1 - mean) * (1 - mean) + (3 - mean) * (3 - mean) + (5 - mean) * (5 - mean)) / 3.0;
        const double z = (3.0 - mean) / std::sqrt(var);
        const uint64_t bucket = fnv1a64("silver", fnv1a64("tier", fnv1a64("\x1f"))) % 8;

        // regenerate the projection exactly as the encoder seeds it
        RngStream proj_stream = RngStream(bundle.manifest.digest()).derive("encoder-projection", 0);
        const int64_t raw = 1 + 1 * 8;  // one numeric + one categorical x 8 buckets
        std::vector<double> proj(static_cast<size_t>(raw * 16));
        const double scale = 1.0 / std::sqrt(static_cast<double>(raw));
        for (auto& v : proj) v = scale * proj_stream.normal();

        std::vector<double> expect(16, 0.0);
        for (int c = 0; c < 16; ++c) expect[static_cast<size_t>(c)] += z * proj[static_cast<size_t>(c)];
        for (int c = 0; c < 16; ++c)
            expect[static_cast<size_t>(c)] += proj[static_cast<size_t>((1 + bucket) * 16 + c)];

        std::vector<double> got(16);
        enc.encode_row(bundle, 0, 1, got.data());
        for (int c = 0; c < 16; ++c) CHECK(got[static_cast<size_t>(c)] == doctest::Approx(expect[static_cast<size_t>(c)]).epsilon(1e-12));
    }
    SUBCASE("label column does not influence the embedding") {
        // u1 and a label-flipped copy of u1 must encode identically: rebuild
        // the bundle with label flipped
        std::ofstream(db.dir / "users.csv") << "user_id,score,tier,joined,label_a\n"
                                               "u1,1.0,gold,100,0\n"
                                               "u2,3.0,silver,200,0\n"
                                               "u3,,,300,1\n"
                                               "u4,5.0,gold,400,0\n";
        auto bundle2 = ingest(db.manifest, db.dir.string());
        auto enc2 = FrozenRowEncoder::fit(bundle2, cfg, 400);
        std::vector<double> a(16), b(16);
        enc.encode_row(bundle, 0, 0, a.data());
        enc2.encode_row(bundle2, 0, 0, b.data());
        CHECK(a == b);
    }
    SUBCASE("stats restore round-trips") {
        auto stats = enc.export_stats();
        auto enc2 = FrozenRowEncoder::restore(bundle, cfg, stats);
        std::vector<double> a(16), b(16);
        enc.encode_row(bundle, 0, 3, a.data());
        enc2.encode_row(bundle, 0, 3, b.data());
        CHECK(a == b);
    }
    SUBCASE("unknown table errors") {
        std::vector<double> out(16);
        CHECK_THROWS_AS(enc.encode_row(bundle, 9, 0, out.data()), ContractError);
    }
}

TEST_CASE("time features match hand-computed sinusoids") {
    const int64_t t_min = 1000, t_max = 2000;
    double out[7];

    SUBCASE("at t_min: index 0, all sin 0, all cos 1") {
        time_features(t_min, t_min, t_max, 3, out);
        CHECK(out[0] == 0.0);
        for (int j = 0; j < 3; ++j) {
            CHECK(out[1 + 2 * j] == 0.0);
            CHECK(out[2 + 2 * j] == 1.0);
        }
    }
    SUBCASE("at t_max: base frequency wraps to sin 0, cos 1") {
        time_features(t_max, t_min, t_max, 3, out);
        CHECK(out[0] == 1.0);
        CHECK(out[1] == doctest::Approx(0.0).epsilon(1e-9));
        CHECK(out[2] == doctest::Approx(1.0).epsilon(1e-9));
    }
    SUBCASE("mid-range values match direct evaluation") {
        const int64_t t = 1250;
        time_features(t, t_min, t_max, 3, out);
        CHECK(out[0] == doctest::Approx(0.25));
        const double span = 1000.0, dt = 250.0;
        for (int j = 0; j < 3; ++j) {
            const double w = 2.0 * M_PI * std::pow(2.0, j) / span;
            CHECK(out[1 + 2 * j] == doctest::Approx(std::sin(w * dt)).epsilon(1e-12));
            CHECK(out[2 + 2 * j] == doctest::Approx(std::cos(w * dt)).epsilon(1e-12));
        }
    }
    SUBCASE("static timestamps give the zero-sin one-cos vector") {
        time_features(kStaticTime, t_min, t_max, 3, out);
        CHECK(out[0] == 0.0);
        CHECK(out[1] == 0.0);
        CHECK(out[2] == 1.0);
    }
    SUBCASE("uniform time translation leaves features unchanged") {
        double a[9], b[9];
        time_features(1300, t_min, t_max, 4, a);
        time_features(1300 + 777, t_min + 777, t_max + 777, 4, b);
        for (int i = 0; i < 9; ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
    }
    SUBCASE("index clamps outside the training range") {
        time_features(5000, t_min, t_max, 3, out);
        CHECK(out[0] == 1.0);
        time_features(10, t_min, t_max, 3, out);
        CHECK(out[0] == 0.0);
    }
}

namespace {

struct PairDb {
    std::filesystem::path dir;
    SchemaManifest manifest;
    // two users joined by one order edge: from the order, A <-> order forms
    // the only admissible moves, giving a forced two-cycle
    PairDb() {
        dir = std::filesystem::temp_directory_path() / ("kspace_pair_" + std::to_string(::getpid()));
        std::filesystem::create_directories(dir);
        std::ofstream(dir / "users.csv") << "user_id,age\nA,1\nB,2\nLONER,3\n";
        std::ofstream(dir / "orders.csv") << "order_id,user_id,placed\no1,A,5\n";
        manifest.database = "pair";
        manifest.tables = {
            {"users",
             "users.csv",
             {{"user_id", ColumnKind::kPrimaryKey, ""}, {"age", ColumnKind::kNumeric, ""}}},
            {"orders",
             "orders.csv",
             {{"order_id", ColumnKind::kPrimaryKey, ""},
              {"user_id", ColumnKind::kForeignKey, "users"},
              {"placed", ColumnKind::kTimestamp, ""}}},
        };
    }
    ~PairDb() { std::filesystem::remove_all(dir); }
};

}  // namespace

TEST_CASE("rwpe trivial cases") {
    PairDb db;
    auto bundle = ingest(db.manifest, db.dir.string());
    auto g = HeteroGraph::build(bundle);

    SUBCASE("isolated node gives the all-zero vector") {
        auto pe = rwpe(g, g.node_id(0, 2), 100, 8, 50, RngStream(1));
        for (double v : pe) CHECK(v == 0.0);
    }
    SUBCASE("forced two-cycle returns at even steps only") {
        auto pe = rwpe(g, g.node_id(0, 0), 100, 8, 64, RngStream(1));
        for (int s = 1; s <= 8; ++s) {
            if (s % 2 == 0) CHECK(pe[static_cast<size_t>(s - 1)] == 1.0);
            else CHECK(pe[static_cast<size_t>(s - 1)] == 0.0);
        }
    }
    SUBCASE("future edge halts the walk at its first step") {
        auto pe = rwpe(g, g.node_id(0, 0), /*seed_time=*/4, 8, 64, RngStream(1));
        for (double v : pe) CHECK(v == 0.0);
    }
    SUBCASE("entries stay within [0,1]") {
        auto pe = rwpe(g, g.node_id(1, 0), 100, 8, 64, RngStream(1));
        for (double v : pe) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
}

namespace {

// Exact return probabilities by dense admissible-transition matrix powers.
// Walks halt when no admissible move exists: model with an absorbing state.
std::vector<double> exact_return_probs(const HeteroGraph& g, int32_t start, int64_t seed_time, int steps) {
    const int64_t n = g.num_nodes();
    const int64_t dead = n;
    std::vector<double> p(static_cast<size_t>(n + 1), 0.0);
    p[static_cast<size_t>(start)] = 1.0;
    std::vector<double> out;
    for (int s = 0; s < steps; ++s) {
        std::vector<double> q(static_cast<size_t>(n + 1), 0.0);
        q[static_cast<size_t>(dead)] = p[static_cast<size_t>(dead)];
        for (int64_t v = 0; v < n; ++v) {
            if (p[static_cast<size_t>(v)] == 0.0) continue;
            const int64_t deg = g.admissible_out_degree(static_cast<int32_t>(v), seed_time);
            if (deg == 0) {
                q[static_cast<size_t>(dead)] += p[static_cast<size_t>(v)];
                continue;
            }
            const auto* e = g.out_begin(static_cast<int32_t>(v));
            for (int64_t k = 0; k < deg; ++k)
                q[static_cast<size_t>(e[k].nbr)] += p[static_cast<size_t>(v)] / static_cast<double>(deg);
        }
        p = std::move(q);
        out.push_back(p[static_cast<size_t>(start)]);
    }
    return out;
}

struct RandomDb {
    std::filesystem::path dir;
    SchemaManifest manifest;
    RandomDb(int users, int orders, uint64_t seed) {
        RngStream rng(seed);
        dir = std::filesystem::temp_directory_path() /
              ("kspace_rand_" + std::to_string(::getpid()) + "_" + std::to_string(seed));
        std::filesystem::create_directories(dir);
        std::ofstream uf(dir / "users.csv");
        uf << "user_id,age\n";
        for (int i = 0; i < users; ++i) uf << "u" << i << "," << i << "\n";
        uf.close();
        std::ofstream of(dir / "orders.csv");
        of << "order_id,user_id,placed\n";
        for (int i = 0; i < orders; ++i)
            of << "o" << i << ",u" << rng.uniform_index(static_cast<uint64_t>(users)) << ","
               << rng.uniform_index(100) << "\n";
        of.close();
        manifest.database = "rand";
        manifest.tables = {
            {"users",
             "users.csv",
             {{"user_id", ColumnKind::kPrimaryKey, ""}, {"age", ColumnKind::kNumeric, ""}}},
            {"orders",
             "orders.csv",
             {{"order_id", ColumnKind::kPrimaryKey, ""},
              {"user_id", ColumnKind::kForeignKey, "users"},
              {"placed", ColumnKind::kTimestamp, ""}}},
        };
    }
    ~RandomDb() { std::filesystem::remove_all(dir); }
};

}  // namespace

TEST_CASE("rwpe matches matrix-power oracle within 3 standard errors") {
    for (uint64_t trial = 0; trial < 4; ++trial) {
        RandomDb db(4, 9, 500 + trial);
        auto bundle = ingest(db.manifest, db.dir.string());
        auto g = HeteroGraph::build(bundle);
        const int32_t start = static_cast<int32_t>(trial % static_cast<uint64_t>(g.num_nodes()));
        const int64_t seed_time = 60;
        const int W = 4000;
        auto mc = rwpe(g, start, seed_time, 6, W, RngStream(42 + trial));
        auto exact = exact_return_probs(g, start, seed_time, 6);
        for (int s = 0; s < 6; ++s) {
            const double p = exact[static_cast<size_t>(s)];
            const double se = std::sqrt(p * (1.0 - p) / W);
            CHECK(std::abs(mc[static_cast<size_t>(s)] - p) <= 3.0 * se + 1e-12);
        }
    }
}

TEST_CASE("rwpe walks never traverse future edges (trace property)") {
    for (uint64_t trial = 0; trial < 20; ++trial) {
        RandomDb db(3, 8, 900 + trial);
        auto bundle = ingest(db.manifest, db.dir.string());
        auto g = HeteroGraph::build(bundle);
        const int64_t seed_time = static_cast<int64_t>(trial * 7 % 100);
        std::vector<WalkStep> trace;
        rwpe(g, 0, seed_time, 8, 50, RngStream(trial), &trace);
        for (const auto& step : trace) CHECK(step.ts <= seed_time);
    }
}

TEST_CASE("bipartite admissible graph has zero odd-step returns") {
    // user-order graphs are bipartite by construction
    RandomDb db(5, 12, 77);
    auto bundle = ingest(db.manifest, db.dir.string());
    auto g = HeteroGraph::build(bundle);
    for (int32_t v = 0; v < g.num_nodes(); ++v) {
        auto pe = rwpe(g, v, 100, 7, 200, RngStream(5));
        for (int s = 1; s <= 7; s += 2) CHECK(pe[static_cast<size_t>(s - 1)] == 0.0);
    }
}

TEST_CASE("feature context assembles rows and caches by node and seed time") {
    ShopDb db;
    auto bundle = ingest(db.manifest, db.dir.string());
    auto g = HeteroGraph::build(bundle);
    FeatureConfig cfg;
    cfg.d_enc = 8;
    cfg.hash_buckets = 4;
    cfg.time_pairs = 2;
    cfg.rwpe_steps = 4;
    cfg.rwpe_walks = 20;
    cfg.fanout = {4, 4};
    auto enc = FrozenRowEncoder::fit(bundle, cfg, 400);
    FeatureContext ctx(bundle, g, cfg, enc, 100, 400, /*walk_seed=*/5);

    auto sg = sample_neighborhood(g, {{g.node_id(0, 0), 400}}, cfg.fanout, RngStream(2));
    auto f1 = ctx.features_for(sg);
    CHECK(f1.rows() == sg.num_nodes());
    CHECK(f1.cols() == cfg.width());
    CHECK(ctx.cache_size() == static_cast<size_t>(sg.num_nodes()));
    auto f2 = ctx.features_for(sg);
    CHECK(f1 == f2);

    SUBCASE("cache round-trips through the cache file and invalidates on digest change") {
        const auto path = db.dir / "feat.cache";
        ctx.save_cache(path.string());
        FeatureContext ctx2(bundle, g, cfg, enc, 100, 400, 5);
        ctx2.load_cache(path.string());
        CHECK(ctx2.cache_size() == ctx.cache_size());
        auto f3 = ctx2.features_for(sg);
        CHECK(f3 == f1);

        FeatureContext ctx3(bundle, g, cfg, enc, 100, 401, 5);  // different range
        ctx3.load_cache(path.string());
        CHECK(ctx3.cache_size() == 0);
    }
}
