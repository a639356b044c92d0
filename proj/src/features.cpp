#include "kspace/features.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <functional>
#include <thread>

#include "kspace/error.hpp"

namespace kspace {

nlohmann::json to_json(const FeatureConfig& cfg) {
    return {{"d_enc", cfg.d_enc},         {"hash_buckets", cfg.hash_buckets}, {"time_pairs", cfg.time_pairs},
            {"rwpe_steps", cfg.rwpe_steps}, {"rwpe_walks", cfg.rwpe_walks},     {"temporal", cfg.temporal},
            {"fanout", cfg.fanout}};
}

FeatureConfig feature_config_from_json(const nlohmann::json& j) {
    FeatureConfig cfg;
    cfg.d_enc = j.value("d_enc", cfg.d_enc);
    cfg.hash_buckets = j.value("hash_buckets", cfg.hash_buckets);
    cfg.time_pairs = j.value("time_pairs", cfg.time_pairs);
    cfg.rwpe_steps = j.value("rwpe_steps", cfg.rwpe_steps);
    cfg.rwpe_walks = j.value("rwpe_walks", cfg.rwpe_walks);
    cfg.temporal = j.value("temporal", cfg.temporal);
    cfg.fanout = j.value("fanout", cfg.fanout);
    if (cfg.d_enc < 1 || cfg.hash_buckets < 1 || cfg.time_pairs < 0 || cfg.rwpe_steps < 0 || cfg.rwpe_walks < 1)
        throw ConfigError("features: invalid configuration values");
    if (cfg.fanout.empty()) throw ConfigError("features.fanout must not be empty");
    for (int f : cfg.fanout)
        if (f < 1) throw ConfigError("features.fanout entries must be positive");
    return cfg;
}

int parallel_threads() {
    if (const char* env = std::getenv("KSPACE_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return static_cast<int>(std::min(hw == 0 ? 1u : hw, 8u));
}

namespace {

// Chunked parallel loop; results must not depend on chunk assignment.
void parallel_for(int64_t n, const std::function<void(int64_t)>& body) {
    const int threads = parallel_threads();
    if (threads <= 1 || n < 64) {
        for (int64_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    std::atomic<int64_t> next{0};
    for (int t = 0; t < threads; ++t)
        pool.emplace_back([&] {
            for (;;) {
                const int64_t i = next.fetch_add(1);
                if (i >= n) return;
                body(i);
            }
        });
    for (auto& th : pool) th.join();
}

}  // namespace

FrozenRowEncoder FrozenRowEncoder::build_shape(const RelationalBundle& bundle, const FeatureConfig& cfg) {
    FrozenRowEncoder enc;
    enc.d_enc_ = cfg.d_enc;
    enc.buckets_ = cfg.hash_buckets;
    enc.manifest_digest_ = bundle.manifest.digest();
    enc.tables_.resize(bundle.manifest.tables.size());
    for (size_t ti = 0; ti < bundle.manifest.tables.size(); ++ti) {
        const TableSpec& spec = bundle.manifest.tables[ti];
        TableEncoder& te = enc.tables_[ti];
        for (size_t ci = 0; ci < spec.columns.size(); ++ci) {
            const ColumnSpec& c = spec.columns[ci];
            if (bundle.manifest.is_task_label_column(spec.name, c.name)) continue;
            if (c.kind == ColumnKind::kNumeric) te.numeric_cols.push_back(static_cast<int64_t>(ci));
            else if (c.kind == ColumnKind::kCategorical) te.categorical_cols.push_back(static_cast<int64_t>(ci));
        }
        te.mean.assign(te.numeric_cols.size(), 0.0);
        te.std.assign(te.numeric_cols.size(), 1.0);
    }
    return enc;
}

void FrozenRowEncoder::seed_projections(uint64_t manifest_digest) {
    RngStream root(manifest_digest);
    for (size_t ti = 0; ti < tables_.size(); ++ti) {
        TableEncoder& te = tables_[ti];
        const int64_t raw = te.raw_width(buckets_);
        RngStream s = root.derive("encoder-projection", static_cast<int64_t>(ti));
        Tensor2 p(raw, d_enc_);
        const double scale = 1.0 / std::sqrt(static_cast<double>(std::max<int64_t>(raw, 1)));
        for (size_t i = 0; i < p.size(); ++i) p.data()[i] = scale * s.normal();
        te.projection = std::move(p);
    }
}

FrozenRowEncoder FrozenRowEncoder::fit(const RelationalBundle& bundle, const FeatureConfig& cfg,
                                       int64_t train_cutoff) {
    FrozenRowEncoder enc = build_shape(bundle, cfg);
    for (size_t ti = 0; ti < bundle.manifest.tables.size(); ++ti) {
        const TableSpec& spec = bundle.manifest.tables[ti];
        const TableData& data = bundle.tables[ti];
        TableEncoder& te = enc.tables_[ti];

        const auto ts_name = spec.timestamp_column();
        const ColumnData* times = ts_name ? &data.column(spec, *ts_name) : nullptr;
        auto in_fit_split = [&](int64_t r) {
            if (!times) return true;
            const int64_t t = times->times[static_cast<size_t>(r)];
            return t == kStaticTime || t <= train_cutoff;
        };

        for (size_t k = 0; k < te.numeric_cols.size(); ++k) {
            const ColumnData& col = data.cols[static_cast<size_t>(te.numeric_cols[k])];
            double sum = 0.0, sum2 = 0.0;
            int64_t n = 0;
            for (int64_t r = 0; r < data.n_rows; ++r) {
                const double v = col.nums[static_cast<size_t>(r)];
                if (std::isnan(v) || !in_fit_split(r)) continue;
                sum += v;
                sum2 += v * v;
                ++n;
            }
            if (n > 0) {
                te.mean[k] = sum / static_cast<double>(n);
                const double var = std::max(sum2 / static_cast<double>(n) - te.mean[k] * te.mean[k], 0.0);
                te.std[k] = var > 1e-12 ? std::sqrt(var) : 1.0;
            }
        }
    }
    enc.seed_projections(enc.manifest_digest_);
    return enc;
}

void FrozenRowEncoder::encode_row(const RelationalBundle& bundle, int32_t table, int64_t row, double* out) const {
    if (table < 0 || static_cast<size_t>(table) >= tables_.size())
        throw ContractError("encode_row: unknown table index " + std::to_string(table));
    const TableEncoder& te = tables_[static_cast<size_t>(table)];
    const TableData& data = bundle.tables[static_cast<size_t>(table)];
    const TableSpec& spec = bundle.manifest.tables[static_cast<size_t>(table)];
    std::fill(out, out + d_enc_, 0.0);

    // embedding = standardized-numeric block and one-hot block times the
    // fixed projection, computed row-sparsely
    for (size_t k = 0; k < te.numeric_cols.size(); ++k) {
        const double v = data.cols[static_cast<size_t>(te.numeric_cols[k])].nums[static_cast<size_t>(row)];
        const double z = std::isnan(v) ? 0.0 : (v - te.mean[k]) / te.std[k];
        if (z == 0.0) continue;
        const double* prow = te.projection.row(static_cast<int64_t>(k));
        for (int c = 0; c < d_enc_; ++c) out[c] += z * prow[c];
    }
    const int64_t base = static_cast<int64_t>(te.numeric_cols.size());
    for (size_t k = 0; k < te.categorical_cols.size(); ++k) {
        const std::string& v = data.cols[static_cast<size_t>(te.categorical_cols[k])].strs[static_cast<size_t>(row)];
        if (v.empty()) continue;  // missing categorical: zero one-hot block
        const std::string& col_name = spec.columns[static_cast<size_t>(te.categorical_cols[k])].name;
        const uint64_t bucket = fnv1a64(v, fnv1a64(col_name, fnv1a64("\x1f"))) % static_cast<uint64_t>(buckets_);
        const double* prow = te.projection.row(base + static_cast<int64_t>(k) * buckets_ + static_cast<int64_t>(bucket));
        for (int c = 0; c < d_enc_; ++c) out[c] += prow[c];
    }
}

uint64_t FrozenRowEncoder::digest() const {
    uint64_t h = manifest_digest_;
    h = fnv1a64_bytes(&d_enc_, sizeof(d_enc_), h);
    h = fnv1a64_bytes(&buckets_, sizeof(buckets_), h);
    for (const auto& te : tables_) {
        if (!te.mean.empty()) h = fnv1a64_bytes(te.mean.data(), te.mean.size() * sizeof(double), h);
        if (!te.std.empty()) h = fnv1a64_bytes(te.std.data(), te.std.size() * sizeof(double), h);
    }
    return h;
}

std::map<std::string, Tensor2> FrozenRowEncoder::export_stats() const {
    std::map<std::string, Tensor2> out;
    for (size_t ti = 0; ti < tables_.size(); ++ti) {
        const auto& te = tables_[ti];
        const int64_t n = static_cast<int64_t>(te.mean.size());
        Tensor2 mu(1, std::max<int64_t>(n, 1));
        Tensor2 sd = Tensor2::full(1, std::max<int64_t>(n, 1), 1.0);
        for (int64_t k = 0; k < n; ++k) {
            mu.at(0, k) = te.mean[static_cast<size_t>(k)];
            sd.at(0, k) = te.std[static_cast<size_t>(k)];
        }
        out.emplace("enc.t" + std::to_string(ti) + ".mean", std::move(mu));
        out.emplace("enc.t" + std::to_string(ti) + ".std", std::move(sd));
    }
    return out;
}

FrozenRowEncoder FrozenRowEncoder::restore(const RelationalBundle& bundle, const FeatureConfig& cfg,
                                           const std::map<std::string, Tensor2>& stats) {
    FrozenRowEncoder enc = build_shape(bundle, cfg);
    for (size_t ti = 0; ti < enc.tables_.size(); ++ti) {
        auto& te = enc.tables_[ti];
        const auto& mu = stats.at("enc.t" + std::to_string(ti) + ".mean");
        const auto& sd = stats.at("enc.t" + std::to_string(ti) + ".std");
        for (size_t k = 0; k < te.mean.size(); ++k) {
            te.mean[k] = mu.at(0, static_cast<int64_t>(k));
            te.std[k] = sd.at(0, static_cast<int64_t>(k));
        }
    }
    enc.seed_projections(enc.manifest_digest_);
    return enc;
}

void time_features(int64_t t, int64_t t_min, int64_t t_max, int pairs, double* out) {
    if (t == kStaticTime) {
        out[0] = 0.0;
        for (int j = 0; j < pairs; ++j) {
            out[1 + 2 * j] = 0.0;
            out[2 + 2 * j] = 1.0;
        }
        return;
    }
    const double span = t_max > t_min ? static_cast<double>(t_max - t_min) : 1.0;
    const double dt = static_cast<double>(t - t_min);
    out[0] = std::clamp(dt / span, 0.0, 1.0);
    for (int j = 0; j < pairs; ++j) {
        const double w = 2.0 * M_PI * std::pow(2.0, j) / span;
        out[1 + 2 * j] = std::sin(w * dt);
        out[2 + 2 * j] = std::cos(w * dt);
    }
}

namespace {

// stamped flat memo for admissible degrees; avoids clearing between calls
struct DegreeScratch {
    std::vector<std::pair<uint64_t, int64_t>> slot;
    uint64_t stamp = 0;
};

}  // namespace

std::vector<double> rwpe(const HeteroGraph& g, int32_t node, int64_t seed_time, int steps, int walks,
                         RngStream stream, std::vector<WalkStep>* trace) {
    std::vector<double> out(static_cast<size_t>(steps), 0.0);
    thread_local DegreeScratch scratch;
    if (scratch.slot.size() < static_cast<size_t>(g.num_nodes()))
        scratch.slot.assign(static_cast<size_t>(g.num_nodes()), {0, 0});
    ++scratch.stamp;
    auto degree = [&](int32_t v) {
        auto& s = scratch.slot[static_cast<size_t>(v)];
        if (s.first != scratch.stamp) {
            s.first = scratch.stamp;
            s.second = g.admissible_out_degree(v, seed_time);
        }
        return s.second;
    };
    for (int w = 0; w < walks; ++w) {
        int32_t cur = node;
        for (int s = 0; s < steps; ++s) {
            const int64_t deg = degree(cur);
            if (deg == 0) break;  // halted walk contributes no later returns
            const auto& e = g.out_begin(cur)[stream.uniform_index(static_cast<uint64_t>(deg))];
            if (trace) trace->push_back({cur, e.nbr, e.ts});
            cur = e.nbr;
            if (cur == node) out[static_cast<size_t>(s)] += 1.0;
        }
    }
    for (auto& v : out) v /= static_cast<double>(walks);
    return out;
}

FeatureContext::FeatureContext(const RelationalBundle& bundle, const HeteroGraph& graph, FeatureConfig cfg,
                               FrozenRowEncoder encoder, int64_t t_min, int64_t t_max, uint64_t walk_seed)
    : bundle_(bundle),
      graph_(graph),
      cfg_(std::move(cfg)),
      encoder_(std::move(encoder)),
      t_min_(t_min),
      t_max_(t_max),
      walk_seed_(walk_seed) {}

void FeatureContext::compute_row(int32_t global, int64_t seed_time, double* out) const {
    const int32_t table = graph_.node_table(global);
    const int64_t row = graph_.node_row(global);
    encoder_.encode_row(bundle_, table, row, out);

    double* tf = out + cfg_.d_enc;
    if (cfg_.temporal) {
        const TableSpec& spec = bundle_.manifest.tables[static_cast<size_t>(table)];
        int64_t own_time = kStaticTime;
        if (auto ts_name = spec.timestamp_column())
            own_time = bundle_.tables[static_cast<size_t>(table)].column(spec, *ts_name).times[static_cast<size_t>(row)];
        time_features(own_time, t_min_, t_max_, cfg_.time_pairs, tf);
    } else {
        std::fill(tf, tf + cfg_.time_width(), 0.0);
    }

    RngStream walk_stream = RngStream(walk_seed_).derive("walks", global).derive("at", seed_time);
    const auto pe = rwpe(graph_, global, seed_time, cfg_.rwpe_steps, cfg_.rwpe_walks, walk_stream);
    std::copy(pe.begin(), pe.end(), out + cfg_.d_enc + cfg_.time_width());
}

Tensor2 FeatureContext::features_for(const SampledSubgraph& sg) {
    const int w = width();
    Tensor2 out(sg.num_nodes(), w);
    parallel_for(sg.num_nodes(), [&](int64_t i) {
        const auto& inst = sg.nodes[static_cast<size_t>(i)];
        const std::pair<int64_t, int64_t> key{inst.global, inst.seed_time};
        {
            std::lock_guard<std::mutex> lock(mutex_);
            auto it = cache_.find(key);
            if (it != cache_.end()) {
                std::copy(it->second.begin(), it->second.end(), out.row(i));
                return;
            }
        }
        std::vector<double> row(static_cast<size_t>(w));
        compute_row(inst.global, inst.seed_time, row.data());
        std::copy(row.begin(), row.end(), out.row(i));
        std::lock_guard<std::mutex> lock(mutex_);
        cache_.emplace(key, std::move(row));
    });
    return out;
}

uint64_t FeatureContext::context_digest() const {
    uint64_t h = encoder_.digest();
    h = fnv1a64_bytes(&t_min_, sizeof(t_min_), h);
    h = fnv1a64_bytes(&t_max_, sizeof(t_max_), h);
    h = fnv1a64_bytes(&walk_seed_, sizeof(walk_seed_), h);
    const int fields[5] = {cfg_.d_enc, cfg_.hash_buckets, cfg_.time_pairs, cfg_.rwpe_steps, cfg_.rwpe_walks};
    h = fnv1a64_bytes(fields, sizeof(fields), h);
    const int temporal = cfg_.temporal ? 1 : 0;
    return fnv1a64_bytes(&temporal, sizeof(temporal), h);
}

namespace {
constexpr char kCacheMagic[8] = {'K', 'S', 'P', 'F', 'E', 'A', 'T', '1'};
}

void FeatureContext::save_cache(const std::string& path) const {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("feature cache: cannot open for write " + path);
    f.write(kCacheMagic, sizeof(kCacheMagic));
    const uint64_t manifest_digest = bundle_.manifest.digest();
    const uint64_t ctx = context_digest();
    const int32_t w = width();
    f.write(reinterpret_cast<const char*>(&manifest_digest), sizeof(manifest_digest));
    f.write(reinterpret_cast<const char*>(&ctx), sizeof(ctx));
    f.write(reinterpret_cast<const char*>(&w), sizeof(w));
    std::lock_guard<std::mutex> lock(mutex_);
    for (const auto& [key, row] : cache_) {
        f.write(reinterpret_cast<const char*>(&key.first), sizeof(key.first));
        f.write(reinterpret_cast<const char*>(&key.second), sizeof(key.second));
        f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(double)));
    }
}

void FeatureContext::load_cache(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) return;  // no cache yet
    char magic[8];
    if (!f.read(magic, sizeof(magic)) || std::memcmp(magic, kCacheMagic, sizeof(magic)) != 0) return;
    uint64_t manifest_digest = 0, ctx = 0;
    int32_t w = 0;
    if (!f.read(reinterpret_cast<char*>(&manifest_digest), sizeof(manifest_digest))) return;
    if (!f.read(reinterpret_cast<char*>(&ctx), sizeof(ctx))) return;
    if (!f.read(reinterpret_cast<char*>(&w), sizeof(w))) return;
    if (manifest_digest != bundle_.manifest.digest() || ctx != context_digest() || w != width()) return;  // stale
    std::lock_guard<std::mutex> lock(mutex_);
    for (;;) {
        std::pair<int64_t, int64_t> key;
        std::vector<double> row(static_cast<size_t>(w));
        if (!f.read(reinterpret_cast<char*>(&key.first), sizeof(key.first))) break;
        if (!f.read(reinterpret_cast<char*>(&key.second), sizeof(key.second))) break;
        if (!f.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(double))))
            break;
        cache_.emplace(key, std::move(row));
    }
}

}  // namespace kspace
