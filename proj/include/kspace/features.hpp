#pragma once

#include <cstdint>
#include <mutex>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "kspace/bundle.hpp"
#include "kspace/graph.hpp"
#include "kspace/rng.hpp"
#include "kspace/sample.hpp"
#include "kspace/tensor.hpp"

namespace kspace {

struct FeatureConfig {
    int d_enc = 128;        // frozen row embedding width
    int hash_buckets = 64;  // categorical buckets per column
    int time_pairs = 4;     // sinusoid pairs K (feature width 1 + 2K)
    int rwpe_steps = 32;    // walk length k
    int rwpe_walks = 100;   // walks per node W
    bool temporal = true;   // when false, time features are emitted as zeros
    std::vector<int> fanout = {16, 8, 4};

    int time_width() const { return 1 + 2 * time_pairs; }
    int width() const { return d_enc + time_width() + rwpe_steps; }
};

nlohmann::json to_json(const FeatureConfig& cfg);
FeatureConfig feature_config_from_json(const nlohmann::json& j);

// Deterministic standardize-hash-project row encoder. Numeric columns are
// standardized with stats fitted on rows at or before the training cutoff;
// categorical columns hash into one-hot buckets; the concatenation is
// multiplied by a fixed per-table projection seeded from the manifest digest.
// Immutable after fit; primary/foreign keys, timestamps, and every task label
// column are excluded from the encoding.
class FrozenRowEncoder {
public:
    static FrozenRowEncoder fit(const RelationalBundle& bundle, const FeatureConfig& cfg, int64_t train_cutoff);

    void encode_row(const RelationalBundle& bundle, int32_t table, int64_t row, double* out) const;

    int d_enc() const { return d_enc_; }
    uint64_t digest() const;

    // Stats round-trip through the checkpoint container (projections are
    // regenerated from the manifest digest).
    std::map<std::string, Tensor2> export_stats() const;
    static FrozenRowEncoder restore(const RelationalBundle& bundle, const FeatureConfig& cfg,
                                    const std::map<std::string, Tensor2>& stats);

private:
    struct TableEncoder {
        std::vector<int64_t> numeric_cols;      // manifest column indices
        std::vector<int64_t> categorical_cols;  // manifest column indices
        std::vector<double> mean, std;          // per numeric column
        Tensor2 projection;                     // raw_width x d_enc
        int64_t raw_width(int buckets) const {
            return static_cast<int64_t>(mean.size()) +
                   static_cast<int64_t>(categorical_cols.size()) * buckets;
        }
    };

    static FrozenRowEncoder build_shape(const RelationalBundle& bundle, const FeatureConfig& cfg);
    void seed_projections(uint64_t manifest_digest);

    int d_enc_ = 0;
    int buckets_ = 0;
    uint64_t manifest_digest_ = 0;
    std::vector<TableEncoder> tables_;
};

// index = clamp((t - t_min)/(t_max - t_min), 0, 1); pairs
// (sin(w_j t'), cos(w_j t')), w_j = 2*pi*2^j/(t_max - t_min), t' = t - t_min.
// Static timestamps map to index 0, all-zero sin, all-one cos.
void time_features(int64_t t, int64_t t_min, int64_t t_max, int pairs, double* out);

// Monte-Carlo return probabilities of temporal random walks: W walks of
// length k from `node`, each step moving along a uniformly chosen admissible
// edge (original or reversed, timestamp <= seed_time); a walk with no
// admissible move halts. Entry s-1 = fraction of walks located at `node`
// after step s. Optional trace receives every traversed (from, to, ts).
struct WalkStep {
    int32_t from, to;
    int64_t ts;
};
std::vector<double> rwpe(const HeteroGraph& g, int32_t node, int64_t seed_time, int steps, int walks,
                         RngStream stream, std::vector<WalkStep>* trace = nullptr);

// Assembles per-instance input rows [row embedding | time features | rwpe]
// for sampled subgraphs, with an in-memory cache keyed on (node, seed time).
// The cache is valid for one (bundle, encoder, time range, walk seed) context
// and can be persisted to the binary cache file format.
class FeatureContext {
public:
    FeatureContext(const RelationalBundle& bundle, const HeteroGraph& graph, FeatureConfig cfg,
                   FrozenRowEncoder encoder, int64_t t_min, int64_t t_max, uint64_t walk_seed);

    int width() const { return cfg_.width(); }
    const FeatureConfig& config() const { return cfg_; }
    const FrozenRowEncoder& encoder() const { return encoder_; }
    int64_t t_min() const { return t_min_; }
    int64_t t_max() const { return t_max_; }

    Tensor2 features_for(const SampledSubgraph& sg);

    uint64_t context_digest() const;
    void save_cache(const std::string& path) const;
    // Loads records whose header digests match this context; mismatches are
    // discarded (cache invalidation on manifest change).
    void load_cache(const std::string& path);
    size_t cache_size() const { return cache_.size(); }

private:
    void compute_row(int32_t global, int64_t seed_time, double* out) const;

    const RelationalBundle& bundle_;
    const HeteroGraph& graph_;
    FeatureConfig cfg_;
    FrozenRowEncoder encoder_;
    int64_t t_min_, t_max_;
    uint64_t walk_seed_;

    struct KeyHash {
        size_t operator()(const std::pair<int64_t, int64_t>& k) const {
            uint64_t h = fnv1a64_bytes(&k.first, sizeof(k.first));
            return fnv1a64_bytes(&k.second, sizeof(k.second), h);
        }
    };
    mutable std::mutex mutex_;
    std::unordered_map<std::pair<int64_t, int64_t>, std::vector<double>, KeyHash> cache_;
};

int parallel_threads();  // KSPACE_THREADS override, else hardware concurrency capped at 8

}  // namespace kspace
