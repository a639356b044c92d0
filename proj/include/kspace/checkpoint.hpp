#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "kspace/tensor.hpp"

#include <json.hpp>

namespace kspace {

// Named parameter blocks plus free-form metadata, serialized as a binary
// container: magic, format version, a JSON index header, then raw
// little-endian f64 blocks. The index carries per-tensor shapes and offsets.
struct Checkpoint {
    static constexpr uint32_t kFormatVersion = 1;

    std::map<std::string, Tensor2> tensors;
    nlohmann::json meta = nlohmann::json::object();

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);

    // FNV-1a over the serialized byte stream; stable across runs.
    uint64_t digest() const;

    std::vector<uint8_t> serialize() const;
    static Checkpoint deserialize(const std::vector<uint8_t>& bytes);
};

}  // namespace kspace
