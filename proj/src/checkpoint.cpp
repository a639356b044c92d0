#include "kspace/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "kspace/error.hpp"
#include "kspace/rng.hpp"

namespace kspace {

static_assert(std::endian::native == std::endian::little, "container format is little-endian");

namespace {
constexpr char kMagic[8] = {'K', 'S', 'P', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void put(std::vector<uint8_t>& out, T v) {
    const size_t at = out.size();
    out.resize(at + sizeof(T));
    std::memcpy(out.data() + at, &v, sizeof(T));
}

template <typename T>
T get(const std::vector<uint8_t>& in, size_t& at) {
    if (at + sizeof(T) > in.size()) throw IoError("checkpoint: truncated container");
    T v;
    std::memcpy(&v, in.data() + at, sizeof(T));
    at += sizeof(T);
    return v;
}
}  // namespace

std::vector<uint8_t> Checkpoint::serialize() const {
    nlohmann::json index = nlohmann::json::array();
    uint64_t offset = 0;
    for (const auto& [name, t] : tensors) {
        index.push_back({{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}, {"offset", offset}});
        offset += static_cast<uint64_t>(t.size()) * sizeof(double);
    }
    nlohmann::json header = {{"format_version", kFormatVersion}, {"tensors", index}, {"meta", meta}};
    const std::string header_str = header.dump();

    std::vector<uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + sizeof(kMagic));
    put<uint32_t>(out, kFormatVersion);
    put<uint64_t>(out, header_str.size());
    out.insert(out.end(), header_str.begin(), header_str.end());
    for (const auto& [name, t] : tensors) {
        const size_t at = out.size();
        out.resize(at + t.size() * sizeof(double));
        std::memcpy(out.data() + at, t.data(), t.size() * sizeof(double));
    }
    return out;
}

Checkpoint Checkpoint::deserialize(const std::vector<uint8_t>& bytes) {
    size_t at = 0;
    if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
        throw IoError("checkpoint: bad magic");
    at = sizeof(kMagic);
    const uint32_t version = get<uint32_t>(bytes, at);
    if (version != kFormatVersion)
        throw IoError("checkpoint: unsupported format version " + std::to_string(version));
    const uint64_t header_len = get<uint64_t>(bytes, at);
    if (at + header_len > bytes.size()) throw IoError("checkpoint: truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + static_cast<long>(at),
                                       bytes.begin() + static_cast<long>(at + header_len));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("checkpoint: bad header json: ") + e.what());
    }
    at += header_len;

    Checkpoint ck;
    ck.meta = header.value("meta", nlohmann::json::object());
    const size_t data_start = at;
    for (const auto& entry : header.at("tensors")) {
        const auto name = entry.at("name").get<std::string>();
        const auto rows = entry.at("rows").get<int64_t>();
        const auto cols = entry.at("cols").get<int64_t>();
        const auto offset = entry.at("offset").get<uint64_t>();
        const size_t n = static_cast<size_t>(rows * cols);
        if (data_start + offset + n * sizeof(double) > bytes.size())
            throw IoError("checkpoint: tensor block out of range: " + name);
        std::vector<double> v(n);
        std::memcpy(v.data(), bytes.data() + data_start + offset, n * sizeof(double));
        ck.tensors.emplace(name, Tensor2(rows, cols, std::move(v)));
    }
    return ck;
}

void Checkpoint::save(const std::string& path) const {
    const auto bytes = serialize();
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("checkpoint: cannot open for write: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("checkpoint: write failed: " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("checkpoint: cannot open: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

uint64_t Checkpoint::digest() const {
    const auto bytes = serialize();
    return fnv1a64_bytes(bytes.data(), bytes.size());
}

}  // namespace kspace
