#include "uda/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace uda {

static const char kMagic[4] = {'U', 'D', 'A', 'C'};
static const uint32_t kVersion = 1;

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
    for (const auto& e : entries)
        if (e.name == name) return &e;
    return nullptr;
}

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace {

template <class T>
void put(std::ostream& os, T v) {
    // explicit little-endian byte order
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
#if defined(__BYTE_ORDER__) && __BYTE_ORDER__ == __ORDER_BIG_ENDIAN__
    std::reverse(buf, buf + sizeof(T));
#endif
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T get(std::istream& is) {
    unsigned char buf[sizeof(T)];
    is.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
#if defined(__BYTE_ORDER__) && __BYTE_ORDER__ == __ORDER_BIG_ENDIAN__
    std::reverse(buf, buf + sizeof(T));
#endif
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

void put_string(std::ostream& os, const std::string& s) {
    put<uint32_t>(os, static_cast<uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is) {
    uint32_t n = get<uint32_t>(is);
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw std::runtime_error("checkpoint: truncated string");
    return s;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
    os.write(kMagic, 4);
    put<uint32_t>(os, kVersion);
    put_string(os, ckpt.kind);
    put_string(os, ckpt.config_json);
    put<uint32_t>(os, ckpt.epoch);
    put<uint64_t>(os, ckpt.seed);
    put<uint64_t>(os, ckpt.config_digest);
    put<uint32_t>(os, static_cast<uint32_t>(ckpt.entries.size()));
    for (const auto& e : ckpt.entries) {
        put_string(os, e.name);
        put<uint32_t>(os, static_cast<uint32_t>(e.shape.size()));
        size_t n = 1;
        for (int d : e.shape) {
            put<int32_t>(os, d);
            n *= static_cast<size_t>(d);
        }
        if (n != e.values.size())
            throw std::runtime_error("checkpoint: entry '" + e.name + "' shape/value mismatch");
        for (float v : e.values) put<float>(os, v);
    }
    if (!os) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: missing file '" + path + "'");
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("checkpoint: '" + path + "' is not a checkpoint file");
    uint32_t version = get<uint32_t>(is);
    if (version != kVersion)
        throw std::runtime_error("checkpoint: unsupported format version " + std::to_string(version) +
                                 " in '" + path + "' (expected " + std::to_string(kVersion) + ")");
    Checkpoint ckpt;
    ckpt.format_version = version;
    ckpt.kind = get_string(is);
    ckpt.config_json = get_string(is);
    ckpt.epoch = get<uint32_t>(is);
    ckpt.seed = get<uint64_t>(is);
    ckpt.config_digest = get<uint64_t>(is);
    uint32_t n_entries = get<uint32_t>(is);
    for (uint32_t i = 0; i < n_entries; ++i) {
        CheckpointEntry e;
        e.name = get_string(is);
        uint32_t ndim = get<uint32_t>(is);
        size_t n = 1;
        for (uint32_t d = 0; d < ndim; ++d) {
            e.shape.push_back(get<int32_t>(is));
            n *= static_cast<size_t>(e.shape.back());
        }
        e.values.resize(n);
        for (size_t k = 0; k < n; ++k) e.values[k] = get<float>(is);
        ckpt.entries.push_back(std::move(e));
    }
    return ckpt;
}

}  // namespace uda
