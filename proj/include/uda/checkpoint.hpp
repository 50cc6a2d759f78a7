#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace uda {

struct CheckpointEntry {
    std::string name;
    std::vector<int> shape;
    std::vector<float> values;
};

// versioned named-parameter collection; binary little-endian on disk
struct Checkpoint {
    uint32_t format_version = 1;
    std::string kind;         // generator | discriminator | segmenter
    std::string config_json;  // architecture config needed to rebuild the network
    uint32_t epoch = 0;
    uint64_t seed = 0;
    uint64_t config_digest = 0;  // digest of the training config that produced it
    std::vector<CheckpointEntry> entries;

    const CheckpointEntry* find(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

uint64_t fnv1a(const std::string& s);

}  // namespace uda
