#pragma once

#include <string>
#include <vector>

#include "mmt/adam.hpp"

namespace mmt {

// Versioned binary container: magic "MMCK", u32 version, length-prefixed
// JSON metadata block, then named tensors as
// [u32 name length, name bytes, u32 rank, u32 dims..., f32 data...].
// The metadata string is preserved verbatim so save -> load -> save is
// byte-identical.
struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    std::string meta_json;
    struct NamedTensor {
        std::string name;
        Shape shape;
        std::vector<float> data;
    };
    std::vector<NamedTensor> tensors;

    const NamedTensor* find(const std::string& name) const {
        for (const auto& t : tensors)
            if (t.name == name) return &t;
        return nullptr;
    }
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Parameter values plus Adam moments ("<name>#m", "<name>#v") under a prefix.
void append_store(Checkpoint& ckpt, const ParamStore<float>& store, const std::string& prefix);
void load_store(const Checkpoint& ckpt, ParamStore<float>& store, const std::string& prefix);

// Scalar counts of value tensors under a prefix, grouped by leading name
// segment; moments excluded.
std::vector<std::pair<std::string, std::size_t>> checkpoint_component_counts(
    const Checkpoint& ckpt, const std::string& prefix);

}  // namespace mmt
