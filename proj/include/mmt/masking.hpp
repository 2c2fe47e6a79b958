#pragma once

#include <string>
#include <vector>

#include "mmt/common.hpp"

namespace mmt {

enum class CorruptionTag { zero, random_replace, keep };

const char* corruption_tag_name(CorruptionTag t);
CorruptionTag corruption_tag_from_name(const std::string& s);

struct MaskChunk {
    std::size_t start = 0;
    std::size_t len = 0;
    CorruptionTag tag = CorruptionTag::zero;
};

// Corruption plan for one utterance: runs of consecutive frames covering
// exactly ceil(ratio*T) positions, one tag per run. The same positions are
// masked in both modalities.
struct MaskPlan {
    std::string utterance_id;
    std::size_t T = 0;
    std::size_t chunk_len = 0;
    std::uint64_t seed = 0;
    std::vector<MaskChunk> chunks;

    std::size_t masked_count() const {
        std::size_t n = 0;
        for (const auto& c : chunks) n += c.len;
        return n;
    }

    std::vector<bool> mask_vector() const {
        std::vector<bool> m(T, false);
        for (const auto& c : chunks)
            for (std::size_t i = 0; i < c.len; ++i) m[c.start + i] = true;
        return m;
    }

    std::vector<std::size_t> masked_positions() const {
        std::vector<std::size_t> out;
        const auto m = mask_vector();
        for (std::size_t i = 0; i < m.size(); ++i)
            if (m[i]) out.push_back(i);
        return out;
    }
};

struct MaskingConfig {
    std::size_t chunk_len = 3;
    double ratio = 0.15;
    bool per_frame_tags = false;  // default: one tag per chunk
};

// Samples non-overlapping runs of chunk_len (end-truncated) until the masked
// count first reaches ceil(ratio*T); the last run is trimmed to hit the
// count exactly. Tags drawn 0.8 zero / 0.1 random_replace / 0.1 keep.
MaskPlan make_plan(std::size_t T, std::size_t chunk_len, double ratio, std::uint64_t seed,
                   bool per_frame_tags = false, const std::string& utterance_id = "");

struct CorruptionResult {
    FrameMatrix audio;
    FrameMatrix visual;
    std::vector<bool> target_mask;  // true exactly at masked positions
};

// Applies the plan to both modalities. random_replace frames are drawn
// uniformly from the utterance's own unmasked positions, with the same
// source frame index used for audio and visual.
CorruptionResult apply_plan(const MaskPlan& plan, const FrameMatrix& audio,
                            const FrameMatrix& visual, Rng& rng);

enum class DataSplit { train, validation, test };
enum class MaskingMode { dynamic_masking, static_masking };

// Train sequences get a fresh plan every epoch; validation plans are fixed
// per utterance so epoch-to-epoch comparisons are fair.
MaskingMode masking_mode(DataSplit split);

std::uint64_t dynamic_plan_seed(std::uint64_t base, const std::string& utterance_id,
                                std::uint64_t epoch);
std::uint64_t static_plan_seed(std::uint64_t base, const std::string& utterance_id);

// Sidecar serialization of precomputed (static) plans, plus a stable content
// hash used as a regression fixture.
std::string plans_to_json(const std::vector<MaskPlan>& plans);
std::vector<MaskPlan> plans_from_json(const std::string& text);
std::uint64_t plans_hash(const std::vector<MaskPlan>& plans);

}  // namespace mmt
