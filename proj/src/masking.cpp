#include "mmt/masking.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

namespace mmt {

const char* corruption_tag_name(CorruptionTag t) {
    switch (t) {
        case CorruptionTag::zero: return "zero";
        case CorruptionTag::random_replace: return "random_replace";
        case CorruptionTag::keep: return "keep";
    }
    throw internal_error("unknown corruption tag");
}

CorruptionTag corruption_tag_from_name(const std::string& s) {
    if (s == "zero") return CorruptionTag::zero;
    if (s == "random_replace") return CorruptionTag::random_replace;
    if (s == "keep") return CorruptionTag::keep;
    throw io_error("unknown corruption tag: " + s);
}

namespace {

CorruptionTag draw_tag(Rng& rng) {
    const double u = rng.next_uniform();
    if (u < 0.8) return CorruptionTag::zero;
    if (u < 0.9) return CorruptionTag::random_replace;
    return CorruptionTag::keep;
}

}  // namespace

MaskPlan make_plan(std::size_t T, std::size_t chunk_len, double ratio, std::uint64_t seed,
                   bool per_frame_tags, const std::string& utterance_id) {
    if (chunk_len == 0) throw config_error("make_plan: chunk length must be positive");
    if (T < chunk_len)
        throw config_error("make_plan: T=" + std::to_string(T) + " shorter than chunk length " +
                           std::to_string(chunk_len));
    if (ratio <= 0.0 || ratio > 0.5)
        throw config_error("make_plan: mask ratio must be in (0, 0.5], got " +
                           std::to_string(ratio));

    const std::size_t target = static_cast<std::size_t>(
        std::ceil(ratio * static_cast<double>(T)));
    MaskPlan plan;
    plan.utterance_id = utterance_id;
    plan.T = T;
    plan.chunk_len = chunk_len;
    plan.seed = seed;

    Rng rng(seed);
    std::vector<bool> masked(T, false);
    std::size_t count = 0;
    while (count < target) {
        // starts whose (end-truncated) run is fully unmasked
        std::vector<std::size_t> starts;
        for (std::size_t s = 0; s < T; ++s) {
            const std::size_t e = std::min(s + chunk_len, T);
            bool free = true;
            for (std::size_t i = s; i < e && free; ++i) free = !masked[i];
            if (free) starts.push_back(s);
        }
        std::size_t start;
        std::size_t run;
        if (!starts.empty()) {
            start = starts[rng.next_index(starts.size())];
            run = std::min(chunk_len, T - start);
        } else {
            // fully fragmented free space; fall back to single frames
            std::vector<std::size_t> free_pos;
            for (std::size_t i = 0; i < T; ++i)
                if (!masked[i]) free_pos.push_back(i);
            if (free_pos.empty()) throw internal_error("make_plan: no unmasked frame left");
            start = free_pos[rng.next_index(free_pos.size())];
            run = 1;
        }
        run = std::min(run, target - count);  // trim the final chunk to the exact count
        if (per_frame_tags) {
            for (std::size_t i = 0; i < run; ++i)
                plan.chunks.push_back({start + i, 1, draw_tag(rng)});
        } else {
            plan.chunks.push_back({start, run, draw_tag(rng)});
        }
        for (std::size_t i = 0; i < run; ++i) masked[start + i] = true;
        count += run;
    }
    std::sort(plan.chunks.begin(), plan.chunks.end(),
              [](const MaskChunk& a, const MaskChunk& b) { return a.start < b.start; });
    return plan;
}

CorruptionResult apply_plan(const MaskPlan& plan, const FrameMatrix& audio,
                            const FrameMatrix& visual, Rng& rng) {
    if (audio.rows != plan.T || visual.rows != plan.T)
        throw shape_error("apply_plan: plan T=" + std::to_string(plan.T) + " vs audio T=" +
                          std::to_string(audio.rows) + ", visual T=" +
                          std::to_string(visual.rows));
    CorruptionResult out{audio, visual, plan.mask_vector()};
    std::vector<std::size_t> unmasked;
    for (std::size_t i = 0; i < plan.T; ++i)
        if (!out.target_mask[i]) unmasked.push_back(i);
    for (const auto& chunk : plan.chunks) {
        switch (chunk.tag) {
            case CorruptionTag::keep:
                break;
            case CorruptionTag::zero:
                for (std::size_t i = 0; i < chunk.len; ++i) {
                    std::fill_n(out.audio.row(chunk.start + i), audio.cols, 0.0f);
                    std::fill_n(out.visual.row(chunk.start + i), visual.cols, 0.0f);
                }
                break;
            case CorruptionTag::random_replace:
                if (unmasked.empty())
                    throw internal_error("apply_plan: no unmasked frame to replace from");
                for (std::size_t i = 0; i < chunk.len; ++i) {
                    const std::size_t src = unmasked[rng.next_index(unmasked.size())];
                    std::copy_n(audio.row(src), audio.cols, out.audio.row(chunk.start + i));
                    std::copy_n(visual.row(src), visual.cols, out.visual.row(chunk.start + i));
                }
                break;
        }
    }
    return out;
}

MaskingMode masking_mode(DataSplit split) {
    return split == DataSplit::train ? MaskingMode::dynamic_masking
                                     : MaskingMode::static_masking;
}

std::uint64_t dynamic_plan_seed(std::uint64_t base, const std::string& utterance_id,
                                std::uint64_t epoch) {
    return mix64(base, fnv1a(utterance_id), epoch);
}

std::uint64_t static_plan_seed(std::uint64_t base, const std::string& utterance_id) {
    return mix64(base, fnv1a(utterance_id));
}

std::string plans_to_json(const std::vector<MaskPlan>& plans) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : plans) {
        nlohmann::json jp;
        jp["utterance_id"] = p.utterance_id;
        jp["T"] = p.T;
        jp["chunk_len"] = p.chunk_len;
        jp["seed"] = p.seed;
        nlohmann::json chunks = nlohmann::json::array();
        for (const auto& c : p.chunks)
            chunks.push_back({{"start", c.start}, {"len", c.len},
                              {"tag", corruption_tag_name(c.tag)}});
        jp["chunks"] = std::move(chunks);
        arr.push_back(std::move(jp));
    }
    return arr.dump(2);
}

std::vector<MaskPlan> plans_from_json(const std::string& text) {
    nlohmann::json arr;
    try {
        arr = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw io_error(std::string("mask plan file: ") + e.what());
    }
    std::vector<MaskPlan> out;
    for (const auto& jp : arr) {
        MaskPlan p;
        p.utterance_id = jp.at("utterance_id").get<std::string>();
        p.T = jp.at("T").get<std::size_t>();
        p.chunk_len = jp.at("chunk_len").get<std::size_t>();
        p.seed = jp.at("seed").get<std::uint64_t>();
        for (const auto& jc : jp.at("chunks"))
            p.chunks.push_back({jc.at("start").get<std::size_t>(),
                                jc.at("len").get<std::size_t>(),
                                corruption_tag_from_name(jc.at("tag").get<std::string>())});
        out.push_back(std::move(p));
    }
    return out;
}

std::uint64_t plans_hash(const std::vector<MaskPlan>& plans) {
    const std::string text = plans_to_json(plans);
    return fnv1a(text.data(), text.size());
}

}  // namespace mmt
