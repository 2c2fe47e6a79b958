#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mmt/common.hpp"

namespace mmt {

enum class Modality : std::uint32_t { audio = 0, visual = 1 };

// One modality's frame-by-feature matrix. Timestamps are implicit
// (start_time + i/rate) until a filter drops frames, after which the
// surviving stamps are carried explicitly.
struct FeatureSequence {
    Modality modality = Modality::audio;
    std::uint32_t rate_num = 5;
    std::uint32_t rate_den = 1;
    double start_time = 0.0;
    FrameMatrix frames;
    std::vector<float> confidence;    // empty = absent; values in [0,1]
    std::vector<double> timestamps;   // empty = regular grid

    double frame_rate() const { return static_cast<double>(rate_num) / rate_den; }
    std::size_t length() const { return frames.rows; }
    double timestamp(std::size_t i) const {
        return timestamps.empty() ? start_time + static_cast<double>(i) / frame_rate()
                                  : timestamps[i];
    }
};

struct Labels {
    std::optional<int> cls;
    std::optional<double> arousal;
    std::optional<double> valence;

    bool has_class() const { return cls.has_value(); }
    bool has_regression() const { return arousal.has_value() && valence.has_value(); }
};

struct UtteranceRecord {
    std::string utterance_id;
    std::string speaker_id;
    FeatureSequence audio;
    FeatureSequence visual;
    Labels labels;
};

// ---- preprocessing ----

// Drops frames whose detection confidence is below the threshold.
FeatureSequence confidence_filter(const FeatureSequence& seq, double threshold = 0.8);

// Bins frames by the target period; bin value is the mean of surviving
// source frames, empty bins are marked missing via zero confidence.
FeatureSequence downsample(const FeatureSequence& seq, std::uint32_t target_num,
                           std::uint32_t target_den = 1);

struct AlignmentResult {
    std::optional<UtteranceRecord> record;
    std::string reason;  // set when rejected

    bool accepted() const { return record.has_value(); }
};

// Accepts when the modality lengths differ by at most max_skew seconds
// (5 frames at 5 Hz); accepted pairs are trimmed to the shorter length.
AlignmentResult alignment_check(const FeatureSequence& audio, const FeatureSequence& visual,
                                double max_skew_seconds = 1.0,
                                const std::string& utterance_id = "",
                                const std::string& speaker_id = "",
                                const Labels& labels = {});

// ---- synthetic paired-modality generator ----

// Both modalities observe a smooth latent factor path: audio frame t sees
// s_t, visual frame t sees s_{t-lag}, each through a fixed projection plus
// private noise. Labels are functions of the factor means, so they are
// recoverable from either modality only through the shared factors.
struct SyntheticSpec {
    std::size_t n_utterances = 1000;
    std::size_t t_min = 20;
    std::size_t t_max = 50;
    std::size_t audio_dim = 32;
    std::size_t visual_dim = 17;
    std::size_t factor_dim = 4;
    std::size_t lag = 1;
    double factor_smoothness = 0.9;  // AR(1) coefficient of the latent path
    double audio_noise = 0.5;
    double visual_noise = 0.5;
    std::size_t n_classes = 4;       // power of two; sign pattern of leading factor means
    double arousal_scale = 2.0;      // arousal = clip(3 + scale * mean(s_0), 1, 5)
    double valence_scale = 2.0;      // valence = clip(3 + scale * mean(s_1), 1, 5)
    double label_noise = 0.05;
    std::size_t n_speakers = 50;
    bool tie_projections = false;    // force B == A (needs equal dims)
    std::uint64_t seed = 1;

    void validate() const;
    std::string to_json() const;
    static SyntheticSpec from_json(const std::string& text);
};

struct SyntheticDataset {
    std::vector<UtteranceRecord> records;
    // Test oracles: per-utterance factor means and the planted projections.
    std::vector<std::vector<double>> factor_means;
    FrameMatrix audio_projection;   // [audio_dim x factor_dim]
    FrameMatrix visual_projection;  // [visual_dim x factor_dim]
};

SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

// ---- splits ----

struct SplitRatios {
    double train = 0.6;
    double validation = 0.2;
    double test = 0.2;
};

struct SplitIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
    std::vector<std::size_t> test;
};

// Speaker-disjoint partition at the requested ratios.
SplitIndices split(const std::vector<UtteranceRecord>& records, const SplitRatios& ratios,
                   std::uint64_t seed);

// Utterance-level uniform subsample of the training set, stratified by class
// label where labels exist. Nested: the N% sample is a subset of the M%
// sample for N < M under the same seed.
std::vector<std::size_t> subsample_training(const std::vector<UtteranceRecord>& records,
                                            const std::vector<std::size_t>& train_indices,
                                            double fraction_percent, std::uint64_t seed);

// ---- container and manifest I/O ----

void write_mmf1(const std::string& path, const FeatureSequence& seq);
FeatureSequence read_mmf1(const std::string& path);

// Writes features/<id>.{audio,visual}.mmf plus manifest.jsonl into dir.
void save_dataset(const std::string& dir, const std::vector<UtteranceRecord>& records);
std::vector<UtteranceRecord> load_dataset(const std::string& dir);

// Stable content hash over ids, labels, shapes and raw frames.
std::uint64_t dataset_fingerprint(const std::vector<UtteranceRecord>& records);

}  // namespace mmt
