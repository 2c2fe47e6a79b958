#include "mmt/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

namespace fs = std::filesystem;

namespace mmt {

FeatureSequence confidence_filter(const FeatureSequence& seq, double threshold) {
    if (seq.confidence.size() != seq.length())
        throw config_error("confidence_filter: sequence has no per-frame confidence");
    FeatureSequence out;
    out.modality = seq.modality;
    out.rate_num = seq.rate_num;
    out.rate_den = seq.rate_den;
    out.start_time = seq.start_time;
    const std::size_t D = seq.frames.cols;
    out.frames.cols = D;
    for (std::size_t i = 0; i < seq.length(); ++i) {
        if (static_cast<double>(seq.confidence[i]) < threshold) continue;
        out.frames.v.insert(out.frames.v.end(), seq.frames.row(i), seq.frames.row(i) + D);
        out.confidence.push_back(seq.confidence[i]);
        out.timestamps.push_back(seq.timestamp(i));
        ++out.frames.rows;
    }
    if (out.frames.rows == 0)
        throw config_error("confidence_filter: every frame fell below threshold " +
                           std::to_string(threshold));
    return out;
}

FeatureSequence downsample(const FeatureSequence& seq, std::uint32_t target_num,
                           std::uint32_t target_den) {
    if (target_den == 0 || target_num == 0)
        throw config_error("downsample: target rate must be positive");
    const double src_rate = seq.frame_rate();
    const double dst_rate = static_cast<double>(target_num) / target_den;
    if (dst_rate > src_rate)
        throw config_error("downsample: target rate " + std::to_string(dst_rate) +
                           " Hz exceeds source rate " + std::to_string(src_rate) + " Hz");
    if (seq.length() == 0) throw config_error("downsample: empty sequence");
    if (target_num == seq.rate_num && target_den == seq.rate_den && seq.timestamps.empty())
        return seq;  // identity

    const std::size_t D = seq.frames.cols;
    const double last = seq.timestamp(seq.length() - 1) - seq.start_time;
    const std::size_t n_bins = static_cast<std::size_t>(std::floor(last * dst_rate)) + 1;
    FeatureSequence out;
    out.modality = seq.modality;
    out.rate_num = target_num;
    out.rate_den = target_den;
    out.start_time = seq.start_time;
    out.frames = FrameMatrix(n_bins, D, 0.0f);
    out.confidence.assign(n_bins, 0.0f);
    std::vector<std::size_t> counts(n_bins, 0);
    for (std::size_t i = 0; i < seq.length(); ++i) {
        const double rel = seq.timestamp(i) - seq.start_time;
        auto bin = static_cast<std::size_t>(std::floor(rel * dst_rate));
        if (bin >= n_bins) bin = n_bins - 1;  // guard against fp edge on the last stamp
        for (std::size_t d = 0; d < D; ++d) out.frames.at(bin, d) += seq.frames.at(i, d);
        ++counts[bin];
    }
    for (std::size_t b = 0; b < n_bins; ++b) {
        if (counts[b] == 0) continue;  // empty bin stays zero with confidence 0
        const float inv = 1.0f / static_cast<float>(counts[b]);
        for (std::size_t d = 0; d < D; ++d) out.frames.at(b, d) *= inv;
        out.confidence[b] = 1.0f;
    }
    return out;
}

AlignmentResult alignment_check(const FeatureSequence& audio, const FeatureSequence& visual,
                                double max_skew_seconds, const std::string& utterance_id,
                                const std::string& speaker_id, const Labels& labels) {
    if (audio.rate_num * visual.rate_den != visual.rate_num * audio.rate_den)
        throw config_error("alignment_check: rates differ (" + std::to_string(audio.frame_rate()) +
                           " vs " + std::to_string(visual.frame_rate()) + " Hz)");
    const std::size_t ta = audio.length(), tv = visual.length();
    const auto skew = static_cast<double>(ta > tv ? ta - tv : tv - ta);
    const double max_frames = max_skew_seconds * audio.frame_rate();
    if (skew > max_frames) {
        AlignmentResult r;
        r.reason = "misaligned by " + std::to_string(static_cast<std::size_t>(skew)) +
                   " frames (limit " + std::to_string(static_cast<std::size_t>(max_frames)) + ")";
        return r;
    }
    const std::size_t t = std::min(ta, tv);
    UtteranceRecord rec;
    rec.utterance_id = utterance_id;
    rec.speaker_id = speaker_id;
    rec.labels = labels;
    rec.audio = audio;
    rec.visual = visual;
    auto trim = [t](FeatureSequence& s) {
        s.frames.v.resize(t * s.frames.cols);
        s.frames.rows = t;
        if (!s.confidence.empty()) s.confidence.resize(t);
        if (!s.timestamps.empty()) s.timestamps.resize(t);
    };
    trim(rec.audio);
    trim(rec.visual);
    AlignmentResult r;
    r.record = std::move(rec);
    return r;
}

// ---- synthetic generator ----

void SyntheticSpec::validate() const {
    auto fail = [](const std::string& what) { throw config_error("synthetic spec: " + what); };
    if (n_utterances == 0) fail("n_utterances must be positive");
    if (t_min < 3 || t_max < t_min) fail("need 3 <= t_min <= t_max");
    if (audio_dim == 0 || visual_dim == 0) fail("feature dims must be positive");
    if (factor_dim == 0) fail("factor_dim must be positive (zero factor variance)");
    if (factor_smoothness < 0.0 || factor_smoothness >= 1.0)
        fail("factor_smoothness must be in [0,1)");
    if (audio_noise < 0.0 || visual_noise < 0.0 || label_noise < 0.0)
        fail("noise scales must be nonnegative");
    if (lag >= t_min) fail("lag must be smaller than t_min");
    std::size_t k = 0, c = n_classes;
    while (c > 1) {
        if (c % 2 != 0) fail("n_classes must be a power of two");
        c /= 2;
        ++k;
    }
    if (n_classes < 2) fail("n_classes must be at least 2");
    if (k > factor_dim) fail("n_classes needs log2(n_classes) <= factor_dim");
    if (k > 1 && factor_dim < 2) fail("factor_dim too small for class pattern");
    if (n_speakers == 0) fail("n_speakers must be positive");
    if (tie_projections && audio_dim != visual_dim)
        fail("tie_projections requires audio_dim == visual_dim");
}

namespace {

FrameMatrix draw_projection(std::size_t rows, std::size_t factors, Rng& rng) {
    FrameMatrix m(rows, factors);
    const double scale = 1.0 / std::sqrt(static_cast<double>(factors));
    for (auto& x : m.v) x = static_cast<float>(rng.next_gaussian() * scale);
    return m;
}

double clip(double x, double lo, double hi) { return std::min(hi, std::max(lo, x)); }

}  // namespace

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    SyntheticDataset out;
    Rng proj_rng(mix64(spec.seed, 0x70726f6aull));
    out.audio_projection = draw_projection(spec.audio_dim, spec.factor_dim, proj_rng);
    out.visual_projection =
        spec.tie_projections ? out.audio_projection
                             : draw_projection(spec.visual_dim, spec.factor_dim, proj_rng);

    std::size_t class_bits = 0;
    for (std::size_t c = spec.n_classes; c > 1; c /= 2) ++class_bits;

    const double rho = spec.factor_smoothness;
    const double innov = std::sqrt(1.0 - rho * rho);
    out.records.reserve(spec.n_utterances);
    for (std::size_t u = 0; u < spec.n_utterances; ++u) {
        Rng rng(mix64(spec.seed, 0x75747400ull, u));
        const std::size_t T =
            spec.t_min + (spec.t_max > spec.t_min ? rng.next_index(spec.t_max - spec.t_min + 1) : 0);

        // latent path indices -lag .. T-1
        const std::size_t total = T + spec.lag;
        std::vector<double> path(total * spec.factor_dim);
        for (std::size_t f = 0; f < spec.factor_dim; ++f) path[f] = rng.next_gaussian();
        for (std::size_t t = 1; t < total; ++t)
            for (std::size_t f = 0; f < spec.factor_dim; ++f)
                path[t * spec.factor_dim + f] =
                    rho * path[(t - 1) * spec.factor_dim + f] + innov * rng.next_gaussian();
        const double* s0 = path.data() + spec.lag * spec.factor_dim;  // audio-aligned window

        UtteranceRecord rec;
        rec.utterance_id = "utt" + std::to_string(u);
        rec.speaker_id = "spk" + std::to_string(u % spec.n_speakers);

        rec.audio.modality = Modality::audio;
        rec.audio.frames = FrameMatrix(T, spec.audio_dim);
        rec.visual.modality = Modality::visual;
        rec.visual.frames = FrameMatrix(T, spec.visual_dim);
        for (std::size_t t = 0; t < T; ++t) {
            const double* st = s0 + t * spec.factor_dim;
            const double* st_lagged = st - spec.lag * static_cast<std::ptrdiff_t>(spec.factor_dim);
            for (std::size_t d = 0; d < spec.audio_dim; ++d) {
                double acc = 0.0;
                for (std::size_t f = 0; f < spec.factor_dim; ++f)
                    acc += out.audio_projection.at(d, f) * st[f];
                rec.audio.frames.at(t, d) =
                    static_cast<float>(acc + spec.audio_noise * rng.next_gaussian());
            }
            for (std::size_t d = 0; d < spec.visual_dim; ++d) {
                double acc = 0.0;
                for (std::size_t f = 0; f < spec.factor_dim; ++f)
                    acc += out.visual_projection.at(d, f) * st_lagged[f];
                rec.visual.frames.at(t, d) =
                    static_cast<float>(acc + spec.visual_noise * rng.next_gaussian());
            }
        }

        std::vector<double> means(spec.factor_dim, 0.0);
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t f = 0; f < spec.factor_dim; ++f) means[f] += s0[t * spec.factor_dim + f];
        for (auto& m : means) m /= static_cast<double>(T);

        int cls = 0;
        for (std::size_t b = 0; b < class_bits; ++b)
            if (means[b] > 0.0) cls |= 1 << b;
        rec.labels.cls = cls;
        rec.labels.arousal = clip(3.0 + spec.arousal_scale * means[0] +
                                      spec.label_noise * rng.next_gaussian(),
                                  1.0, 5.0);
        rec.labels.valence = clip(3.0 + spec.valence_scale * means[spec.factor_dim > 1 ? 1 : 0] +
                                      spec.label_noise * rng.next_gaussian(),
                                  1.0, 5.0);

        out.factor_means.push_back(std::move(means));
        out.records.push_back(std::move(rec));
    }
    return out;
}

// ---- splits ----

SplitIndices split(const std::vector<UtteranceRecord>& records, const SplitRatios& ratios,
                   std::uint64_t seed) {
    if (records.empty()) throw config_error("split: no records");
    std::set<std::string> speaker_set;
    for (const auto& r : records) {
        if (r.speaker_id.empty()) throw config_error("split: record without speaker id");
        speaker_set.insert(r.speaker_id);
    }
    std::vector<std::string> speakers(speaker_set.begin(), speaker_set.end());
    Rng rng(mix64(seed, 0x73706c6974ull));
    rng.shuffle(speakers);

    const auto S = speakers.size();
    const auto n_val = static_cast<std::size_t>(
        std::max(1.0, std::floor(ratios.validation * static_cast<double>(S))));
    const auto n_test = static_cast<std::size_t>(
        std::max(1.0, std::floor(ratios.test * static_cast<double>(S))));
    if (n_val + n_test >= S)
        throw config_error("split: too few speakers (" + std::to_string(S) +
                           ") for a disjoint train/validation/test partition");

    std::map<std::string, int> part;  // 0 train, 1 val, 2 test
    for (std::size_t i = 0; i < S; ++i)
        part[speakers[i]] = i < S - n_val - n_test ? 0 : (i < S - n_test ? 1 : 2);

    SplitIndices out;
    for (std::size_t i = 0; i < records.size(); ++i) {
        switch (part[records[i].speaker_id]) {
            case 0: out.train.push_back(i); break;
            case 1: out.validation.push_back(i); break;
            default: out.test.push_back(i); break;
        }
    }
    if (out.train.empty() || out.validation.empty() || out.test.empty())
        throw config_error("split: a partition came out empty");
    return out;
}

std::vector<std::size_t> subsample_training(const std::vector<UtteranceRecord>& records,
                                            const std::vector<std::size_t>& train_indices,
                                            double fraction_percent, std::uint64_t seed) {
    if (fraction_percent <= 0.0 || fraction_percent > 100.0)
        throw config_error("subsample: fraction must be in (0, 100], got " +
                           std::to_string(fraction_percent));
    if (fraction_percent == 100.0) return train_indices;
    const double frac = fraction_percent / 100.0;

    // strata by class label when present, one stratum otherwise
    std::map<int, std::vector<std::size_t>> strata;
    for (std::size_t idx : train_indices) {
        const auto& lab = records[idx].labels;
        strata[lab.has_class() ? *lab.cls : -1].push_back(idx);
    }
    std::vector<std::size_t> out;
    for (auto& [cls, members] : strata) {
        // seeded hash order makes smaller fractions nested inside larger ones
        std::stable_sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
            const auto ha = mix64(seed, fnv1a(records[a].utterance_id));
            const auto hb = mix64(seed, fnv1a(records[b].utterance_id));
            return ha < hb;
        });
        const auto k = static_cast<std::size_t>(
            std::max<long long>(1, std::llround(frac * static_cast<double>(members.size()))));
        out.insert(out.end(), members.begin(), members.begin() + std::min(k, members.size()));
    }
    if (out.empty()) throw config_error("subsample: empty result");
    std::sort(out.begin(), out.end());
    return out;
}

// ---- container and manifest I/O ----

namespace {

constexpr char kMagic[4] = {'M', 'M', 'F', '1'};

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is, const std::string& path) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw io_error(path + ": truncated header");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& os, const float* data, std::size_t n) {
    // Little-endian on every supported target; write raw.
    os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * 4));
}

}  // namespace

void write_mmf1(const std::string& path, const FeatureSequence& seq) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw io_error("cannot open for writing: " + path);
    os.write(kMagic, 4);
    put_u32(os, static_cast<std::uint32_t>(seq.modality));
    put_u32(os, static_cast<std::uint32_t>(seq.length()));
    put_u32(os, static_cast<std::uint32_t>(seq.frames.cols));
    put_u32(os, seq.rate_num);
    put_u32(os, seq.rate_den);
    put_f32(os, seq.frames.v.data(), seq.frames.v.size());
    if (!seq.confidence.empty()) {
        if (seq.confidence.size() != seq.length())
            throw internal_error("write_mmf1: confidence length mismatch");
        put_f32(os, seq.confidence.data(), seq.confidence.size());
    }
    if (!os) throw io_error("write failed: " + path);
}

FeatureSequence read_mmf1(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open: " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw io_error(path + ": bad magic bytes at offset 0");
    FeatureSequence seq;
    const std::uint32_t modality = get_u32(is, path);
    if (modality > 1) throw io_error(path + ": unknown modality tag at offset 4");
    seq.modality = static_cast<Modality>(modality);
    const std::uint32_t T = get_u32(is, path);
    const std::uint32_t D = get_u32(is, path);
    seq.rate_num = get_u32(is, path);
    seq.rate_den = get_u32(is, path);
    if (seq.rate_den == 0 || seq.rate_num == 0) throw io_error(path + ": zero frame rate");
    seq.frames = FrameMatrix(T, D);
    if (!is.read(reinterpret_cast<char*>(seq.frames.v.data()),
                 static_cast<std::streamsize>(seq.frames.v.size() * 4)))
        throw io_error(path + ": truncated frame data");
    // optional trailing confidences, detected by remaining length
    std::vector<float> conf(T);
    if (T > 0 && is.read(reinterpret_cast<char*>(conf.data()),
                         static_cast<std::streamsize>(T * 4)))
        seq.confidence = std::move(conf);
    return seq;
}

namespace {

nlohmann::json labels_to_json(const Labels& l) {
    nlohmann::json j = nlohmann::json::object();
    if (l.cls) j["class"] = *l.cls;
    if (l.arousal) j["arousal"] = *l.arousal;
    if (l.valence) j["valence"] = *l.valence;
    return j;
}

Labels labels_from_json(const nlohmann::json& j) {
    Labels l;
    if (j.contains("class")) l.cls = j.at("class").get<int>();
    if (j.contains("arousal")) l.arousal = j.at("arousal").get<double>();
    if (j.contains("valence")) l.valence = j.at("valence").get<double>();
    return l;
}

}  // namespace

void save_dataset(const std::string& dir, const std::vector<UtteranceRecord>& records) {
    std::error_code ec;
    fs::create_directories(fs::path(dir) / "features", ec);
    if (ec) throw io_error("cannot create output directory: " + dir + " (" + ec.message() + ")");
    std::ofstream manifest(fs::path(dir) / "manifest.jsonl", std::ios::trunc);
    if (!manifest) throw io_error("cannot write manifest in " + dir);
    for (const auto& r : records) {
        const std::string audio_rel = "features/" + r.utterance_id + ".audio.mmf";
        const std::string visual_rel = "features/" + r.utterance_id + ".visual.mmf";
        write_mmf1((fs::path(dir) / audio_rel).string(), r.audio);
        write_mmf1((fs::path(dir) / visual_rel).string(), r.visual);
        nlohmann::json line;
        line["utterance_id"] = r.utterance_id;
        line["speaker_id"] = r.speaker_id;
        line["audio_path"] = audio_rel;
        line["visual_path"] = visual_rel;
        const auto labels = labels_to_json(r.labels);
        for (auto it = labels.begin(); it != labels.end(); ++it) line[it.key()] = it.value();
        manifest << line.dump() << "\n";
    }
    if (!manifest) throw io_error("manifest write failed in " + dir);
}

std::vector<UtteranceRecord> load_dataset(const std::string& dir) {
    const auto manifest_path = fs::path(dir) / "manifest.jsonl";
    std::ifstream is(manifest_path);
    if (!is) throw io_error("no manifest.jsonl in " + dir);
    std::vector<UtteranceRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw io_error(manifest_path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        UtteranceRecord r;
        r.utterance_id = j.at("utterance_id").get<std::string>();
        r.speaker_id = j.at("speaker_id").get<std::string>();
        r.labels = labels_from_json(j);
        r.audio = read_mmf1((fs::path(dir) / j.at("audio_path").get<std::string>()).string());
        r.visual = read_mmf1((fs::path(dir) / j.at("visual_path").get<std::string>()).string());
        if (r.audio.length() != r.visual.length())
            throw io_error("record " + r.utterance_id + ": modality lengths differ (" +
                           std::to_string(r.audio.length()) + " vs " +
                           std::to_string(r.visual.length()) + ")");
        out.push_back(std::move(r));
    }
    if (out.empty()) throw io_error("manifest is empty: " + manifest_path.string());
    return out;
}

std::uint64_t dataset_fingerprint(const std::vector<UtteranceRecord>& records) {
    std::uint64_t h = fnv1a("mmt-dataset-v1");
    for (const auto& r : records) {
        h = fnv1a(r.utterance_id, h);
        h = fnv1a(r.speaker_id, h);
        if (r.labels.cls) h = fnv1a(&*r.labels.cls, sizeof(int), h);
        if (r.labels.arousal) h = fnv1a(&*r.labels.arousal, sizeof(double), h);
        if (r.labels.valence) h = fnv1a(&*r.labels.valence, sizeof(double), h);
        for (const auto* seq : {&r.audio, &r.visual}) {
            const std::uint64_t dims[2] = {seq->frames.rows, seq->frames.cols};
            h = fnv1a(dims, sizeof(dims), h);
            h = fnv1a(seq->frames.v.data(), seq->frames.v.size() * 4, h);
        }
    }
    return h;
}

std::string SyntheticSpec::to_json() const {
    nlohmann::json j;
    j["n_utterances"] = n_utterances;
    j["t_min"] = t_min;
    j["t_max"] = t_max;
    j["audio_dim"] = audio_dim;
    j["visual_dim"] = visual_dim;
    j["factor_dim"] = factor_dim;
    j["lag"] = lag;
    j["factor_smoothness"] = factor_smoothness;
    j["audio_noise"] = audio_noise;
    j["visual_noise"] = visual_noise;
    j["n_classes"] = n_classes;
    j["arousal_scale"] = arousal_scale;
    j["valence_scale"] = valence_scale;
    j["label_noise"] = label_noise;
    j["n_speakers"] = n_speakers;
    j["tie_projections"] = tie_projections;
    j["seed"] = seed;
    return j.dump(2);
}

SyntheticSpec SyntheticSpec::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw io_error(std::string("synthetic spec: ") + e.what());
    }
    SyntheticSpec s;
    static const std::set<std::string> known = {
        "n_utterances", "t_min", "t_max", "audio_dim", "visual_dim", "factor_dim", "lag",
        "factor_smoothness", "audio_noise", "visual_noise", "n_classes", "arousal_scale",
        "valence_scale", "label_noise", "n_speakers", "tie_projections", "seed"};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key()))
            throw config_error("synthetic spec: unknown key '" + it.key() + "'");
    if (j.contains("n_utterances")) s.n_utterances = j["n_utterances"].get<std::size_t>();
    if (j.contains("t_min")) s.t_min = j["t_min"].get<std::size_t>();
    if (j.contains("t_max")) s.t_max = j["t_max"].get<std::size_t>();
    if (j.contains("audio_dim")) s.audio_dim = j["audio_dim"].get<std::size_t>();
    if (j.contains("visual_dim")) s.visual_dim = j["visual_dim"].get<std::size_t>();
    if (j.contains("factor_dim")) s.factor_dim = j["factor_dim"].get<std::size_t>();
    if (j.contains("lag")) s.lag = j["lag"].get<std::size_t>();
    if (j.contains("factor_smoothness")) s.factor_smoothness = j["factor_smoothness"].get<double>();
    if (j.contains("audio_noise")) s.audio_noise = j["audio_noise"].get<double>();
    if (j.contains("visual_noise")) s.visual_noise = j["visual_noise"].get<double>();
    if (j.contains("n_classes")) s.n_classes = j["n_classes"].get<std::size_t>();
    if (j.contains("arousal_scale")) s.arousal_scale = j["arousal_scale"].get<double>();
    if (j.contains("valence_scale")) s.valence_scale = j["valence_scale"].get<double>();
    if (j.contains("label_noise")) s.label_noise = j["label_noise"].get<double>();
    if (j.contains("n_speakers")) s.n_speakers = j["n_speakers"].get<std::size_t>();
    if (j.contains("tie_projections")) s.tie_projections = j["tie_projections"].get<bool>();
    if (j.contains("seed")) s.seed = j["seed"].get<std::uint64_t>();
    s.validate();
    return s;
}

}  // namespace mmt
