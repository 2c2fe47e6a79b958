#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmt {

// User-facing errors (bad config, bad file, bad shapes) map to exit code 1;
// internal_error means a broken invariant and maps to exit code 2.
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct shape_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct internal_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

// FNV-1a, used for utterance-id seeds and file fingerprints.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 1469598103934665603ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 1469598103934665603ull) {
    return fnv1a(s.data(), s.size(), h);
}

// splitmix64; mixes seed words into independent streams.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b) { return mix64(mix64(a) ^ b); }
inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    return mix64(mix64(a, b) ^ c);
}

// Seeded RNG wrapper. Every source of randomness in the project goes through
// one of these, constructed from an explicit seed, so reruns are bit-identical.
class Rng {
public:
    explicit Rng(std::uint64_t seed)
        : seed_base_(seed), eng_(static_cast<std::mt19937_64::result_type>(mix64(seed))) {}

    std::uint64_t next_u64() { return eng_(); }

    // Uniform in [0, n).
    std::size_t next_index(std::size_t n) {
        std::uniform_int_distribution<std::size_t> d(0, n - 1);
        return d(eng_);
    }

    double next_uniform(double lo = 0.0, double hi = 1.0) {
        std::uniform_real_distribution<double> d(lo, hi);
        return d(eng_);
    }

    double next_gaussian() {
        std::normal_distribution<double> d(0.0, 1.0);
        return d(eng_);
    }

    // Independent child stream; deterministic function of parent seed and tag.
    Rng child(std::uint64_t tag) const { return Rng(mix64(seed_base_, tag)); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[next_index(i)]);
        }
    }

    std::mt19937_64& engine() { return eng_; }

private:
    std::uint64_t seed_base_ = 0;
    std::mt19937_64 eng_;
};

// Row-major [T x D] float32 frame matrix; the raw feature currency of the
// data pipeline (model precision is chosen separately).
struct FrameMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> v;

    FrameMatrix() = default;
    FrameMatrix(std::size_t r, std::size_t c, float fill = 0.0f) : rows(r), cols(c), v(r * c, fill) {}

    float& at(std::size_t r, std::size_t c) { return v[r * cols + c]; }
    float at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
    float* row(std::size_t r) { return v.data() + r * cols; }
    const float* row(std::size_t r) const { return v.data() + r * cols; }

    bool operator==(const FrameMatrix& o) const {
        return rows == o.rows && cols == o.cols && v == o.v;
    }
};

inline FrameMatrix crop_rows(const FrameMatrix& m, std::size_t max_rows) {
    if (m.rows <= max_rows) return m;
    FrameMatrix out(max_rows, m.cols);
    out.v.assign(m.v.begin(), m.v.begin() + static_cast<std::ptrdiff_t>(max_rows * m.cols));
    return out;
}

// Derives per-(utterance, epoch, purpose) seeds from one experiment seed.
struct SeedSequence {
    std::uint64_t root;
    std::uint64_t derive(std::uint64_t a) const { return mix64(root, a); }
    std::uint64_t derive(std::uint64_t a, std::uint64_t b) const { return mix64(root, a, b); }
    std::uint64_t derive(const std::string& s) const { return mix64(root, fnv1a(s)); }
    std::uint64_t derive(const std::string& s, std::uint64_t b) const {
        return mix64(root, fnv1a(s), b);
    }
};

}  // namespace mmt
