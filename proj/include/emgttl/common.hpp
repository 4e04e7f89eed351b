#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace emgttl {

// Error taxonomy. Configuration/usage errors map to CLI exit code 2,
// everything else to exit code 1.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};
struct TrainError : std::runtime_error {
    explicit TrainError(const std::string& msg) : std::runtime_error(msg) {}
};
struct LoadError : std::runtime_error {
    explicit LoadError(const std::string& msg) : std::runtime_error(msg) {}
};
struct TransferError : std::runtime_error {
    explicit TransferError(const std::string& msg) : std::runtime_error(msg) {}
};

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derive a child seed from a parent seed and a stream index. Used wherever
// one user-facing seed has to fan out into independent streams (per-trial
// synthesis, per-epoch shuffles, per-layer dropout).
inline uint64_t derive_seed(uint64_t seed, uint64_t stream) {
    return splitmix64(seed ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

// Self-contained RNG with fully specified output, so identical seeds give
// bit-identical streams on every platform (std::distributions do not
// guarantee that).
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(splitmix64(seed ^ 0x8e9c4b1f2a6d3e57ULL)) {}

    uint64_t next_u64() {
        state_ = state_ * 6364136223846793005ULL + 1442695040888963407ULL;
        uint64_t x = state_;
        x = splitmix64(x);
        return x;
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller, one value per call (spare cached)
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double th = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(th);
        has_spare_ = true;
        return r * std::cos(th);
    }

    double normal(double mean, double std) { return mean + std * normal(); }

    // Normal resampled until |z| <= 2, rescaled so the draw's standard
    // deviation equals `std` (plain +-2 sigma truncation would shrink it
    // to 0.8796 sigma).
    double truncated_normal(double std) {
        constexpr double trunc2_std = 0.8796259945586880;
        double z = normal();
        while (std::fabs(z) > 2.0) z = normal();
        return std * z / trunc2_std;
    }

    // index in [0, n)
    size_t index(size_t n) { return static_cast<size_t>(next_u64() % n); }

private:
    uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// Fisher-Yates with the deterministic Rng above.
template <typename T>
void shuffle_inplace(std::vector<T>& v, uint64_t seed) {
    Rng rng(seed);
    for (size_t i = v.size(); i > 1; --i) {
        size_t j = rng.index(i);
        std::swap(v[i - 1], v[j]);
    }
}

// FNV-1a over raw bytes; used for weight/payload hashes in provenance
// and bit-exactness tests.
inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ULL) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hash_hex(uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<size_t>(i)] = digits[h & 0xf];
        h >>= 4;
    }
    return s;
}

inline bool all_finite(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

inline bool all_finite(const std::vector<float>& v) {
    for (float x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

// Worker cap shared by the opt-in parallel paths. 1 (the default) keeps
// every run on a single thread and therefore bit-deterministic.
inline int env_thread_cap() {
    const char* s = std::getenv("EMGTTL_THREADS");
    if (!s) return 1;
    int n = std::atoi(s);
    return n >= 1 ? n : 1;
}

}  // namespace emgttl
