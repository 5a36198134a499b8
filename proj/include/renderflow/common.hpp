#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace rf {

// Thrown when a stored dataset/checkpoint file fails magic/version/size checks.
struct corrupt_file_error : std::runtime_error {
    explicit corrupt_file_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when a valid pair of inputs cannot work together (e.g. keyframe
// inference against a checkpoint that never trained the keyframe adapter).
struct unsupported_configuration : std::runtime_error {
    explicit unsupported_configuration(const std::string& msg) : std::runtime_error(msg) {}
};

// ---------------------------------------------------------------------------
// Deterministic RNG.
//
// std::mt19937_64 output is fully specified by the standard; the standard
// *distributions* are not. All distributions here are hand-rolled on top of
// the raw engine so streams are identical across compilers.
// ---------------------------------------------------------------------------
class Rng {
public:
    Rng() : eng_(0) {}
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::uint64_t randint(std::uint64_t n) { return n ? eng_() % n : 0; }

    // Box-Muller, one draw per call (second branch discarded for a fixed
    // two-uniforms-per-normal stream shape).
    double normal() {
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    bool bernoulli(double p) { return uniform() < p; }

    std::string state() const {
        std::ostringstream os;
        os << eng_;
        return os.str();
    }
    void set_state(const std::string& s) {
        std::istringstream is(s);
        is >> eng_;
        if (!is) throw corrupt_file_error("rng state string failed to parse");
    }

    // Derive an independent child seed (splitmix64 over seed ^ salt).
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t salt) {
        std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    std::mt19937_64 eng_;
};

// ---------------------------------------------------------------------------
// Small 3-vector used by the scene generator and renderer (double precision).
// ---------------------------------------------------------------------------
struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;
};

inline Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Vec3 operator*(Vec3 a, double s) { return {a.x * s, a.y * s, a.z * s}; }
inline Vec3 operator*(double s, Vec3 a) { return a * s; }
inline Vec3 operator*(Vec3 a, Vec3 b) { return {a.x * b.x, a.y * b.y, a.z * b.z}; }
inline double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(Vec3 a, Vec3 b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double length(Vec3 a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalize(Vec3 a) {
    double l = length(a);
    return l > 0.0 ? a * (1.0 / l) : Vec3{0.0, 0.0, 0.0};
}

// Reinhard tonemap x/(1+x); monotone, range [0,1) for x >= 0.
inline double reinhard(double x) { return x / (1.0 + x); }
inline float reinhard(float x) { return x / (1.0f + x); }

// ---------------------------------------------------------------------------
// Planar float image, row-major (h, w, c).
// ---------------------------------------------------------------------------
struct Image {
    int h = 0, w = 0, c = 0;
    std::vector<float> v;

    Image() = default;
    Image(int h_, int w_, int c_, float fill = 0.0f)
        : h(h_), w(w_), c(c_), v(static_cast<size_t>(h_) * w_ * c_, fill) {}

    float& at(int y, int x, int ch) { return v[(static_cast<size_t>(y) * w + x) * c + ch]; }
    float at(int y, int x, int ch) const { return v[(static_cast<size_t>(y) * w + x) * c + ch]; }
    size_t size() const { return v.size(); }
    bool same_shape(const Image& o) const { return h == o.h && w == o.w && c == o.c; }
};

// FNV-1a 64-bit, used for checkpoint identity hashes.
inline std::uint64_t fnv1a64(const void* data, size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[i] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

}  // namespace rf
