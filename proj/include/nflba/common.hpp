#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace nflba {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InvalidArgumentError : Error {
    using Error::Error;
};
struct DegenerateNormalError : Error {
    using Error::Error;
};
struct CutLocusError : Error {
    using Error::Error;
};
struct EmptySceneError : Error {
    using Error::Error;
};
struct DegenerateMaskError : Error {
    using Error::Error;
};
struct DegenerateModelError : Error {
    using Error::Error;
};
struct SchemaError : Error {
    using Error::Error;
};
struct GenerationError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};
struct RankDeficiencyError : Error {
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Dense row-major image container
// ---------------------------------------------------------------------------

template <typename T>
class Image {
public:
    Image() = default;
    Image(int width, int height, const T& value = T{})
        : width_(width), height_(height), data_(static_cast<size_t>(width) * height, value) {}

    int width() const { return width_; }
    int height() const { return height_; }
    size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T& operator()(int x, int y) { return data_[static_cast<size_t>(y) * width_ + x]; }
    const T& operator()(int x, int y) const { return data_[static_cast<size_t>(y) * width_ + x]; }
    T& at_index(size_t i) { return data_[i]; }
    const T& at_index(size_t i) const { return data_[i]; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    void fill(const T& value) { std::fill(data_.begin(), data_.end(), value); }

    bool same_shape(int w, int h) const { return width_ == w && height_ == h; }
    template <typename U>
    bool same_shape(const Image<U>& other) const {
        return width_ == other.width() && height_ == other.height();
    }

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<T> data_;
};

using Image1 = Image<double>;
using Image3 = Image<Vec3>;
using MaskImage = Image<std::uint8_t>;

inline size_t count_nonzero(const MaskImage& m) {
    size_t n = 0;
    for (size_t i = 0; i < m.size(); ++i) n += (m.at_index(i) != 0);
    return n;
}

// ---------------------------------------------------------------------------
// Deterministic random numbers
//
// mt19937_64 output is fixed by the standard, and the transforms below avoid
// std::uniform_real_distribution / std::normal_distribution whose algorithms
// are implementation-defined. Streams are therefore reproducible across
// compilers and platforms for a given seed.
// ---------------------------------------------------------------------------

class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller.
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * M_PI * u2;
        cached_ = r * std::sin(a);
        has_cached_ = true;
        return r * std::cos(a);
    }

    std::uint64_t next_u64() { return gen_(); }

    // Derive an independent child stream, e.g. one per frame.
    Rng fork(std::uint64_t salt) {
        return Rng(gen_() ^ (salt * 0x9E3779B97F4A7C15ull + 0xD1B54A32D192ED03ull));
    }

private:
    std::mt19937_64 gen_;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

// ---------------------------------------------------------------------------
// FNV-1a content digests (non-cryptographic, for run manifests)
// ---------------------------------------------------------------------------

class Digest {
public:
    void update(const void* bytes, size_t n) {
        const auto* p = static_cast<const unsigned char*>(bytes);
        for (size_t i = 0; i < n; ++i) {
            hash_ ^= p[i];
            hash_ *= 0x100000001B3ull;
        }
    }
    void update(const std::string& s) { update(s.data(), s.size()); }
    void update_scalar(double v) { update(&v, sizeof(v)); }

    std::uint64_t value() const { return hash_; }
    std::string hex() const;

private:
    std::uint64_t hash_ = 0xCBF29CE484222325ull;
};

// ---------------------------------------------------------------------------
// Deterministic parallel loop
//
// Splits [0, n) into contiguous chunks, one per worker. Work items must write
// to disjoint state (or to per-chunk buffers merged afterwards in index
// order), which keeps results independent of the thread count.
// ---------------------------------------------------------------------------

void parallel_for(size_t n, int threads, const std::function<void(size_t)>& body);

int resolve_thread_count(int requested);

inline double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

inline double sq(double v) { return v * v; }

}  // namespace nflba
