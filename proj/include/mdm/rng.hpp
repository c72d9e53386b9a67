// Counter-based random stream built on splitmix64. A stream is fully
// determined by (seed, stream id), draws are O(1) and random-access, so
// per-sample and per-chunk substreams reproduce identically regardless of
// execution order or thread count.
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace mdm {

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}
}  // namespace detail

// Combines integers into a stream id; order-sensitive.
inline std::uint64_t mix_stream(std::uint64_t a, std::uint64_t b) {
    return detail::splitmix64(a * 0x9e3779b97f4a7c15ull + b + 0x632be59bd9b4e019ull);
}
inline std::uint64_t mix_stream(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    return mix_stream(mix_stream(a, b), c);
}

class RngStream {
  public:
    RngStream(std::uint64_t seed, std::uint64_t stream)
        : base_(detail::splitmix64(seed ^ detail::splitmix64(stream + 0x1d8e4e27c47d124full))), counter_(0) {}

    std::uint64_t seed_base() const { return base_; }

    std::uint64_t next_u64() { return detail::splitmix64(base_ + 0x9e3779b97f4a7c15ull * counter_++); }

    // Uniform in [0, 1) with 53 random bits.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in (0, 1]; safe for log().
    double next_double_open() { return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53; }

    // Uniform on [lo, hi).
    double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Standard normal via Box-Muller; second value cached.
    double next_gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = next_double_open();
        double u2 = next_double();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // Unbiased integer in [0, n) by rejection.
    std::uint64_t next_below(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("next_below: n == 0");
        std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::uint64_t base_;
    std::uint64_t counter_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace mdm
