// Shared small utilities: complex-vector packing, bit/symbol conversions,
// decimal formatting that round-trips 64-bit floats, and a config hash.
#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

namespace mdm {

using cplx = std::complex<double>;
using cvec = std::vector<cplx>;

// Frozen packing convention for complex vectors: (Re1, Im1, ..., ReK, ImK).
inline std::vector<double> pack_complex(const cvec& v) {
    std::vector<double> out(2 * v.size());
    for (size_t k = 0; k < v.size(); ++k) {
        out[2 * k] = v[k].real();
        out[2 * k + 1] = v[k].imag();
    }
    return out;
}

inline cvec unpack_complex(const std::vector<double>& v) {
    if (v.size() % 2 != 0) throw std::invalid_argument("unpack_complex: odd length");
    cvec out(v.size() / 2);
    for (size_t k = 0; k < out.size(); ++k) out[k] = {v[2 * k], v[2 * k + 1]};
    return out;
}

inline bool is_power_of_two(unsigned v) { return v != 0 && (v & (v - 1)) == 0; }

inline int int_log2(unsigned v) {
    if (!is_power_of_two(v)) throw std::invalid_argument("int_log2: not a power of two");
    int n = 0;
    while (v > 1) {
        v >>= 1;
        ++n;
    }
    return n;
}

// Bit-slice convention: within a slice the first bit is the most significant.
inline unsigned bits_to_symbol(const std::vector<int>& bits, size_t offset, int nbits) {
    unsigned s = 0;
    for (int t = 0; t < nbits; ++t) s = (s << 1) | (bits[offset + t] ? 1u : 0u);
    return s;
}

inline void symbol_to_bits(unsigned sym, int nbits, std::vector<int>& bits, size_t offset) {
    for (int t = 0; t < nbits; ++t) bits[offset + t] = (sym >> (nbits - 1 - t)) & 1u;
}

inline std::vector<int> symbol_to_bits(unsigned sym, int nbits) {
    std::vector<int> b(nbits);
    symbol_to_bits(sym, nbits, b, 0);
    return b;
}

// Labels packed MSB-first: bit 0 of the sequence lands in the highest position.
inline std::uint64_t pack_label(const std::vector<int>& bits) {
    if (bits.size() > 64) throw std::invalid_argument("pack_label: more than 64 bits");
    std::uint64_t x = 0;
    for (int b : bits) x = (x << 1) | (b ? 1u : 0u);
    return x;
}

inline std::vector<int> unpack_label(std::uint64_t x, int nbits) {
    std::vector<int> b(nbits);
    for (int t = 0; t < nbits; ++t) b[t] = (x >> (nbits - 1 - t)) & 1u;
    return b;
}

inline int hamming_distance(std::uint64_t a, std::uint64_t b) { return __builtin_popcountll(a ^ b); }

// %.17g round-trips IEEE doubles exactly through text.
inline std::string format_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

inline bool all_finite(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

// FNV-1a, used to stamp outputs with a provenance hash of their config text.
inline std::uint64_t fnv1a_hash(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace mdm
