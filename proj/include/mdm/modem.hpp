// Communication-system graph for multi-user multidimensional modulation:
// one-hot input construction, per-user codeword element generators with
// resource mapping and power normalization, superposition, AWGN corruption
// and the neural multi-user decoder. Also the single-user baseline encoder.
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "common.hpp"
#include "nn.hpp"
#include "rng.hpp"

namespace mdm {

// Raw element power below this is treated as a degenerate encoder state:
// normalizing would blow up to Inf.
inline constexpr double kDegeneratePower = 1e-30;

struct SystemConfig {
    int J = 0;        // users
    int K = 0;        // complex resources
    int N = 0;        // resources occupied per user
    int M = 0;        // modulation order, power of two
    int pnl_level = 3;
    double P = 1.0;   // per-user power budget
    std::vector<std::vector<int>> F;  // K x J binary resource mapping

    int bits_per_symbol() const { return int_log2(static_cast<unsigned>(M)); }
    int total_bits() const { return J * bits_per_symbol(); }

    size_t num_classes() const {
        size_t n = 1;
        for (int j = 0; j < J; ++j) {
            if (n > (size_t{1} << 48) / static_cast<size_t>(M))
                throw std::runtime_error("M^J overflows the supported class range");
            n *= static_cast<size_t>(M);
        }
        return n;
    }

    bool active(int k, int j) const { return F[k][j] != 0; }

    bool dense() const { return N == K; }

    // Overloading (J > K) is the operating regime the toolkit targets, but
    // degenerate single-user and orthogonal configs are legal: they back the
    // analytic baselines and small-scale tests.
    void validate() const {
        if (J < 1 || K < 1) throw std::invalid_argument("config: J and K must be positive");
        if (M < 2 || !is_power_of_two(static_cast<unsigned>(M)))
            throw std::invalid_argument("config: M must be a power of two, at least 2");
        if (!(P > 0.0)) throw std::invalid_argument("config: P must be positive");
        if (pnl_level < 1 || pnl_level > 3) throw std::invalid_argument("config: pnl_level must be 1, 2 or 3");
        if (N < 1 || N > K) throw std::invalid_argument("config: N must be in [1, K]");
        if (F.size() != static_cast<size_t>(K)) throw std::invalid_argument("config: F must have K rows");
        for (const auto& row : F) {
            if (row.size() != static_cast<size_t>(J)) throw std::invalid_argument("config: F rows must have J columns");
            for (int v : row)
                if (v != 0 && v != 1) throw std::invalid_argument("config: F entries must be 0 or 1");
        }
        for (int j = 0; j < J; ++j) {
            int ones = 0;
            for (int k = 0; k < K; ++k) ones += F[k][j];
            if (ones != N) throw std::invalid_argument("config: column " + std::to_string(j + 1) +
                                                       " of F must have exactly N ones");
        }
    }
};

// All-ones K x J mapping (every user occupies every resource).
inline std::vector<std::vector<int>> dense_mapping(int K, int J) {
    return std::vector<std::vector<int>>(K, std::vector<int>(J, 1));
}

// The standard sparse pattern for 6 users on 4 resources, N = 2: every
// resource is shared by exactly 3 users.
inline std::vector<std::vector<int>> sparse_mapping_6x4() {
    return {
        {0, 1, 1, 0, 0, 1},
        {1, 0, 1, 0, 1, 0},
        {1, 0, 0, 1, 0, 1},
        {0, 1, 0, 1, 1, 0},
    };
}

inline SystemConfig make_config(int J, int K, int N, int M, double P, int pnl_level,
                                std::vector<std::vector<int>> F) {
    SystemConfig c;
    c.J = J;
    c.K = K;
    c.N = N;
    c.M = M;
    c.P = P;
    c.pnl_level = pnl_level;
    c.F = std::move(F);
    c.validate();
    return c;
}

// --- one-hot inputs -------------------------------------------------------

// Per-user symbol indices; the concatenated one-hot vector is materialized on
// demand. User j's bit slice is [j*log2(M), (j+1)*log2(M)), first bit most
// significant.
struct OneHotInput {
    int J = 0;
    int M = 0;
    std::vector<int> symbols;  // J entries in [0, M)

    std::vector<double> to_vector() const {
        std::vector<double> v(static_cast<size_t>(J) * M, 0.0);
        for (int j = 0; j < J; ++j) v[static_cast<size_t>(j) * M + symbols[j]] = 1.0;
        return v;
    }
};

inline OneHotInput encode_bits_to_onehot(const std::vector<int>& bits, const SystemConfig& cfg) {
    const int bps = cfg.bits_per_symbol();
    if (bits.size() != static_cast<size_t>(cfg.total_bits()))
        throw std::invalid_argument("encode_bits_to_onehot: expected " + std::to_string(cfg.total_bits()) +
                                    " bits, got " + std::to_string(bits.size()));
    OneHotInput oh;
    oh.J = cfg.J;
    oh.M = cfg.M;
    oh.symbols.resize(cfg.J);
    for (int j = 0; j < cfg.J; ++j)
        oh.symbols[j] = static_cast<int>(bits_to_symbol(bits, static_cast<size_t>(j) * bps, bps));
    return oh;
}

inline std::vector<int> onehot_to_bits(const OneHotInput& oh) {
    const int bps = int_log2(static_cast<unsigned>(oh.M));
    std::vector<int> bits(static_cast<size_t>(oh.J) * bps);
    for (int j = 0; j < oh.J; ++j) symbol_to_bits(static_cast<unsigned>(oh.symbols[j]), bps, bits, static_cast<size_t>(j) * bps);
    return bits;
}

// --- encoders --------------------------------------------------------------

// Multi-user stack: one element generator per active (user, resource) pair,
// each mapping the user's M-dimensional one-hot sub-vector to (Re, Im).
// Generators for pairs with F[k][j] = 0 are bypassed: their output is zero.
struct MuEncoder {
    SystemConfig cfg;
    std::vector<DenseNetwork> gens;  // J*K slots, row-major by user; inactive slots stay empty

    DenseNetwork& gen(int j, int k) { return gens[static_cast<size_t>(j) * cfg.K + k]; }
    const DenseNetwork& gen(int j, int k) const { return gens[static_cast<size_t>(j) * cfg.K + k]; }
};

// Single-user baseline: one network from the concatenated one-hot vector to
// all 2K codeword components. `scale` holds the power normalization factor
// once frozen; while negative the constellation is unnormalized.
struct SuEncoder {
    SystemConfig cfg;
    DenseNetwork net;
    double scale = -1.0;
};

inline MuEncoder init_mu_encoder(const SystemConfig& cfg, size_t width, size_t hidden_layers, std::uint64_t seed,
                                 std::uint64_t stream_base = 0x10000) {
    cfg.validate();
    MuEncoder enc;
    enc.cfg = cfg;
    enc.gens.resize(static_cast<size_t>(cfg.J) * cfg.K);
    for (int j = 0; j < cfg.J; ++j)
        for (int k = 0; k < cfg.K; ++k)
            if (cfg.active(k, j))
                enc.gen(j, k) = make_mlp(cfg.M, width, hidden_layers, 2,
                                         RngStream(seed, mix_stream(stream_base, static_cast<std::uint64_t>(j) * cfg.K + k)));
    return enc;
}

inline SuEncoder init_su_encoder(const SystemConfig& cfg, size_t width, size_t hidden_layers, std::uint64_t seed,
                                 std::uint64_t stream_base = 0x20000) {
    cfg.validate();
    SuEncoder enc;
    enc.cfg = cfg;
    enc.net = make_mlp(static_cast<size_t>(cfg.M) * cfg.J, width, hidden_layers, 2 * cfg.K,
                       RngStream(seed, mix_stream(stream_base, 0)));
    return enc;
}

// Raw (pre-normalization) codewords. User j's output depends only on its own
// one-hot sub-vector.
inline std::vector<cvec> mu_encode(const MuEncoder& enc, const OneHotInput& oh) {
    if (oh.J != enc.cfg.J || oh.M != enc.cfg.M) throw std::invalid_argument("mu_encode: input shape mismatch");
    std::vector<cvec> cws(enc.cfg.J, cvec(enc.cfg.K, cplx{0.0, 0.0}));
    std::vector<double> sub(enc.cfg.M, 0.0);
    for (int j = 0; j < enc.cfg.J; ++j) {
        sub.assign(enc.cfg.M, 0.0);
        sub[oh.symbols[j]] = 1.0;
        for (int k = 0; k < enc.cfg.K; ++k) {
            if (!enc.cfg.active(k, j)) continue;
            auto out = forward(enc.gen(j, k), sub);
            cws[j][k] = {out[0], out[1]};
        }
    }
    return cws;
}

// --- power normalization layer ---------------------------------------------

// Scales one real vector to squared norm `target`; shared by Levels 1 and 2.
namespace detail {
inline double norm_sq(const cvec& v) {
    double s = 0.0;
    for (const cplx& z : v) s += std::norm(z);
    return s;
}
}  // namespace detail

// Sum over users of codebook-average raw power; the common Level-3 factor is
// sqrt(J*P / total). `raw_books[j][m]` is user j's raw codeword for symbol m.
inline double level3_scale_from_raw(const std::vector<std::vector<cvec>>& raw_books, const SystemConfig& cfg) {
    double total = 0.0;
    for (int j = 0; j < cfg.J; ++j) {
        double pj = 0.0;
        for (const cvec& w : raw_books[j]) pj += detail::norm_sq(w);
        total += pj / static_cast<double>(cfg.M);
    }
    if (total < kDegeneratePower) throw std::runtime_error("level-3 normalization: degenerate encoder state (zero power)");
    return std::sqrt(cfg.J * cfg.P / total);
}

inline double level3_scale(const MuEncoder& enc) {
    std::vector<std::vector<cvec>> books(enc.cfg.J);
    for (int j = 0; j < enc.cfg.J; ++j) {
        books[j].resize(enc.cfg.M);
        OneHotInput oh{enc.cfg.J, enc.cfg.M, std::vector<int>(enc.cfg.J, 0)};
        for (int m = 0; m < enc.cfg.M; ++m) {
            oh.symbols[j] = m;
            books[j][m] = mu_encode(enc, oh)[j];
        }
    }
    return level3_scale_from_raw(books, enc.cfg);
}

// Normalizes one user's codeword in place under Levels 1 or 2.
inline void normalize_user_codeword(cvec& w, const SystemConfig& cfg, int j) {
    if (cfg.pnl_level == 1) {
        const double target = cfg.P / static_cast<double>(cfg.N);
        for (int k = 0; k < cfg.K; ++k) {
            if (!cfg.active(k, j)) continue;
            double p = std::norm(w[k]);
            if (p < kDegeneratePower)
                throw std::runtime_error("level-1 normalization: degenerate encoder state (zero element power)");
            w[k] *= std::sqrt(target / p);
        }
    } else if (cfg.pnl_level == 2) {
        double p = detail::norm_sq(w);
        if (p < kDegeneratePower)
            throw std::runtime_error("level-2 normalization: degenerate encoder state (zero codeword power)");
        double s = std::sqrt(cfg.P / p);
        for (cplx& z : w) z *= s;
    } else {
        throw std::invalid_argument("normalize_user_codeword: only levels 1 and 2 are per-codeword");
    }
}

// Level 1: every active element to squared magnitude P/N.
// Level 2: every codeword to squared norm P.
// Level 3: all codewords scaled by the supplied common factor (computed once
//          from codebook averages; constant at inference so users stay
//          independent).
inline std::vector<cvec> apply_pnl(const std::vector<cvec>& codewords, const SystemConfig& cfg,
                                   double level3_common_scale = -1.0) {
    if (codewords.size() != static_cast<size_t>(cfg.J)) throw std::invalid_argument("apply_pnl: need J codewords");
    std::vector<cvec> out = codewords;
    if (cfg.pnl_level == 1 || cfg.pnl_level == 2) {
        for (int j = 0; j < cfg.J; ++j) normalize_user_codeword(out[j], cfg, j);
    } else if (cfg.pnl_level == 3) {
        if (!(level3_common_scale > 0.0))
            throw std::invalid_argument("apply_pnl: level 3 requires the common codebook scale (see level3_scale)");
        for (auto& w : out)
            for (cplx& z : w) z *= level3_common_scale;
    } else {
        throw std::invalid_argument("apply_pnl: pnl_level must be 1, 2 or 3");
    }
    return out;
}

// Reverse-mode gradient through normalize_user_codeword for one user. `raw`
// is the pre-normalization codeword, `up` the gradient at the normalized
// output. The Level-3 case is gamma * up plus a codebook-coupling term the
// trainer owns.
inline cvec pnl_backward_user(const cvec& raw, const SystemConfig& cfg, int j, const cvec& up) {
    cvec g(cfg.K, cplx{0.0, 0.0});
    if (cfg.pnl_level == 1) {
        const double a = std::sqrt(cfg.P / static_cast<double>(cfg.N));
        for (int k = 0; k < cfg.K; ++k) {
            if (!cfg.active(k, j)) continue;
            const double vr = raw[k].real(), vi = raw[k].imag();
            const double r2 = vr * vr + vi * vi;
            const double r = std::sqrt(r2);
            const double gr = up[k].real(), gi = up[k].imag();
            const double dot = (vr * gr + vi * gi) / r2;
            g[k] = {(a / r) * (gr - vr * dot), (a / r) * (gi - vi * dot)};
        }
    } else if (cfg.pnl_level == 2) {
        const double r2 = detail::norm_sq(raw);
        const double r = std::sqrt(r2);
        const double a = std::sqrt(cfg.P);
        double dot = 0.0;
        for (int k = 0; k < cfg.K; ++k) dot += raw[k].real() * up[k].real() + raw[k].imag() * up[k].imag();
        dot /= r2;
        for (int k = 0; k < cfg.K; ++k) {
            if (!cfg.active(k, j)) continue;
            g[k] = {(a / r) * (up[k].real() - raw[k].real() * dot), (a / r) * (up[k].imag() - raw[k].imag() * dot)};
        }
    } else {
        throw std::invalid_argument("pnl_backward_user: only levels 1 and 2 are per-codeword");
    }
    return g;
}

inline std::vector<cvec> pnl_backward_sample(const std::vector<cvec>& raw, const SystemConfig& cfg,
                                             const std::vector<cvec>& up) {
    std::vector<cvec> g(raw.size());
    for (int j = 0; j < cfg.J; ++j) g[j] = pnl_backward_user(raw[j], cfg, j, up[j]);
    return g;
}

// --- superposition, channel, decoding ---------------------------------------

inline cvec superpose(const std::vector<cvec>& codewords) {
    if (codewords.empty()) throw std::invalid_argument("superpose: empty codeword list");
    cvec x(codewords[0].size(), cplx{0.0, 0.0});
    for (const cvec& w : codewords) {
        if (w.size() != x.size()) throw std::invalid_argument("superpose: codeword length mismatch");
        for (size_t k = 0; k < x.size(); ++k) x[k] += w[k];
    }
    return x;
}

// y = x + n with n ~ CN(0, sigma2 I): independent real and imaginary parts of
// variance sigma2/2 each.
inline cvec awgn_corrupt(const cvec& x, double sigma2, RngStream& rng) {
    if (!(sigma2 >= 0.0)) throw std::invalid_argument("awgn_corrupt: negative noise power");
    cvec y(x.size());
    const double s = std::sqrt(sigma2 / 2.0);
    for (size_t k = 0; k < x.size(); ++k) {
        double nr = rng.next_gaussian();
        double ni = rng.next_gaussian();
        y[k] = x[k] + cplx{s * nr, s * ni};
    }
    return y;
}

// SU path: network output packed (Re1, Im1, ..., ReK, ImK), scaled so the
// average power over all M^J constellation points equals J*P. Uses the frozen
// scale when set, otherwise computes it by exhaustive enumeration.
inline double su_exhaustive_scale(const SuEncoder& enc) {
    const size_t n = enc.cfg.num_classes();
    double total = 0.0;
    OneHotInput oh{enc.cfg.J, enc.cfg.M, std::vector<int>(enc.cfg.J, 0)};
    for (size_t c = 0; c < n; ++c) {
        size_t rem = c;
        for (int j = enc.cfg.J - 1; j >= 0; --j) {
            oh.symbols[j] = static_cast<int>(rem % enc.cfg.M);
            rem /= enc.cfg.M;
        }
        auto out = forward(enc.net, oh.to_vector());
        for (double v : out) total += v * v;
    }
    double avg = total / static_cast<double>(n);
    if (avg < kDegeneratePower) throw std::runtime_error("su normalization: degenerate encoder state (zero power)");
    return std::sqrt(enc.cfg.J * enc.cfg.P / avg);
}

inline cvec su_encode(const SuEncoder& enc, const OneHotInput& oh) {
    if (oh.J != enc.cfg.J || oh.M != enc.cfg.M) throw std::invalid_argument("su_encode: input shape mismatch");
    double s = enc.scale > 0.0 ? enc.scale : su_exhaustive_scale(enc);
    auto out = forward(enc.net, oh.to_vector());
    for (double& v : out) v *= s;
    return unpack_complex(out);
}

// --- encoder stack serialization ------------------------------------------

inline void write_config_line(std::ostream& os, const SystemConfig& cfg) {
    os << "J " << cfg.J << " K " << cfg.K << " N " << cfg.N << " M " << cfg.M << " P " << format_double(cfg.P)
       << " pnl " << cfg.pnl_level << "\n";
    os << "F\n";
    for (int k = 0; k < cfg.K; ++k) {
        for (int j = 0; j < cfg.J; ++j) os << (j ? " " : "") << cfg.F[k][j];
        os << "\n";
    }
}

inline SystemConfig read_config_line(std::istream& is) {
    SystemConfig cfg;
    std::string kJ, kK, kN, kM, kP, kpnl, tok;
    if (!(is >> kJ >> cfg.J >> kK >> cfg.K >> kN >> cfg.N >> kM >> cfg.M >> kP >> cfg.P >> kpnl >> cfg.pnl_level) ||
        kJ != "J" || kK != "K" || kN != "N" || kM != "M" || kP != "P" || kpnl != "pnl")
        throw std::runtime_error("encoder file: malformed config line");
    if (!(is >> tok) || tok != "F") throw std::runtime_error("encoder file: expected F matrix");
    cfg.F.assign(cfg.K, std::vector<int>(cfg.J, 0));
    for (int k = 0; k < cfg.K; ++k)
        for (int j = 0; j < cfg.J; ++j)
            if (!(is >> cfg.F[k][j])) throw std::runtime_error("encoder file: truncated F matrix");
    cfg.validate();
    return cfg;
}

inline void write_mu_encoder(std::ostream& os, const MuEncoder& enc) {
    os << "mdm-mu-encoder 1\n";
    write_config_line(os, enc.cfg);
    for (int j = 0; j < enc.cfg.J; ++j)
        for (int k = 0; k < enc.cfg.K; ++k) {
            if (!enc.cfg.active(k, j)) continue;
            os << "gen " << j << " " << k << "\n";
            write_network(os, enc.gen(j, k));
        }
    os << "end\n";
}

inline MuEncoder read_mu_encoder(std::istream& is) {
    std::string tag;
    int version = 0;
    if (!(is >> tag >> version) || tag != "mdm-mu-encoder" || version != 1)
        throw std::runtime_error("not a multi-user encoder file");
    MuEncoder enc;
    enc.cfg = read_config_line(is);
    enc.gens.resize(static_cast<size_t>(enc.cfg.J) * enc.cfg.K);
    std::string tok;
    while (is >> tok && tok == "gen") {
        int j, k;
        if (!(is >> j >> k)) throw std::runtime_error("encoder file: bad gen header");
        if (j < 0 || j >= enc.cfg.J || k < 0 || k >= enc.cfg.K || !enc.cfg.active(k, j))
            throw std::runtime_error("encoder file: gen index outside the active mapping");
        enc.gen(j, k) = read_network(is);
    }
    if (tok != "end") throw std::runtime_error("encoder file: missing end marker");
    for (int j = 0; j < enc.cfg.J; ++j)
        for (int k = 0; k < enc.cfg.K; ++k)
            if (enc.cfg.active(k, j) && enc.gen(j, k).layers.empty())
                throw std::runtime_error("encoder file: missing generator for an active pair");
    return enc;
}

inline void write_su_encoder(std::ostream& os, const SuEncoder& enc) {
    os << "mdm-su-encoder 1\n";
    write_config_line(os, enc.cfg);
    os << "scale " << format_double(enc.scale) << "\n";
    write_network(os, enc.net);
}

inline SuEncoder read_su_encoder(std::istream& is) {
    std::string tag;
    int version = 0;
    if (!(is >> tag >> version) || tag != "mdm-su-encoder" || version != 1)
        throw std::runtime_error("not a single-user encoder file");
    SuEncoder enc;
    enc.cfg = read_config_line(is);
    std::string tok;
    if (!(is >> tok >> enc.scale) || tok != "scale") throw std::runtime_error("encoder file: expected scale");
    enc.net = read_network(is);
    return enc;
}

struct DecodeResult {
    std::vector<double> scores;  // M*J soft outputs
    std::vector<int> symbols;    // per-user argmax, ties to the lowest index
    std::vector<int> bits;       // via the identity index-to-bits map
};

inline DecodeResult decode(const DenseNetwork& decoder, const cvec& y, int J, int M) {
    if (decoder.input_dim() != 2 * y.size())
        throw std::invalid_argument("decode: decoder input dimension does not match 2K");
    if (decoder.output_dim() != static_cast<size_t>(M) * J)
        throw std::invalid_argument("decode: decoder output dimension does not match M*J");
    DecodeResult r;
    r.scores = forward(decoder, pack_complex(y));
    r.symbols.resize(J);
    const int bps = int_log2(static_cast<unsigned>(M));
    r.bits.resize(static_cast<size_t>(J) * bps);
    for (int j = 0; j < J; ++j) {
        const double* s = r.scores.data() + static_cast<size_t>(j) * M;
        int best = 0;
        for (int m = 1; m < M; ++m)
            if (s[m] > s[best]) best = m;
        r.symbols[j] = best;
        symbol_to_bits(static_cast<unsigned>(best), bps, r.bits, static_cast<size_t>(j) * bps);
    }
    return r;
}

}  // namespace mdm
