// Codebook measurement: Monte Carlo BER with either the neural decoder or a
// maximum-likelihood oracle over the superposed constellation, a pairwise
// union bound, analytic single-user baselines, geometry metrics, and the
// equivalence check between an L2-trained autoencoder and minimum-distance
// detection.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "codebook.hpp"
#include "common.hpp"
#include "modem.hpp"
#include "training.hpp"

namespace mdm {

inline double q_func(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

// Energy per information bit: sum of per-user average codebook powers over
// the total bits per channel use. N0 is sigma^2 throughout.
inline double eb_per_bit(const std::vector<Codebook>& books) {
    double total = 0.0;
    for (const Codebook& b : books) total += b.avg_power();
    const int bits = static_cast<int>(books.size()) * int_log2(static_cast<unsigned>(books[0].M));
    return total / bits;
}

// Constellation-average form, used for single-constellation systems.
inline double eb_per_bit(const SuperposedConstellation& sc) {
    double total = 0.0;
    for (const cvec& p : sc.points)
        for (const cplx& z : p) total += std::norm(z);
    return total / static_cast<double>(sc.size()) / sc.label_bits;
}

inline double ebn0_to_sigma2(double eb, double ebn0_db) { return eb / std::pow(10.0, ebn0_db / 10.0); }

// --- maximum-likelihood detection ---------------------------------------------

// Flattened copy of the superposed constellation. With equiprobable symbols
// and AWGN, maximum a posteriori detection reduces to the minimum Euclidean
// distance rule, so sigma2 is carried only for bookkeeping.
struct DetectionOracle {
    size_t n = 0;
    int dim = 0;  // 2K
    int label_bits = 0;
    std::vector<double> flat;           // n x dim
    std::vector<std::uint64_t> labels;  // n
    double sigma2 = 0.0;
};

inline DetectionOracle make_oracle(const SuperposedConstellation& sc, double sigma2 = 0.0) {
    if (sc.size() == 0) throw std::invalid_argument("make_oracle: empty constellation");
    DetectionOracle o;
    o.n = sc.size();
    o.dim = 2 * sc.K;
    o.label_bits = sc.label_bits;
    o.sigma2 = sigma2;
    o.flat.resize(o.n * o.dim);
    o.labels = sc.labels;
    for (size_t i = 0; i < o.n; ++i) {
        auto packed = pack_complex(sc.points[i]);
        std::copy(packed.begin(), packed.end(), o.flat.begin() + i * o.dim);
    }
    return o;
}

inline std::uint64_t mld_detect_packed(const DetectionOracle& o, const double* y) {
    double best = std::numeric_limits<double>::infinity();
    std::uint64_t best_label = 0;
    for (size_t i = 0; i < o.n; ++i) {
        const double* p = o.flat.data() + i * o.dim;
        double d = 0.0;
        for (int c = 0; c < o.dim; ++c) {
            const double diff = y[c] - p[c];
            d += diff * diff;
        }
        if (d < best || (d == best && o.labels[i] < best_label)) {
            best = d;
            best_label = o.labels[i];
        }
    }
    return best_label;
}

inline std::uint64_t mld_detect(const DetectionOracle& o, const cvec& y) {
    if (y.size() * 2 != static_cast<size_t>(o.dim)) throw std::invalid_argument("mld_detect: dimension mismatch");
    auto packed = pack_complex(y);
    return mld_detect_packed(o, packed.data());
}

// --- Monte Carlo BER -----------------------------------------------------------

struct BerPoint {
    double ebn0_db = 0.0;
    std::uint64_t bits = 0;
    std::uint64_t errors = 0;
    double ber = 0.0;
    double ci95 = 0.0;  // Wilson-interval half-width
};
using BerCurve = std::vector<BerPoint>;

inline double wilson_half_width(std::uint64_t errors, std::uint64_t bits) {
    if (bits == 0) return 0.0;
    const double z = 1.959963984540054;
    const double n = static_cast<double>(bits);
    const double p = static_cast<double>(errors) / n;
    return z * std::sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n)) / (1.0 + z * z / n);
}

struct McOptions {
    std::uint64_t min_errors = 200;
    std::uint64_t max_bits = 20'000'000;
    int workers = 1;
    std::uint64_t seed = 1;
};

// Batch detector: consumes packed received rows, emits one label per row.
using BatchDetector = std::function<void(const Buf2& Y, std::vector<std::uint64_t>&)>;

inline BatchDetector make_mld_detector(const SuperposedConstellation& sc) {
    auto oracle = std::make_shared<DetectionOracle>(make_oracle(sc));
    return [oracle](const Buf2& Y, std::vector<std::uint64_t>& out) {
        out.resize(Y.rows);
        for (size_t r = 0; r < Y.rows; ++r) out[r] = mld_detect_packed(*oracle, Y.row(r));
    };
}

// Neural decoder detection; symbols map to label bits through the per-user
// label maps (identity for trained stacks).
inline BatchDetector make_nn_detector(DenseNetwork decoder, int J, int M,
                                      std::vector<std::vector<std::uint64_t>> user_labels = {}) {
    const int bps = int_log2(static_cast<unsigned>(M));
    if (user_labels.empty()) {
        user_labels.assign(J, std::vector<std::uint64_t>(M));
        for (int j = 0; j < J; ++j)
            for (int m = 0; m < M; ++m) user_labels[j][m] = static_cast<std::uint64_t>(m);
    }
    auto dec = std::make_shared<DenseNetwork>(std::move(decoder));
    return [dec, J, M, bps, user_labels](const Buf2& Y, std::vector<std::uint64_t>& out) {
        Buf2 scores = forward_batch(*dec, Y);
        out.resize(Y.rows);
        for (size_t r = 0; r < Y.rows; ++r) {
            const double* s = scores.row(r);
            std::uint64_t label = 0;
            for (int j = 0; j < J; ++j) {
                int best = 0;
                for (int m = 1; m < M; ++m)
                    if (s[j * M + m] > s[j * M + best]) best = m;
                label = (label << bps) | user_labels[j][best];
            }
            out[r] = label;
        }
    };
}

namespace detail {
inline constexpr size_t kMcChunkSymbols = 2048;
inline constexpr size_t kMcRoundChunks = 8;
inline constexpr std::uint64_t kStreamMonteCarlo = 0xB1;
}  // namespace detail

// Per SNR point: draw uniform labels, transmit the constellation point, add
// AWGN, detect, count Hamming errors. Work is issued in rounds of fixed-size
// chunks with per-chunk random streams; the stopping rule is evaluated on
// cumulative round totals, so error counts are invariant to the worker count.
inline BerCurve monte_carlo_ber(const SuperposedConstellation& tx, double eb, const BatchDetector& detect,
                                const std::vector<double>& ebn0_grid, const McOptions& opts = {}) {
    if (tx.size() == 0) throw std::invalid_argument("monte_carlo_ber: empty constellation");
    const int dim = 2 * tx.K;
    const int label_bits = tx.label_bits;
    DetectionOracle points = make_oracle(tx);  // flattened tx table

    BerCurve curve;
    for (size_t pt = 0; pt < ebn0_grid.size(); ++pt) {
        const double ebn0_db = ebn0_grid[pt];
        const double sigma2 = ebn0_to_sigma2(eb, ebn0_db);
        const double noise_scale = std::sqrt(sigma2 / 2.0);
        std::uint64_t bits = 0, errors = 0;
        size_t next_chunk = 0;
        while (bits < opts.max_bits && errors < opts.min_errors) {
            const size_t round_begin = next_chunk;
            const size_t round_end = round_begin + detail::kMcRoundChunks;
            next_chunk = round_end;
            std::vector<std::uint64_t> chunk_errors(detail::kMcRoundChunks, 0);
            mdm::detail::parallel_chunks(detail::kMcRoundChunks, opts.workers, [&](size_t c) {
                const size_t chunk_id = round_begin + c;
                RngStream rng(opts.seed,
                              mix_stream(detail::kStreamMonteCarlo, static_cast<std::uint64_t>(pt), chunk_id));
                Buf2 Y(detail::kMcChunkSymbols, dim);
                std::vector<std::uint64_t> tx_labels(detail::kMcChunkSymbols);
                for (size_t s = 0; s < detail::kMcChunkSymbols; ++s) {
                    const size_t cls = static_cast<size_t>(rng.next_below(points.n));
                    tx_labels[s] = points.labels[cls];
                    const double* p = points.flat.data() + cls * dim;
                    double* y = Y.row(s);
                    for (int d = 0; d < dim; ++d) y[d] = p[d] + noise_scale * rng.next_gaussian();
                }
                std::vector<std::uint64_t> rx_labels;
                detect(Y, rx_labels);
                std::uint64_t e = 0;
                for (size_t s = 0; s < detail::kMcChunkSymbols; ++s)
                    e += static_cast<std::uint64_t>(hamming_distance(tx_labels[s], rx_labels[s]));
                chunk_errors[c] = e;
            });
            for (std::uint64_t e : chunk_errors) errors += e;
            bits += detail::kMcRoundChunks * detail::kMcChunkSymbols * static_cast<std::uint64_t>(label_bits);
        }
        BerPoint bp;
        bp.ebn0_db = ebn0_db;
        bp.bits = bits;
        bp.errors = errors;
        bp.ber = static_cast<double>(errors) / static_cast<double>(bits);
        bp.ci95 = wilson_half_width(errors, bits);
        curve.push_back(bp);
    }
    return curve;
}

// Log-linear interpolation of the Eb/N0 value where the curve crosses a
// target BER; NaN when the target is not bracketed.
inline double ebn0_at_ber(const BerCurve& curve, double target) {
    for (size_t i = 1; i < curve.size(); ++i) {
        double b0 = curve[i - 1].ber, b1 = curve[i].ber;
        if (b0 <= 0.0) b0 = 0.5 / static_cast<double>(curve[i - 1].bits ? curve[i - 1].bits : 1);
        if (b1 <= 0.0) b1 = 0.5 / static_cast<double>(curve[i].bits ? curve[i].bits : 1);
        if (b0 > target && b1 <= target) {
            const double t = (std::log10(target) - std::log10(b0)) / (std::log10(b1) - std::log10(b0));
            return curve[i - 1].ebn0_db + t * (curve[i].ebn0_db - curve[i - 1].ebn0_db);
        }
    }
    return std::numeric_limits<double>::quiet_NaN();
}

inline void write_ber_csv(std::ostream& os, const BerCurve& curve, const std::string& provenance = "") {
    if (!provenance.empty()) os << "# " << provenance << "\n";
    os << "# eb definition: sum of per-user average codebook powers / (J*log2(M)); n0 = sigma^2\n";
    os << "ebn0_db,bits,errors,ber,ci95\n";
    for (const BerPoint& p : curve)
        os << format_double(p.ebn0_db) << "," << p.bits << "," << p.errors << "," << format_double(p.ber) << ","
           << format_double(p.ci95) << "\n";
}

inline BerCurve read_ber_csv(std::istream& is) {
    BerCurve curve;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#' || line.rfind("ebn0_db", 0) == 0) continue;
        BerPoint p;
        char comma;
        std::istringstream ls(line);
        if (!(ls >> p.ebn0_db >> comma >> p.bits >> comma >> p.errors >> comma >> p.ber >> comma >> p.ci95))
            throw std::runtime_error("malformed BER CSV row: " + line);
        curve.push_back(p);
    }
    return curve;
}

// --- union bound ----------------------------------------------------------------

// Average over transmitted points of the pairwise error probabilities
// Q(d/sqrt(2 sigma^2)), weighted by label Hamming distance and normalized by
// the bits per channel use.
inline double union_bound_ber(const SuperposedConstellation& sc, double sigma2) {
    const size_t n = sc.size();
    if (n == 0) throw std::invalid_argument("union_bound_ber: empty constellation");
    const double denom = std::sqrt(2.0 * sigma2);
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i)
        for (size_t j = i + 1; j < n; ++j) {
            double d2 = 0.0;
            for (int k = 0; k < sc.K; ++k) d2 += std::norm(sc.points[i][k] - sc.points[j][k]);
            const int dh = hamming_distance(sc.labels[i], sc.labels[j]);
            acc += 2.0 * dh * q_func(std::sqrt(d2) / denom);  // ordered pairs
        }
    return acc / (static_cast<double>(n) * sc.label_bits);
}

// --- analytic baselines ------------------------------------------------------------

enum class BaselineKind { Qpsk, Qam8Rect, Qam8NonRect };

inline BaselineKind baseline_from_name(const std::string& s) {
    if (s == "qpsk") return BaselineKind::Qpsk;
    if (s == "qam8_rect") return BaselineKind::Qam8Rect;
    if (s == "qam8_nonrect") return BaselineKind::Qam8NonRect;
    throw std::invalid_argument("unknown baseline kind: " + s);
}

// Rectangular 8-QAM: 4x2 grid, Gray labels (two bits on the 4-PAM real axis,
// one on the imaginary sign), unit average energy.
inline SuperposedConstellation qam8_rect_constellation() {
    SuperposedConstellation sc;
    sc.J = 1;
    sc.M = 8;
    sc.K = 1;
    sc.label_bits = 3;
    const double s = 1.0 / std::sqrt(6.0);
    const double re_level[4] = {-3, -1, 1, 3};
    const std::uint64_t re_bits[4] = {0b00, 0b01, 0b11, 0b10};  // Gray over the real axis
    for (int ri = 0; ri < 4; ++ri)
        for (int ii = 0; ii < 2; ++ii) {
            sc.points.push_back({cplx{re_level[ri] * s, (ii == 0 ? 1.0 : -1.0) * s}});
            sc.labels.push_back((re_bits[ri] << 1) | static_cast<std::uint64_t>(ii));
        }
    return sc;
}

// Non-rectangular (1,7) 8-QAM: one point at the origin labeled 000 and seven
// on a circle of radius sqrt(8/7), labeled around the ring with a Gray-style
// sequence (adjacent ring labels differ in one bit except at the wrap).
inline SuperposedConstellation qam8_nonrect_constellation() {
    SuperposedConstellation sc;
    sc.J = 1;
    sc.M = 8;
    sc.K = 1;
    sc.label_bits = 3;
    const double r = std::sqrt(8.0 / 7.0);
    sc.points.push_back({cplx{0.0, 0.0}});
    sc.labels.push_back(0b000);
    const std::uint64_t ring[7] = {0b001, 0b011, 0b010, 0b110, 0b111, 0b101, 0b100};
    for (int i = 0; i < 7; ++i) {
        const double a = 2.0 * std::numbers::pi * i / 7.0;
        sc.points.push_back({cplx{r * std::cos(a), r * std::sin(a)}});
        sc.labels.push_back(ring[i]);
    }
    return sc;
}

// QPSK via the exact Gray-coded formula; the 8-QAM variants via the union
// bound on their explicit constellations (unit average energy, 3 bits).
inline BerCurve analytic_baselines(BaselineKind kind, const std::vector<double>& ebn0_grid) {
    BerCurve curve;
    for (double db : ebn0_grid) {
        const double ratio = std::pow(10.0, db / 10.0);
        BerPoint p;
        p.ebn0_db = db;
        if (kind == BaselineKind::Qpsk) {
            p.ber = q_func(std::sqrt(2.0 * ratio));
        } else {
            auto sc = kind == BaselineKind::Qam8Rect ? qam8_rect_constellation() : qam8_nonrect_constellation();
            const double eb = eb_per_bit(sc);
            p.ber = union_bound_ber(sc, ebn0_to_sigma2(eb, db));
        }
        curve.push_back(p);
    }
    return curve;
}

// --- codebook geometry metrics -----------------------------------------------------

struct CodebookMetrics {
    std::vector<double> user_power;             // per-user average codebook power
    std::vector<double> user_min_ed;            // min pairwise ED within each codebook
    std::vector<double> user_max_ed;
    double superposed_min_ed = 0.0;
    size_t distinct_points = 0;                 // up to 1e-9 Euclidean tolerance
    std::vector<std::vector<int>> active_points;  // [j][k]: symbols with nonzero power on resource k
    std::vector<int> resource_users;            // per resource: users with any active symbol
};

// Books may be empty for single-constellation systems; the superposed
// geometry is still reported.
inline CodebookMetrics codebook_metrics(const std::vector<Codebook>& books, const SuperposedConstellation& sc) {
    CodebookMetrics m;
    const int J = static_cast<int>(books.size());
    const double tol = 1e-9;
    for (const Codebook& b : books) {
        m.user_power.push_back(b.avg_power());
        double mn = std::numeric_limits<double>::infinity(), mx = 0.0;
        for (int i = 0; i < b.M; ++i)
            for (int j = i + 1; j < b.M; ++j) {
                double d2 = 0.0;
                for (int k = 0; k < b.K; ++k) d2 += std::norm(b.words[i][k] - b.words[j][k]);
                mn = std::min(mn, std::sqrt(d2));
                mx = std::max(mx, std::sqrt(d2));
            }
        m.user_min_ed.push_back(mn);
        m.user_max_ed.push_back(mx);
    }
    const int K = sc.K;
    m.active_points.assign(J, std::vector<int>(K, 0));
    m.resource_users.assign(K, 0);
    for (int j = 0; j < J; ++j)
        for (int k = 0; k < K; ++k) {
            int cnt = 0;
            for (int s = 0; s < books[j].M; ++s)
                if (std::sqrt(std::norm(books[j].words[s][k])) > tol) ++cnt;
            m.active_points[j][k] = cnt;
            if (cnt > 0) ++m.resource_users[k];
        }

    // superposed geometry: sort by the first coordinate so near-duplicates are
    // adjacent, then scan candidate windows
    const size_t n = sc.size();
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(),
              [&](size_t a, size_t b) { return sc.points[a][0].real() < sc.points[b][0].real(); });
    double min_ed2 = std::numeric_limits<double>::infinity();
    std::vector<char> dup(n, 0);
    for (size_t a = 0; a < n; ++a) {
        const cvec& pa = sc.points[idx[a]];
        for (size_t b = a + 1; b < n; ++b) {
            const cvec& pb = sc.points[idx[b]];
            const double dre = pb[0].real() - pa[0].real();
            if (dre * dre >= min_ed2 && dre > tol) break;
            double d2 = 0.0;
            for (int k = 0; k < sc.K; ++k) d2 += std::norm(pa[k] - pb[k]);
            min_ed2 = std::min(min_ed2, d2);
            if (d2 <= tol * tol && !dup[idx[b]] ) dup[idx[b]] = 1;
        }
    }
    m.superposed_min_ed = std::sqrt(min_ed2);
    size_t dups = 0;
    for (char c : dup) dups += c;
    m.distinct_points = n - dups;
    return m;
}

inline void write_metrics(std::ostream& os, const CodebookMetrics& m, const std::string& provenance = "") {
    if (!provenance.empty()) os << "# " << provenance << "\n";
    os << "users " << m.user_power.size() << "\n";
    for (size_t j = 0; j < m.user_power.size(); ++j) {
        os << "user " << j << " power " << format_double(m.user_power[j]) << " min_ed "
           << format_double(m.user_min_ed[j]) << " max_ed " << format_double(m.user_max_ed[j]) << "\n";
    }
    os << "superposed_min_ed " << format_double(m.superposed_min_ed) << "\n";
    os << "distinct_points " << m.distinct_points << "\n";
    for (size_t j = 0; j < m.active_points.size(); ++j) {
        os << "active_points user " << j;
        for (int c : m.active_points[j]) os << " " << c;
        os << "\n";
    }
    os << "resource_users";
    for (int c : m.resource_users) os << " " << c;
    os << "\n";
}

// --- L2-trained autoencoder vs minimum-distance detection ---------------------------

// Trains a small single-resource autoencoder with the plain L2 loss, then
// measures how often its decoder decisions agree with minimum-ED detection on
// noisy channel outputs, plus the noiseless reconstruction residual.
struct Prop1Result {
    bool trained = false;
    std::string message;
    double sigma2 = 0.0;
    double max_residual = std::numeric_limits<double>::infinity();
    double agreement = 0.0;
};

inline double decision_agreement(const DenseNetwork& decoder, const SuperposedConstellation& sc, double sigma2,
                                 size_t samples, std::uint64_t seed, int workers = 1) {
    DetectionOracle oracle = make_oracle(sc, sigma2);
    const int dim = 2 * sc.K;
    const size_t chunk = 4096;
    const size_t nchunks = (samples + chunk - 1) / chunk;
    std::vector<std::uint64_t> agree(nchunks, 0), counted(nchunks, 0);
    mdm::detail::parallel_chunks(nchunks, workers, [&](size_t c) {
        const size_t begin = c * chunk;
        const size_t rows = std::min(chunk, samples - begin);
        RngStream rng(seed, mix_stream(0xC1, c));
        Buf2 Y(rows, dim);
        std::vector<std::uint64_t> tx(rows);
        const double ns = std::sqrt(sigma2 / 2.0);
        for (size_t s = 0; s < rows; ++s) {
            const size_t cls = static_cast<size_t>(rng.next_below(oracle.n));
            tx[s] = cls;
            const double* p = oracle.flat.data() + cls * dim;
            double* y = Y.row(s);
            for (int d = 0; d < dim; ++d) y[d] = p[d] + ns * rng.next_gaussian();
        }
        Buf2 scores = forward_batch(decoder, Y);
        std::uint64_t a = 0;
        for (size_t s = 0; s < rows; ++s) {
            const double* sc_row = scores.row(s);
            int best = 0;
            for (int m = 1; m < sc.M; ++m)
                if (sc_row[m] > sc_row[best]) best = m;
            std::uint64_t med = mld_detect_packed(oracle, Y.row(s));
            if (static_cast<std::uint64_t>(best) == med) ++a;
        }
        agree[c] = a;
        counted[c] = rows;
    });
    std::uint64_t a = 0, n = 0;
    for (size_t c = 0; c < nchunks; ++c) {
        a += agree[c];
        n += counted[c];
    }
    return static_cast<double>(a) / static_cast<double>(n);
}

inline Prop1Result proposition1_check(std::uint64_t seed, int epochs_coarse = 4000, int epochs_fine = 1000,
                                      size_t samples = 100000, double corruption_db = -6.0, int workers = 1) {
    Prop1Result res;
    auto cfg = make_config(1, 1, 1, 4, 1.0, 3, dense_mapping(1, 1));
    auto enc = init_mu_encoder(cfg, 16, 2, seed);
    auto dec = make_mlp(2, 32, 2, 4, RngStream(seed, 0x99));
    MuTrainer trainer(std::move(enc), std::move(dec), generate_dataset(cfg), seed, workers);
    res.sigma2 = trainer.corruption_sigma2(corruption_db);
    try {
        for (int e = 0; e < epochs_coarse; ++e)
            trainer.train_epoch(LossSpec::l2(), 0.01, trainer.corruption_sigma2(corruption_db), 4, e);
        for (int e = 0; e < epochs_fine; ++e)
            trainer.train_epoch(LossSpec::l2(), 0.001, trainer.corruption_sigma2(corruption_db),
                                4, epochs_coarse + e);
        res.trained = true;
    } catch (const std::exception& ex) {
        res.message = ex.what();
        return res;
    }
    auto [books, sc] = extract_codebooks(trainer.encoder());
    res.sigma2 = trainer.corruption_sigma2(corruption_db);
    res.max_residual = 0.0;
    for (int m = 0; m < cfg.M; ++m) {
        auto r = decode(trainer.decoder(), sc.points[m], 1, cfg.M);
        double d2 = 0.0;
        for (int i = 0; i < cfg.M; ++i) {
            const double target = i == m ? 1.0 : 0.0;
            d2 += (r.scores[i] - target) * (r.scores[i] - target);
        }
        res.max_residual = std::max(res.max_residual, std::sqrt(d2));
    }
    res.agreement = decision_agreement(trainer.decoder(), sc, res.sigma2, samples, seed + 1, workers);
    return res;
}

}  // namespace mdm
