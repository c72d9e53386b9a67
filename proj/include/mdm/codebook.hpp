// Codebook extraction and the superposed constellation, plus the structured
// text file format used both for trained codebooks and for importing
// third-party designs for evaluation.
#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "common.hpp"
#include "modem.hpp"

namespace mdm {

struct Codebook {
    int user = 0;  // 0-based
    int M = 0;
    int K = 0;
    std::vector<cvec> words;           // M codewords of length K
    std::vector<std::uint64_t> labels;  // symbol index -> packed bits

    double avg_power() const {
        double p = 0.0;
        for (const cvec& w : words)
            for (const cplx& z : w) p += std::norm(z);
        return p / static_cast<double>(M);
    }
};

// All M^J superpositions with their packed bit labels, in class-index order
// (user 0's symbol is the most significant digit).
struct SuperposedConstellation {
    int J = 0;
    int M = 0;
    int K = 0;
    int label_bits = 0;
    std::vector<cvec> points;
    std::vector<std::uint64_t> labels;

    size_t size() const { return points.size(); }
};

inline void class_to_symbols(size_t c, int J, int M, std::vector<int>& symbols) {
    symbols.resize(J);
    for (int j = J - 1; j >= 0; --j) {
        symbols[j] = static_cast<int>(c % static_cast<size_t>(M));
        c /= static_cast<size_t>(M);
    }
}

inline size_t symbols_to_class(const std::vector<int>& symbols, int M) {
    size_t c = 0;
    for (int m : symbols) c = c * static_cast<size_t>(M) + static_cast<size_t>(m);
    return c;
}

inline SuperposedConstellation build_superposed(const std::vector<Codebook>& books) {
    if (books.empty()) throw std::invalid_argument("build_superposed: no codebooks");
    SuperposedConstellation sc;
    sc.J = static_cast<int>(books.size());
    sc.M = books[0].M;
    sc.K = books[0].K;
    const int bps = int_log2(static_cast<unsigned>(sc.M));
    sc.label_bits = sc.J * bps;
    if (sc.label_bits > 64) throw std::runtime_error("build_superposed: more than 64 label bits unsupported");
    size_t n = 1;
    for (int j = 0; j < sc.J; ++j) n *= static_cast<size_t>(sc.M);
    sc.points.assign(n, cvec(sc.K, cplx{0.0, 0.0}));
    sc.labels.assign(n, 0);
    std::vector<int> symbols;
    for (size_t c = 0; c < n; ++c) {
        class_to_symbols(c, sc.J, sc.M, symbols);
        std::uint64_t label = 0;
        for (int j = 0; j < sc.J; ++j) {
            const Codebook& b = books[j];
            for (int k = 0; k < sc.K; ++k) sc.points[c][k] += b.words[symbols[j]][k];
            label = (label << bps) | b.labels[symbols[j]];
        }
        sc.labels[c] = label;
    }
    return sc;
}

// Enumerates all M symbols per user through the encoder and normalization;
// the Level-3 common factor is computed once from the raw codebook averages.
inline std::pair<std::vector<Codebook>, SuperposedConstellation> extract_codebooks(const MuEncoder& enc) {
    const SystemConfig& cfg = enc.cfg;
    std::vector<std::vector<cvec>> raw(cfg.J, std::vector<cvec>(cfg.M));
    OneHotInput oh{cfg.J, cfg.M, std::vector<int>(cfg.J, 0)};
    for (int j = 0; j < cfg.J; ++j)
        for (int m = 0; m < cfg.M; ++m) {
            oh.symbols.assign(cfg.J, 0);
            oh.symbols[j] = m;
            raw[j][m] = mu_encode(enc, oh)[j];
        }
    double l3 = cfg.pnl_level == 3 ? level3_scale_from_raw(raw, cfg) : -1.0;

    std::vector<Codebook> books(cfg.J);
    for (int j = 0; j < cfg.J; ++j) {
        books[j].user = j;
        books[j].M = cfg.M;
        books[j].K = cfg.K;
        books[j].words.resize(cfg.M);
        books[j].labels.resize(cfg.M);
        for (int m = 0; m < cfg.M; ++m) books[j].labels[m] = static_cast<std::uint64_t>(m);
    }
    for (int j = 0; j < cfg.J; ++j)
        for (int m = 0; m < cfg.M; ++m) {
            cvec w = raw[j][m];
            if (cfg.pnl_level == 3)
                for (cplx& z : w) z *= l3;
            else
                normalize_user_codeword(w, cfg, j);
            books[j].words[m] = w;
        }
    return {books, build_superposed(books)};
}

// SU counterpart: the 2K-dimensional constellation over all classes with the
// exhaustive power scale frozen into the encoder.
inline SuperposedConstellation su_constellation(SuEncoder& enc) {
    enc.scale = su_exhaustive_scale(enc);
    SuperposedConstellation sc;
    sc.J = enc.cfg.J;
    sc.M = enc.cfg.M;
    sc.K = enc.cfg.K;
    const int bps = enc.cfg.bits_per_symbol();
    sc.label_bits = enc.cfg.total_bits();
    const size_t n = enc.cfg.num_classes();
    sc.points.resize(n);
    sc.labels.resize(n);
    OneHotInput oh{enc.cfg.J, enc.cfg.M, std::vector<int>(enc.cfg.J, 0)};
    std::vector<int> symbols;
    for (size_t c = 0; c < n; ++c) {
        class_to_symbols(c, sc.J, sc.M, symbols);
        oh.symbols = symbols;
        sc.points[c] = su_encode(enc, oh);
        std::uint64_t label = 0;
        for (int j = 0; j < sc.J; ++j) label = (label << bps) | static_cast<std::uint64_t>(symbols[j]);
        sc.labels[c] = label;
    }
    return sc;
}

// --- reference codebooks -----------------------------------------------------

// Gray-mapped QPSK on a single resource: bit 0 selects the real sign, bit 1
// the imaginary sign. Adjacent points differ in exactly one bit.
inline std::vector<Codebook> qpsk_codebook(double P = 1.0) {
    Codebook b;
    b.user = 0;
    b.M = 4;
    b.K = 1;
    const double a = std::sqrt(P / 2.0);
    b.words.resize(4);
    b.labels = {0, 1, 2, 3};
    for (int m = 0; m < 4; ++m) {
        int b0 = (m >> 1) & 1, b1 = m & 1;
        b.words[m] = {cplx{(1 - 2 * b0) * a, (1 - 2 * b1) * a}};
    }
    return {b};
}

// Simple QPSK-per-resource multi-user codebook on the configured mapping,
// phases rotated per user so colliding users are distinguishable. All users
// share the average power P. Stands in for a conventional hand-crafted design
// in tests and demos; real third-party codebooks arrive via file import.
inline std::vector<Codebook> conventional_qpsk_codebooks(const SystemConfig& cfg) {
    if (cfg.M != 4) throw std::invalid_argument("conventional_qpsk_codebooks: requires M = 4");
    std::vector<Codebook> books(cfg.J);
    const double a = std::sqrt(cfg.P / (2.0 * cfg.N));
    for (int j = 0; j < cfg.J; ++j) {
        Codebook& b = books[j];
        b.user = j;
        b.M = 4;
        b.K = cfg.K;
        b.words.assign(4, cvec(cfg.K, cplx{0.0, 0.0}));
        b.labels = {0, 1, 2, 3};
        const double theta = std::numbers::pi * j / (2.0 * cfg.J);
        const cplx rot{std::cos(theta), std::sin(theta)};
        for (int m = 0; m < 4; ++m) {
            int b0 = (m >> 1) & 1, b1 = m & 1;
            cplx sym{(1 - 2 * b0) * a, (1 - 2 * b1) * a};
            for (int k = 0; k < cfg.K; ++k)
                if (cfg.active(k, j)) b.words[m][k] = sym * rot;
        }
    }
    return books;
}

// --- codebook file format ----------------------------------------------------
//
//   mdm-codebook 1
//   # provenance comments
//   J <j> K <k> N <n> M <m> P <p> pnl <level>
//   F
//   <K rows of J 0/1 entries>
//   user <j>
//   label <m> <bit string>
//   word <m> <2K reals: Re Im per resource>

inline void write_codebooks(std::ostream& os, const SystemConfig& cfg, const std::vector<Codebook>& books,
                            const std::string& provenance = "") {
    os << "mdm-codebook 1\n";
    if (!provenance.empty()) os << "# " << provenance << "\n";
    os << "J " << cfg.J << " K " << cfg.K << " N " << cfg.N << " M " << cfg.M << " P " << format_double(cfg.P)
       << " pnl " << cfg.pnl_level << "\n";
    os << "F\n";
    for (int k = 0; k < cfg.K; ++k) {
        for (int j = 0; j < cfg.J; ++j) os << (j ? " " : "") << cfg.F[k][j];
        os << "\n";
    }
    const int bps = cfg.bits_per_symbol();
    for (const Codebook& b : books) {
        os << "user " << b.user << "\n";
        for (int m = 0; m < b.M; ++m) {
            os << "label " << m << " ";
            for (int t = bps - 1; t >= 0; --t) os << ((b.labels[m] >> t) & 1u);
            os << "\n";
        }
        for (int m = 0; m < b.M; ++m) {
            os << "word " << m;
            for (int k = 0; k < b.K; ++k)
                os << " " << format_double(b.words[m][k].real()) << " " << format_double(b.words[m][k].imag());
            os << "\n";
        }
    }
}

inline void save_codebooks(const std::string& path, const SystemConfig& cfg, const std::vector<Codebook>& books,
                           const std::string& provenance = "") {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    write_codebooks(f, cfg, books, provenance);
}

struct CodebookFile {
    SystemConfig cfg;
    std::vector<Codebook> books;
};

inline CodebookFile read_codebooks(std::istream& is) {
    auto fail = [](const std::string& what) -> std::runtime_error {
        return std::runtime_error("codebook file: " + what);
    };
    std::string line;
    if (!std::getline(is, line) || line.rfind("mdm-codebook 1", 0) != 0) throw fail("bad header");
    CodebookFile cf;
    SystemConfig& cfg = cf.cfg;
    std::string tok;
    do {
        if (!std::getline(is, line)) throw fail("truncated before config");
    } while (line.empty() || line[0] == '#');
    {
        std::istringstream ls(line);
        std::string kJ, kK, kN, kM, kP, kpnl;
        if (!(ls >> kJ >> cfg.J >> kK >> cfg.K >> kN >> cfg.N >> kM >> cfg.M >> kP >> cfg.P >> kpnl >> cfg.pnl_level) ||
            kJ != "J" || kK != "K" || kN != "N" || kM != "M" || kP != "P" || kpnl != "pnl")
            throw fail("malformed config line: " + line);
    }
    if (!(is >> tok) || tok != "F") throw fail("expected F matrix");
    cfg.F.assign(cfg.K, std::vector<int>(cfg.J, 0));
    for (int k = 0; k < cfg.K; ++k)
        for (int j = 0; j < cfg.J; ++j)
            if (!(is >> cfg.F[k][j])) throw fail("truncated F matrix");
    cfg.validate();
    const int bps = cfg.bits_per_symbol();
    cf.books.resize(cfg.J);
    for (int j = 0; j < cfg.J; ++j) {
        int user = -1;
        if (!(is >> tok >> user) || tok != "user") throw fail("expected user block " + std::to_string(j));
        if (user != j) throw fail("user blocks out of order");
        Codebook& b = cf.books[j];
        b.user = j;
        b.M = cfg.M;
        b.K = cfg.K;
        b.labels.resize(cfg.M);
        b.words.assign(cfg.M, cvec(cfg.K));
        for (int m = 0; m < cfg.M; ++m) {
            int idx;
            std::string bits;
            if (!(is >> tok >> idx >> bits) || tok != "label" || idx != m) throw fail("bad label line, user " + std::to_string(j));
            if (bits.size() != static_cast<size_t>(bps)) throw fail("label bit width mismatch");
            std::uint64_t v = 0;
            for (char c : bits) {
                if (c != '0' && c != '1') throw fail("label bits must be 0/1");
                v = (v << 1) | static_cast<std::uint64_t>(c - '0');
            }
            b.labels[m] = v;
        }
        for (int m = 0; m < cfg.M; ++m) {
            int idx;
            if (!(is >> tok >> idx) || tok != "word" || idx != m) throw fail("bad word line, user " + std::to_string(j));
            for (int k = 0; k < cfg.K; ++k) {
                double re, im;
                if (!(is >> re >> im)) throw fail("truncated word entries");
                b.words[m][k] = {re, im};
            }
        }
        // sparsity respect on import
        for (int m = 0; m < cfg.M; ++m)
            for (int k = 0; k < cfg.K; ++k)
                if (!cfg.active(k, j) && std::norm(b.words[m][k]) != 0.0)
                    throw fail("nonzero entry on an unmapped resource (user " + std::to_string(j) + ")");
    }
    return cf;
}

inline CodebookFile load_codebooks(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open codebook file: " + path);
    return read_codebooks(f);
}

}  // namespace mdm
