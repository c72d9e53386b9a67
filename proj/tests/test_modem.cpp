#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "mdm/codebook.hpp"
#include "mdm/modem.hpp"

using namespace mdm;

namespace {

SystemConfig sparse_config(int pnl = 3) {
    return make_config(6, 4, 2, 4, 1.0, pnl, sparse_mapping_6x4());
}

SystemConfig dense_config(int J, int K, int M, int pnl = 3, double P = 1.0) {
    return make_config(J, K, K, M, P, pnl, dense_mapping(K, J));
}

}  // namespace

TEST_CASE("config validation") {
    REQUIRE_NOTHROW(sparse_config());
    REQUIRE_NOTHROW(dense_config(6, 4, 4));
    // column weight must equal N
    auto F = sparse_mapping_6x4();
    F[0][0] = 1;
    REQUIRE_THROWS_AS(make_config(6, 4, 2, 4, 1.0, 1, F), std::invalid_argument);
    REQUIRE_THROWS_AS(dense_config(2, 2, 3), std::invalid_argument);   // M not a power of two
    REQUIRE_THROWS_AS(dense_config(2, 2, 4, 3, -1.0), std::invalid_argument);
    REQUIRE_THROWS_AS(make_config(2, 2, 2, 4, 1.0, 4, dense_mapping(2, 2)), std::invalid_argument);
}

TEST_CASE("one-hot encoding: single user index 0") {
    auto cfg = dense_config(1, 1, 4);
    auto oh = encode_bits_to_onehot({0, 0}, cfg);
    REQUIRE(oh.to_vector() == std::vector<double>{1, 0, 0, 0});
}

TEST_CASE("one-hot encoding: two users, first bit most significant") {
    auto cfg = dense_config(2, 1, 4);
    auto oh = encode_bits_to_onehot({1, 1, 0, 0}, cfg);
    REQUIRE(oh.to_vector() == std::vector<double>{0, 0, 0, 1, 1, 0, 0, 0});
}

TEST_CASE("one-hot encoding: wrong bit count rejected") {
    auto cfg = dense_config(2, 1, 4);
    REQUIRE_THROWS_AS(encode_bits_to_onehot({1, 0, 1}, cfg), std::invalid_argument);
}

TEST_CASE("one-hot round-trip over all 4096 inputs for J=6, M=4") {
    auto cfg = sparse_config();
    const int bits = cfg.total_bits();
    for (size_t c = 0; c < 4096; ++c) {
        std::vector<int> b(bits);
        for (int t = 0; t < bits; ++t) b[t] = (c >> (bits - 1 - t)) & 1u;
        auto oh = encode_bits_to_onehot(b, cfg);
        REQUIRE(onehot_to_bits(oh) == b);
    }
}

TEST_CASE("mu_encode: user independence and sparsity pattern") {
    auto cfg = sparse_config();
    auto enc = init_mu_encoder(cfg, 8, 2, 42);
    OneHotInput a{6, 4, {0, 1, 2, 3, 0, 1}};
    OneHotInput b = a;
    b.symbols[2] = 0;  // perturb user 3 only
    auto cwa = mu_encode(enc, a);
    auto cwb = mu_encode(enc, b);
    for (int j = 0; j < 6; ++j) {
        if (j == 2) continue;
        REQUIRE(cwa[j] == cwb[j]);
    }
    // first user's column of F is (0,1,1,0): zero on resources 1 and 4
    REQUIRE(cwa[0][0] == cplx{0.0, 0.0});
    REQUIRE(cwa[0][3] == cplx{0.0, 0.0});
    REQUIRE(std::norm(cwa[0][1]) > 0.0);
    REQUIRE(std::norm(cwa[0][2]) > 0.0);
}

TEST_CASE("mu_encode matches composing tensor-network forward per element generator") {
    auto cfg = sparse_config();
    auto enc = init_mu_encoder(cfg, 8, 2, 7);
    OneHotInput oh{6, 4, {3, 2, 1, 0, 3, 2}};
    auto cws = mu_encode(enc, oh);
    for (int j = 0; j < 6; ++j) {
        std::vector<double> sub(4, 0.0);
        sub[oh.symbols[j]] = 1.0;
        for (int k = 0; k < 4; ++k) {
            if (!cfg.active(k, j)) continue;
            auto out = forward(enc.gen(j, k), sub);
            REQUIRE(cws[j][k].real() == out[0]);
            REQUIRE(cws[j][k].imag() == out[1]);
        }
    }
}

TEST_CASE("user independence: exhaustive over J=3, M=4") {
    auto cfg = dense_config(3, 2, 4);
    auto enc = init_mu_encoder(cfg, 6, 2, 99);
    std::vector<int> symbols(3);
    for (int c = 0; c < 64; ++c) {
        symbols[0] = c & 3;
        symbols[1] = (c >> 2) & 3;
        symbols[2] = (c >> 4) & 3;
        auto base = mu_encode(enc, {3, 4, symbols});
        for (int j = 0; j < 3; ++j)
            for (int alt = 0; alt < 4; ++alt) {
                if (alt == symbols[j]) continue;
                auto mod = symbols;
                mod[j] = alt;
                auto other = mu_encode(enc, {3, 4, mod});
                for (int u = 0; u < 3; ++u) {
                    if (u == j) continue;
                    REQUIRE(other[u] == base[u]);
                }
            }
    }
}

TEST_CASE("PNL level 1: every active element carries P/N") {
    auto cfg = sparse_config(1);
    auto enc = init_mu_encoder(cfg, 8, 2, 5);
    auto cws = apply_pnl(mu_encode(enc, {6, 4, {0, 1, 2, 3, 1, 2}}), cfg);
    for (int j = 0; j < 6; ++j)
        for (int k = 0; k < 4; ++k) {
            if (cfg.active(k, j))
                REQUIRE(std::norm(cws[j][k]) == Catch::Approx(0.5).epsilon(1e-12));
            else
                REQUIRE(cws[j][k] == cplx{0.0, 0.0});
        }
}

TEST_CASE("PNL level 2: every codeword has squared norm P") {
    auto cfg = sparse_config(2);
    auto enc = init_mu_encoder(cfg, 8, 2, 6);
    auto cws = apply_pnl(mu_encode(enc, {6, 4, {3, 3, 0, 1, 2, 0}}), cfg);
    for (int j = 0; j < 6; ++j) {
        double p = 0;
        for (auto& z : cws[j]) p += std::norm(z);
        REQUIRE(p == Catch::Approx(1.0).margin(1e-9));
    }
}

TEST_CASE("PNL level 3: sum of codebook-average powers is J*P") {
    auto cfg = sparse_config(3);
    auto enc = init_mu_encoder(cfg, 8, 2, 11);
    auto [books, sc] = extract_codebooks(enc);
    double total = 0;
    for (auto& b : books) total += b.avg_power();
    REQUIRE(total == Catch::Approx(6.0).margin(1e-9));
    // individual averages are free to differ
    double mn = 1e300, mx = 0;
    for (auto& b : books) {
        mn = std::min(mn, b.avg_power());
        mx = std::max(mx, b.avg_power());
    }
    REQUIRE(mx >= mn);
}

TEST_CASE("PNL level 3 without a scale is rejected; degenerate input rejected") {
    auto cfg = sparse_config(3);
    std::vector<cvec> cws(6, cvec(4, cplx{0.1, 0.0}));
    REQUIRE_THROWS_AS(apply_pnl(cws, cfg), std::invalid_argument);
    auto cfg1 = sparse_config(1);
    std::vector<cvec> zero(6, cvec(4, cplx{0.0, 0.0}));
    REQUIRE_THROWS_AS(apply_pnl(zero, cfg1), std::runtime_error);
}

TEST_CASE("PNL backward matches finite differences (levels 1 and 2)") {
    for (int level : {1, 2}) {
        auto cfg = sparse_config(level);
        RngStream rng(17 + level, 0);
        std::vector<cvec> raw(6, cvec(4, cplx{0, 0}));
        std::vector<cvec> up(6, cvec(4, cplx{0, 0}));
        for (int j = 0; j < 6; ++j)
            for (int k = 0; k < 4; ++k) {
                if (!cfg.active(k, j)) continue;
                raw[j][k] = {rng.next_uniform(-1, 1), rng.next_uniform(-1, 1)};
                up[j][k] = {rng.next_uniform(-1, 1), rng.next_uniform(-1, 1)};
            }
        auto scalar = [&](const std::vector<cvec>& r) {
            auto out = apply_pnl(r, cfg);
            double s = 0;
            for (int j = 0; j < 6; ++j)
                for (int k = 0; k < 4; ++k)
                    s += up[j][k].real() * out[j][k].real() + up[j][k].imag() * out[j][k].imag();
            return s;
        };
        auto g = pnl_backward_sample(raw, cfg, up);
        const double h = 1e-6;
        for (int j = 0; j < 6; ++j)
            for (int k = 0; k < 4; ++k) {
                if (!cfg.active(k, j)) continue;
                for (int part = 0; part < 2; ++part) {
                    auto rp = raw, rm = raw;
                    cplx delta = part == 0 ? cplx{h, 0} : cplx{0, h};
                    rp[j][k] += delta;
                    rm[j][k] -= delta;
                    double fd = (scalar(rp) - scalar(rm)) / (2 * h);
                    double an = part == 0 ? g[j][k].real() : g[j][k].imag();
                    REQUIRE(std::fabs(an - fd) < 1e-5 * std::max(1.0, std::fabs(fd)));
                }
            }
    }
}

TEST_CASE("superpose basics") {
    cvec a{{1, 2}, {3, -1}};
    REQUIRE(superpose({a}) == a);
    cvec b{{-1, -2}, {-3, 1}};
    auto z = superpose({a, b});
    for (auto& v : z) REQUIRE(v == cplx{0, 0});
}

TEST_CASE("superpose matches constellation table lookup for every label") {
    auto cfg = dense_config(3, 2, 4);
    auto enc = init_mu_encoder(cfg, 6, 2, 3);
    auto [books, sc] = extract_codebooks(enc);
    double l3 = level3_scale(enc);
    std::vector<int> symbols;
    for (size_t c = 0; c < sc.size(); ++c) {
        class_to_symbols(c, 3, 4, symbols);
        auto x = superpose(apply_pnl(mu_encode(enc, {3, 4, symbols}), cfg, l3));
        for (int k = 0; k < 2; ++k) {
            REQUIRE(x[k].real() == Catch::Approx(sc.points[c][k].real()).margin(1e-12));
            REQUIRE(x[k].imag() == Catch::Approx(sc.points[c][k].imag()).margin(1e-12));
        }
    }
}

TEST_CASE("awgn: zero noise power returns the input exactly") {
    RngStream rng(1, 2);
    cvec x{{0.5, -0.25}, {1.5, 2.0}};
    auto y = awgn_corrupt(x, 0.0, rng);
    REQUIRE(y == x);
    REQUIRE_THROWS_AS(awgn_corrupt(x, -1.0, rng), std::invalid_argument);
}

TEST_CASE("awgn: sample statistics match sigma^2 per complex dimension") {
    RngStream rng(77, 3);
    const double sigma2 = 0.8;
    const size_t n = 1000000;
    cvec x{{0, 0}};
    double sum_r = 0, sum_i = 0, sum_p = 0;
    for (size_t i = 0; i < n; ++i) {
        auto y = awgn_corrupt(x, sigma2, rng);
        sum_r += y[0].real();
        sum_i += y[0].imag();
        sum_p += std::norm(y[0]);
    }
    double mean_r = sum_r / n, mean_i = sum_i / n;
    double var = sum_p / n;
    REQUIRE(std::fabs(var - sigma2) / sigma2 < 0.01);
    double bound = 3.0 * std::sqrt(sigma2 / 2.0) / std::sqrt(static_cast<double>(n));
    REQUIRE(std::fabs(mean_r) < bound);
    REQUIRE(std::fabs(mean_i) < bound);
}

TEST_CASE("decode: output length, argmax ties to lowest index") {
    auto cfg = sparse_config();
    auto dec = make_mlp(8, 16, 2, 24, RngStream(2, 0));
    cvec y(4, cplx{0.1, -0.2});
    auto r = decode(dec, y, 6, 4);
    REQUIRE(r.scores.size() == 24);
    REQUIRE(r.symbols.size() == 6);
    REQUIRE(r.bits.size() == 12);

    // hand-built decoder output with a tie: identity single layer
    DenseNetwork tie;
    tie.layers.push_back({2, 4, Activation::Identity, {0, 0, 0, 0, 0, 0, 0, 0}, {}, {0.5, 0.5, 0.2, 0.1}});
    tie.layers[0].sync_transpose();
    auto rt = decode(tie, cvec{{0, 0}}, 1, 4);
    REQUIRE(rt.symbols[0] == 0);
}

TEST_CASE("su_encode: output dimension and exhaustive average power") {
    auto cfg = dense_config(2, 2, 4);  // 16 classes, cheap exhaustive check
    auto enc = init_su_encoder(cfg, 16, 2, 21);
    auto x = su_encode(enc, {2, 4, {1, 3}});
    REQUIRE(x.size() == 2);
    enc.scale = su_exhaustive_scale(enc);
    double total = 0;
    std::vector<int> symbols;
    for (size_t c = 0; c < 16; ++c) {
        class_to_symbols(c, 2, 4, symbols);
        auto pt = su_encode(enc, {2, 4, symbols});
        for (auto& z : pt) total += std::norm(z);
    }
    REQUIRE(total / 16.0 == Catch::Approx(cfg.J * cfg.P).margin(1e-9));
}

TEST_CASE("spectral efficiency parity: J*log2(M)/K matches between MU and SU") {
    auto cfg = sparse_config();
    REQUIRE(cfg.total_bits() / static_cast<double>(cfg.K) == 3.0);
}

TEST_CASE("extracted codebooks: shapes, cardinality, level-2 power contract") {
    auto cfg = sparse_config(2);
    auto enc = init_mu_encoder(cfg, 8, 2, 13);
    auto [books, sc] = extract_codebooks(enc);
    REQUIRE(books.size() == 6);
    for (auto& b : books) REQUIRE(b.words.size() == 4);
    REQUIRE(sc.size() == 4096);
    for (auto& b : books) REQUIRE(b.avg_power() == Catch::Approx(1.0).margin(1e-9));
    // sparsity respected after PNL
    for (auto& b : books)
        for (int m = 0; m < 4; ++m)
            for (int k = 0; k < 4; ++k)
                if (!cfg.active(k, b.user)) REQUIRE(b.words[m][k] == cplx{0, 0});
}

TEST_CASE("superposed labels form a function from class index to bits") {
    auto cfg = dense_config(2, 2, 2);
    auto enc = init_mu_encoder(cfg, 4, 1, 8);
    auto [books, sc] = extract_codebooks(enc);
    REQUIRE(sc.size() == 4);
    for (size_t c = 0; c < 4; ++c) REQUIRE(sc.labels[c] == c);
}

TEST_CASE("codebook file round-trip with label maps") {
    auto cfg = sparse_config(2);
    auto enc = init_mu_encoder(cfg, 8, 2, 19);
    auto [books, sc] = extract_codebooks(enc);
    books[1].labels = {2, 0, 3, 1};  // non-identity map survives the trip
    std::stringstream ss;
    write_codebooks(ss, cfg, books, "test fixture");
    auto back = read_codebooks(ss);
    REQUIRE(back.cfg.J == cfg.J);
    REQUIRE(back.books[1].labels == std::vector<std::uint64_t>{2, 0, 3, 1});
    for (int j = 0; j < 6; ++j)
        for (int m = 0; m < 4; ++m) REQUIRE(back.books[j].words[m] == books[j].words[m]);
}

TEST_CASE("codebook file: malformed input produces diagnostics") {
    std::stringstream ss("mdm-codebook 1\nJ 2 K 2\n");
    REQUIRE_THROWS_AS(read_codebooks(ss), std::runtime_error);
    std::stringstream empty("nope");
    REQUIRE_THROWS_AS(read_codebooks(empty), std::runtime_error);
}

TEST_CASE("conventional QPSK-per-resource codebook: equal user powers") {
    auto cfg = sparse_config(1);
    auto books = conventional_qpsk_codebooks(cfg);
    for (auto& b : books) REQUIRE(b.avg_power() == Catch::Approx(1.0).margin(1e-12));
    auto sc = build_superposed(books);
    REQUIRE(sc.size() == 4096);
}
