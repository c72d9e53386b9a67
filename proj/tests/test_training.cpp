#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mdm/training.hpp"

using namespace mdm;

namespace {

SystemConfig tiny_config(int pnl = 3) {
    return make_config(2, 2, 2, 2, 1.0, pnl, dense_mapping(2, 2));
}

MuTrainer make_tiny_trainer(const SystemConfig& cfg, std::uint64_t seed, int workers = 1) {
    auto enc = init_mu_encoder(cfg, 6, 2, seed);
    auto dec = make_mlp(2 * cfg.K, 12, 2, static_cast<size_t>(cfg.M) * cfg.J, RngStream(seed, 0x99));
    return MuTrainer(std::move(enc), std::move(dec), generate_dataset(cfg), seed, workers);
}

}  // namespace

TEST_CASE("l2_loss: zero at perfect reconstruction, unit example, FD gradient") {
    auto [z, gz] = l2_loss({1, 0}, {1, 0});
    REQUIRE(z == 0.0);
    for (double v : gz) REQUIRE(v == 0.0);

    auto [d, gd] = l2_loss({1, 0}, {0, 0});
    REQUIRE(d == Catch::Approx(1.0));

    RngStream rng(3, 0);
    std::vector<double> r(6), rh(6);
    for (auto& v : r) v = rng.next_uniform(-1, 1);
    for (auto& v : rh) v = rng.next_uniform(-1, 1);
    auto [val, grad] = l2_loss(r, rh);
    const double h = 1e-6;
    for (size_t i = 0; i < rh.size(); ++i) {
        auto p = rh, m = rh;
        p[i] += h;
        m[i] -= h;
        double fd = (l2_loss(r, p).first - l2_loss(r, m).first) / (2 * h);
        REQUIRE(std::fabs(grad[i] - fd) / std::max(1.0, std::fabs(fd)) < 1e-5);
    }
}

TEST_CASE("proposed_loss: delta = 0 equals mu times mean per-user l2") {
    const int J = 3, M = 4;
    RngStream rng(9, 0);
    std::vector<double> r(J * M, 0.0), rh(J * M);
    std::vector<std::uint64_t> bits(J), dec(J);
    for (int j = 0; j < J; ++j) {
        r[j * M + (j % M)] = 1.0;
        bits[j] = static_cast<std::uint64_t>(j % M);
        dec[j] = rng.next_below(M);
    }
    for (auto& v : rh) v = rng.next_uniform(-1, 1);
    auto res = proposed_loss(r, rh, bits, dec, J, M, LossSpec::proposed(2.5, 0.0));
    double mean_l2 = 0;
    for (int j = 0; j < J; ++j) {
        std::vector<double> rj(r.begin() + j * M, r.begin() + (j + 1) * M);
        std::vector<double> hj(rh.begin() + j * M, rh.begin() + (j + 1) * M);
        mean_l2 += l2_loss(rj, hj).first / J;
    }
    REQUIRE(res.value / 2.5 == Catch::Approx(mean_l2).epsilon(1e-14));
}

TEST_CASE("proposed_loss: worked example with d_H = (2, 0)") {
    const int J = 2, M = 4;
    std::vector<double> r(J * M, 0.0);
    r[0] = 1.0;
    r[M] = 1.0;
    std::vector<double> rh = r;
    rh[1] = 1.0;   // user 1 slice differs by a unit vector -> L2 term 1.0
    rh[M + 1] = 0.5;  // user 2 slice -> L2 term 0.5
    std::vector<std::uint64_t> bits{0b00, 0b00}, dec{0b11, 0b00};
    auto res = proposed_loss(r, rh, bits, dec, J, M, LossSpec::proposed(1.0, 0.05));
    REQUIRE(res.value == Catch::Approx(0.8));
}

TEST_CASE("proposed_loss: correct detection keeps the loss strictly positive unless exact") {
    const int J = 2, M = 2;
    std::vector<double> r{1, 0, 0, 1};
    std::vector<double> rh{0.9, 0.1, 0.1, 0.9};
    std::vector<std::uint64_t> b{0, 1};
    auto res = proposed_loss(r, rh, b, b, J, M, LossSpec::proposed(1.0, 0.05));
    REQUIRE(res.value > 0.0);
    auto exact = proposed_loss(r, r, b, b, J, M, LossSpec::proposed(1.0, 0.05));
    REQUIRE(exact.value == 0.0);
}

TEST_CASE("proposed_loss: mismatched user counts rejected") {
    std::vector<double> r(4, 0), rh(4, 0);
    REQUIRE_THROWS_AS(proposed_loss(r, rh, {0}, {0, 1}, 2, 2, LossSpec::proposed(1, 0.05)),
                      std::invalid_argument);
}

TEST_CASE("loss-switch consistency: proposed/mu at correct detection equals the step-2 loss") {
    const int J = 3, M = 4;
    RngStream rng(21, 0);
    std::vector<double> r(J * M, 0.0), rh(J * M);
    std::vector<std::uint64_t> bits(J);
    for (int j = 0; j < J; ++j) {
        int sym = static_cast<int>(rng.next_below(M));
        r[j * M + sym] = 1.0;
        bits[j] = static_cast<std::uint64_t>(sym);
        for (int m = 0; m < M; ++m) rh[j * M + m] = (m == sym ? 1.0 : 0.0) + rng.next_uniform(-0.2, 0.2);
    }
    // argmax equals the transmitted symbol -> d_H = 0 for every user
    auto proposed = proposed_loss(r, rh, bits, bits, J, M, LossSpec::proposed(3.0, 0.05));
    auto step2 = proposed_loss(r, rh, bits, bits, J, M, LossSpec::l2());
    REQUIRE(proposed.value / 3.0 == Catch::Approx(step2.value).epsilon(1e-14));
}

TEST_CASE("generate_dataset: counts and distinctness") {
    REQUIRE(generate_dataset(tiny_config()).size() == 4);
    auto sparse = make_config(6, 4, 2, 4, 1.0, 3, sparse_mapping_6x4());
    auto ds = generate_dataset(sparse);
    REQUIRE(ds.size() == 4096);
    for (size_t c = 0; c < ds.size(); ++c) REQUIRE(symbols_to_class(ds.symbols[c], 4) == c);
    REQUIRE_THROWS_AS(generate_dataset(sparse, 100), std::invalid_argument);
}

TEST_CASE("batch arithmetic: 4096 samples at batch 400 give 11 batches") {
    REQUIRE(batch_count(4096, 400) == 11);
    REQUIRE(4096 - 10 * 400 == 96);
}

TEST_CASE("schedule validation") {
    TrainingSchedule s;
    REQUIRE_NOTHROW(s.validate());
    s.eta2 = 0.01;
    REQUIRE_THROWS_AS(s.validate(), std::invalid_argument);
}

TEST_CASE("trainer gradients match finite differences through the whole graph") {
    // One batch spanning the dataset; eta = 1 turns the parameter update into
    // an exact gradient readout, and eta = 0 turns train_epoch into a pure
    // loss evaluation with frozen noise.
    const double h = 1e-6;
    for (int level : {1, 2, 3}) {
        auto cfg = tiny_config(level);
        const std::uint64_t seed = 1234 + level;
        const int epoch = 5;
        const double sigma2 = 0.3;
        auto loss = LossSpec::proposed(1.0, 0.05);

        auto loss_at = [&](const MuEncoder& e, const DenseNetwork& d) {
            MuTrainer t(e, d, generate_dataset(cfg), seed, 1);
            return t.train_epoch(loss, 0.0, sigma2, 4, epoch);
        };

        MuTrainer probe = make_tiny_trainer(cfg, seed);
        MuEncoder enc0 = probe.encoder();
        DenseNetwork dec0 = probe.decoder();
        probe.train_epoch(loss, 1.0, sigma2, 4, epoch);

        int checked = 0;
        // a generator weight sample
        for (int j = 0; j < cfg.J; ++j)
            for (int k = 0; k < cfg.K; ++k) {
                if (!cfg.active(k, j)) continue;
                for (size_t l = 0; l < enc0.gen(j, k).layers.size(); l += 2) {
                    size_t i = (l * 7) % enc0.gen(j, k).layers[l].w.size();
                    double analytic = (enc0.gen(j, k).layers[l].w[i] - probe.encoder().gen(j, k).layers[l].w[i]);
                    auto ep = enc0, em = enc0;
                    ep.gen(j, k).layers[l].w[i] += h;
                    em.gen(j, k).layers[l].w[i] -= h;
                    ep.gen(j, k).layers[l].sync_transpose();
                    em.gen(j, k).layers[l].sync_transpose();
                    double fd = (loss_at(ep, dec0) - loss_at(em, dec0)) / (2 * h);
                    REQUIRE(std::fabs(analytic - fd) < 2e-4 * std::max(1.0, std::fabs(fd)));
                    ++checked;
                }
            }
        // a decoder weight sample
        for (size_t l = 0; l < dec0.layers.size(); ++l) {
            size_t i = (l * 13 + 5) % dec0.layers[l].w.size();
            double analytic = dec0.layers[l].w[i] - probe.decoder().layers[l].w[i];
            auto dp = dec0, dm = dec0;
            dp.layers[l].w[i] += h;
            dm.layers[l].w[i] -= h;
            dp.layers[l].sync_transpose();
            dm.layers[l].sync_transpose();
            double fd = (loss_at(enc0, dp) - loss_at(enc0, dm)) / (2 * h);
            REQUIRE(std::fabs(analytic - fd) < 2e-4 * std::max(1.0, std::fabs(fd)));
            ++checked;
        }
        REQUIRE(checked >= 10);
    }
}

TEST_CASE("single-user trainer gradients match finite differences") {
    auto cfg = tiny_config(3);
    const std::uint64_t seed = 77;
    const int epoch = 2;
    const double sigma2 = 0.3;
    auto loss = LossSpec::proposed(1.0, 0.05);
    const double h = 1e-6;

    auto make = [&](std::uint64_t s) {
        auto enc = init_su_encoder(cfg, 8, 2, s);
        auto dec = make_mlp(2 * cfg.K, 12, 2, static_cast<size_t>(cfg.M) * cfg.J, RngStream(s, 0x99));
        return SuTrainer(std::move(enc), std::move(dec), generate_dataset(cfg), seed, 1);
    };
    auto loss_at = [&](const SuEncoder& e, const DenseNetwork& d) {
        SuTrainer t(e, d, generate_dataset(cfg), seed, 1);
        return t.train_epoch(loss, 0.0, sigma2, 4, epoch);
    };

    SuTrainer probe = make(seed);
    SuEncoder enc0 = probe.encoder();
    DenseNetwork dec0 = probe.decoder();
    probe.train_epoch(loss, 1.0, sigma2, 4, epoch);

    for (size_t l = 0; l < enc0.net.layers.size(); ++l) {
        size_t i = (l * 11 + 3) % enc0.net.layers[l].w.size();
        double analytic = enc0.net.layers[l].w[i] - probe.encoder().net.layers[l].w[i];
        auto ep = enc0, em = enc0;
        ep.net.layers[l].w[i] += h;
        em.net.layers[l].w[i] -= h;
        ep.net.layers[l].sync_transpose();
        em.net.layers[l].sync_transpose();
        double fd = (loss_at(ep, dec0) - loss_at(em, dec0)) / (2 * h);
        REQUIRE(std::fabs(analytic - fd) < 2e-4 * std::max(1.0, std::fabs(fd)));
    }
}

TEST_CASE("training is deterministic and worker-count invariant") {
    auto cfg = tiny_config(3);
    std::vector<double> losses1, losses2, losses_w2;
    for (int workers : {1, 1, 2}) {
        MuTrainer t = make_tiny_trainer(cfg, 42, workers);
        std::vector<double>& out = workers == 2 ? losses_w2 : (losses1.empty() ? losses1 : losses2);
        for (int e = 0; e < 8; ++e)
            out.push_back(t.train_epoch(LossSpec::proposed(1.0, 0.05), 0.001, 0.25, 3, e));
    }
    REQUIRE(losses1 == losses2);
    REQUIRE(losses1 == losses_w2);
}

TEST_CASE("corruption bookkeeping: realized sigma^2 sits at the configured dB level") {
    for (int level : {1, 2, 3}) {
        auto cfg = tiny_config(level);
        MuTrainer t = make_tiny_trainer(cfg, 5);
        const double db = level == 1 ? -8.0 : -6.0;
        double sigma2 = t.corruption_sigma2(db);
        auto [books, sc] = extract_codebooks(t.encoder());
        double mean_p = 0;
        for (auto& b : books) mean_p += b.avg_power();
        mean_p /= books.size();
        double realized_db = 10.0 * std::log10(sigma2 / mean_p);
        REQUIRE(std::fabs(realized_db - db) < 0.01);
    }
}

TEST_CASE("two-step run: phase markers and epoch accounting") {
    auto cfg = tiny_config(3);
    MuTrainer t = make_tiny_trainer(cfg, 11);
    TrainingSchedule s;
    s.T1 = 3;
    s.T2 = 2;
    s.T3 = 2;
    s.batch_size = 4;
    s.corruption_db = -6;
    auto rep = t.run_two_step(s, LossSpec::proposed(1.0, 0.05));
    REQUIRE(rep.rows.size() == 7);
    REQUIRE(rep.phase1a_end == 3);
    REQUIRE(rep.phase1b_end == 5);
    REQUIRE(std::string(rep.rows[0].phase) == "1A");
    REQUIRE(std::string(rep.rows[3].phase) == "1B");
    REQUIRE(std::string(rep.rows[5].phase) == "2");

    // T2 = T3 = 0 degenerates to single-phase training
    MuTrainer t2 = make_tiny_trainer(cfg, 11);
    s.T2 = 0;
    s.T3 = 0;
    auto rep2 = t2.run_two_step(s, LossSpec::proposed(1.0, 0.05));
    REQUIRE(rep2.rows.size() == 3);
    for (auto& r : rep2.rows) REQUIRE(std::string(r.phase) == "1A");
}

TEST_CASE("tiny system learns: loss falls and noiseless decoding is exact") {
    auto cfg = tiny_config(3);
    MuTrainer t = make_tiny_trainer(cfg, 2025);
    auto loss = LossSpec::proposed(1.0, 0.05);
    const double sigma2 = t.corruption_sigma2(-6.0);
    double first = t.train_epoch(loss, 0.02, sigma2, 4, 0);
    double last = 0;
    for (int e = 1; e < 400; ++e) last = t.train_epoch(loss, 0.02, sigma2, 4, e);
    REQUIRE(last < 0.5 * first);

    auto [books, sc] = extract_codebooks(t.encoder());
    for (size_t c = 0; c < sc.size(); ++c) {
        auto r = decode(t.decoder(), sc.points[c], cfg.J, cfg.M);
        REQUIRE(symbols_to_class(r.symbols, cfg.M) == c);
    }
}

TEST_CASE("level-3 training exploits power imbalance across users") {
    auto cfg = tiny_config(3);
    MuTrainer t = make_tiny_trainer(cfg, 31415);
    auto loss = LossSpec::proposed(1.0, 0.05);
    for (int e = 0; e < 300; ++e) t.train_epoch(loss, 0.02, t.corruption_sigma2(-6.0), 4, e);
    auto [books, sc] = extract_codebooks(t.encoder());
    double mn = 1e300, mx = 0, total = 0;
    for (auto& b : books) {
        mn = std::min(mn, b.avg_power());
        mx = std::max(mx, b.avg_power());
        total += b.avg_power();
    }
    REQUIRE(total == Catch::Approx(cfg.J * cfg.P).margin(1e-9));
    REQUIRE(mx / mn > 1.0 + 1e-3);
}

TEST_CASE("report CSV layout") {
    TrainingReport rep;
    rep.rows.push_back({0, "1A", 0.5, 0.6});
    rep.rows.push_back({1, "2", 0.25, std::numeric_limits<double>::quiet_NaN()});
    std::ostringstream os;
    rep.write_csv(os, "seed=1");
    auto text = os.str();
    REQUIRE(text.find("# seed=1\n") == 0);
    REQUIRE(text.find("epoch,phase,train_loss,val_loss\n") != std::string::npos);
    REQUIRE(text.find("0,1A,0.5,0.59999999999999998\n") != std::string::npos);
    REQUIRE(text.find("1,2,0.25,\n") != std::string::npos);
}
