// Loss functions, exhaustive dataset generation, corruption-level control and
// the two-step training schedule for the multi-user and single-user stacks.
//
// Training is deterministic for a given seed: shuffling and noise are drawn
// from per-epoch / per-presentation counter streams, batches are split into a
// fixed number of gradient chunks reduced in chunk order, so results do not
// depend on the worker count.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "codebook.hpp"
#include "common.hpp"
#include "modem.hpp"
#include "nn.hpp"
#include "rng.hpp"

namespace mdm {

// --- losses -----------------------------------------------------------------

struct LossSpec {
    enum class Kind { L2, Proposed };
    Kind kind = Kind::Proposed;
    double mu = 1.0;
    double delta = 0.05;

    void validate() const {
        if (!(mu > 0.0)) throw std::invalid_argument("loss: mu must be positive");
        if (!(delta >= 0.0)) throw std::invalid_argument("loss: delta must be nonnegative");
    }

    static LossSpec l2() { return {Kind::L2, 1.0, 0.0}; }
    static LossSpec proposed(double mu, double delta) { return {Kind::Proposed, mu, delta}; }
};

// Euclidean-norm loss with its gradient in the estimate; subgradient 0 at a
// perfect reconstruction.
inline std::pair<double, std::vector<double>> l2_loss(const std::vector<double>& r,
                                                      const std::vector<double>& r_hat) {
    if (r.size() != r_hat.size()) throw std::invalid_argument("l2_loss: length mismatch");
    double d2 = 0.0;
    for (size_t i = 0; i < r.size(); ++i) d2 += (r_hat[i] - r[i]) * (r_hat[i] - r[i]);
    double d = std::sqrt(d2);
    std::vector<double> grad(r.size(), 0.0);
    if (d > 0.0)
        for (size_t i = 0; i < r.size(); ++i) grad[i] = (r_hat[i] - r[i]) / d;
    return {d, std::move(grad)};
}

// Per-user L2 terms weighted by mu + delta * Hamming error of the hard
// decision, averaged over users. The Hamming weight is piecewise constant in
// the parameters and is treated as a stop-gradient multiplier.
struct UserLossResult {
    double value = 0.0;
    std::vector<double> grad;  // w.r.t. r_hat, length M*J
};

inline UserLossResult proposed_loss(const std::vector<double>& r, const std::vector<double>& r_hat,
                                    const std::vector<std::uint64_t>& user_bits,
                                    const std::vector<std::uint64_t>& user_decisions, int J, int M,
                                    const LossSpec& spec) {
    spec.validate();
    if (r.size() != static_cast<size_t>(J) * M || r_hat.size() != r.size())
        throw std::invalid_argument("proposed_loss: vector length mismatch");
    if (user_bits.size() != static_cast<size_t>(J) || user_decisions.size() != static_cast<size_t>(J))
        throw std::invalid_argument("proposed_loss: user count mismatch");
    UserLossResult res;
    res.grad.assign(r.size(), 0.0);
    for (int j = 0; j < J; ++j) {
        const size_t off = static_cast<size_t>(j) * M;
        double d2 = 0.0;
        for (int m = 0; m < M; ++m) d2 += (r_hat[off + m] - r[off + m]) * (r_hat[off + m] - r[off + m]);
        double d = std::sqrt(d2);
        double w = spec.mu + spec.delta * hamming_distance(user_bits[j], user_decisions[j]);
        res.value += w * d / J;
        if (d > 0.0) {
            double c = w / (J * d);
            for (int m = 0; m < M; ++m) res.grad[off + m] = c * (r_hat[off + m] - r[off + m]);
        }
    }
    return res;
}

// --- dataset ----------------------------------------------------------------

struct Dataset {
    int J = 0;
    int M = 0;
    std::vector<std::vector<int>> symbols;  // per class, J entries

    size_t size() const { return symbols.size(); }
};

inline size_t batch_count(size_t n, int batch_size) {
    return (n + static_cast<size_t>(batch_size) - 1) / static_cast<size_t>(batch_size);
}

inline Dataset generate_dataset(const SystemConfig& cfg, size_t max_classes = size_t{1} << 16) {
    const size_t n = cfg.num_classes();
    if (n > max_classes)
        throw std::invalid_argument("generate_dataset: M^J = " + std::to_string(n) + " exceeds the cap of " +
                                    std::to_string(max_classes) +
                                    "; subsample the class space or raise the cap");
    Dataset ds;
    ds.J = cfg.J;
    ds.M = cfg.M;
    ds.symbols.resize(n);
    for (size_t c = 0; c < n; ++c) class_to_symbols(c, cfg.J, cfg.M, ds.symbols[c]);
    return ds;
}

// --- schedule and report ------------------------------------------------------

struct TrainingSchedule {
    double eta1 = 0.001;
    double eta2 = 0.0001;
    int T1 = 8000;
    int T2 = 2000;
    int T3 = 1000;
    int batch_size = 400;
    double corruption_db = -6.0;  // sigma^2 relative to the mean user codebook power
    int val_interval = 1;         // epochs between validation passes
    bool plateau_enabled = false; // optional early phase transition
    int plateau_window = 200;
    double plateau_rel_change = 1e-4;

    void validate() const {
        if (!(eta1 > 0.0) || !(eta2 > 0.0)) throw std::invalid_argument("schedule: learning rates must be positive");
        if (eta2 >= eta1) throw std::invalid_argument("schedule: eta2 must be smaller than eta1");
        if (T1 < 1 || T2 < 0 || T3 < 0) throw std::invalid_argument("schedule: bad epoch budgets");
        if (batch_size < 1) throw std::invalid_argument("schedule: batch size must be positive");
        if (val_interval < 1) throw std::invalid_argument("schedule: val_interval must be positive");
    }
};

struct TrainingReport {
    struct Row {
        int epoch = 0;
        const char* phase = "1A";
        double train_loss = 0.0;
        double val_loss = 0.0;  // NaN when skipped
    };
    std::vector<Row> rows;
    int phase1a_end = 0;  // first epoch of phase 1B
    int phase1b_end = 0;  // first epoch of phase 2
    std::string codebook_ref;

    void write_csv(std::ostream& os, const std::string& provenance = "") const {
        if (!provenance.empty()) os << "# " << provenance << "\n";
        os << "epoch,phase,train_loss,val_loss\n";
        for (const Row& r : rows) {
            os << r.epoch << "," << r.phase << "," << format_double(r.train_loss) << ",";
            if (std::isfinite(r.val_loss)) os << format_double(r.val_loss);
            os << "\n";
        }
    }
};

// --- shared epoch machinery -----------------------------------------------

namespace detail {

inline constexpr int kGradChunks = 8;
inline constexpr std::uint64_t kStreamShuffle = 0xA1;
inline constexpr std::uint64_t kStreamTrainNoise = 0xA2;
inline constexpr std::uint64_t kStreamValNoise = 0xA3;

struct ChunkRange {
    size_t begin, end;
};

inline std::vector<ChunkRange> chunk_ranges(size_t n) {
    std::vector<ChunkRange> r;
    size_t chunk = (n + kGradChunks - 1) / kGradChunks;
    if (chunk == 0) chunk = 1;
    for (size_t b = 0; b < n; b += chunk) r.push_back({b, std::min(n, b + chunk)});
    return r;
}

// Runs fn(chunk_index) for every chunk on up to `workers` threads. The
// chunk partition is fixed, so outputs are identical for any worker count.
inline void parallel_chunks(size_t nchunks, int workers, const std::function<void(size_t)>& fn) {
    int w = std::max(1, std::min<int>(workers, static_cast<int>(nchunks)));
    if (w == 1) {
        for (size_t c = 0; c < nchunks; ++c) fn(c);
        return;
    }
    std::vector<std::thread> threads;
    threads.reserve(w);
    for (int t = 0; t < w; ++t)
        threads.emplace_back([&, t]() {
            for (size_t c = static_cast<size_t>(t); c < nchunks; c += static_cast<size_t>(w)) fn(c);
        });
    for (auto& th : threads) th.join();
}

// Per-user loss value and decoder-output gradient for one sample row.
// `target` scratch must have M*J entries.
inline double sample_loss_grad(const std::vector<int>& symbols, const double* scores, int J, int M, int bps,
                               const LossSpec& spec, double* grad_out) {
    double value = 0.0;
    for (int j = 0; j < J; ++j) {
        const size_t off = static_cast<size_t>(j) * M;
        const double* s = scores + off;
        int best = 0;
        for (int m = 1; m < M; ++m)
            if (s[m] > s[best]) best = m;
        double d2 = 0.0;
        for (int m = 0; m < M; ++m) {
            double diff = s[m] - (m == symbols[j] ? 1.0 : 0.0);
            d2 += diff * diff;
        }
        double d = std::sqrt(d2);
        double w = spec.kind == LossSpec::Kind::L2
                       ? 1.0
                       : spec.mu + spec.delta * __builtin_popcount(static_cast<unsigned>(best ^ symbols[j]) &
                                                                   ((1u << bps) - 1u));
        value += w * d / J;
        if (grad_out != nullptr) {
            double c = d > 0.0 ? w / (J * d) : 0.0;
            for (int m = 0; m < M; ++m) grad_out[off + m] = c * (s[m] - (m == symbols[j] ? 1.0 : 0.0));
        }
    }
    return value;
}

}  // namespace detail

// --- multi-user trainer --------------------------------------------------------

// Owns the stack, decoder and dataset for one training run. Encoder outputs
// depend only on (user, symbol), so each batch evaluates the J*M codeword
// table once, shares it across samples, and accumulates table-level gradients
// that are pushed through the element generators after the sample loop.
class MuTrainer {
  public:
    MuTrainer(MuEncoder encoder, DenseNetwork decoder, Dataset dataset, std::uint64_t seed, int workers = 1)
        : enc_(std::move(encoder)),
          dec_(std::move(decoder)),
          ds_(std::move(dataset)),
          seed_(seed),
          workers_(workers) {
        const SystemConfig& cfg = enc_.cfg;
        if (ds_.J != cfg.J || ds_.M != cfg.M) throw std::invalid_argument("trainer: dataset/config mismatch");
        if (dec_.input_dim() != 2 * static_cast<size_t>(cfg.K) ||
            dec_.output_dim() != static_cast<size_t>(cfg.M) * cfg.J)
            throw std::invalid_argument("trainer: decoder dimensions do not match the system");
        dec_grads_.assign(detail::kGradChunks, GradientSet::zeros_like(dec_));
        order_.resize(ds_.size());
        for (size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    }

    const MuEncoder& encoder() const { return enc_; }
    const DenseNetwork& decoder() const { return dec_; }
    MuEncoder& encoder() { return enc_; }
    DenseNetwork& decoder() { return dec_; }

    // sigma^2 from the configured corruption level and the current mean user
    // codebook power, recomputed from the normalized codebooks.
    double corruption_sigma2(double corruption_db) const {
        auto [books, sc] = extract_codebooks(enc_);
        double mean_p = 0.0;
        for (const auto& b : books) mean_p += b.avg_power();
        mean_p /= static_cast<double>(books.size());
        return mean_p * std::pow(10.0, corruption_db / 10.0);
    }

    // One full pass over the dataset: shuffle, batches of batch_size (short
    // remainder kept), fresh noise per presentation, SGD update per batch.
    // Returns the mean per-sample training loss.
    double train_epoch(const LossSpec& loss, double eta, double sigma2, int batch_size, int epoch) {
        const size_t n = ds_.size();
        RngStream shuffle_rng(seed_, mix_stream(detail::kStreamShuffle, static_cast<std::uint64_t>(epoch)));
        for (size_t i = 0; i < n; ++i) order_[i] = i;
        shuffle_rng.shuffle(order_);

        double loss_sum = 0.0;
        for (size_t b0 = 0; b0 < n; b0 += static_cast<size_t>(batch_size)) {
            const size_t bn = std::min(n - b0, static_cast<size_t>(batch_size));
            loss_sum += run_batch(loss, eta, sigma2, epoch, b0, bn);
        }
        double mean = loss_sum / static_cast<double>(n);
        if (!std::isfinite(mean))
            throw std::runtime_error("training aborted: non-finite loss at epoch " + std::to_string(epoch));
        return mean;
    }

    // Forward-only pass over the full dataset with an independent noise
    // stream; same classes, fresh corruption.
    double validation_loss(const LossSpec& loss, double sigma2, int epoch) {
        const SystemConfig& cfg = enc_.cfg;
        build_table();
        const size_t n = ds_.size();
        auto ranges = detail::chunk_ranges(n);
        std::vector<double> partial(ranges.size(), 0.0);
        detail::parallel_chunks(ranges.size(), workers_, [&](size_t c) {
            const auto [cb, ce] = ranges[c];
            Buf2 Y(ce - cb, 2 * cfg.K);
            for (size_t i = cb; i < ce; ++i) {
                RngStream noise(seed_, mix_stream(detail::kStreamValNoise, static_cast<std::uint64_t>(epoch), i));
                fill_noisy_row(ds_.symbols[i], sigma2, noise, Y.row(i - cb));
            }
            Buf2 scores = forward_batch(dec_, Y);
            double s = 0.0;
            for (size_t i = cb; i < ce; ++i)
                s += detail::sample_loss_grad(ds_.symbols[i], scores.row(i - cb), cfg.J, cfg.M,
                                              cfg.bits_per_symbol(), loss, nullptr);
            partial[c] = s;
        });
        double total = 0.0;
        for (double p : partial) total += p;
        return total / static_cast<double>(n);
    }

    // Step 1-A: step-1 loss at eta1 for T1 epochs; Step 1-B: same loss at
    // eta2 for T2; Step 2: the L2 form (delta = 0, mu = 1) at eta2 for T3.
    // With an L2 step-1 loss the switch is a no-op, giving the ablation path.
    TrainingReport run_two_step(const TrainingSchedule& sched, const LossSpec& step1_loss,
                                const std::function<void(int, const TrainingReport::Row&)>& on_epoch = {}) {
        sched.validate();
        step1_loss.validate();
        TrainingReport rep;
        const LossSpec step2_loss = LossSpec::l2();
        int epoch = 0;
        auto run_phase = [&](const char* name, const LossSpec& loss, double eta, int budget, int phase_idx) {
            double prev_window = std::numeric_limits<double>::infinity();
            double window_acc = 0.0;
            int window_fill = 0;
            for (int t = 0; t < budget; ++t, ++epoch) {
                double sigma2 = corruption_sigma2(sched.corruption_db);
                TrainingReport::Row row;
                row.epoch = epoch;
                row.phase = name;
                row.train_loss = train_epoch(loss, eta, sigma2, sched.batch_size, epoch);
                row.val_loss = std::numeric_limits<double>::quiet_NaN();
                if ((epoch + 1) % sched.val_interval == 0 || t + 1 == budget)
                    row.val_loss = validation_loss(loss, sigma2, epoch);
                rep.rows.push_back(row);
                if (on_epoch) on_epoch(phase_idx, row);
                if (sched.plateau_enabled && std::isfinite(row.val_loss)) {
                    window_acc += row.val_loss;
                    if (++window_fill == sched.plateau_window) {
                        double mean = window_acc / window_fill;
                        if (std::isfinite(prev_window) &&
                            std::fabs(prev_window - mean) < sched.plateau_rel_change * prev_window) {
                            ++epoch;
                            break;
                        }
                        prev_window = mean;
                        window_acc = 0.0;
                        window_fill = 0;
                    }
                }
            }
        };
        run_phase("1A", step1_loss, sched.eta1, sched.T1, 0);
        rep.phase1a_end = epoch;
        run_phase("1B", step1_loss, sched.eta2, sched.T2, 1);
        rep.phase1b_end = epoch;
        run_phase("2", step2_loss, sched.eta2, sched.T3, 2);
        return rep;
    }

  private:
    // codeword table scratch, rebuilt per batch
    struct GenTrace {
        ForwardTrace tr;
    };

    void build_table() {
        const SystemConfig& cfg = enc_.cfg;
        raw_.assign(static_cast<size_t>(cfg.J) * cfg.M, cvec(cfg.K, cplx{0, 0}));
        traces_.resize(static_cast<size_t>(cfg.J) * cfg.M * cfg.K);
        Buf2 in(1, cfg.M);
        for (int j = 0; j < cfg.J; ++j)
            for (int m = 0; m < cfg.M; ++m) {
                in.fill(0.0);
                in.at(0, m) = 1.0;
                for (int k = 0; k < cfg.K; ++k) {
                    if (!cfg.active(k, j)) continue;
                    ForwardTrace& tr = traces_[trace_index(j, m, k)].tr;
                    forward_trace(enc_.gen(j, k), in, tr);
                    const Buf2& out = tr.act.back();
                    raw_[table_index(j, m)][k] = {out.at(0, 0), out.at(0, 1)};
                }
            }
        // normalized table
        norm_ = raw_;
        if (cfg.pnl_level == 3) {
            double total = 0.0;
            for (int j = 0; j < cfg.J; ++j) {
                double pj = 0.0;
                for (int m = 0; m < cfg.M; ++m) pj += detail::norm_sq(raw_[table_index(j, m)]);
                total += pj / static_cast<double>(cfg.M);
            }
            if (total < kDegeneratePower) throw std::runtime_error("level-3 normalization: degenerate encoder state");
            l3_total_ = total;
            l3_gamma_ = std::sqrt(cfg.J * cfg.P / total);
            for (auto& w : norm_)
                for (cplx& z : w) z *= l3_gamma_;
        } else {
            for (int j = 0; j < cfg.J; ++j)
                for (int m = 0; m < cfg.M; ++m) normalize_user_codeword(norm_[table_index(j, m)], cfg, j);
        }
    }

    size_t table_index(int j, int m) const { return static_cast<size_t>(j) * enc_.cfg.M + m; }
    size_t trace_index(int j, int m, int k) const {
        return (static_cast<size_t>(j) * enc_.cfg.M + m) * enc_.cfg.K + k;
    }

    void fill_noisy_row(const std::vector<int>& symbols, double sigma2, RngStream& noise, double* row) const {
        const SystemConfig& cfg = enc_.cfg;
        const double s = std::sqrt(sigma2 / 2.0);
        for (int k = 0; k < cfg.K; ++k) {
            double re = 0.0, im = 0.0;
            for (int j = 0; j < cfg.J; ++j) {
                const cplx& z = norm_[table_index(j, symbols[j])][k];
                re += z.real();
                im += z.imag();
            }
            row[2 * k] = re + s * noise.next_gaussian();
            row[2 * k + 1] = im + s * noise.next_gaussian();
        }
    }

    double run_batch(const LossSpec& loss, double eta, double sigma2, int epoch, size_t b0, size_t bn) {
        const SystemConfig& cfg = enc_.cfg;
        build_table();

        auto ranges = detail::chunk_ranges(bn);
        const size_t table_sz = static_cast<size_t>(cfg.J) * cfg.M * 2 * cfg.K;
        std::vector<std::vector<double>> dtable(ranges.size(), std::vector<double>(table_sz, 0.0));
        std::vector<double> chunk_loss(ranges.size(), 0.0);
        for (auto& g : dec_grads_) g.zero();

        detail::parallel_chunks(ranges.size(), workers_, [&](size_t c) {
            const auto [cb, ce] = ranges[c];
            const size_t rows = ce - cb;
            Buf2 Y(rows, 2 * cfg.K);
            for (size_t i = cb; i < ce; ++i) {
                const size_t slot = b0 + i;
                RngStream noise(seed_,
                                mix_stream(detail::kStreamTrainNoise, static_cast<std::uint64_t>(epoch), slot));
                fill_noisy_row(ds_.symbols[order_[slot]], sigma2, noise, Y.row(i - cb));
            }
            ForwardTrace tr;
            forward_trace(dec_, Y, tr);
            const Buf2& scores = tr.act.back();
            Buf2 dY(rows, scores.cols);
            double lsum = 0.0;
            for (size_t i = cb; i < ce; ++i)
                lsum += detail::sample_loss_grad(ds_.symbols[order_[b0 + i]], scores.row(i - cb), cfg.J, cfg.M,
                                                 cfg.bits_per_symbol(), loss, dY.row(i - cb));
            chunk_loss[c] = lsum;
            Buf2 dX;
            backward_batch(dec_, tr, dY, dec_grads_[c], &dX);
            // additive noise: dL/dx = dL/dy; accumulate per (user, symbol)
            double* dt = dtable[c].data();
            for (size_t i = cb; i < ce; ++i) {
                const std::vector<int>& symbols = ds_.symbols[order_[b0 + i]];
                const double* dx = dX.row(i - cb);
                for (int j = 0; j < cfg.J; ++j) {
                    double* slot = dt + table_index(j, symbols[j]) * 2 * cfg.K;
                    for (int k = 0; k < 2 * cfg.K; ++k) slot[k] += dx[k];
                }
            }
        });

        // deterministic reduction in chunk order
        GradientSet& dec_g = dec_grads_[0];
        for (size_t c = 1; c < ranges.size(); ++c) dec_g.add(dec_grads_[c]);
        std::vector<double>& dt = dtable[0];
        for (size_t c = 1; c < ranges.size(); ++c)
            for (size_t i = 0; i < table_sz; ++i) dt[i] += dtable[c][i];
        double batch_loss = 0.0;
        for (double v : chunk_loss) batch_loss += v;

        // PNL backward on the table
        const double inv_bn = 1.0 / static_cast<double>(bn);
        std::vector<cvec> draw(static_cast<size_t>(cfg.J) * cfg.M, cvec(cfg.K, cplx{0, 0}));
        auto up_at = [&](int j, int m) {
            cvec up(cfg.K);
            const double* p = dt.data() + table_index(j, m) * 2 * cfg.K;
            for (int k = 0; k < cfg.K; ++k) up[k] = {p[2 * k], p[2 * k + 1]};
            return up;
        };
        if (cfg.pnl_level == 3) {
            double dgamma = 0.0;
            for (int j = 0; j < cfg.J; ++j)
                for (int m = 0; m < cfg.M; ++m) {
                    cvec up = up_at(j, m);
                    const cvec& rw = raw_[table_index(j, m)];
                    for (int k = 0; k < cfg.K; ++k)
                        dgamma += up[k].real() * rw[k].real() + up[k].imag() * rw[k].imag();
                }
            const double coupling = -dgamma * l3_gamma_ / (cfg.M * l3_total_);
            for (int j = 0; j < cfg.J; ++j)
                for (int m = 0; m < cfg.M; ++m) {
                    cvec up = up_at(j, m);
                    const cvec& rw = raw_[table_index(j, m)];
                    cvec& g = draw[table_index(j, m)];
                    for (int k = 0; k < cfg.K; ++k) {
                        if (!cfg.active(k, j)) continue;
                        g[k] = l3_gamma_ * up[k] + coupling * rw[k];
                    }
                }
        } else {
            for (int j = 0; j < cfg.J; ++j)
                for (int m = 0; m < cfg.M; ++m)
                    draw[table_index(j, m)] = pnl_backward_user(raw_[table_index(j, m)], cfg, j, up_at(j, m));
        }

        // element-generator backward, one pass per (user, symbol, resource)
        if (gen_grads_.empty()) {
            gen_grads_.resize(static_cast<size_t>(cfg.J) * cfg.K);
            for (int j = 0; j < cfg.J; ++j)
                for (int k = 0; k < cfg.K; ++k)
                    if (cfg.active(k, j))
                        gen_grads_[static_cast<size_t>(j) * cfg.K + k] = GradientSet::zeros_like(enc_.gen(j, k));
        }
        for (auto& g : gen_grads_) g.zero();
        Buf2 up1(1, 2);
        for (int j = 0; j < cfg.J; ++j)
            for (int k = 0; k < cfg.K; ++k) {
                if (!cfg.active(k, j)) continue;
                GradientSet& gg = gen_grads_[static_cast<size_t>(j) * cfg.K + k];
                for (int m = 0; m < cfg.M; ++m) {
                    const cplx& g = draw[table_index(j, m)][k];
                    if (g.real() == 0.0 && g.imag() == 0.0) continue;
                    up1.at(0, 0) = g.real();
                    up1.at(0, 1) = g.imag();
                    backward_batch(enc_.gen(j, k), traces_[trace_index(j, m, k)].tr, up1, gg, nullptr);
                }
            }

        // mean over the batch, then update
        dec_g.scale(inv_bn);
        sgd_step(dec_, dec_g, eta);
        for (int j = 0; j < cfg.J; ++j)
            for (int k = 0; k < cfg.K; ++k) {
                if (!cfg.active(k, j)) continue;
                GradientSet& gg = gen_grads_[static_cast<size_t>(j) * cfg.K + k];
                gg.scale(inv_bn);
                sgd_step(enc_.gen(j, k), gg, eta);
            }
        return batch_loss;
    }

    MuEncoder enc_;
    DenseNetwork dec_;
    Dataset ds_;
    std::uint64_t seed_;
    int workers_;
    std::vector<size_t> order_;
    std::vector<cvec> raw_;   // J*M raw codewords
    std::vector<cvec> norm_;  // J*M normalized codewords
    double l3_gamma_ = 0.0;
    double l3_total_ = 0.0;
    std::vector<GenTrace> traces_;
    std::vector<GradientSet> dec_grads_;
    std::vector<GradientSet> gen_grads_;
};

// --- single-user trainer ---------------------------------------------------

// The single-user stack maps the whole concatenated one-hot vector to 2K
// outputs; power is normalized to a batch-average of J*P with gradients
// through the batch statistic. The exhaustive scale is frozen into the
// encoder when a constellation is extracted.
class SuTrainer {
  public:
    SuTrainer(SuEncoder encoder, DenseNetwork decoder, Dataset dataset, std::uint64_t seed, int workers = 1)
        : enc_(std::move(encoder)),
          dec_(std::move(decoder)),
          ds_(std::move(dataset)),
          seed_(seed),
          workers_(workers) {
        const SystemConfig& cfg = enc_.cfg;
        if (ds_.J != cfg.J || ds_.M != cfg.M) throw std::invalid_argument("trainer: dataset/config mismatch");
        if (enc_.net.input_dim() != static_cast<size_t>(cfg.M) * cfg.J ||
            enc_.net.output_dim() != 2 * static_cast<size_t>(cfg.K))
            throw std::invalid_argument("trainer: single-user encoder dimensions do not match the system");
        if (dec_.input_dim() != 2 * static_cast<size_t>(cfg.K) ||
            dec_.output_dim() != static_cast<size_t>(cfg.M) * cfg.J)
            throw std::invalid_argument("trainer: decoder dimensions do not match the system");
        dec_grads_.assign(detail::kGradChunks, GradientSet::zeros_like(dec_));
        enc_grads_.assign(detail::kGradChunks, GradientSet::zeros_like(enc_.net));
        order_.resize(ds_.size());
        for (size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    }

    const SuEncoder& encoder() const { return enc_; }
    SuEncoder& encoder() { return enc_; }
    const DenseNetwork& decoder() const { return dec_; }
    DenseNetwork& decoder() { return dec_; }

    // Mean per-user power after normalization is P by construction.
    double corruption_sigma2(double corruption_db) const {
        return enc_.cfg.P * std::pow(10.0, corruption_db / 10.0);
    }

    double train_epoch(const LossSpec& loss, double eta, double sigma2, int batch_size, int epoch) {
        const size_t n = ds_.size();
        RngStream shuffle_rng(seed_, mix_stream(detail::kStreamShuffle, static_cast<std::uint64_t>(epoch)));
        for (size_t i = 0; i < n; ++i) order_[i] = i;
        shuffle_rng.shuffle(order_);
        double loss_sum = 0.0;
        for (size_t b0 = 0; b0 < n; b0 += static_cast<size_t>(batch_size)) {
            const size_t bn = std::min(n - b0, static_cast<size_t>(batch_size));
            loss_sum += run_batch(loss, eta, sigma2, epoch, b0, bn);
        }
        double mean = loss_sum / static_cast<double>(n);
        if (!std::isfinite(mean))
            throw std::runtime_error("training aborted: non-finite loss at epoch " + std::to_string(epoch));
        return mean;
    }

    double validation_loss(const LossSpec& loss, double sigma2, int epoch) {
        const SystemConfig& cfg = enc_.cfg;
        const size_t n = ds_.size();
        // exhaustive pass doubles as the exact normalization statistic
        auto ranges = detail::chunk_ranges(n);
        std::vector<Buf2> raw(ranges.size());
        std::vector<double> power(ranges.size(), 0.0);
        detail::parallel_chunks(ranges.size(), workers_, [&](size_t c) {
            const auto [cb, ce] = ranges[c];
            Buf2 X(ce - cb, enc_.net.input_dim());
            for (size_t i = cb; i < ce; ++i) fill_onehot_row(ds_.symbols[i], X.row(i - cb));
            raw[c] = forward_batch(enc_.net, X);
            double p = 0.0;
            for (double v : raw[c].a) p += v * v;
            power[c] = p;
        });
        double total = 0.0;
        for (double p : power) total += p;
        double avg = total / static_cast<double>(n);
        if (avg < kDegeneratePower) throw std::runtime_error("su normalization: degenerate encoder state");
        const double beta = std::sqrt(cfg.J * cfg.P / avg);

        std::vector<double> partial(ranges.size(), 0.0);
        detail::parallel_chunks(ranges.size(), workers_, [&](size_t c) {
            const auto [cb, ce] = ranges[c];
            Buf2 Y = raw[c];
            const double s = std::sqrt(sigma2 / 2.0);
            for (size_t i = cb; i < ce; ++i) {
                RngStream noise(seed_, mix_stream(detail::kStreamValNoise, static_cast<std::uint64_t>(epoch), i));
                double* y = Y.row(i - cb);
                for (size_t d = 0; d < Y.cols; ++d) y[d] = beta * y[d] + s * noise.next_gaussian();
            }
            Buf2 scores = forward_batch(dec_, Y);
            double lsum = 0.0;
            for (size_t i = cb; i < ce; ++i)
                lsum += detail::sample_loss_grad(ds_.symbols[i], scores.row(i - cb), cfg.J, cfg.M,
                                                 cfg.bits_per_symbol(), loss, nullptr);
            partial[c] = lsum;
        });
        double lsum = 0.0;
        for (double p : partial) lsum += p;
        return lsum / static_cast<double>(n);
    }

    TrainingReport run_two_step(const TrainingSchedule& sched, const LossSpec& step1_loss,
                                const std::function<void(int, const TrainingReport::Row&)>& on_epoch = {}) {
        sched.validate();
        step1_loss.validate();
        TrainingReport rep;
        const LossSpec step2_loss = LossSpec::l2();
        int epoch = 0;
        auto run_phase = [&](const char* name, const LossSpec& loss, double eta, int budget, int phase_idx) {
            for (int t = 0; t < budget; ++t, ++epoch) {
                double sigma2 = corruption_sigma2(sched.corruption_db);
                TrainingReport::Row row;
                row.epoch = epoch;
                row.phase = name;
                row.train_loss = train_epoch(loss, eta, sigma2, sched.batch_size, epoch);
                row.val_loss = std::numeric_limits<double>::quiet_NaN();
                if ((epoch + 1) % sched.val_interval == 0 || t + 1 == budget)
                    row.val_loss = validation_loss(loss, sigma2, epoch);
                rep.rows.push_back(row);
                if (on_epoch) on_epoch(phase_idx, row);
            }
        };
        run_phase("1A", step1_loss, sched.eta1, sched.T1, 0);
        rep.phase1a_end = epoch;
        run_phase("1B", step1_loss, sched.eta2, sched.T2, 1);
        rep.phase1b_end = epoch;
        run_phase("2", step2_loss, sched.eta2, sched.T3, 2);
        return rep;
    }

  private:
    void fill_onehot_row(const std::vector<int>& symbols, double* row) const {
        const SystemConfig& cfg = enc_.cfg;
        for (size_t d = 0; d < static_cast<size_t>(cfg.M) * cfg.J; ++d) row[d] = 0.0;
        for (int j = 0; j < cfg.J; ++j) row[static_cast<size_t>(j) * cfg.M + symbols[j]] = 1.0;
    }

    double run_batch(const LossSpec& loss, double eta, double sigma2, int epoch, size_t b0, size_t bn) {
        const SystemConfig& cfg = enc_.cfg;
        auto ranges = detail::chunk_ranges(bn);
        const size_t out_dim = enc_.net.output_dim();

        // pass A: encoder forward, batch power statistic
        std::vector<ForwardTrace> traces(ranges.size());
        std::vector<double> power(ranges.size(), 0.0);
        detail::parallel_chunks(ranges.size(), workers_, [&](size_t c) {
            const auto [cb, ce] = ranges[c];
            Buf2 X(ce - cb, enc_.net.input_dim());
            for (size_t i = cb; i < ce; ++i) fill_onehot_row(ds_.symbols[order_[b0 + i]], X.row(i - cb));
            forward_trace(enc_.net, X, traces[c]);
            double p = 0.0;
            for (double v : traces[c].act.back().a) p += v * v;
            power[c] = p;
        });
        double total = 0.0;
        for (double p : power) total += p;
        const double T = total / static_cast<double>(bn);
        if (T < kDegeneratePower) throw std::runtime_error("su normalization: degenerate encoder state");
        const double beta = std::sqrt(cfg.J * cfg.P / T);

        // pass B: channel, decoder forward/backward, gradient at the scaled output
        for (auto& g : dec_grads_) g.zero();
        std::vector<Buf2> dscaled(ranges.size());
        std::vector<double> chunk_loss(ranges.size(), 0.0);
        std::vector<double> chunk_dbeta(ranges.size(), 0.0);
        detail::parallel_chunks(ranges.size(), workers_, [&](size_t c) {
            const auto [cb, ce] = ranges[c];
            const size_t rows = ce - cb;
            const Buf2& raw = traces[c].act.back();
            Buf2 Y(rows, out_dim);
            const double s = std::sqrt(sigma2 / 2.0);
            for (size_t i = cb; i < ce; ++i) {
                const size_t slot = b0 + i;
                RngStream noise(seed_,
                                mix_stream(detail::kStreamTrainNoise, static_cast<std::uint64_t>(epoch), slot));
                double* y = Y.row(i - cb);
                const double* r = raw.row(i - cb);
                for (size_t d = 0; d < out_dim; ++d) y[d] = beta * r[d] + s * noise.next_gaussian();
            }
            ForwardTrace dtr;
            forward_trace(dec_, Y, dtr);
            const Buf2& scores = dtr.act.back();
            Buf2 dY(rows, scores.cols);
            double lsum = 0.0;
            for (size_t i = cb; i < ce; ++i)
                lsum += detail::sample_loss_grad(ds_.symbols[order_[b0 + i]], scores.row(i - cb), cfg.J, cfg.M,
                                                 cfg.bits_per_symbol(), loss, dY.row(i - cb));
            chunk_loss[c] = lsum;
            Buf2 dX;
            backward_batch(dec_, dtr, dY, dec_grads_[c], &dX);
            dscaled[c] = dX;  // dL/d(beta * raw)
            double dbeta = 0.0;
            for (size_t i = 0; i < rows; ++i) {
                const double* dx = dX.row(i);
                const double* r = raw.row(i);
                for (size_t d = 0; d < out_dim; ++d) dbeta += dx[d] * r[d];
            }
            chunk_dbeta[c] = dbeta;
        });
        double batch_loss = 0.0, dbeta = 0.0;
        for (size_t c = 0; c < ranges.size(); ++c) {
            batch_loss += chunk_loss[c];
            dbeta += chunk_dbeta[c];
        }
        // beta = sqrt(J P / T), T = mean ||raw||^2  =>  dL/draw = beta*dL/dx + dT-path
        const double dT = dbeta * (-beta / (2.0 * T));
        const double craw = dT * 2.0 / static_cast<double>(bn);

        // pass C: encoder backward
        for (auto& g : enc_grads_) g.zero();
        detail::parallel_chunks(ranges.size(), workers_, [&](size_t c) {
            const auto [cb, ce] = ranges[c];
            const size_t rows = ce - cb;
            const Buf2& raw = traces[c].act.back();
            Buf2 up(rows, out_dim);
            for (size_t i = 0; i < rows; ++i) {
                const double* dx = dscaled[c].row(i);
                const double* r = raw.row(i);
                double* u = up.row(i);
                for (size_t d = 0; d < out_dim; ++d) u[d] = beta * dx[d] + craw * r[d];
            }
            backward_batch(enc_.net, traces[c], up, enc_grads_[c], nullptr);
        });

        GradientSet& dg = dec_grads_[0];
        for (size_t c = 1; c < ranges.size(); ++c) dg.add(dec_grads_[c]);
        GradientSet& eg = enc_grads_[0];
        for (size_t c = 1; c < ranges.size(); ++c) eg.add(enc_grads_[c]);
        const double inv_bn = 1.0 / static_cast<double>(bn);
        dg.scale(inv_bn);
        eg.scale(inv_bn);
        sgd_step(dec_, dg, eta);
        sgd_step(enc_.net, eg, eta);
        return batch_loss;
    }

    SuEncoder enc_;
    DenseNetwork dec_;
    Dataset ds_;
    std::uint64_t seed_;
    int workers_;
    std::vector<size_t> order_;
    std::vector<GradientSet> dec_grads_;
    std::vector<GradientSet> enc_grads_;
};

}  // namespace mdm
