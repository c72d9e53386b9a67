// Dense feedforward network core: forward evaluation, exact reverse-mode
// gradients, plain SGD updates, fan-in scaled initialization and a lossless
// text serialization. Everything else in the toolkit builds on this.
//
// Kernels are batched (rows = samples) with fixed accumulation order, so
// results are bit-identical between the single-sample and batched paths and
// independent of how callers chunk a batch.
#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "common.hpp"
#include "rng.hpp"

namespace mdm {

enum class Activation { Tanh, Identity };

inline const char* activation_name(Activation a) { return a == Activation::Tanh ? "tanh" : "identity"; }

inline Activation activation_from_name(const std::string& s) {
    if (s == "tanh") return Activation::Tanh;
    if (s == "identity") return Activation::Identity;
    throw std::invalid_argument("unknown activation: " + s);
}

// Row-major 2-D buffer; rows are samples in batched calls.
struct Buf2 {
    size_t rows = 0;
    size_t cols = 0;
    std::vector<double> a;

    Buf2() = default;
    Buf2(size_t r, size_t c) : rows(r), cols(c), a(r * c, 0.0) {}
    double* row(size_t r) { return a.data() + r * cols; }
    const double* row(size_t r) const { return a.data() + r * cols; }
    double& at(size_t r, size_t c) { return a[r * cols + c]; }
    double at(size_t r, size_t c) const { return a[r * cols + c]; }
    void fill(double v) { a.assign(a.size(), v); }
};

struct Layer {
    size_t in = 0;
    size_t out = 0;
    Activation act = Activation::Tanh;
    std::vector<double> w;   // out x in, row-major; the canonical parameters
    std::vector<double> wt;  // in x out transpose, kept in sync for the forward kernel
    std::vector<double> b;   // out

    void sync_transpose() {
        wt.assign(in * out, 0.0);
        for (size_t o = 0; o < out; ++o)
            for (size_t k = 0; k < in; ++k) wt[k * out + o] = w[o * in + k];
    }
};

struct DenseNetwork {
    std::vector<Layer> layers;

    size_t input_dim() const { return layers.empty() ? 0 : layers.front().in; }
    size_t output_dim() const { return layers.empty() ? 0 : layers.back().out; }

    void validate() const {
        if (layers.empty()) throw std::invalid_argument("network has no layers");
        for (size_t l = 0; l < layers.size(); ++l) {
            const Layer& L = layers[l];
            if (L.in == 0 || L.out == 0) throw std::invalid_argument("layer with zero dimension");
            if (L.w.size() != L.in * L.out || L.b.size() != L.out)
                throw std::invalid_argument("layer parameter shape mismatch");
            if (l + 1 < layers.size() && layers[l + 1].in != L.out)
                throw std::invalid_argument("adjacent layer dimensions do not chain");
            if (!all_finite(L.w) || !all_finite(L.b)) throw std::invalid_argument("non-finite network parameter");
        }
    }

    size_t parameter_count() const {
        size_t n = 0;
        for (const Layer& L : layers) n += L.w.size() + L.b.size();
        return n;
    }
};

struct GradientSet {
    struct LayerGrad {
        std::vector<double> dw;
        std::vector<double> db;
    };
    std::vector<LayerGrad> layers;

    static GradientSet zeros_like(const DenseNetwork& net) {
        GradientSet g;
        g.layers.resize(net.layers.size());
        for (size_t l = 0; l < net.layers.size(); ++l) {
            g.layers[l].dw.assign(net.layers[l].w.size(), 0.0);
            g.layers[l].db.assign(net.layers[l].b.size(), 0.0);
        }
        return g;
    }

    void zero() {
        for (auto& L : layers) {
            L.dw.assign(L.dw.size(), 0.0);
            L.db.assign(L.db.size(), 0.0);
        }
    }

    void add(const GradientSet& o) {
        for (size_t l = 0; l < layers.size(); ++l) {
            for (size_t i = 0; i < layers[l].dw.size(); ++i) layers[l].dw[i] += o.layers[l].dw[i];
            for (size_t i = 0; i < layers[l].db.size(); ++i) layers[l].db[i] += o.layers[l].db[i];
        }
    }

    void scale(double s) {
        for (auto& L : layers) {
            for (double& x : L.dw) x *= s;
            for (double& x : L.db) x *= s;
        }
    }

    bool is_finite() const {
        for (const auto& L : layers)
            if (!all_finite(L.dw) || !all_finite(L.db)) return false;
        return true;
    }
};

// Weights uniform on +-sqrt(3/fan_in) (std = 1/sqrt(fan_in)), biases zero.
// Deterministic for a given stream.
inline DenseNetwork init_network(const std::vector<size_t>& sizes, const std::vector<Activation>& acts,
                                 RngStream rng) {
    if (sizes.size() < 2) throw std::invalid_argument("init_network: need at least input and output sizes");
    if (acts.size() != sizes.size() - 1) throw std::invalid_argument("init_network: one activation per layer required");
    for (size_t s : sizes)
        if (s == 0) throw std::invalid_argument("init_network: zero layer size");
    DenseNetwork net;
    net.layers.resize(sizes.size() - 1);
    for (size_t l = 0; l < net.layers.size(); ++l) {
        Layer& L = net.layers[l];
        L.in = sizes[l];
        L.out = sizes[l + 1];
        L.act = acts[l];
        double a = std::sqrt(3.0 / static_cast<double>(L.in));
        L.w.resize(L.in * L.out);
        for (double& x : L.w) x = rng.next_uniform(-a, a);
        L.b.assign(L.out, 0.0);
        L.sync_transpose();
    }
    return net;
}

// Stack with `hidden_layers` tanh hidden layers of `width` nodes and an
// identity output layer.
inline DenseNetwork make_mlp(size_t input, size_t width, size_t hidden_layers, size_t output, RngStream rng) {
    std::vector<size_t> sizes{input};
    for (size_t l = 0; l < hidden_layers; ++l) sizes.push_back(width);
    sizes.push_back(output);
    std::vector<Activation> acts(sizes.size() - 1, Activation::Tanh);
    acts.back() = Activation::Identity;
    return init_network(sizes, acts, rng);
}

// Forward activations for a batch; act[0] is the input, act[L] the output.
struct ForwardTrace {
    std::vector<Buf2> act;
};

namespace detail {

// y[:] += c * v[:], the one hot loop everything reduces to.
inline void axpy(double c, const double* __restrict__ v, double* __restrict__ y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] += c * v[i];
}

// Four independent accumulator rows sharing one pass over v. Statement order
// keeps each row's accumulation sequence identical to the untiled loop.
inline void axpy4(double c0, double c1, double c2, double c3, const double* __restrict__ v,
                  double* __restrict__ y0, double* __restrict__ y1, double* __restrict__ y2,
                  double* __restrict__ y3, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        const double vi = v[i];
        y0[i] += c0 * vi;
        y1[i] += c1 * vi;
        y2[i] += c2 * vi;
        y3[i] += c3 * vi;
    }
}

// Y = act(X * W^T + b) for one layer; inner loops contiguous, k-order fixed,
// sample rows tiled by four for weight-matrix reuse.
inline void layer_forward(const Layer& L, const Buf2& X, Buf2& Y) {
    Y.rows = X.rows;
    Y.cols = L.out;
    Y.a.resize(Y.rows * Y.cols);
    size_t s = 0;
    for (; s + 4 <= X.rows; s += 4) {
        double* y0 = Y.row(s);
        double* y1 = Y.row(s + 1);
        double* y2 = Y.row(s + 2);
        double* y3 = Y.row(s + 3);
        for (size_t o = 0; o < L.out; ++o) y0[o] = y1[o] = y2[o] = y3[o] = L.b[o];
        const double* x0 = X.row(s);
        const double* x1 = X.row(s + 1);
        const double* x2 = X.row(s + 2);
        const double* x3 = X.row(s + 3);
        for (size_t k = 0; k < L.in; ++k)
            axpy4(x0[k], x1[k], x2[k], x3[k], L.wt.data() + k * L.out, y0, y1, y2, y3, L.out);
    }
    for (; s < X.rows; ++s) {
        double* y = Y.row(s);
        const double* x = X.row(s);
        for (size_t o = 0; o < L.out; ++o) y[o] = L.b[o];
        for (size_t k = 0; k < L.in; ++k) axpy(x[k], L.wt.data() + k * L.out, y, L.out);
    }
    if (L.act == Activation::Tanh)
        for (double& v : Y.a) v = std::tanh(v);
}

}  // namespace detail

inline void forward_trace(const DenseNetwork& net, const Buf2& X, ForwardTrace& tr) {
    if (X.cols != net.input_dim()) throw std::invalid_argument("forward: input dimension mismatch");
    tr.act.resize(net.layers.size() + 1);
    tr.act[0] = X;
    for (size_t l = 0; l < net.layers.size(); ++l) detail::layer_forward(net.layers[l], tr.act[l], tr.act[l + 1]);
}

inline Buf2 forward_batch(const DenseNetwork& net, const Buf2& X) {
    if (X.cols != net.input_dim()) throw std::invalid_argument("forward: input dimension mismatch");
    Buf2 cur = X, nxt;
    for (const Layer& L : net.layers) {
        detail::layer_forward(L, cur, nxt);
        std::swap(cur, nxt);
    }
    return cur;
}

inline std::vector<double> forward(const DenseNetwork& net, const std::vector<double>& x) {
    Buf2 X(1, x.size());
    X.a = x;
    return forward_batch(net, X).a;
}

// Reverse-mode gradients of sum_s <dY[s], output[s]> w.r.t. parameters and
// inputs. Gradients accumulate into `grads`; dX may be null when the input
// gradient is not needed.
inline void backward_batch(const DenseNetwork& net, const ForwardTrace& tr, const Buf2& dY, GradientSet& grads,
                           Buf2* dX) {
    if (dY.cols != net.output_dim() || dY.rows != tr.act[0].rows)
        throw std::invalid_argument("backward: upstream gradient shape mismatch");
    const size_t B = dY.rows;
    Buf2 dcur = dY, dprev;
    for (size_t l = net.layers.size(); l-- > 0;) {
        const Layer& L = net.layers[l];
        const Buf2& post = tr.act[l + 1];
        const Buf2& input = tr.act[l];
        // through the activation
        if (L.act == Activation::Tanh) {
            for (size_t i = 0; i < dcur.a.size(); ++i) dcur.a[i] *= 1.0 - post.a[i] * post.a[i];
        }
        GradientSet::LayerGrad& G = grads.layers[l];
        for (size_t s = 0; s < B; ++s) {
            const double* d = dcur.row(s);
            const double* x = input.row(s);
            size_t o = 0;
            for (; o + 4 <= L.out; o += 4) {
                G.db[o] += d[o];
                G.db[o + 1] += d[o + 1];
                G.db[o + 2] += d[o + 2];
                G.db[o + 3] += d[o + 3];
                double* dw = G.dw.data() + o * L.in;
                detail::axpy4(d[o], d[o + 1], d[o + 2], d[o + 3], x, dw, dw + L.in, dw + 2 * L.in,
                              dw + 3 * L.in, L.in);
            }
            for (; o < L.out; ++o) {
                G.db[o] += d[o];
                detail::axpy(d[o], x, G.dw.data() + o * L.in, L.in);
            }
        }
        const bool need_dx = l > 0 || dX != nullptr;
        if (need_dx) {
            dprev.rows = B;
            dprev.cols = L.in;
            dprev.a.assign(B * L.in, 0.0);
            size_t s = 0;
            for (; s + 4 <= B; s += 4) {
                const double* d0 = dcur.row(s);
                const double* d1 = dcur.row(s + 1);
                const double* d2 = dcur.row(s + 2);
                const double* d3 = dcur.row(s + 3);
                for (size_t o = 0; o < L.out; ++o)
                    detail::axpy4(d0[o], d1[o], d2[o], d3[o], L.w.data() + o * L.in, dprev.row(s),
                                  dprev.row(s + 1), dprev.row(s + 2), dprev.row(s + 3), L.in);
            }
            for (; s < B; ++s) {
                const double* d = dcur.row(s);
                double* dx = dprev.row(s);
                for (size_t o = 0; o < L.out; ++o) detail::axpy(d[o], L.w.data() + o * L.in, dx, L.in);
            }
        }
        std::swap(dcur, dprev);
    }
    if (dX != nullptr) *dX = dcur;
}

// Single-input convenience form; recomputes the forward activations.
inline std::pair<GradientSet, std::vector<double>> backward(const DenseNetwork& net, const std::vector<double>& x,
                                                            const std::vector<double>& upstream) {
    if (upstream.size() != net.output_dim()) throw std::invalid_argument("backward: upstream length mismatch");
    Buf2 X(1, x.size());
    X.a = x;
    ForwardTrace tr;
    forward_trace(net, X, tr);
    Buf2 dY(1, upstream.size());
    dY.a = upstream;
    GradientSet g = GradientSet::zeros_like(net);
    Buf2 dX;
    backward_batch(net, tr, dY, g, &dX);
    return {std::move(g), std::move(dX.a)};
}

// theta <- theta - eta * grad. Refuses non-finite gradients before touching
// any parameter.
inline void sgd_step(DenseNetwork& net, const GradientSet& grads, double eta) {
    if (!(eta >= 0.0) || !std::isfinite(eta)) throw std::invalid_argument("sgd_step: bad learning rate");
    if (grads.layers.size() != net.layers.size()) throw std::invalid_argument("sgd_step: gradient shape mismatch");
    for (size_t l = 0; l < net.layers.size(); ++l) {
        if (grads.layers[l].dw.size() != net.layers[l].w.size() ||
            grads.layers[l].db.size() != net.layers[l].b.size())
            throw std::invalid_argument("sgd_step: gradient shape mismatch");
    }
    if (!grads.is_finite()) throw std::runtime_error("sgd_step: non-finite gradient entries, step refused");
    for (size_t l = 0; l < net.layers.size(); ++l) {
        Layer& L = net.layers[l];
        const auto& G = grads.layers[l];
        for (size_t i = 0; i < L.w.size(); ++i) L.w[i] -= eta * G.dw[i];
        for (size_t i = 0; i < L.b.size(); ++i) L.b[i] -= eta * G.db[i];
        L.sync_transpose();
    }
}

// --- serialization ------------------------------------------------------
//
//   mdm-network 1
//   layers <L> input <d0>
//   layer <out> <in> <activation>
//   w <in values per row, out rows>
//   b <out values>

inline void write_network(std::ostream& os, const DenseNetwork& net) {
    os << "mdm-network 1\n";
    os << "layers " << net.layers.size() << " input " << net.input_dim() << "\n";
    for (const Layer& L : net.layers) {
        os << "layer " << L.out << " " << L.in << " " << activation_name(L.act) << "\n";
        for (size_t o = 0; o < L.out; ++o) {
            os << "w";
            for (size_t k = 0; k < L.in; ++k) os << " " << format_double(L.w[o * L.in + k]);
            os << "\n";
        }
        os << "b";
        for (size_t o = 0; o < L.out; ++o) os << " " << format_double(L.b[o]);
        os << "\n";
    }
}

inline void save_network(const std::string& path, const DenseNetwork& net) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    write_network(f, net);
}

inline DenseNetwork read_network(std::istream& is) {
    std::string tag;
    int version = 0;
    if (!(is >> tag >> version) || tag != "mdm-network" || version != 1)
        throw std::runtime_error("not a network file");
    std::string kw;
    size_t nlayers = 0, input = 0;
    is >> kw >> nlayers;
    if (kw != "layers") throw std::runtime_error("network file: expected 'layers'");
    is >> kw >> input;
    if (kw != "input") throw std::runtime_error("network file: expected 'input'");
    DenseNetwork net;
    net.layers.resize(nlayers);
    for (size_t l = 0; l < nlayers; ++l) {
        Layer& L = net.layers[l];
        std::string act;
        is >> kw >> L.out >> L.in >> act;
        if (kw != "layer") throw std::runtime_error("network file: expected 'layer'");
        L.act = activation_from_name(act);
        L.w.resize(L.in * L.out);
        for (size_t o = 0; o < L.out; ++o) {
            is >> kw;
            if (kw != "w") throw std::runtime_error("network file: expected 'w'");
            for (size_t k = 0; k < L.in; ++k) is >> L.w[o * L.in + k];
        }
        is >> kw;
        if (kw != "b") throw std::runtime_error("network file: expected 'b'");
        L.b.resize(L.out);
        for (size_t o = 0; o < L.out; ++o) is >> L.b[o];
        if (!is) throw std::runtime_error("network file: truncated");
        L.sync_transpose();
    }
    net.validate();
    if (net.input_dim() != input) throw std::runtime_error("network file: input dim mismatch");
    return net;
}

inline DenseNetwork load_network(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open network file: " + path);
    return read_network(f);
}

}  // namespace mdm
