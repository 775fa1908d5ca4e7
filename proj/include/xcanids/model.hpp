#pragma once

// Autoencoder families over feature windows, written directly against the
// math: dense stacks flatten the whole w-by-x window, recurrent stacks run
// (bidirectional) LSTM encoders to a latent state, repeat it w times and
// decode back through LSTM layers into a time-distributed sigmoid head.
// Everything is double precision internally; saved weights are f32.
//
// Batched sequence tensors are time-major [T, B, D] inside the recurrent
// path so that every timestep works on contiguous memory. The public
// interface is batch-major [B, w*x], matching the window dumps.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "xcanids/container.hpp"
#include "xcanids/error.hpp"
#include "xcanids/pipeline.hpp"

namespace xcanids {

enum class ModelFamily : std::uint8_t { dense = 0, lstm = 1, bilstm = 2 };

inline const char* to_string(ModelFamily f) {
    switch (f) {
        case ModelFamily::dense: return "dense";
        case ModelFamily::lstm: return "lstm";
        case ModelFamily::bilstm: return "bilstm";
    }
    return "?";
}

inline ModelFamily model_family_from(std::string_view s) {
    if (s == "dense") return ModelFamily::dense;
    if (s == "lstm") return ModelFamily::lstm;
    if (s == "bilstm") return ModelFamily::bilstm;
    throw DataError("unknown model family '" + std::string(s) + "'");
}

struct ModelConfig {
    ModelFamily family = ModelFamily::dense;
    std::vector<int> encoder_widths;  // sequence outputs before the latent layer
    int latent = 16;
    std::vector<int> decoder_widths;
    int window = 0;   // w
    int signals = 0;  // x
    double learning_rate = 1e-4;
    int max_epochs = 100;
    int patience = 50;
    int batch_size = 64;
    std::uint64_t seed = 42;
};

// A parameter with its gradient and optimizer state.
struct Tensor {
    std::string name;
    std::vector<std::uint64_t> dims;
    std::vector<double> value, grad;
    std::vector<double> m, v;  // Adam moments

    void resize(std::string tensor_name, std::vector<std::uint64_t> d) {
        name = std::move(tensor_name);
        dims = std::move(d);
        std::size_t n = 1;
        for (auto x : dims) n *= static_cast<std::size_t>(x);
        value.assign(n, 0.0);
        grad.assign(n, 0.0);
    }

    std::size_t size() const { return value.size(); }

    void glorot_init(std::mt19937_64& rng, std::size_t fan_in, std::size_t fan_out) {
        double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        std::uniform_real_distribution<double> u(-limit, limit);
        for (auto& w : value) w = u(rng);
    }
};

namespace nn {

// C[B,out] = A[B,in] * W[out,in]^T (+ bias when given)
inline void matmul_nt(const double* A, const double* W, const double* bias, double* C, int B,
                      int in, int out) {
    for (int b = 0; b < B; ++b) {
        const double* a = A + static_cast<std::size_t>(b) * in;
        double* c = C + static_cast<std::size_t>(b) * out;
        for (int o = 0; o < out; ++o) {
            const double* w = W + static_cast<std::size_t>(o) * in;
            double acc = bias ? bias[o] : 0.0;
            for (int i = 0; i < in; ++i) acc += a[i] * w[i];
            c[o] = acc;
        }
    }
}

// C[B,in] += A[B,out] * W[out,in]
inline void matmul_nn_acc(const double* A, const double* W, double* C, int B, int out, int in) {
    for (int b = 0; b < B; ++b) {
        const double* a = A + static_cast<std::size_t>(b) * out;
        double* c = C + static_cast<std::size_t>(b) * in;
        for (int o = 0; o < out; ++o) {
            double s = a[o];
            if (s == 0.0) continue;
            const double* w = W + static_cast<std::size_t>(o) * in;
            for (int i = 0; i < in; ++i) c[i] += s * w[i];
        }
    }
}

// dW[out,in] += dY[B,out]^T * X[B,in]; db[out] += column sums of dY
inline void acc_grads(const double* dY, const double* X, double* dW, double* db, int B, int out,
                      int in) {
    for (int b = 0; b < B; ++b) {
        const double* dy = dY + static_cast<std::size_t>(b) * out;
        const double* x = X + static_cast<std::size_t>(b) * in;
        for (int o = 0; o < out; ++o) {
            double s = dy[o];
            if (db) db[o] += s;
            if (s == 0.0) continue;
            double* w = dW + static_cast<std::size_t>(o) * in;
            for (int i = 0; i < in; ++i) w[i] += s * x[i];
        }
    }
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace nn

enum class Activation : std::uint8_t { linear, relu, sigmoid };

struct DenseLayer {
    int in = 0, out = 0;
    Activation act = Activation::linear;
    Tensor W, b;
    int B = 0;
    std::vector<double> x_cache, y;

    void build(const std::string& prefix, int in_, int out_, Activation act_,
               std::mt19937_64& rng) {
        in = in_;
        out = out_;
        act = act_;
        W.resize(prefix + ".W", {static_cast<std::uint64_t>(out), static_cast<std::uint64_t>(in)});
        b.resize(prefix + ".b", {static_cast<std::uint64_t>(out)});
        W.glorot_init(rng, in, out);
    }

    const std::vector<double>& forward(const double* X, int B_) {
        B = B_;
        std::size_t nin = static_cast<std::size_t>(B) * in;
        x_cache.assign(X, X + nin);
        y.resize(static_cast<std::size_t>(B) * out);
        nn::matmul_nt(X, W.value.data(), b.value.data(), y.data(), B, in, out);
        switch (act) {
            case Activation::linear: break;
            case Activation::relu:
                for (auto& v : y) v = v > 0 ? v : 0.0;
                break;
            case Activation::sigmoid:
                for (auto& v : y) v = nn::sigmoid(v);
                break;
        }
        return y;
    }

    // dY has shape [B,out]; writes dX [B,in].
    void backward(const double* dY, double* dX) {
        std::size_t n = static_cast<std::size_t>(B) * out;
        dz_.resize(n);
        for (std::size_t k = 0; k < n; ++k) {
            double g = dY[k];
            switch (act) {
                case Activation::linear: break;
                case Activation::relu: g = y[k] > 0 ? g : 0.0; break;
                case Activation::sigmoid: g *= y[k] * (1.0 - y[k]); break;
            }
            dz_[k] = g;
        }
        nn::acc_grads(dz_.data(), x_cache.data(), W.grad.data(), b.grad.data(), B, out, in);
        std::fill(dX, dX + static_cast<std::size_t>(B) * in, 0.0);
        nn::matmul_nn_acc(dz_.data(), W.value.data(), dX, B, out, in);
    }

private:
    std::vector<double> dz_;
};

// One LSTM direction. Gate order in the stacked tensors is i, f, g, o; the
// forget-gate bias block starts at 1.0. Outputs stay aligned to input
// positions; `reverse` only changes the processing order.
struct LstmLayer {
    int in = 0, hidden = 0;
    bool reverse = false;
    Tensor Wx, Wh, b;
    int T = 0, B = 0;
    std::vector<double> h;  // [T,B,H]

    void build(const std::string& prefix, int in_, int hidden_, bool reverse_,
               std::mt19937_64& rng) {
        in = in_;
        hidden = hidden_;
        reverse = reverse_;
        Wx.resize(prefix + ".Wx",
                  {static_cast<std::uint64_t>(4 * hidden), static_cast<std::uint64_t>(in)});
        Wh.resize(prefix + ".Wh",
                  {static_cast<std::uint64_t>(4 * hidden), static_cast<std::uint64_t>(hidden)});
        b.resize(prefix + ".b", {static_cast<std::uint64_t>(4 * hidden)});
        Wx.glorot_init(rng, in, 4 * hidden);
        Wh.glorot_init(rng, hidden, 4 * hidden);
        for (int k = hidden; k < 2 * hidden; ++k) b.value[k] = 1.0;
    }

    // X: [T,B,in] time-major. Returns h: [T,B,H].
    const std::vector<double>& forward(const double* X, int T_, int B_) {
        T = T_;
        B = B_;
        const std::size_t bh = static_cast<std::size_t>(B) * hidden;
        const std::size_t b4h = 4 * bh;
        const std::size_t bin = static_cast<std::size_t>(B) * in;
        x_cache.assign(X, X + static_cast<std::size_t>(T) * bin);
        gates.resize(static_cast<std::size_t>(T) * b4h);
        c.resize(static_cast<std::size_t>(T) * bh);
        tanh_c.resize(static_cast<std::size_t>(T) * bh);
        h.resize(static_cast<std::size_t>(T) * bh);
        zeros_.assign(bh, 0.0);

        for (int k = 0; k < T; ++k) {
            int t = reverse ? T - 1 - k : k;
            int tp = reverse ? t + 1 : t - 1;
            const double* prev_h = k == 0 ? zeros_.data() : h.data() + tp * bh;
            const double* prev_c = k == 0 ? zeros_.data() : c.data() + tp * bh;
            double* z = gates.data() + t * b4h;
            nn::matmul_nt(X + t * bin, Wx.value.data(), b.value.data(), z, B, in, 4 * hidden);
            zh_.resize(b4h);
            nn::matmul_nt(prev_h, Wh.value.data(), nullptr, zh_.data(), B, hidden, 4 * hidden);
            for (std::size_t q = 0; q < b4h; ++q) z[q] += zh_[q];
            for (int bb = 0; bb < B; ++bb) {
                double* zi = z + static_cast<std::size_t>(bb) * 4 * hidden;
                double* ct = c.data() + t * bh + static_cast<std::size_t>(bb) * hidden;
                double* tc = tanh_c.data() + t * bh + static_cast<std::size_t>(bb) * hidden;
                double* ht = h.data() + t * bh + static_cast<std::size_t>(bb) * hidden;
                const double* pc = prev_c + static_cast<std::size_t>(bb) * hidden;
                for (int u = 0; u < hidden; ++u) {
                    double gi = nn::sigmoid(zi[u]);
                    double gf = nn::sigmoid(zi[hidden + u]);
                    double gg = std::tanh(zi[2 * hidden + u]);
                    double go = nn::sigmoid(zi[3 * hidden + u]);
                    zi[u] = gi;
                    zi[hidden + u] = gf;
                    zi[2 * hidden + u] = gg;
                    zi[3 * hidden + u] = go;
                    ct[u] = gf * pc[u] + gi * gg;
                    tc[u] = std::tanh(ct[u]);
                    ht[u] = go * tc[u];
                }
            }
        }
        return h;
    }

    // dH: [T,B,H] gradients on the outputs; writes dX [T,B,in].
    void backward(const double* dH, double* dX) {
        const std::size_t bh = static_cast<std::size_t>(B) * hidden;
        const std::size_t b4h = 4 * bh;
        const std::size_t bin = static_cast<std::size_t>(B) * in;
        dh_carry_.assign(bh, 0.0);
        dc_carry_.assign(bh, 0.0);
        dz_.resize(b4h);

        for (int k = T - 1; k >= 0; --k) {
            int t = reverse ? T - 1 - k : k;
            int tp = reverse ? t + 1 : t - 1;
            const double* prev_h = k == 0 ? zeros_.data() : h.data() + tp * bh;
            const double* prev_c = k == 0 ? zeros_.data() : c.data() + tp * bh;
            const double* z = gates.data() + t * b4h;
            for (int bb = 0; bb < B; ++bb) {
                const double* zi = z + static_cast<std::size_t>(bb) * 4 * hidden;
                const double* tc = tanh_c.data() + t * bh + static_cast<std::size_t>(bb) * hidden;
                const double* pc = prev_c + static_cast<std::size_t>(bb) * hidden;
                const double* dht = dH + t * bh + static_cast<std::size_t>(bb) * hidden;
                double* dhc = dh_carry_.data() + static_cast<std::size_t>(bb) * hidden;
                double* dcc = dc_carry_.data() + static_cast<std::size_t>(bb) * hidden;
                double* dzi = dz_.data() + static_cast<std::size_t>(bb) * 4 * hidden;
                for (int u = 0; u < hidden; ++u) {
                    double gi = zi[u], gf = zi[hidden + u], gg = zi[2 * hidden + u],
                           go = zi[3 * hidden + u];
                    double dh_total = dht[u] + dhc[u];
                    double dgo = dh_total * tc[u];
                    double dc = dcc[u] + dh_total * go * (1.0 - tc[u] * tc[u]);
                    double dgf = dc * pc[u];
                    double dgi = dc * gg;
                    double dgg = dc * gi;
                    dzi[u] = dgi * gi * (1.0 - gi);
                    dzi[hidden + u] = dgf * gf * (1.0 - gf);
                    dzi[2 * hidden + u] = dgg * (1.0 - gg * gg);
                    dzi[3 * hidden + u] = dgo * go * (1.0 - go);
                    dcc[u] = dc * gf;
                }
            }
            nn::acc_grads(dz_.data(), x_cache.data() + t * bin, Wx.grad.data(), b.grad.data(), B,
                          4 * hidden, in);
            nn::acc_grads(dz_.data(), prev_h, Wh.grad.data(), nullptr, B, 4 * hidden, hidden);
            double* dxt = dX + t * bin;
            std::fill(dxt, dxt + bin, 0.0);
            nn::matmul_nn_acc(dz_.data(), Wx.value.data(), dxt, B, 4 * hidden, in);
            std::fill(dh_carry_.begin(), dh_carry_.end(), 0.0);
            nn::matmul_nn_acc(dz_.data(), Wh.value.data(), dh_carry_.data(), B, 4 * hidden, hidden);
        }
    }

private:
    std::vector<double> x_cache, gates, c, tanh_c;
    std::vector<double> zeros_, zh_, dz_, dh_carry_, dc_carry_;
};

// A recurrent block: one LSTM, or a forward/backward pair with concatenated
// outputs when bidirectional.
struct Recurrent {
    bool bidir = false;
    LstmLayer fwd, rev;
    std::vector<double> out;  // used only when bidirectional

    int out_dim() const { return bidir ? 2 * fwd.hidden : fwd.hidden; }
    int in_dim() const { return fwd.in; }

    void build(const std::string& prefix, int in, int width, bool bidir_, std::mt19937_64& rng) {
        bidir = bidir_;
        if (bidir) {
            if (width % 2 != 0) throw DataError("bidirectional width must be even");
            fwd.build(prefix + ".fwd", in, width / 2, false, rng);
            rev.build(prefix + ".rev", in, width / 2, true, rng);
        } else {
            fwd.build(prefix, in, width, false, rng);
        }
    }

    const std::vector<double>& forward(const double* X, int T, int B) {
        const auto& hf = fwd.forward(X, T, B);
        if (!bidir) return hf;
        const auto& hr = rev.forward(X, T, B);
        int H = fwd.hidden;
        out.resize(static_cast<std::size_t>(T) * B * 2 * H);
        for (int t = 0; t < T; ++t)
            for (int b = 0; b < B; ++b) {
                double* dst = out.data() + ((static_cast<std::size_t>(t) * B) + b) * 2 * H;
                const double* sf = hf.data() + ((static_cast<std::size_t>(t) * B) + b) * H;
                const double* sr = hr.data() + ((static_cast<std::size_t>(t) * B) + b) * H;
                std::copy(sf, sf + H, dst);
                std::copy(sr, sr + H, dst + H);
            }
        return out;
    }

    void backward(const double* dOut, double* dX, int T, int B) {
        if (!bidir) {
            fwd.backward(dOut, dX);
            return;
        }
        int H = fwd.hidden;
        df_.resize(static_cast<std::size_t>(T) * B * H);
        dr_.resize(static_cast<std::size_t>(T) * B * H);
        for (int t = 0; t < T; ++t)
            for (int b = 0; b < B; ++b) {
                const double* src = dOut + ((static_cast<std::size_t>(t) * B) + b) * 2 * H;
                std::copy(src, src + H, df_.data() + ((static_cast<std::size_t>(t) * B) + b) * H);
                std::copy(src + H, src + 2 * H,
                          dr_.data() + ((static_cast<std::size_t>(t) * B) + b) * H);
            }
        std::size_t n = static_cast<std::size_t>(T) * B * fwd.in;
        dxr_.resize(n);
        fwd.backward(df_.data(), dX);
        rev.backward(dr_.data(), dxr_.data());
        for (std::size_t k = 0; k < n; ++k) dX[k] += dxr_[k];
    }

    // Copies the final state (position T-1 forward, position 0 backward)
    // into latent [B, out_dim].
    void gather_final(double* latent, int T, int B) const {
        int H = fwd.hidden;
        const std::size_t bh = static_cast<std::size_t>(B) * H;
        for (int b = 0; b < B; ++b) {
            const double* hf = fwd.h.data() + (T - 1) * bh + static_cast<std::size_t>(b) * H;
            std::copy(hf, hf + H, latent + static_cast<std::size_t>(b) * out_dim());
            if (bidir) {
                const double* hr = rev.h.data() + static_cast<std::size_t>(b) * H;
                std::copy(hr, hr + H, latent + static_cast<std::size_t>(b) * out_dim() + H);
            }
        }
    }

    // Adds the latent gradient into the sequence gradient at the final-state
    // positions.
    void scatter_final(const double* dLatent, double* dSeq, int T, int B) const {
        int H = fwd.hidden;
        int O = out_dim();
        const std::size_t bo = static_cast<std::size_t>(B) * O;
        for (int b = 0; b < B; ++b) {
            const double* src = dLatent + static_cast<std::size_t>(b) * O;
            double* df = dSeq + (static_cast<std::size_t>(T) - 1) * bo +
                         static_cast<std::size_t>(b) * O;
            for (int u = 0; u < H; ++u) df[u] += src[u];
            if (bidir) {
                double* dr = dSeq + static_cast<std::size_t>(b) * O + H;
                for (int u = 0; u < H; ++u) dr[u] += src[H + u];
            }
        }
    }

    std::vector<Tensor*> tensors() {
        std::vector<Tensor*> out_t{&fwd.Wx, &fwd.Wh, &fwd.b};
        if (bidir) {
            out_t.push_back(&rev.Wx);
            out_t.push_back(&rev.Wh);
            out_t.push_back(&rev.b);
        }
        return out_t;
    }

private:
    std::vector<double> df_, dr_, dxr_;
};

class Autoencoder {
public:
    explicit Autoencoder(const ModelConfig& cfg) : cfg_(cfg) {
        if (cfg_.window <= 0 || cfg_.signals <= 0)
            throw DataError("model needs positive window and signal dimensions");
        const int F = cfg_.window * cfg_.signals;
        if (cfg_.latent <= 0 || cfg_.latent >= F)
            throw DataError("latent dimension must be positive and below w*x");
        for (int wdt : cfg_.encoder_widths)
            if (wdt <= 0) throw DataError("encoder widths must be positive");
        for (int wdt : cfg_.decoder_widths)
            if (wdt <= 0) throw DataError("decoder widths must be positive");
        std::mt19937_64 rng(cfg_.seed);

        if (cfg_.family == ModelFamily::dense) {
            int prev = F;
            int idx = 0;
            for (int wdt : cfg_.encoder_widths) {
                dense_.emplace_back();
                dense_.back().build("enc" + std::to_string(idx++), prev, wdt, Activation::relu, rng);
                prev = wdt;
            }
            dense_.emplace_back();
            dense_.back().build("latent", prev, cfg_.latent, Activation::relu, rng);
            prev = cfg_.latent;
            idx = 0;
            for (int wdt : cfg_.decoder_widths) {
                dense_.emplace_back();
                dense_.back().build("dec" + std::to_string(idx++), prev, wdt, Activation::relu, rng);
                prev = wdt;
            }
            dense_.emplace_back();
            dense_.back().build("out", prev, F, Activation::sigmoid, rng);
        } else {
            bool bidir = cfg_.family == ModelFamily::bilstm;
            int prev = cfg_.signals;
            int idx = 0;
            for (int wdt : cfg_.encoder_widths) {
                enc_.emplace_back();
                enc_.back().build("enc" + std::to_string(idx++), prev, wdt, bidir, rng);
                prev = wdt;
            }
            enc_.emplace_back();
            enc_.back().build("enc" + std::to_string(idx), prev, cfg_.latent, bidir, rng);
            prev = cfg_.latent;
            idx = 0;
            for (int wdt : cfg_.decoder_widths) {
                dec_.emplace_back();
                dec_.back().build("dec" + std::to_string(idx++), prev, wdt, bidir, rng);
                prev = wdt;
            }
            head_.build("head", prev, cfg_.signals, Activation::sigmoid, rng);
        }
    }

    const ModelConfig& config() const { return cfg_; }

    std::vector<Tensor*> parameters() {
        std::vector<Tensor*> out;
        for (auto& d : dense_) {
            out.push_back(&d.W);
            out.push_back(&d.b);
        }
        for (auto& e : enc_)
            for (Tensor* t : e.tensors()) out.push_back(t);
        for (auto& d : dec_)
            for (Tensor* t : d.tensors()) out.push_back(t);
        if (!enc_.empty()) {
            out.push_back(&head_.W);
            out.push_back(&head_.b);
        }
        return out;
    }

    void zero_grads() {
        for (Tensor* t : parameters()) std::fill(t->grad.begin(), t->grad.end(), 0.0);
    }

    // X: [B, w*x] batch-major. Returns the reconstruction in the same shape;
    // the reference stays valid until the next forward call.
    const std::vector<double>& forward(const double* X, int B) {
        B_ = B;
        const int F = cfg_.window * cfg_.signals;
        if (cfg_.family == ModelFamily::dense) {
            const double* cur = X;
            for (auto& layer : dense_) cur = layer.forward(cur, B).data();
            out_.assign(cur, cur + static_cast<std::size_t>(B) * F);
            return out_;
        }
        const int T = cfg_.window, D = cfg_.signals;
        to_time_major(X, B);
        const double* cur = xtm_.data();
        for (auto& layer : enc_) cur = layer.forward(cur, T, B).data();
        latent_.resize(static_cast<std::size_t>(B) * cfg_.latent);
        enc_.back().gather_final(latent_.data(), T, B);
        // repeat the latent state across all timesteps
        rep_.resize(static_cast<std::size_t>(T) * B * cfg_.latent);
        for (int t = 0; t < T; ++t)
            std::copy(latent_.begin(), latent_.end(),
                      rep_.begin() + static_cast<std::size_t>(t) * B * cfg_.latent);
        cur = rep_.data();
        for (auto& layer : dec_) cur = layer.forward(cur, T, B).data();
        const auto& y = head_.forward(cur, T * B);  // [T*B, x] time-major rows
        out_.resize(static_cast<std::size_t>(B) * F);
        for (int t = 0; t < T; ++t)
            for (int b = 0; b < B; ++b)
                std::copy(y.begin() + ((static_cast<std::size_t>(t) * B) + b) * D,
                          y.begin() + ((static_cast<std::size_t>(t) * B) + b + 1) * D,
                          out_.begin() + (static_cast<std::size_t>(b) * T + t) * D);
        return out_;
    }

    // dOut: [B, w*x] gradient with respect to the reconstruction.
    void backward(const double* dOut) {
        const int F = cfg_.window * cfg_.signals;
        if (cfg_.family == ModelFamily::dense) {
            std::size_t n = static_cast<std::size_t>(B_) * F;
            std::size_t cap = static_cast<std::size_t>(B_) * max_dense_dim();
            da_.resize(cap);
            db_.resize(cap);
            std::copy(dOut, dOut + n, da_.begin());
            double* cur = da_.data();
            double* nxt = db_.data();
            for (auto it = dense_.rbegin(); it != dense_.rend(); ++it) {
                it->backward(cur, nxt);
                std::swap(cur, nxt);
            }
            return;
        }
        const int T = cfg_.window, D = cfg_.signals, B = B_;
        dytm_.resize(static_cast<std::size_t>(T) * B * D);
        for (int t = 0; t < T; ++t)
            for (int b = 0; b < B; ++b)
                std::copy(dOut + (static_cast<std::size_t>(b) * T + t) * D,
                          dOut + (static_cast<std::size_t>(b) * T + t + 1) * D,
                          dytm_.begin() + ((static_cast<std::size_t>(t) * B) + b) * D);
        dseq_a_.resize(max_seq_elems());
        dseq_b_.resize(max_seq_elems());
        double* cur = dseq_a_.data();
        double* nxt = dseq_b_.data();
        head_.backward(dytm_.data(), cur);  // [T*B, dec_out]
        for (auto it = dec_.rbegin(); it != dec_.rend(); ++it) {
            it->backward(cur, nxt, T, B);
            std::swap(cur, nxt);
        }
        // cur now holds d(repeat) [T,B,latent]; collapse over time
        dlat_.assign(static_cast<std::size_t>(B) * cfg_.latent, 0.0);
        for (int t = 0; t < T; ++t) {
            const double* src = cur + static_cast<std::size_t>(t) * B * cfg_.latent;
            for (std::size_t k = 0; k < dlat_.size(); ++k) dlat_[k] += src[k];
        }
        std::size_t enc_out = static_cast<std::size_t>(T) * B * enc_.back().out_dim();
        std::fill(cur, cur + enc_out, 0.0);
        enc_.back().scatter_final(dlat_.data(), cur, T, B);
        for (auto it = enc_.rbegin(); it != enc_.rend(); ++it) {
            it->backward(cur, nxt, T, B);
            std::swap(cur, nxt);
        }
    }

    void adam_step() {
        ++adam_t_;
        const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        double c1 = 1.0 - std::pow(b1, adam_t_);
        double c2 = 1.0 - std::pow(b2, adam_t_);
        for (Tensor* t : parameters()) {
            if (t->m.empty()) {
                t->m.assign(t->size(), 0.0);
                t->v.assign(t->size(), 0.0);
            }
            for (std::size_t k = 0; k < t->size(); ++k) {
                double g = t->grad[k];
                t->m[k] = b1 * t->m[k] + (1 - b1) * g;
                t->v[k] = b2 * t->v[k] + (1 - b2) * g * g;
                t->value[k] -= cfg_.learning_rate * (t->m[k] / c1) /
                               (std::sqrt(t->v[k] / c2) + eps);
            }
        }
    }

private:
    std::size_t max_seq_elems() const {
        // largest [T,B,D] gradient buffer any reverse step needs
        std::size_t dmax = static_cast<std::size_t>(cfg_.latent);
        for (const auto& e : enc_) dmax = std::max<std::size_t>(dmax, e.out_dim());
        for (const auto& d : dec_) dmax = std::max<std::size_t>(dmax, d.out_dim());
        dmax = std::max<std::size_t>(dmax, cfg_.signals);
        return static_cast<std::size_t>(cfg_.window) * B_ * dmax;
    }

    std::size_t max_dense_dim() const {
        std::size_t dmax = static_cast<std::size_t>(cfg_.window) * cfg_.signals;
        for (const auto& d : dense_) dmax = std::max<std::size_t>(dmax, d.in);
        return dmax;
    }

    void to_time_major(const double* X, int B) {
        const int T = cfg_.window, D = cfg_.signals;
        xtm_.resize(static_cast<std::size_t>(T) * B * D);
        for (int b = 0; b < B; ++b)
            for (int t = 0; t < T; ++t)
                std::copy(X + (static_cast<std::size_t>(b) * T + t) * D,
                          X + (static_cast<std::size_t>(b) * T + t + 1) * D,
                          xtm_.begin() + ((static_cast<std::size_t>(t) * B) + b) * D);
    }

    ModelConfig cfg_;
    std::vector<DenseLayer> dense_;
    std::vector<Recurrent> enc_, dec_;
    DenseLayer head_;
    int B_ = 0;
    std::int64_t adam_t_ = 0;
    std::vector<double> out_, xtm_, latent_, rep_, dytm_, dlat_;
    std::vector<double> da_, db_, dseq_a_, dseq_b_;
};

// Mean squared error over every element of the window.
inline double global_mse(std::span<const float> S, std::span<const double> R) {
    if (S.size() != R.size() || S.empty()) throw DataError("shape mismatch in loss");
    double acc = 0;
    for (std::size_t k = 0; k < S.size(); ++k) {
        double d = R[k] - static_cast<double>(S[k]);
        acc += d * d;
    }
    return acc / static_cast<double>(S.size());
}

// Per-signal mean squared error down the window's time axis: element i is
// the average over the w rows of the squared difference in column i.
inline std::vector<double> signalwise_loss(std::span<const float> S, std::span<const double> R,
                                           int w, int x) {
    if (S.size() != static_cast<std::size_t>(w) * x || S.size() != R.size())
        throw DataError("shape mismatch in loss");
    std::vector<double> l(static_cast<std::size_t>(x), 0.0);
    for (int j = 0; j < w; ++j) {
        const float* s = S.data() + static_cast<std::size_t>(j) * x;
        const double* r = R.data() + static_cast<std::size_t>(j) * x;
        for (int i = 0; i < x; ++i) {
            double d = r[i] - static_cast<double>(s[i]);
            l[i] += d * d;
        }
    }
    for (auto& v : l) v /= static_cast<double>(w);
    return l;
}

struct EpochStats {
    int epoch = 0;
    double train_mse = 0;
    double val_mse = 0;
};

struct TrainResult {
    std::vector<EpochStats> history;
    int best_epoch = -1;
    double best_val = 0;
    bool early_stopped = false;
};

namespace detail {

inline void pack_batch(const std::vector<FeatureWindow>& set, const std::vector<std::size_t>& idx,
                       std::size_t begin, std::size_t end, std::vector<double>& out) {
    std::size_t F = set[idx[begin]].data.size();
    out.resize((end - begin) * F);
    for (std::size_t k = begin; k < end; ++k) {
        const auto& d = set[idx[k]].data;
        std::copy(d.begin(), d.end(), out.begin() + (k - begin) * F);
    }
}

inline double eval_mse(Autoencoder& model, const std::vector<FeatureWindow>& set, int batch,
                       std::vector<double>& scratch) {
    double acc = 0;
    std::size_t done = 0;
    std::vector<std::size_t> idx(set.size());
    std::iota(idx.begin(), idx.end(), 0);
    while (done < set.size()) {
        std::size_t hi = std::min(set.size(), done + static_cast<std::size_t>(batch));
        pack_batch(set, idx, done, hi, scratch);
        int B = static_cast<int>(hi - done);
        const auto& R = model.forward(scratch.data(), B);
        for (std::size_t k = 0; k < R.size(); ++k) {
            double d = R[k] - scratch[k];
            acc += d * d;
        }
        done = hi;
    }
    return acc / (static_cast<double>(set.size()) * set[0].data.size());
}

}  // namespace detail

// Adam with early stopping on validation loss; the best-epoch weights are
// restored before returning. Losses going non-finite aborts the run.
inline TrainResult train_autoencoder(Autoencoder& model, const std::vector<FeatureWindow>& train,
                                     const std::vector<FeatureWindow>& val,
                                     const std::function<void(const EpochStats&)>& on_epoch = {}) {
    const ModelConfig& cfg = model.config();
    if (train.empty() || val.empty()) throw DataError("training and validation sets must be non-empty");
    if (cfg.max_epochs < 1 || cfg.patience < 1) throw DataError("epoch budget and patience must be positive");
    const std::size_t F = static_cast<std::size_t>(cfg.window) * cfg.signals;
    for (const auto& w : train)
        if (w.data.size() != F) throw DataError("training window shape mismatch");

    std::mt19937_64 shuffle_rng(cfg.seed ^ 0x746f726eULL);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    TrainResult result;
    std::vector<std::vector<double>> best_weights;
    std::vector<double> batch_buf, eval_buf, dout_buf;
    int since_best = 0;

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double train_acc = 0;
        std::size_t done = 0, batches = 0;
        while (done < order.size()) {
            std::size_t hi = std::min(order.size(), done + static_cast<std::size_t>(cfg.batch_size));
            detail::pack_batch(train, order, done, hi, batch_buf);
            int B = static_cast<int>(hi - done);
            const auto& R = model.forward(batch_buf.data(), B);
            double mse = 0;
            dout_buf.resize(R.size());
            double norm = 2.0 / static_cast<double>(R.size());
            for (std::size_t k = 0; k < R.size(); ++k) {
                double d = R[k] - batch_buf[k];
                mse += d * d;
                dout_buf[k] = norm * d;
            }
            mse /= static_cast<double>(R.size());
            model.zero_grads();
            model.backward(dout_buf.data());
            model.adam_step();
            train_acc += mse;
            ++batches;
            done = hi;
        }
        EpochStats stats;
        stats.epoch = epoch;
        stats.train_mse = train_acc / static_cast<double>(batches);
        stats.val_mse = detail::eval_mse(model, val, cfg.batch_size, eval_buf);
        if (!std::isfinite(stats.train_mse) || !std::isfinite(stats.val_mse))
            throw DataError("training diverged at epoch " + std::to_string(epoch));
        result.history.push_back(stats);
        if (on_epoch) on_epoch(stats);

        if (result.best_epoch < 0 || stats.val_mse < result.best_val) {
            result.best_epoch = epoch;
            result.best_val = stats.val_mse;
            best_weights.clear();
            for (Tensor* t : model.parameters()) best_weights.push_back(t->value);
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            result.early_stopped = true;
            break;
        }
    }
    std::size_t k = 0;
    for (Tensor* t : model.parameters()) t->value = best_weights[k++];
    return result;
}

// Provenance carried alongside the weights so detection can refuse
// mismatched pipelines.
struct ModelProvenance {
    std::uint64_t tick_us = 0;
    std::uint64_t selection_hash = 0;
    int best_epoch = 0;
    double best_val = 0;
    int epochs_run = 0;
};

namespace detail {

inline std::string join_widths(const std::vector<int>& widths) {
    std::string s;
    for (std::size_t i = 0; i < widths.size(); ++i)
        s += (i ? "," : "") + std::to_string(widths[i]);
    return s;
}

inline std::vector<int> parse_widths(std::string_view s) {
    std::vector<int> out;
    if (trim(s).empty()) return out;
    for (auto tok : split(s, ','))
        out.push_back(static_cast<int>(parse_u64(trim(tok))));
    return out;
}

}  // namespace detail

inline void save_model(const std::string& path, Autoencoder& model, const ModelProvenance& prov) {
    const ModelConfig& cfg = model.config();
    Container c;
    c.kind = ContainerKind::model;
    c.meta["family"] = to_string(cfg.family);
    c.meta["encoder_widths"] = detail::join_widths(cfg.encoder_widths);
    c.meta["latent"] = std::to_string(cfg.latent);
    c.meta["decoder_widths"] = detail::join_widths(cfg.decoder_widths);
    c.meta["window"] = std::to_string(cfg.window);
    c.meta["signals"] = std::to_string(cfg.signals);
    c.meta["learning_rate"] = format_double(cfg.learning_rate);
    c.meta["max_epochs"] = std::to_string(cfg.max_epochs);
    c.meta["patience"] = std::to_string(cfg.patience);
    c.meta["batch_size"] = std::to_string(cfg.batch_size);
    c.meta["seed"] = std::to_string(cfg.seed);
    c.meta["tick_us"] = std::to_string(prov.tick_us);
    c.meta["selection_hash"] = format_hash(prov.selection_hash);
    c.meta["best_epoch"] = std::to_string(prov.best_epoch);
    c.meta["best_val_mse"] = format_double(prov.best_val);
    c.meta["epochs_run"] = std::to_string(prov.epochs_run);
    for (Tensor* t : model.parameters()) {
        NamedTensor nt;
        nt.name = t->name;
        nt.dtype = TensorDType::f32;
        nt.dims = t->dims;
        nt.data = t->value;
        c.tensors.push_back(std::move(nt));
    }
    write_container_file(path, c);
}

struct LoadedModel {
    Autoencoder model;
    ModelProvenance provenance;
};

inline LoadedModel load_model(const std::string& path) {
    Container c = read_container_file(path);
    if (c.kind != ContainerKind::model) throw DataError(path + " is not a model file");
    ModelConfig cfg;
    cfg.family = model_family_from(c.meta_at("family"));
    cfg.encoder_widths = detail::parse_widths(c.meta_at("encoder_widths"));
    cfg.latent = static_cast<int>(parse_u64(c.meta_at("latent")));
    cfg.decoder_widths = detail::parse_widths(c.meta_at("decoder_widths"));
    cfg.window = static_cast<int>(parse_u64(c.meta_at("window")));
    cfg.signals = static_cast<int>(parse_u64(c.meta_at("signals")));
    cfg.learning_rate = parse_double(c.meta_at("learning_rate"));
    cfg.max_epochs = static_cast<int>(parse_u64(c.meta_at("max_epochs")));
    cfg.patience = static_cast<int>(parse_u64(c.meta_at("patience")));
    cfg.batch_size = static_cast<int>(parse_u64(c.meta_at("batch_size")));
    cfg.seed = parse_u64(c.meta_at("seed"));
    ModelProvenance prov;
    prov.tick_us = parse_u64(c.meta_at("tick_us"));
    prov.selection_hash = parse_u64(c.meta_at("selection_hash"), 16);
    prov.best_epoch = static_cast<int>(parse_u64(c.meta_at("best_epoch")));
    prov.best_val = parse_double(c.meta_at("best_val_mse"));
    prov.epochs_run = static_cast<int>(parse_u64(c.meta_at("epochs_run")));
    LoadedModel out{Autoencoder(cfg), prov};
    for (Tensor* t : out.model.parameters()) {
        const NamedTensor& nt = c.tensor_at(t->name);
        if (nt.dims != t->dims) throw DataError("tensor " + t->name + " has unexpected shape");
        t->value = nt.data;
    }
    return out;
}

struct GradCheckResult {
    double max_rel_err = 0;
    std::size_t samples = 0;
};

// Compares analytic parameter gradients of the reconstruction loss against
// central finite differences on a random sample of parameters.
inline GradCheckResult gradient_check(Autoencoder& model, const std::vector<FeatureWindow>& batch,
                                      std::size_t samples, double eps, std::uint64_t seed) {
    if (batch.empty()) throw DataError("gradient check needs at least one window");
    const std::size_t F = batch[0].data.size();
    std::vector<double> X(batch.size() * F);
    for (std::size_t i = 0; i < batch.size(); ++i)
        std::copy(batch[i].data.begin(), batch[i].data.end(), X.begin() + i * F);
    const int B = static_cast<int>(batch.size());
    const double n = static_cast<double>(X.size());

    auto loss = [&]() {
        const auto& R = model.forward(X.data(), B);
        double acc = 0;
        for (std::size_t k = 0; k < R.size(); ++k) {
            double d = R[k] - X[k];
            acc += d * d;
        }
        return acc / n;
    };

    // analytic pass
    const auto& R = model.forward(X.data(), B);
    std::vector<double> dR(R.size());
    for (std::size_t k = 0; k < R.size(); ++k) dR[k] = 2.0 * (R[k] - X[k]) / n;
    model.zero_grads();
    model.backward(dR.data());

    auto params = model.parameters();
    std::vector<std::pair<std::size_t, std::size_t>> index;  // (tensor, element)
    for (std::size_t ti = 0; ti < params.size(); ++ti)
        for (std::size_t k = 0; k < params[ti]->size(); ++k) index.emplace_back(ti, k);
    std::mt19937_64 rng(seed);
    std::shuffle(index.begin(), index.end(), rng);
    samples = std::min(samples, index.size());

    GradCheckResult result;
    result.samples = samples;
    for (std::size_t s = 0; s < samples; ++s) {
        auto [ti, k] = index[s];
        double* p = &params[ti]->value[k];
        double analytic = params[ti]->grad[k];
        double keep = *p;
        *p = keep + eps;
        double up = loss();
        *p = keep - eps;
        double down = loss();
        *p = keep;
        double numeric = (up - down) / (2 * eps);
        // the denominator floor sits above central-difference roundoff, so an
        // exact gradient of near-zero magnitude does not read as a failure
        double rel = std::abs(analytic - numeric) /
                     std::max({std::abs(analytic), std::abs(numeric), 1e-6});
        result.max_rel_err = std::max(result.max_rel_err, rel);
    }
    return result;
}

inline void write_history_csv(std::ostream& os, const TrainResult& r) {
    os << "epoch,train_mse,val_mse\n";
    for (const auto& e : r.history)
        os << e.epoch << ',' << format_double(e.train_mse) << ',' << format_double(e.val_mse)
           << '\n';
}

}  // namespace xcanids
