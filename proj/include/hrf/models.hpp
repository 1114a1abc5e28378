#pragma once

// Velocity fields v(t, x): trainable backbones with hand-written reverse mode,
// the closed-form Gaussian conditional-expectation oracle and a kernel
// regression oracle over paired samples.

#include <algorithm>
#include <array>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"
#include "hilbert.hpp"
#include "log.hpp"
#include "paths.hpp"
#include "rng.hpp"

namespace hrf {

class VelocityField {
public:
    virtual ~VelocityField() = default;

    /// v(t, x) on the grid of x.
    virtual GridFunction evaluate(double t, const GridFunction& x) const = 0;

    /// True when the field may blow up at t = 0 or t = 1 (e.g. an oracle
    /// whose per-mode variance vanishes at an endpoint).
    virtual bool endpoint_degenerate() const { return false; }

    virtual std::string name() const = 0;
};

using FieldPtr = std::shared_ptr<const VelocityField>;

class ZeroField final : public VelocityField {
public:
    GridFunction evaluate(double, const GridFunction& x) const override { return GridFunction(x.grid); }
    std::string name() const override { return "zero"; }
};

/// v(t, x) = c x
class LinearField final : public VelocityField {
public:
    explicit LinearField(double c) : c_(c) {}
    GridFunction evaluate(double, const GridFunction& x) const override { return c_ * x; }
    std::string name() const override { return "linear"; }

private:
    double c_;
};

/// Wraps an arbitrary callable.
class FunctionField final : public VelocityField {
public:
    using Fn = std::function<GridFunction(double, const GridFunction&)>;
    explicit FunctionField(Fn fn, std::string name = "function", bool degenerate = false)
        : fn_(std::move(fn)), name_(std::move(name)), degenerate_(degenerate) {}
    GridFunction evaluate(double t, const GridFunction& x) const override { return fn_(t, x); }
    bool endpoint_degenerate() const override { return degenerate_; }
    std::string name() const override { return name_; }

private:
    Fn fn_;
    std::string name_;
    bool degenerate_;
};

/// [sin(pi 2^k t), cos(pi 2^k t)] for k = 0 .. d/2 - 1; cos(pi t) is monotone on [0, 1].
inline std::vector<double> fourier_time_features(double t, std::size_t d) {
    detail::require(d % 2 == 0, "time feature dimension must be even");
    std::vector<double> f(d);
    double freq = std::numbers::pi;
    for (std::size_t k = 0; k < d / 2; ++k) {
        f[2 * k] = std::sin(freq * t);
        f[2 * k + 1] = std::cos(freq * t);
        freq *= 2.0;
    }
    return f;
}

// ---------------------------------------------------------------------------
// Trainable models

enum class ModelKind : std::int64_t { mlp_spectral = 0, fourier_layer = 1 };

/// A velocity field with a flat parameter vector and a vector-Jacobian product.
class TrainableField : public VelocityField {
public:
    virtual ModelKind kind() const = 0;
    virtual GridPtr grid() const = 0;

    std::vector<double>& parameters() { return params_; }
    const std::vector<double>& parameters() const { return params_; }

    /// grad += d/dtheta <upstream, forward(t, x)>, the inner product being the
    /// plain sum over grid nodes.
    virtual void accumulate_gradient(double t, const GridFunction& x, const GridFunction& upstream,
                                     std::span<double> grad) const = 0;

    std::vector<double> backward(double t, const GridFunction& x, const GridFunction& upstream) const {
        std::vector<double> g(params_.size(), 0.0);
        accumulate_gradient(t, x, upstream, g);
        return g;
    }

    /// Architecture integers written to checkpoints after the kind.
    virtual std::vector<std::int64_t> architecture() const = 0;

    virtual std::unique_ptr<TrainableField> clone() const = 0;

protected:
    std::vector<double> params_;
};

namespace detail {

inline void glorot_fill(std::span<double> w, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double r = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& v : w) v = rng.uniform(-r, r);
}

inline void check_model_input(const GridPtr& grid, const GridFunction& x, double t) {
    if (!x.grid || !same_grid(grid, x.grid)) throw InputError("input grid does not match model grid");
    check_time(t);
}

}  // namespace detail

/// MLP acting on truncated spectral coordinates:
/// coeffs = project(x); u = [coeffs, time features]; tanh hidden layers;
/// linear output of K coefficients; reconstruct.
class MlpSpectralModel final : public TrainableField {
public:
    MlpSpectralModel(SpectralBasis basis, std::vector<std::size_t> hidden, std::size_t time_dim)
        : basis_(std::move(basis)), hidden_(std::move(hidden)), time_dim_(time_dim) {
        detail::require(time_dim_ % 2 == 0, "time feature dimension must be even");
        for (auto w : hidden_) detail::require(w >= 1, "hidden widths must be positive");
        sizes_.push_back(basis_.size() + time_dim_);
        for (auto w : hidden_) sizes_.push_back(w);
        sizes_.push_back(basis_.size());
        std::size_t count = 0;
        for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
            offsets_.push_back(count);
            count += (sizes_[l] + 1) * sizes_[l + 1];
        }
        params_.assign(count, 0.0);
    }

    /// Glorot-uniform weights, zero biases.
    void initialize(std::uint64_t seed) {
        Rng rng(seed);
        for (std::size_t l = 0; l < layers(); ++l) {
            const std::size_t in = sizes_[l], out = sizes_[l + 1];
            std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(offsets_[l]), (in + 1) * out, 0.0);
            detail::glorot_fill(weight_span(l), in, out, rng);
        }
    }

    std::size_t layers() const { return sizes_.size() - 1; }
    const std::vector<std::size_t>& sizes() const { return sizes_; }
    const SpectralBasis& basis() const { return basis_; }
    std::size_t time_dim() const { return time_dim_; }

    /// Row-major fan_out x fan_in weights of layer l.
    std::span<double> weight_span(std::size_t l) {
        return {params_.data() + offsets_[l], sizes_[l] * sizes_[l + 1]};
    }
    std::span<double> bias_span(std::size_t l) {
        return {params_.data() + offsets_[l] + sizes_[l] * sizes_[l + 1], sizes_[l + 1]};
    }

    GridFunction evaluate(double t, const GridFunction& x) const override {
        detail::check_model_input(basis_.grid, x, t);
        std::vector<std::vector<double>> acts;
        run(t, x, acts);
        return reconstruct(acts.back(), basis_);
    }

    void accumulate_gradient(double t, const GridFunction& x, const GridFunction& upstream,
                             std::span<double> grad) const override {
        detail::check_model_input(basis_.grid, x, t);
        detail::require(grad.size() == params_.size(), "gradient buffer has the wrong size");
        check_same_grid(x, upstream);
        std::vector<std::vector<double>> acts;
        run(t, x, acts);

        // d<g, sum_i c_i e_i>/dc_i = sum_j g_j e_i(j)
        const std::size_t k = basis_.size();
        const std::size_t n = basis_.grid->n;
        std::vector<double> delta(k, 0.0);
        for (std::size_t i = 0; i < k; ++i) {
            const double* e = basis_.functions->row(i);
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += upstream.values[j] * e[j];
            delta[i] = s;
        }

        for (std::size_t l = layers(); l-- > 0;) {
            const std::size_t in = sizes_[l], out = sizes_[l + 1];
            const double* w = params_.data() + offsets_[l];
            double* gw = grad.data() + offsets_[l];
            double* gb = gw + in * out;
            const auto& u = acts[l];
            for (std::size_t o = 0; o < out; ++o) {
                gb[o] += delta[o];
                double* gwr = gw + o * in;
                for (std::size_t i = 0; i < in; ++i) gwr[i] += delta[o] * u[i];
            }
            if (l == 0) break;
            std::vector<double> prev(in, 0.0);
            for (std::size_t o = 0; o < out; ++o) {
                const double* wr = w + o * in;
                for (std::size_t i = 0; i < in; ++i) prev[i] += wr[i] * delta[o];
            }
            for (std::size_t i = 0; i < in; ++i) prev[i] *= 1.0 - u[i] * u[i];  // tanh'
            delta = std::move(prev);
        }
    }

    ModelKind kind() const override { return ModelKind::mlp_spectral; }
    GridPtr grid() const override { return basis_.grid; }
    std::string name() const override { return "mlp_spectral"; }

    std::vector<std::int64_t> architecture() const override {
        std::vector<std::int64_t> a{static_cast<std::int64_t>(basis_.grid->n), static_cast<std::int64_t>(basis_.size()),
                                    static_cast<std::int64_t>(time_dim_), static_cast<std::int64_t>(hidden_.size())};
        for (auto w : hidden_) a.push_back(static_cast<std::int64_t>(w));
        return a;
    }

    std::unique_ptr<TrainableField> clone() const override { return std::make_unique<MlpSpectralModel>(*this); }

private:
    /// acts[0] = input, acts[l] = tanh output of hidden layer l, acts.back() = linear output.
    void run(double t, const GridFunction& x, std::vector<std::vector<double>>& acts) const {
        acts.assign(sizes_.size(), {});
        auto& in0 = acts[0];
        in0 = project(x, basis_);
        const auto tf = fourier_time_features(t, time_dim_);
        in0.insert(in0.end(), tf.begin(), tf.end());
        for (std::size_t l = 0; l < layers(); ++l) {
            const std::size_t in = sizes_[l], out = sizes_[l + 1];
            const double* w = params_.data() + offsets_[l];
            const double* b = w + in * out;
            auto& z = acts[l + 1];
            z.assign(out, 0.0);
            const auto& u = acts[l];
            for (std::size_t o = 0; o < out; ++o) {
                const double* wr = w + o * in;
                double s = b[o];
                for (std::size_t i = 0; i < in; ++i) s += wr[i] * u[i];
                z[o] = s;
            }
            if (l + 1 < layers())
                for (double& v : z) v = std::tanh(v);
        }
    }

    SpectralBasis basis_;
    std::vector<std::size_t> hidden_;
    std::size_t time_dim_;
    std::vector<std::size_t> sizes_;
    std::vector<std::size_t> offsets_;
};

/// Mini 1D Fourier neural operator on grid values.
///
/// Lift: h0(:,j) = P [x_j, p_j, time features] + p_b.
/// Block l: h_{l+1} = tanh( SpectralConv_l(h_l) + W_l h_l + b_l ), where the
/// spectral convolution multiplies the first M DFT coefficients of every
/// channel by complex weights and zeroes the rest.
/// Output: v_j = q . h_L(:,j) + q_b.
class FourierLayerModel final : public TrainableField {
public:
    FourierLayerModel(GridPtr grid, std::size_t modes, std::size_t layers, std::size_t width, std::size_t time_dim)
        : grid_(std::move(grid)), modes_(modes), layers_(layers), width_(width), time_dim_(time_dim) {
        detail::require(modes_ >= 1 && modes_ <= grid_->n / 2, "retained modes must lie in [1, n/2]");
        detail::require(width_ >= 1, "channel width must be positive");
        detail::require(time_dim_ % 2 == 0, "time feature dimension must be even");
        const std::size_t n = grid_->n;
        cos_.resize(n * modes_);
        sin_.resize(n * modes_);
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t k = 0; k < modes_; ++k) {
                // Reduce jk mod n before scaling so the table is exact-periodic.
                const double theta = 2.0 * std::numbers::pi * static_cast<double>((j * k) % n) / static_cast<double>(n);
                cos_[j * modes_ + k] = std::cos(theta);
                sin_[j * modes_ + k] = std::sin(theta);
            }
        std::size_t off = 0;
        lift_w_ = off;
        off += width_ * in_channels();
        lift_b_ = off;
        off += width_;
        for (std::size_t l = 0; l < layers_; ++l) {
            Block b;
            b.wr = off;
            off += width_ * width_ * modes_;
            b.wi = off;
            off += width_ * width_ * modes_;
            b.w = off;
            off += width_ * width_;
            b.b = off;
            off += width_;
            blocks_.push_back(b);
        }
        proj_w_ = off;
        off += width_;
        proj_b_ = off;
        off += 1;
        params_.assign(off, 0.0);
    }

    std::size_t in_channels() const { return 2 + time_dim_; }
    std::size_t modes() const { return modes_; }
    std::size_t layer_count() const { return layers_; }
    std::size_t width() const { return width_; }

    void initialize(std::uint64_t seed) {
        Rng rng(seed);
        std::fill(params_.begin(), params_.end(), 0.0);
        detail::glorot_fill(span(lift_w_, width_ * in_channels()), in_channels(), width_, rng);
        const double spectral_scale = 1.0 / static_cast<double>(width_);
        for (const auto& b : blocks_) {
            for (double& v : span(b.wr, width_ * width_ * modes_)) v = rng.uniform(-spectral_scale, spectral_scale);
            for (double& v : span(b.wi, width_ * width_ * modes_)) v = rng.uniform(-spectral_scale, spectral_scale);
            detail::glorot_fill(span(b.w, width_ * width_), width_, width_, rng);
        }
        detail::glorot_fill(span(proj_w_, width_), width_, 1, rng);
    }

    GridFunction evaluate(double t, const GridFunction& x) const override {
        detail::check_model_input(grid_, x, t);
        Cache c;
        run(t, x, c);
        return GridFunction(grid_, std::move(c.out));
    }

    void accumulate_gradient(double t, const GridFunction& x, const GridFunction& upstream,
                             std::span<double> grad) const override {
        detail::check_model_input(grid_, x, t);
        detail::require(grad.size() == params_.size(), "gradient buffer has the wrong size");
        check_same_grid(x, upstream);
        Cache c;
        run(t, x, c);
        const std::size_t n = grid_->n;
        const std::size_t C = width_;
        const std::size_t M = modes_;

        // projection
        const double* q = params_.data() + proj_w_;
        std::vector<double> dh(C * n, 0.0);  // channel-major: dh[c*n + j]
        const auto& hl = c.h.back();
        for (std::size_t j = 0; j < n; ++j) {
            const double g = upstream.values[j];
            grad[proj_b_] += g;
            for (std::size_t ch = 0; ch < C; ++ch) {
                grad[proj_w_ + ch] += g * hl[ch * n + j];
                dh[ch * n + j] += g * q[ch];
            }
        }

        std::vector<double> dA(C * M), dB(C * M), dRe(C * M), dIm(C * M), dprev(C * n);
        for (std::size_t l = layers_; l-- > 0;) {
            const Block& b = blocks_[l];
            const auto& hin = c.h[l];
            const auto& hout = c.h[l + 1];
            const auto& A = c.a[l];
            const auto& B = c.b[l];
            // through tanh
            for (std::size_t i = 0; i < C * n; ++i) dh[i] *= 1.0 - hout[i] * hout[i];

            std::fill(dprev.begin(), dprev.end(), 0.0);
            // pointwise linear W h + b
            const double* w = params_.data() + b.w;
            for (std::size_t o = 0; o < C; ++o) {
                const double* dzo = dh.data() + o * n;
                double sb = 0.0;
                for (std::size_t j = 0; j < n; ++j) sb += dzo[j];
                grad[b.b + o] += sb;
                for (std::size_t ci = 0; ci < C; ++ci) {
                    const double* hi = hin.data() + ci * n;
                    double* dpi = dprev.data() + ci * n;
                    const double wv = w[o * C + ci];
                    double s = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                        s += dzo[j] * hi[j];
                        dpi[j] += wv * dzo[j];
                    }
                    grad[b.w + o * C + ci] += s;
                }
            }
            // spectral convolution: y_o[j] = (1/n) sum_k c_k (Re Y_ok cos - Im Y_ok sin)
            for (std::size_t o = 0; o < C; ++o) {
                const double* dzo = dh.data() + o * n;
                for (std::size_t k = 0; k < M; ++k) {
                    double sc = 0.0, ss = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                        sc += dzo[j] * cos_[j * M + k];
                        ss += dzo[j] * sin_[j * M + k];
                    }
                    const double ck = (k == 0 ? 1.0 : 2.0) / static_cast<double>(n);
                    dRe[o * M + k] = ck * sc;
                    dIm[o * M + k] = -ck * ss;
                }
            }
            const double* wr = params_.data() + b.wr;
            const double* wi = params_.data() + b.wi;
            std::fill(dA.begin(), dA.end(), 0.0);
            std::fill(dB.begin(), dB.end(), 0.0);
            // Y_ok = sum_c R_ock X_ck with X = A - iB, R = Wr + i Wi:
            // Re Y = Wr A + Wi B, Im Y = Wi A - Wr B.
            for (std::size_t o = 0; o < C; ++o)
                for (std::size_t ci = 0; ci < C; ++ci)
                    for (std::size_t k = 0; k < M; ++k) {
                        const std::size_t widx = (o * C + ci) * M + k;
                        const double dre = dRe[o * M + k], dim = dIm[o * M + k];
                        const double a = A[ci * M + k], bb = B[ci * M + k];
                        grad[b.wr + widx] += dre * a - dim * bb;
                        grad[b.wi + widx] += dre * bb + dim * a;
                        dA[ci * M + k] += dre * wr[widx] + dim * wi[widx];
                        dB[ci * M + k] += dre * wi[widx] - dim * wr[widx];
                    }
            // A_ck = sum_j h_cj cos, B_ck = sum_j h_cj sin
            for (std::size_t ci = 0; ci < C; ++ci) {
                double* dpi = dprev.data() + ci * n;
                for (std::size_t j = 0; j < n; ++j) {
                    double s = 0.0;
                    for (std::size_t k = 0; k < M; ++k) s += dA[ci * M + k] * cos_[j * M + k] + dB[ci * M + k] * sin_[j * M + k];
                    dpi[j] += s;
                }
            }
            std::swap(dh, dprev);
        }

        // lift (linear, no activation)
        const std::size_t cin = in_channels();
        for (std::size_t o = 0; o < C; ++o) {
            const double* dzo = dh.data() + o * n;
            for (std::size_t j = 0; j < n; ++j) {
                grad[lift_b_ + o] += dzo[j];
                for (std::size_t ci = 0; ci < cin; ++ci) grad[lift_w_ + o * cin + ci] += dzo[j] * c.input[ci * n + j];
            }
        }
    }

    ModelKind kind() const override { return ModelKind::fourier_layer; }
    GridPtr grid() const override { return grid_; }
    std::string name() const override { return "fourier_layer"; }

    std::vector<std::int64_t> architecture() const override {
        return {static_cast<std::int64_t>(grid_->n), static_cast<std::int64_t>(modes_), static_cast<std::int64_t>(layers_),
                static_cast<std::int64_t>(time_dim_), 1, static_cast<std::int64_t>(width_)};
    }

    std::unique_ptr<TrainableField> clone() const override { return std::make_unique<FourierLayerModel>(*this); }

private:
    struct Block {
        std::size_t wr, wi, w, b;
    };

    struct Cache {
        std::vector<double> input;              // cin x n
        std::vector<std::vector<double>> h;     // L+1 entries of C x n
        std::vector<std::vector<double>> a, b;  // per block: C x M DFT cos/sin sums
        std::vector<double> out;
    };

    std::span<double> span(std::size_t off, std::size_t len) { return {params_.data() + off, len}; }

    void run(double t, const GridFunction& x, Cache& c) const {
        const std::size_t n = grid_->n;
        const std::size_t C = width_;
        const std::size_t M = modes_;
        const std::size_t cin = in_channels();
        const auto tf = fourier_time_features(t, time_dim_);
        c.input.assign(cin * n, 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            c.input[0 * n + j] = x.values[j];
            c.input[1 * n + j] = grid_->nodes[j];
            for (std::size_t f = 0; f < time_dim_; ++f) c.input[(2 + f) * n + j] = tf[f];
        }
        c.h.assign(layers_ + 1, std::vector<double>(C * n, 0.0));
        c.a.assign(layers_, std::vector<double>(C * M, 0.0));
        c.b.assign(layers_, std::vector<double>(C * M, 0.0));
        {
            const double* p = params_.data() + lift_w_;
            const double* pb = params_.data() + lift_b_;
            auto& h0 = c.h[0];
            for (std::size_t o = 0; o < C; ++o)
                for (std::size_t j = 0; j < n; ++j) {
                    double s = pb[o];
                    for (std::size_t ci = 0; ci < cin; ++ci) s += p[o * cin + ci] * c.input[ci * n + j];
                    h0[o * n + j] = s;
                }
        }
        std::vector<double> re(C * M), im(C * M);
        for (std::size_t l = 0; l < layers_; ++l) {
            const Block& b = blocks_[l];
            const auto& hin = c.h[l];
            auto& hout = c.h[l + 1];
            auto& A = c.a[l];
            auto& B = c.b[l];
            for (std::size_t ci = 0; ci < C; ++ci)
                for (std::size_t k = 0; k < M; ++k) {
                    double sa = 0.0, sb = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                        sa += hin[ci * n + j] * cos_[j * M + k];
                        sb += hin[ci * n + j] * sin_[j * M + k];
                    }
                    A[ci * M + k] = sa;
                    B[ci * M + k] = sb;
                }
            const double* wr = params_.data() + b.wr;
            const double* wi = params_.data() + b.wi;
            std::fill(re.begin(), re.end(), 0.0);
            std::fill(im.begin(), im.end(), 0.0);
            for (std::size_t o = 0; o < C; ++o)
                for (std::size_t ci = 0; ci < C; ++ci)
                    for (std::size_t k = 0; k < M; ++k) {
                        const std::size_t widx = (o * C + ci) * M + k;
                        re[o * M + k] += wr[widx] * A[ci * M + k] + wi[widx] * B[ci * M + k];
                        im[o * M + k] += wi[widx] * A[ci * M + k] - wr[widx] * B[ci * M + k];
                    }
            const double* w = params_.data() + b.w;
            const double* bias = params_.data() + b.b;
            for (std::size_t o = 0; o < C; ++o)
                for (std::size_t j = 0; j < n; ++j) {
                    double s = 0.0;
                    for (std::size_t k = 0; k < M; ++k) {
                        const double ck = k == 0 ? 1.0 : 2.0;
                        s += ck * (re[o * M + k] * cos_[j * M + k] - im[o * M + k] * sin_[j * M + k]);
                    }
                    s /= static_cast<double>(n);
                    s += bias[o];
                    for (std::size_t ci = 0; ci < C; ++ci) s += w[o * C + ci] * hin[ci * n + j];
                    hout[o * n + j] = std::tanh(s);
                }
        }
        c.out.assign(n, params_[proj_b_]);
        const double* q = params_.data() + proj_w_;
        const auto& hl = c.h.back();
        for (std::size_t ch = 0; ch < C; ++ch)
            for (std::size_t j = 0; j < n; ++j) c.out[j] += q[ch] * hl[ch * n + j];
    }

    GridPtr grid_;
    std::size_t modes_, layers_, width_, time_dim_;
    std::vector<double> cos_, sin_;  // n x M
    std::size_t lift_w_ = 0, lift_b_ = 0, proj_w_ = 0, proj_b_ = 0;
    std::vector<Block> blocks_;
};

// ---------------------------------------------------------------------------
// Checkpoints: "HRFM1", int64 kind, int64 count, count x int64 architecture,
// int64 parameter count, parameters as float64. All little-endian.

namespace detail {

inline void put_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t get_u64(std::istream& in) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) throw InputError("truncated checkpoint");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& out, const TrainableField& model) {
    out.write("HRFM1", 5);
    detail::put_u64(out, static_cast<std::uint64_t>(model.kind()));
    const auto arch = model.architecture();
    detail::put_u64(out, arch.size());
    for (auto v : arch) detail::put_u64(out, static_cast<std::uint64_t>(v));
    const auto& p = model.parameters();
    detail::put_u64(out, p.size());
    for (double v : p) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
}

/// Rebuilds a model from a checkpoint. Spectral models need the basis they were
/// trained with; only its grid size and mode count are validated.
inline std::unique_ptr<TrainableField> read_checkpoint(std::istream& in, const SpectralBasis& basis) {
    char magic[5];
    if (!in.read(magic, 5) || std::memcmp(magic, "HRFM1", 5) != 0) throw InputError("not an HRFM1 checkpoint");
    const auto kind = static_cast<ModelKind>(detail::get_u64(in));
    const auto count = detail::get_u64(in);
    if (count > 1024) throw InputError("corrupt checkpoint header");
    std::vector<std::int64_t> arch(count);
    for (auto& v : arch) v = static_cast<std::int64_t>(detail::get_u64(in));
    std::unique_ptr<TrainableField> model;
    auto need = [&](std::size_t k) {
        if (arch.size() < k) throw InputError("corrupt checkpoint architecture");
    };
    need(1);
    if (static_cast<std::size_t>(arch[0]) != basis.grid->n) throw InputError("checkpoint grid size does not match");
    if (kind == ModelKind::mlp_spectral) {
        need(4);
        if (static_cast<std::size_t>(arch[1]) != basis.size()) throw InputError("checkpoint mode count does not match basis");
        need(4 + static_cast<std::size_t>(arch[3]));
        std::vector<std::size_t> hidden;
        for (std::int64_t i = 0; i < arch[3]; ++i) hidden.push_back(static_cast<std::size_t>(arch[4 + i]));
        model = std::make_unique<MlpSpectralModel>(basis, hidden, static_cast<std::size_t>(arch[2]));
    } else if (kind == ModelKind::fourier_layer) {
        need(6);
        model = std::make_unique<FourierLayerModel>(basis.grid, static_cast<std::size_t>(arch[1]),
                                                    static_cast<std::size_t>(arch[2]), static_cast<std::size_t>(arch[5]),
                                                    static_cast<std::size_t>(arch[3]));
    } else {
        throw InputError("unknown model kind in checkpoint");
    }
    const auto np = detail::get_u64(in);
    if (np != model->parameters().size()) throw InputError("checkpoint parameter count does not match architecture");
    for (auto& v : model->parameters()) v = std::bit_cast<double>(detail::get_u64(in));
    return model;
}

inline void save_checkpoint(const std::string& path, const TrainableField& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path);
    write_checkpoint(out, model);
}

inline std::unique_ptr<TrainableField> load_checkpoint(const std::string& path, const SpectralBasis& basis) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot read " + path);
    return read_checkpoint(in, basis);
}

/// max over parameters of |analytic - central difference| / max(|a|, |b|, 1e-6)
/// for the scalar <upstream, forward(t, x)> (plain sum over nodes).
inline double gradient_check(TrainableField& model, double t, const GridFunction& x, const GridFunction& upstream,
                             double h = 1e-5) {
    const auto analytic = model.backward(t, x, upstream);
    auto objective = [&] {
        const auto y = model.evaluate(t, x);
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += upstream.values[i] * y.values[i];
        return s;
    };
    auto& p = model.parameters();
    double worst = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        const double keep = p[k];
        p[k] = keep + h;
        const double up = objective();
        p[k] = keep - h;
        const double down = objective();
        p[k] = keep;
        const double fd = (up - down) / (2.0 * h);
        const double scale = std::max({std::abs(fd), std::abs(analytic[k]), 1e-6});
        worst = std::max(worst, std::abs(fd - analytic[k]) / scale);
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Oracles

/// Per-mode second-order statistics of a pair (X0, X1) expressed in a basis.
struct ModeMoments {
    double mean0 = 0.0, mean1 = 0.0;
    double var0 = 0.0, var1 = 0.0;
    double cov01 = 0.0;
};

/// E[d/dt X_t | X_t = x] for jointly Gaussian endpoints that are diagonal in a
/// shared basis. Per mode i, with mu_t = a m1 + b m0,
///   Var X_t   = a^2 v1 + b^2 v0 + 2ab c
///   Cov       = a'a v1 + b'b v0 + (a'b + ab') c
///   v_i(t, x) = a' m1 + b' m0 + Cov / Var X_t * (x_i - mu_t).
/// Mean components outside the span move deterministically along the path.
class GaussianOracle final : public VelocityField {
public:
    GaussianOracle(SpectralBasis basis, std::vector<ModeMoments> modes, GridFunction mean0, GridFunction mean1,
                   PathSchedule schedule)
        : basis_(std::move(basis)), modes_(std::move(modes)), schedule_(std::move(schedule)) {
        detail::require(modes_.size() == basis_.size(), "mode statistics do not match basis size");
        residual0_ = mean0 - reconstruct(project(mean0, basis_), basis_);
        residual1_ = mean1 - reconstruct(project(mean1, basis_), basis_);
    }

    /// Independent endpoints X0 ~ measure0, X1 ~ measure1 sharing eigenfunctions.
    GaussianOracle(const GaussianMeasure& measure0, const GaussianMeasure& measure1, PathSchedule schedule)
        : GaussianOracle(measure0.basis, independent_moments(measure0, measure1), measure0.mean, measure1.mean,
                         std::move(schedule)) {}

    static std::vector<ModeMoments> independent_moments(const GaussianMeasure& m0, const GaussianMeasure& m1) {
        if (!same_grid(m0.basis.grid, m1.basis.grid) || m0.basis.size() != m1.basis.size())
            throw InputError("oracle endpoints must share a basis");
        if (m0.basis.functions != m1.basis.functions) {
            const auto& f0 = m0.basis.functions->data;
            const auto& f1 = m1.basis.functions->data;
            for (std::size_t i = 0; i < f0.size(); ++i)
                if (std::abs(f0[i] - f1[i]) > 1e-12) throw InputError("oracle endpoints must share a basis");
        }
        const auto c0 = project(m0.mean, m0.basis);
        const auto c1 = project(m1.mean, m1.basis);
        std::vector<ModeMoments> modes(m0.basis.size());
        for (std::size_t i = 0; i < modes.size(); ++i)
            modes[i] = {c0[i], c1[i], m0.mode_variance(i), m1.mode_variance(i), 0.0};
        return modes;
    }

    const SpectralBasis& basis() const { return basis_; }
    const std::vector<ModeMoments>& modes() const { return modes_; }
    const PathSchedule& schedule() const { return schedule_; }

    double marginal_variance(std::size_t i, double t) const {
        const auto& m = modes_[i];
        const double a = schedule_.a(t), b = schedule_.b(t);
        return a * a * m.var1 + b * b * m.var0 + 2.0 * a * b * m.cov01;
    }

    /// Cov(d/dt X_t, X_t) for mode i.
    double velocity_covariance(std::size_t i, double t) const {
        const auto& m = modes_[i];
        const double a = schedule_.a(t), b = schedule_.b(t);
        const double da = schedule_.da(t), db = schedule_.db(t);
        return da * a * m.var1 + db * b * m.var0 + (da * b + a * db) * m.cov01;
    }

    /// Gain multiplying the centred coordinate of mode i.
    double coefficient(std::size_t i, double t) const {
        const double var = marginal_variance(i, t);
        if (!(var > 0.0)) throw InputError("Gaussian oracle: zero marginal variance in mode " + std::to_string(i));
        return velocity_covariance(i, t) / var;
    }

    /// Var(d/dt X_t | X_t) for mode i: what no field can explain.
    double residual_variance(std::size_t i, double t) const {
        const auto& m = modes_[i];
        const double da = schedule_.da(t), db = schedule_.db(t);
        const double var_dot = da * da * m.var1 + db * db * m.var0 + 2.0 * da * db * m.cov01;
        const double var = marginal_variance(i, t);
        if (!(var > 0.0)) return var_dot;
        const double cov = velocity_covariance(i, t);
        return std::max(0.0, var_dot - cov * cov / var);
    }

    GridFunction evaluate(double t, const GridFunction& x) const override {
        check_time(t);
        const auto coords = project(x, basis_);
        const double a = schedule_.a(t), b = schedule_.b(t);
        const double da = schedule_.da(t), db = schedule_.db(t);
        std::vector<double> v(modes_.size());
        for (std::size_t i = 0; i < modes_.size(); ++i) {
            const auto& m = modes_[i];
            const double mu = a * m.mean1 + b * m.mean0;
            v[i] = da * m.mean1 + db * m.mean0 + coefficient(i, t) * (coords[i] - mu);
        }
        GridFunction out = reconstruct(v, basis_);
        out.axpy(da, residual1_).axpy(db, residual0_);
        return out;
    }

    bool endpoint_degenerate() const override {
        for (std::size_t i = 0; i < modes_.size(); ++i)
            if (!(marginal_variance(i, 0.0) > 0.0) || !(marginal_variance(i, 1.0) > 0.0)) return true;
        return false;
    }

    std::string name() const override { return "gaussian_oracle"; }

private:
    SpectralBasis basis_;
    std::vector<ModeMoments> modes_;
    PathSchedule schedule_;
    GridFunction residual0_, residual1_;
};

/// Nadaraya-Watson estimate of E[d/dt X_t | X_t = x] from paired samples:
/// weights w_j = exp(-||x - X_t^j||^2 / (2 h^2)).
class EmpiricalOracle final : public VelocityField {
public:
    struct Result {
        GridFunction velocity;
        bool off_support = false;
    };

    EmpiricalOracle(SampleSet x0, SampleSet x1, PathSchedule schedule, double bandwidth)
        : x0_(std::move(x0)), x1_(std::move(x1)), schedule_(std::move(schedule)), h_(bandwidth) {
        detail::require(x0_.size() >= 1 && x0_.size() == x1_.size(), "empirical oracle needs aligned, non-empty pairs");
        detail::require(same_grid(x0_.grid, x1_.grid), "empirical oracle pairs must share a grid");
        detail::require(bandwidth > 0.0, "bandwidth must be positive");
    }

    double bandwidth() const { return h_; }
    std::size_t off_support_count() const { return off_support_.load(); }

    Result query(double t, const GridFunction& x) const {
        check_time(t);
        if (!same_grid(x.grid, x0_.grid)) throw InputError("grid mismatch");
        const double a = schedule_.a(t), b = schedule_.b(t);
        const double da = schedule_.da(t), db = schedule_.db(t);
        const auto& w = x.grid->weights;
        const std::size_t n = x.grid->n;
        const std::size_t N = x0_.size();
        std::vector<double> d2(N);
        double dmin = std::numeric_limits<double>::infinity();
        for (std::size_t p = 0; p < N; ++p) {
            const auto& u = x0_.items[p].values;
            const auto& v = x1_.items[p].values;
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double diff = x.values[j] - (a * v[j] + b * u[j]);
                s += w[j] * diff * diff;
            }
            d2[p] = s;
            dmin = std::min(dmin, s);
        }
        const double inv = 1.0 / (2.0 * h_ * h_);
        Result r{GridFunction(x.grid), false};
        // exp(-dmin * inv) underflows past ~745: no atom is within reach.
        if (dmin * inv > 745.0) {
            r.off_support = true;
            off_support_.fetch_add(1);
            return r;
        }
        double total = 0.0;
        for (std::size_t p = 0; p < N; ++p) {
            const double wt = std::exp(-(d2[p] - dmin) * inv);
            if (wt == 0.0) continue;
            total += wt;
            const auto& u = x0_.items[p].values;
            const auto& v = x1_.items[p].values;
            for (std::size_t j = 0; j < n; ++j) r.velocity.values[j] += wt * (da * v[j] + db * u[j]);
        }
        r.velocity *= 1.0 / total;
        return r;
    }

    GridFunction evaluate(double t, const GridFunction& x) const override { return query(t, x).velocity; }
    std::string name() const override { return "empirical_oracle"; }

private:
    SampleSet x0_, x1_;
    PathSchedule schedule_;
    double h_;
    mutable std::atomic<std::size_t> off_support_{0};
};

/// Median pairwise distance between interpolants X_t^j at time t, over at most
/// `max_points` evenly strided pairs.
inline double median_bandwidth(const SampleSet& x0, const SampleSet& x1, const PathSchedule& s, double t = 0.5,
                               std::size_t max_points = 512) {
    detail::require(x0.size() >= 2 && x0.size() == x1.size(), "median heuristic needs at least two aligned pairs");
    const std::size_t stride = std::max<std::size_t>(1, x0.size() / max_points);
    std::vector<GridFunction> pts;
    for (std::size_t i = 0; i < x0.size(); i += stride) pts.push_back(interpolate(x0[i], x1[i], t, s));
    std::vector<double> d;
    for (std::size_t i = 0; i < pts.size(); ++i)
        for (std::size_t j = i + 1; j < pts.size(); ++j) d.push_back(distance(pts[i], pts[j]));
    auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
    std::nth_element(d.begin(), mid, d.end());
    return *mid;
}

/// max over times and random sample pairs of ||v(t,x) - v(t,y)|| / ||x - y||.
/// Coincident pairs are skipped.
inline double lipschitz_estimate(const VelocityField& field, const SampleSet& samples, const std::vector<double>& times,
                                 std::size_t pair_count, Rng& rng) {
    detail::require(pair_count >= 1, "pair_count must be positive");
    detail::require(samples.size() >= 2, "need at least two samples");
    double best = 0.0;
    for (double t : times) {
        for (std::size_t p = 0; p < pair_count; ++p) {
            const auto i = rng.index(samples.size());
            const auto j = rng.index(samples.size());
            const double dx = distance(samples[i], samples[j]);
            if (!(dx > 0.0)) continue;
            const double dv = distance(field.evaluate(t, samples[i]), field.evaluate(t, samples[j]));
            best = std::max(best, dv / dx);
        }
    }
    log::info("lipschitz estimate k = " + std::to_string(best));
    return best;
}

}  // namespace hrf
