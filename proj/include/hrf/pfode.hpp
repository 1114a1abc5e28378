#pragma once

// Variance-preserving noising dY = -(sigma/2) Y dt + sqrt(sigma) dW_Q, handled
// only through its Gaussian transition Y_t = eta(t) Y_0 + sqrt(kappa(t)) U,
// U ~ N(0, Q), and the reverse-time probability flow ODE
//   dY = -(sigma(t)/2) (Y + S*(t, Y)) dt.
// Here t = 0 is data; induced_rf_schedule maps back to the t = 1 data convention.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <variant>
#include <vector>

#include "error.hpp"
#include "hilbert.hpp"
#include "models.hpp"
#include "ode.hpp"
#include "parallel.hpp"
#include "paths.hpp"
#include "rng.hpp"

namespace hrf {

struct SigmaSchedule {
    enum class Kind { constant, linear };
    Kind kind = Kind::constant;
    double sigma0 = 1.0;
    double sigma_min = 0.1;
    double sigma_max = 20.0;

    static SigmaSchedule constant(double s) {
        detail::require(s >= 0.0 && std::isfinite(s), "sigma must be finite and non-negative");
        return {Kind::constant, s, s, s};
    }
    static SigmaSchedule linear(double lo, double hi) {
        detail::require(lo >= 0.0 && hi >= 0.0 && std::isfinite(lo) && std::isfinite(hi),
                        "sigma bounds must be finite and non-negative");
        return {Kind::linear, lo, lo, hi};
    }

    double operator()(double t) const {
        return kind == Kind::constant ? sigma0 : sigma_min + (sigma_max - sigma_min) * t;
    }
    double bound() const { return kind == Kind::constant ? sigma0 : std::max(sigma_min, sigma_max); }
};

inline SigmaSchedule::Kind parse_sigma_kind(const std::string& s) {
    if (s == "constant") return SigmaSchedule::Kind::constant;
    if (s == "linear") return SigmaSchedule::Kind::linear;
    throw InputError("unknown sigma kind '" + s + "'");
}

struct EtaKappa {
    double eta = 1.0;
    double kappa = 0.0;
};

inline constexpr std::size_t pfode_subintervals = 1024;

/// eta = exp(-1/2 int_0^t sigma), kappa solving kappa' = sigma (1 - kappa),
/// kappa(0) = 0. Closed forms for constant sigma; otherwise composite Simpson
/// and rk4 on `pfode_subintervals` equal pieces of [0, t].
inline EtaKappa eta_kappa(const SigmaSchedule& s, double t) {
    check_time(t);
    if (s.kind == SigmaSchedule::Kind::constant) return {std::exp(-0.5 * s.sigma0 * t), -std::expm1(-s.sigma0 * t)};
    if (t == 0.0) return {};
    const std::size_t m = pfode_subintervals;
    const double h = t / static_cast<double>(m);
    double simpson = s(0.0) + s(t);
    for (std::size_t i = 1; i < m; ++i) simpson += (i % 2 ? 4.0 : 2.0) * s(static_cast<double>(i) * h);
    const double integral = simpson * h / 3.0;
    double k = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double t0 = static_cast<double>(i) * h;
        auto f = [&](double tt, double kk) { return s(tt) * (1.0 - kk); };
        const double k1 = f(t0, k);
        const double k2 = f(t0 + 0.5 * h, k + 0.5 * h * k1);
        const double k3 = f(t0 + 0.5 * h, k + 0.5 * h * k2);
        const double k4 = f(t0 + h, k + h * k3);
        k += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return {std::exp(-0.5 * integral), k};
}

/// eta_kappa memoised per time value; safe to share across workers.
class PfodeCoefficients {
public:
    explicit PfodeCoefficients(SigmaSchedule s) : sigma_(s) {}

    const SigmaSchedule& sigma() const { return sigma_; }

    EtaKappa at(double t) const {
        if (sigma_.kind == SigmaSchedule::Kind::constant) return eta_kappa(sigma_, t);
        const auto key = std::bit_cast<std::uint64_t>(t);
        {
            std::lock_guard<std::mutex> lock(mu_);
            if (auto it = cache_.find(key); it != cache_.end()) return it->second;
        }
        const auto v = eta_kappa(sigma_, t);
        std::lock_guard<std::mutex> lock(mu_);
        if (cache_.size() > 100000) cache_.clear();
        cache_.emplace(key, v);
        return v;
    }

    double eta_dot(double t) const { return -0.5 * sigma_(t) * at(t).eta; }
    double kappa_dot(double t) const { return sigma_(t) * (1.0 - at(t).kappa); }

private:
    SigmaSchedule sigma_;
    mutable std::mutex mu_;
    mutable std::map<std::uint64_t, EtaKappa> cache_;
};

/// Logarithmic gradient of N(m, kappa Q) along the Cameron-Martin space: (m - x) / kappa.
inline GridFunction gaussian_log_gradient(const GridFunction& m, double kappa, const GridFunction& x) {
    if (!(kappa > 0.0)) throw InputError("log gradient needs kappa > 0");
    check_same_grid(m, x);
    GridFunction out = m - x;
    out *= 1.0 / kappa;
    return out;
}

/// Y_0 data law: a Gaussian measure diagonal in the noise basis, or atoms.
using PfodeData = std::variant<GaussianMeasure, SampleSet>;

namespace detail {

inline EtaKappa positive_kappa(const PfodeCoefficients& c, double t) {
    check_time(t);
    const auto ek = c.at(t);
    if (!(ek.kappa > 0.0)) throw InputError("score undefined where kappa(t) = 0 (t = " + std::to_string(t) + ")");
    return ek;
}

/// Posterior means E[Y0 | Y_t = y] and E[U | Y_t = y] for Gaussian data.
/// Components outside the basis span are deterministic: Y0 equals the data
/// mean there and U vanishes.
inline std::pair<GridFunction, GridFunction> gaussian_posterior(const GaussianMeasure& data, const SpectralBasis& noise,
                                                                double eta, double kappa, const GridFunction& y) {
    if (data.basis.size() != noise.size()) throw InputError("data and noise bases differ in size");
    const auto cy = project(y, noise);
    const auto cm = project(data.mean, noise);
    const double sk = std::sqrt(kappa);
    std::vector<double> e0(noise.size()), eu(noise.size());
    for (std::size_t i = 0; i < noise.size(); ++i) {
        const double v0 = data.mode_variance(i);
        const double lam = noise.eigenvalues[i];
        const double var = eta * eta * v0 + kappa * lam;
        const double r = cy[i] - eta * cm[i];
        e0[i] = cm[i] + (var > 0.0 ? eta * v0 / var * r : 0.0);
        eu[i] = var > 0.0 ? sk * lam / var * r : 0.0;
    }
    GridFunction m_off = data.mean - reconstruct(cm, noise);
    return {reconstruct(e0, noise) + m_off, reconstruct(eu, noise)};
}

/// Posterior weights over atoms under Y_t | Y0 = a ~ N(eta a, kappa Q),
/// using the Cameron-Martin distance on the basis coordinates.
inline std::vector<double> atom_weights(const SampleSet& atoms, const SpectralBasis& noise, double eta, double kappa,
                                        const GridFunction& y) {
    detail::require(atoms.size() >= 1, "score needs at least one data atom");
    const auto cy = project(y, noise);
    std::vector<double> logw(atoms.size());
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < atoms.size(); ++j) {
        const auto ca = project(atoms[j], noise);
        double s = 0.0;
        for (std::size_t i = 0; i < noise.size(); ++i) {
            if (!(noise.eigenvalues[i] > 0.0)) continue;
            const double d = cy[i] - eta * ca[i];
            s += d * d / noise.eigenvalues[i];
        }
        logw[j] = -0.5 * s / kappa;
        best = std::max(best, logw[j]);
    }
    double total = 0.0;
    for (auto& w : logw) total += (w = std::exp(w - best));
    for (auto& w : logw) w /= total;
    return logw;
}

}  // namespace detail

/// S*(t, y) = E[(eta Y0 - y) / kappa | Y_t = y].
inline GridFunction conditional_score(const PfodeData& data, const SpectralBasis& noise, const PfodeCoefficients& coeffs,
                                      double t, const GridFunction& y) {
    const auto ek = detail::positive_kappa(coeffs, t);
    GridFunction post(y.grid);
    if (const auto* g = std::get_if<GaussianMeasure>(&data)) {
        post = detail::gaussian_posterior(*g, noise, ek.eta, ek.kappa, y).first;
    } else {
        const auto& atoms = std::get<SampleSet>(data);
        const auto w = detail::atom_weights(atoms, noise, ek.eta, ek.kappa, y);
        for (std::size_t j = 0; j < atoms.size(); ++j)
            if (w[j] > 0.0) post.axpy(w[j], atoms[j]);
    }
    GridFunction s = post * ek.eta;
    s.axpy(-1.0, y);
    s *= 1.0 / ek.kappa;
    return s;
}

/// -(sigma(t)/2) (y + score).
inline GridFunction pfode_drift(const SigmaSchedule& sigma, const GridFunction& score, double t, const GridFunction& y) {
    check_time(t);
    check_same_grid(score, y);
    GridFunction d = y + score;
    d *= -0.5 * sigma(t);
    return d;
}

/// E[d/dt Y_t | Y_t = y] from the transition Y_t = eta Y0 + sqrt(kappa) U:
/// eta' E[Y0 | y] + kappa' / (2 sqrt(kappa)) E[U | y].
inline GridFunction forward_construction_drift(const GaussianMeasure& data, const SpectralBasis& noise,
                                               const PfodeCoefficients& coeffs, double t, const GridFunction& y) {
    const auto ek = detail::positive_kappa(coeffs, t);
    const auto [e0, eu] = detail::gaussian_posterior(data, noise, ek.eta, ek.kappa, y);
    GridFunction d = e0 * coeffs.eta_dot(t);
    d.axpy(coeffs.kappa_dot(t) / (2.0 * std::sqrt(ek.kappa)), eu);
    return d;
}

/// eta(t) y0 + sqrt(kappa(t)) u.
inline GridFunction forward_construct(const GridFunction& y0, const PfodeCoefficients& coeffs, double t,
                                      const GridFunction& u) {
    check_same_grid(y0, u);
    const auto ek = coeffs.at(t);
    GridFunction out = y0 * ek.eta;
    out.axpy(std::sqrt(ek.kappa), u);
    return out;
}

/// The probability flow drift as a field, to be integrated from 1 down to eps.
class PfodeField final : public VelocityField {
public:
    PfodeField(PfodeData data, SpectralBasis noise, SigmaSchedule sigma)
        : data_(std::move(data)), noise_(std::move(noise)), coeffs_(std::make_shared<PfodeCoefficients>(sigma)) {
        if (const auto* g = std::get_if<GaussianMeasure>(&data_)) {
            detail::require(g->strictly_positive(), "PF-ODE needs a strictly positive data spectrum");
            detail::require(same_grid(g->basis.grid, noise_.grid), "data and noise bases must share a grid");
        }
        for (double l : noise_.eigenvalues) detail::require(l > 0.0, "PF-ODE needs a strictly positive noise spectrum");
    }

    GridFunction evaluate(double t, const GridFunction& y) const override {
        return pfode_drift(coeffs_->sigma(), conditional_score(data_, noise_, *coeffs_, t, y), t, y);
    }
    std::string name() const override { return "pfode"; }

    const PfodeCoefficients& coefficients() const { return *coeffs_; }

private:
    PfodeData data_;
    SpectralBasis noise_;
    std::shared_ptr<PfodeCoefficients> coeffs_;
};

/// alpha(t) = eta(1 - t), beta(t) = sqrt(kappa(1 - t)); t = 1 is data again.
/// beta' uses kappa' = sigma (1 - kappa) with the same floor and cap as the
/// VP family near the data endpoint.
inline PathSchedule induced_rf_schedule(const SigmaSchedule& sigma) {
    auto c = std::make_shared<PfodeCoefficients>(sigma);
    PathSchedule s;
    s.name = "pfode";
    s.alpha = [c](double t) { return c->at(1.0 - t).eta; };
    s.beta = [c](double t) { return std::sqrt(std::max(0.0, c->at(1.0 - t).kappa)); };
    s.alpha_dot = [c](double t) { return -c->eta_dot(1.0 - t); };
    s.beta_dot = [c](double t) {
        const double u = 1.0 - t;
        const double b = std::max(std::sqrt(std::max(0.0, c->at(u).kappa)), detail::vp_beta_floor);
        return std::max(-detail::vp_beta_dot_cap, -c->kappa_dot(u) / (2.0 * b));
    };
    return s;
}

struct PfodeSampleConfig {
    SolverConfig solver;  // method and steps; the span is set from eps
    double eps = 1e-3;
};

/// Y1 ~ N(0, Q) per item stream, integrated in reverse from t = 1 to eps.
inline SampleSet pfode_sample(const PfodeData& data, const SpectralBasis& noise, const SigmaSchedule& sigma,
                              std::size_t count, const PfodeSampleConfig& config, std::uint64_t seed) {
    detail::require(count >= 1, "sample count must be positive");
    detail::require(config.eps > 0.0 && config.eps < 1.0, "eps must lie in (0, 1)");
    const PfodeField field(data, noise, sigma);
    const auto prior = GaussianMeasure::centered(noise);
    SolverConfig c = config.solver;
    c.span = std::pair{1.0, config.eps};
    c.record_every = 0;
    SampleSet out{noise.grid, std::vector<GridFunction>(count), "pfode", seed};
    parallel_for(count, [&](std::size_t j) {
        auto rng = Rng::stream(seed, j);
        const auto y1 = sample_gaussian(prior, 1, rng);
        out.items[j] = integrate(field, y1[0], c).terminal();
    });
    return out;
}

}  // namespace hrf
