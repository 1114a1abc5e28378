#pragma once

// Rectify, reflow, straightness, coupling variance and convex transport costs.

#include <cmath>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "csv.hpp"
#include "error.hpp"
#include "hilbert.hpp"
#include "log.hpp"
#include "metrics.hpp"
#include "models.hpp"
#include "ode.hpp"
#include "parallel.hpp"
#include "paths.hpp"

namespace hrf {

/// Paired endpoints; item j of x0 is coupled with item j of x1.
struct Coupling {
    SampleSet x0;
    SampleSet x1;
    std::size_t generation = 0;

    std::size_t size() const { return x0.size(); }

    void validate() const {
        if (x0.size() != x1.size()) throw InputError("coupling sides have different lengths");
        if (x0.size() == 0) throw InputError("coupling is empty");
        if (!same_grid(x0.grid, x1.grid)) throw InputError("coupling sides live on different grids");
    }
};

struct CostFunction {
    enum class Kind { squared_l2, l2, huber };
    Kind kind = Kind::squared_l2;
    double delta = 1.0;  // huber only

    static CostFunction squared_l2() { return {Kind::squared_l2, 1.0}; }
    static CostFunction l2() { return {Kind::l2, 1.0}; }
    static CostFunction huber(double delta) {
        detail::require(delta > 0.0, "huber delta must be positive");
        return {Kind::huber, delta};
    }

    /// c(d) for ||d|| = r. Huber: r^2/2 inside delta, delta (r - delta/2) outside.
    double operator()(double r) const {
        switch (kind) {
            case Kind::squared_l2: return r * r;
            case Kind::l2: return r;
            case Kind::huber: return r <= delta ? 0.5 * r * r : delta * (r - 0.5 * delta);
        }
        return r;
    }
};

namespace detail {

inline Estimate mean_estimate(const std::vector<double>& xs) {
    Estimate e;
    if (xs.empty()) return e;
    for (double x : xs) e.value += x;
    e.value /= static_cast<double>(xs.size());
    e.stderr_ = stddev(xs) / std::sqrt(static_cast<double>(xs.size()));
    return e;
}

}  // namespace detail

/// (1/N) sum_j c(x1_j - x0_j), with the standard error of the mean.
inline Estimate transport_cost(const Coupling& coupling, const CostFunction& c) {
    coupling.validate();
    std::vector<double> terms(coupling.size());
    for (std::size_t j = 0; j < coupling.size(); ++j) terms[j] = c(distance(coupling.x1[j], coupling.x0[j]));
    return detail::mean_estimate(terms);
}

/// Trapezoid over the recorded times of ||D - v(t, z(t))||^2 with D the
/// chord slope (z_end - z_start) / (t_end - t_start).
inline double trajectory_straightness(const Trajectory& tr) {
    if (tr.times.size() < 2 || tr.velocities.size() != tr.times.size() || tr.states.size() != tr.times.size())
        throw InputError("straightness needs at least two recorded times with velocities");
    const double span = tr.times.back() - tr.times.front();
    if (span == 0.0) throw InputError("trajectory has zero time span");
    GridFunction chord = tr.states.back() - tr.states.front();
    chord *= 1.0 / span;
    std::vector<double> f(tr.times.size());
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = squared_distance(chord, tr.velocities[i]);
    double s = 0.0;
    for (std::size_t i = 1; i < f.size(); ++i) s += 0.5 * (f[i] + f[i - 1]) * std::abs(tr.times[i] - tr.times[i - 1]);
    return s;
}

/// Monte Carlo mean of trajectory_straightness.
inline Estimate straightness(const std::vector<Trajectory>& trajectories) {
    detail::require(!trajectories.empty(), "straightness needs trajectories");
    std::vector<double> terms(trajectories.size());
    for (std::size_t j = 0; j < trajectories.size(); ++j) terms[j] = trajectory_straightness(trajectories[j]);
    return detail::mean_estimate(terms);
}

/// Integral over t of E||d/dt X_t - v(t, X_t)||^2 on `t_nodes` uniform nodes
/// (trapezoid), averaged over the first `mc_samples` pairs (0 = all). With v
/// the exact conditional expectation this is the coupling variance; with any
/// other field it is an upper bound. The standard error treats each pair's
/// time integral as one draw.
inline Estimate coupling_variance(const Coupling& coupling, const PathSchedule& schedule, const VelocityField& field,
                                  std::size_t t_nodes = 33, std::size_t mc_samples = 0) {
    coupling.validate();
    detail::require(t_nodes >= 2, "coupling variance needs at least two time nodes");
    const std::size_t n = mc_samples == 0 ? coupling.size() : std::min(mc_samples, coupling.size());
    std::vector<double> terms(n);
    parallel_for(n, [&](std::size_t j) {
        const auto& x0 = coupling.x0[j];
        const auto& x1 = coupling.x1[j];
        double s = 0.0, prev = 0.0;
        for (std::size_t q = 0; q < t_nodes; ++q) {
            const double t = static_cast<double>(q) / static_cast<double>(t_nodes - 1);
            const double f = squared_distance(path_velocity(x0, x1, t, schedule), field.evaluate(t, interpolate(x0, x1, t, schedule)));
            if (q > 0) s += 0.5 * (f + prev) / static_cast<double>(t_nodes - 1);
            prev = f;
        }
        terms[j] = s;
    });
    return detail::mean_estimate(terms);
}

/// Per-mode moments (1/N normalisation) and mean functions of a coupling,
/// turned into the closed-form oracle for its interpolation.
inline std::shared_ptr<GaussianOracle> fit_gaussian_oracle(const Coupling& coupling, const SpectralBasis& basis,
                                                           const PathSchedule& schedule) {
    coupling.validate();
    const std::size_t N = coupling.size();
    const double inv = 1.0 / static_cast<double>(N);
    GridFunction m0(coupling.x0.grid), m1(coupling.x1.grid);
    for (std::size_t j = 0; j < N; ++j) {
        m0.axpy(inv, coupling.x0[j]);
        m1.axpy(inv, coupling.x1[j]);
    }
    const auto c0 = mode_coordinates(coupling.x0, basis);
    const auto c1 = mode_coordinates(coupling.x1, basis);
    std::vector<ModeMoments> modes(basis.size());
    for (std::size_t i = 0; i < basis.size(); ++i) {
        auto& m = modes[i];
        for (std::size_t j = 0; j < N; ++j) {
            m.mean0 += c0[i][j];
            m.mean1 += c1[i][j];
        }
        m.mean0 *= inv;
        m.mean1 *= inv;
        for (std::size_t j = 0; j < N; ++j) {
            const double d0 = c0[i][j] - m.mean0, d1 = c1[i][j] - m.mean1;
            m.var0 += d0 * d0;
            m.var1 += d1 * d1;
            m.cov01 += d0 * d1;
        }
        m.var0 *= inv;
        m.var1 *= inv;
        m.cov01 *= inv;
    }
    return std::make_shared<GaussianOracle>(basis, std::move(modes), m0, m1, schedule);
}

struct RectifyResult {
    Coupling coupling;
    Estimate straightness;  // of the flow that produced `coupling`
};

/// Z0 = the coupling's x0, Z1 = ODE terminal states under `field`. The
/// straightness of the flow is accumulated per trajectory without storing it.
inline RectifyResult rectify_coupling(const VelocityField& field, const Coupling& coupling, const SolverConfig& solver) {
    coupling.validate();
    SolverConfig c = solver;
    c.record_every = 1;
    RectifyResult r;
    r.coupling.x0 = coupling.x0;
    r.coupling.x1 = SampleSet{coupling.x0.grid, std::vector<GridFunction>(coupling.size()), "rectified", coupling.x0.seed};
    r.coupling.generation = coupling.generation + 1;
    std::vector<double> s(coupling.size());
    parallel_for(coupling.size(), [&](std::size_t j) {
        const auto tr = integrate(field, coupling.x0[j], c);
        s[j] = trajectory_straightness(tr);
        r.coupling.x1.items[j] = tr.terminal();
    });
    r.straightness = detail::mean_estimate(s);
    return r;
}

/// Fresh Z0 ~ measure0; the result's generation is 1.
inline RectifyResult rectify_coupling(const VelocityField& field, const GaussianMeasure& measure0, std::size_t count,
                                      const SolverConfig& solver, Rng& rng) {
    Coupling start{sample_gaussian(measure0, count, rng), {}, 0};
    start.x1 = start.x0;
    return rectify_coupling(field, start, solver);
}

/// Field for the interpolation of coupling k.
using FieldProvider = std::function<std::shared_ptr<const VelocityField>(const Coupling&, std::size_t k)>;

inline FieldProvider oracle_provider(const SpectralBasis& basis, const PathSchedule& schedule) {
    return [basis, schedule](const Coupling& c, std::size_t) { return fit_gaussian_oracle(c, basis, schedule); };
}

struct ReflowOptions {
    std::size_t iterations = 1;
    SolverConfig solver;
    PathSchedule schedule = linear_schedule();
    std::size_t v_time_nodes = 33;
    std::size_t v_mc_samples = 0;
    /// Set when the provider returns learned fields: V is then an upper bound.
    bool v_upper_bound = false;
    /// Enables the ks_max column (two-sample KS of Z1 against the original X1).
    std::optional<SpectralBasis> ks_basis;
};

struct ReflowRow {
    std::size_t k = 0;
    Estimate straightness;  // S(Z^{k+1})
    Estimate variance;      // V((Z0^k, Z1^k))
    Estimate cost_sq;       // E||Z1^{k+1} - Z0^{k+1}||^2
    Estimate cost_l2;
    double ks_max = 0.0;
};

struct ReflowResult {
    std::vector<Coupling> couplings;  // generation 0 .. K
    std::vector<ReflowRow> rows;
    Estimate base_cost_sq;
    bool v_upper_bound = false;
};

inline ReflowResult reflow(const Coupling& initial, const FieldProvider& provider, const ReflowOptions& opt) {
    initial.validate();
    detail::require(opt.iterations >= 1, "reflow needs at least one iteration");
    ReflowResult out;
    out.v_upper_bound = opt.v_upper_bound;
    out.base_cost_sq = transport_cost(initial, CostFunction::squared_l2());
    out.couplings.push_back(initial);
    for (std::size_t k = 0; k < opt.iterations; ++k) {
        const Coupling& cur = out.couplings.back();
        const auto field = provider(cur, k);
        ReflowRow row;
        row.k = k;
        row.variance = coupling_variance(cur, opt.schedule, *field, opt.v_time_nodes, opt.v_mc_samples);
        auto next = rectify_coupling(*field, cur, opt.solver);
        row.straightness = next.straightness;
        row.cost_sq = transport_cost(next.coupling, CostFunction::squared_l2());
        row.cost_l2 = transport_cost(next.coupling, CostFunction::l2());
        if (opt.ks_basis) row.ks_max = per_mode_ks(next.coupling.x1, initial.x1, *opt.ks_basis).max;
        log::info("reflow k=" + std::to_string(k) + " S=" + std::to_string(row.straightness.value) +
                  " V=" + std::to_string(row.variance.value) + " cost=" + std::to_string(row.cost_sq.value));
        out.rows.push_back(row);
        out.couplings.push_back(std::move(next.coupling));
    }
    return out;
}

/// `k,S,V,cost_sq,cost_l2,ks_max`, one row per iteration.
inline void write_reflow_csv(std::ostream& out, const ReflowResult& r) {
    out << "k,S,V,cost_sq,cost_l2,ks_max\n";
    for (const auto& row : r.rows)
        out << row.k << ',' << csv::fmt17(row.straightness.value) << ',' << csv::fmt17(row.variance.value) << ','
            << csv::fmt17(row.cost_sq.value) << ',' << csv::fmt17(row.cost_l2.value) << ',' << csv::fmt17(row.ks_max)
            << '\n';
}

}  // namespace hrf
