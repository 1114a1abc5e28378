#pragma once

// Fixed-step explicit integration of dz/dt = v(t, z).

#include <algorithm>
#include <cmath>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "csv.hpp"
#include "error.hpp"
#include "hilbert.hpp"
#include "log.hpp"
#include "models.hpp"
#include "parallel.hpp"
#include "rng.hpp"

namespace hrf {

enum class Method { euler, midpoint, rk4 };
enum class Direction { forward, reverse };

inline Method parse_method(const std::string& s) {
    if (s == "euler") return Method::euler;
    if (s == "midpoint") return Method::midpoint;
    if (s == "rk4") return Method::rk4;
    throw InputError("unknown solver method '" + s + "'");
}

inline Direction parse_direction(const std::string& s) {
    if (s == "forward") return Direction::forward;
    if (s == "reverse") return Direction::reverse;
    throw InputError("unknown direction '" + s + "'");
}

struct SolverConfig {
    Method method = Method::rk4;
    std::size_t steps = 100;
    Direction direction = Direction::forward;
    std::size_t record_every = 1;  // 0 records only the two endpoints
    /// Explicit [start, end] times; overrides `direction` when set.
    std::optional<std::pair<double, double>> span;
    /// Shrink distance for fields flagged endpoint-degenerate.
    double endpoint_eps = 1e-3;

    std::pair<double, double> interval() const {
        if (span) return *span;
        return direction == Direction::forward ? std::pair{0.0, 1.0} : std::pair{1.0, 0.0};
    }
};

struct Trajectory {
    std::vector<double> times;
    std::vector<GridFunction> states;
    std::vector<GridFunction> velocities;

    const GridFunction& initial() const { return states.front(); }
    const GridFunction& terminal() const { return states.back(); }
};

namespace detail {

inline double clamp_unit(double t) { return std::clamp(t, 0.0, 1.0); }

inline GridFunction ode_step(const VelocityField& f, Method m, double t, const GridFunction& z, double h,
                             const GridFunction* k1_known = nullptr) {
    GridFunction k1 = k1_known ? *k1_known : f.evaluate(t, z);
    switch (m) {
        case Method::euler: {
            GridFunction out = z;
            return out.axpy(h, k1);
        }
        case Method::midpoint: {
            GridFunction mid = z;
            mid.axpy(0.5 * h, k1);
            const auto k2 = f.evaluate(clamp_unit(t + 0.5 * h), mid);
            GridFunction out = z;
            return out.axpy(h, k2);
        }
        case Method::rk4: {
            GridFunction tmp = z;
            tmp.axpy(0.5 * h, k1);
            const auto k2 = f.evaluate(clamp_unit(t + 0.5 * h), tmp);
            tmp = z;
            tmp.axpy(0.5 * h, k2);
            const auto k3 = f.evaluate(clamp_unit(t + 0.5 * h), tmp);
            tmp = z;
            tmp.axpy(h, k3);
            const auto k4 = f.evaluate(clamp_unit(t + h), tmp);
            GridFunction out = z;
            const auto n = out.size();
            for (std::size_t i = 0; i < n; ++i)
                out.values[i] += h / 6.0 * (k1.values[i] + 2.0 * k2.values[i] + 2.0 * k3.values[i] + k4.values[i]);
            return out;
        }
    }
    return z;
}

}  // namespace detail

/// Integrates from z0 over the configured interval with `steps` equal steps.
/// Fields flagged endpoint-degenerate are integrated on the interval shrunk by
/// endpoint_eps at both ends, with a single Euler step across each gap using
/// the field at the interior end of the gap.
inline Trajectory integrate(const VelocityField& field, const GridFunction& z0, const SolverConfig& config) {
    detail::require(config.steps >= 1, "solver steps must be positive");
    if (!z0.finite()) throw SolverError("initial state is not finite");
    auto [t_start, t_end] = config.interval();
    detail::require(t_start >= 0.0 && t_start <= 1.0 && t_end >= 0.0 && t_end <= 1.0 && t_start != t_end,
                    "integration interval must be a non-empty sub-interval of [0, 1]");
    const double dir = t_end > t_start ? 1.0 : -1.0;
    const bool shrink = field.endpoint_degenerate() && config.endpoint_eps > 0.0;

    Trajectory tr;
    GridFunction z = z0;
    auto record = [&](double t, const GridFunction& state, GridFunction vel) {
        tr.times.push_back(t);
        tr.states.push_back(state);
        tr.velocities.push_back(std::move(vel));
    };
    auto check = [&](const GridFunction& s, std::size_t step) {
        if (!s.finite()) throw SolverError("non-finite state at step " + std::to_string(step));
    };

    double a = t_start, b = t_end;
    if (shrink) {
        a = t_start + dir * config.endpoint_eps;
        b = t_end - dir * config.endpoint_eps;
        const auto v = field.evaluate(a, z);
        record(t_start, z, v);
        z.axpy(a - t_start, v);
        check(z, 0);
    }

    const double h = (b - a) / static_cast<double>(config.steps);
    for (std::size_t s = 0; s < config.steps; ++s) {
        const double t = detail::clamp_unit(a + static_cast<double>(s) * h);
        auto k1 = field.evaluate(t, z);
        const bool rec = s == 0 || (config.record_every > 0 && s % config.record_every == 0);
        if (rec) record(t, z, k1);
        z = detail::ode_step(field, config.method, t, z, h, &k1);
        check(z, s + 1);
    }
    if (shrink) {
        const auto v = field.evaluate(b, z);
        record(b, z, v);
        z.axpy(t_end - b, v);
        check(z, config.steps + 1);
        record(t_end, z, v);
    } else {
        record(b, z, field.evaluate(b, z));
    }
    return tr;
}

/// Unit-norm constant function, the default perturbation direction.
inline GridFunction unit_constant(const GridPtr& grid) {
    return GridFunction::constant(grid, 1.0 / std::sqrt(grid->length()));
}

/// sup_t ||z(t) - z~(t)|| / ||delta e||, where z~ starts from z0 + delta e.
inline double solution_map_probe(const VelocityField& field, const GridFunction& z0, double delta,
                                 const SolverConfig& config, const GridFunction& direction) {
    detail::require(delta > 0.0, "delta must be positive");
    check_same_grid(z0, direction);
    const double dnorm = delta * norm(direction);
    detail::require(dnorm > 0.0, "perturbation direction must be non-zero");
    SolverConfig c = config;
    c.record_every = 1;
    const auto base = integrate(field, z0, c);
    GridFunction z1 = z0;
    z1.axpy(delta, direction);
    const auto pert = integrate(field, z1, c);
    double worst = 0.0;
    for (std::size_t i = 0; i < base.states.size(); ++i)
        worst = std::max(worst, distance(base.states[i], pert.states[i]) / dnorm);
    log::info("solution map probe ratio = " + std::to_string(worst));
    return worst;
}

inline double solution_map_probe(const VelocityField& field, const GridFunction& z0, double delta,
                                 const SolverConfig& config) {
    return solution_map_probe(field, z0, delta, config, unit_constant(z0.grid));
}

struct FlowSamples {
    SampleSet z0;
    SampleSet z1;
    std::vector<Trajectory> trajectories;  // empty unless requested
};

/// Pushes every initial condition through the ODE; pairing is by index.
inline FlowSamples push_forward(const VelocityField& field, const SampleSet& initial, const SolverConfig& config,
                                bool keep_trajectories = false) {
    FlowSamples out;
    out.z0 = initial;
    out.z1 = SampleSet{initial.grid, std::vector<GridFunction>(initial.size()), "flow", initial.seed};
    if (keep_trajectories) out.trajectories.resize(initial.size());
    SolverConfig c = config;
    if (!keep_trajectories) c.record_every = 0;
    parallel_for(initial.size(), [&](std::size_t i) {
        auto tr = integrate(field, initial[i], c);
        out.z1.items[i] = tr.terminal();
        if (keep_trajectories) out.trajectories[i] = std::move(tr);
    });
    return out;
}

/// Z0 ~ measure0, Z1 = terminal state of the ODE started at Z0.
inline FlowSamples sample_flow(const VelocityField& field, const GaussianMeasure& measure0, std::size_t count,
                               const SolverConfig& config, Rng& rng, bool keep_trajectories = false) {
    auto z0 = sample_gaussian(measure0, count, rng);
    return push_forward(field, z0, config, keep_trajectories);
}

/// Header `t,node_0,...`; one row per recorded time.
inline void write_trajectory_csv(std::ostream& out, const Trajectory& tr) {
    out << 't';
    const std::size_t n = tr.states.empty() ? 0 : tr.states.front().size();
    for (std::size_t j = 0; j < n; ++j) out << ",node_" << j;
    out << '\n';
    for (std::size_t i = 0; i < tr.times.size(); ++i) {
        out << csv::fmt17(tr.times[i]);
        for (double v : tr.states[i].values) out << ',' << csv::fmt17(v);
        out << '\n';
    }
}

}  // namespace hrf
