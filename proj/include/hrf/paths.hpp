#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <string>
#include <utility>

#include "error.hpp"
#include "hilbert.hpp"
#include "log.hpp"

namespace hrf {

/// X_t = alpha(t) X1 + beta(t) X0 with t = 0 at noise and t = 1 at data.
struct PathSchedule {
    using Fn = std::function<double(double)>;

    std::string name;
    Fn alpha;
    Fn beta;
    Fn alpha_dot;
    Fn beta_dot;

    double a(double t) const { return alpha(t); }
    double b(double t) const { return beta(t); }
    double da(double t) const { return alpha_dot(t); }
    double db(double t) const { return beta_dot(t); }
};

inline PathSchedule linear_schedule() {
    return PathSchedule{
        "linear",
        [](double t) { return t; },
        [](double t) { return 1.0 - t; },
        [](double) { return 1.0; },
        [](double) { return -1.0; },
    };
}

/// alpha = t, beta = 1 - (1 - sigma_min) t.
inline PathSchedule ot_schedule(double sigma_min) {
    detail::require(sigma_min > 0.0 && sigma_min < 1.0, "ot sigma_min must lie in (0, 1)");
    const double slope = 1.0 - sigma_min;
    return PathSchedule{
        "ot",
        [](double t) { return t; },
        [slope](double t) { return 1.0 - slope * t; },
        [](double) { return 1.0; },
        [slope](double) { return -slope; },
    };
}

/// A monotone C1 map [0,1] -> [0,1] with its derivative.
struct AlphaFunction {
    std::function<double(double)> value;
    std::function<double(double)> derivative;
};

inline AlphaFunction identity_alpha() {
    return {[](double t) { return t; }, [](double) { return 1.0; }};
}

namespace detail {

inline constexpr double vp_beta_floor = 1e-12;
inline constexpr double vp_beta_dot_cap = 1e6;

inline std::atomic<bool>& vp_cap_logged() {
    static std::atomic<bool> flag{false};
    return flag;
}

}  // namespace detail

/// beta = sqrt(1 - alpha^2). The derivative -alpha alpha' / beta is
/// evaluated with beta floored at 1e-12 and capped at 1e6 in magnitude.
inline PathSchedule vp_schedule(AlphaFunction alpha_fn, std::string name = "vp") {
    detail::require(static_cast<bool>(alpha_fn.value) && static_cast<bool>(alpha_fn.derivative),
                    "vp schedule needs alpha and its derivative");
    for (double t : {0.0, 1.0}) {
        const double a = alpha_fn.value(t);
        if (std::abs(a - t) > 1e-12) throw InputError("vp alpha must satisfy alpha(0)=0 and alpha(1)=1");
    }
    for (int i = 0; i <= 100; ++i) {
        const double a = alpha_fn.value(i / 100.0);
        if (!(a >= 0.0 && a <= 1.0)) throw InputError("vp alpha must take values in [0, 1]");
    }
    auto alpha = alpha_fn.value;
    auto alpha_dot = alpha_fn.derivative;
    auto beta = [alpha](double t) {
        const double a = alpha(t);
        return std::sqrt(std::max(0.0, 1.0 - a * a));
    };
    auto beta_dot = [alpha, alpha_dot](double t) {
        const double a = alpha(t);
        const double b = std::sqrt(std::max(0.0, 1.0 - a * a));
        double d = -a * alpha_dot(t) / std::max(b, detail::vp_beta_floor);
        if (std::abs(d) > detail::vp_beta_dot_cap) {
            d = std::copysign(detail::vp_beta_dot_cap, d);
            if (!detail::vp_cap_logged().exchange(true)) log::info("vp schedule: beta_dot cap of 1e6 reached near alpha = 1");
        }
        return d;
    };
    return PathSchedule{std::move(name), std::move(alpha), std::move(beta), std::move(alpha_dot), std::move(beta_dot)};
}

inline PathSchedule vp_linear_schedule() { return vp_schedule(identity_alpha(), "vp_linear_alpha"); }

inline void check_time(double t) {
    if (!(t >= 0.0 && t <= 1.0)) throw InputError("time " + std::to_string(t) + " outside [0, 1]");
}

inline GridFunction interpolate(const GridFunction& x0, const GridFunction& x1, double t, const PathSchedule& s) {
    check_same_grid(x0, x1);
    check_time(t);
    const double a = s.a(t);
    const double b = s.b(t);
    GridFunction out(x0.grid);
    for (std::size_t i = 0; i < out.size(); ++i) out.values[i] = a * x1.values[i] + b * x0.values[i];
    return out;
}

/// d/dt X_t = alpha'(t) x1 + beta'(t) x0.
inline GridFunction path_velocity(const GridFunction& x0, const GridFunction& x1, double t, const PathSchedule& s) {
    check_same_grid(x0, x1);
    check_time(t);
    const double da = s.da(t);
    const double db = s.db(t);
    GridFunction out(x0.grid);
    for (std::size_t i = 0; i < out.size(); ++i) out.values[i] = da * x1.values[i] + db * x0.values[i];
    return out;
}

/// Worst-case deviations of a schedule from its contract.
struct ScheduleCheck {
    double endpoint_error = 0.0;       // |alpha(0)| + |alpha(1) - 1|
    double derivative_error = 0.0;     // central difference vs analytic derivative
    double norm_identity_error = 0.0;  // max |alpha^2 + beta^2 - 1|
};

/// alpha' is checked at 101 points (clamped into the interior), beta' at the
/// 11 interior points t = i/12, where VP-type schedules are still smooth.
inline ScheduleCheck check_schedule(const PathSchedule& s, double h = 1e-6) {
    ScheduleCheck c;
    c.endpoint_error = std::abs(s.a(0.0)) + std::abs(s.a(1.0) - 1.0);
    for (int i = 0; i <= 100; ++i) {
        const double t = i / 100.0;
        const double a = s.a(t);
        const double b = s.b(t);
        c.norm_identity_error = std::max(c.norm_identity_error, std::abs(a * a + b * b - 1.0));
        const double tc = std::clamp(t, 2 * h, 1.0 - 2 * h);
        const double fda = (s.a(tc + h) - s.a(tc - h)) / (2 * h);
        c.derivative_error = std::max(c.derivative_error, std::abs(fda - s.da(tc)));
    }
    for (int i = 1; i <= 11; ++i) {
        const double t = i / 12.0;
        const double fdb = (s.b(t + h) - s.b(t - h)) / (2 * h);
        c.derivative_error = std::max(c.derivative_error, std::abs(fdb - s.db(t)));
    }
    return c;
}

}  // namespace hrf
