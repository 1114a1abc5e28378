#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"

using namespace hrf;

TEST(Paths, LinearEndpointsAndVelocity) {
    auto g = make_uniform_grid(8);
    const auto x0 = GridFunction::constant(g, -1.0);
    const auto x1 = GridFunction::constant(g, 3.0);
    const auto s = linear_schedule();
    EXPECT_EQ(interpolate(x0, x1, 0.0, s), x0);
    EXPECT_EQ(interpolate(x0, x1, 1.0, s), x1);
    for (double t : {0.0, 0.3, 1.0}) EXPECT_EQ(path_velocity(x0, x1, t, s), x1 - x0);
    EXPECT_THROW(interpolate(x0, x1, 1.5, s), InputError);
    EXPECT_THROW(interpolate(x0, x1, -0.1, s), InputError);
}

TEST(Paths, OtSchedule) {
    const auto s = ot_schedule(0.01);
    EXPECT_NEAR(s.b(1.0), 0.01, 1e-15);
    EXPECT_DOUBLE_EQ(s.a(1.0), 1.0);
    const auto c = check_schedule(s);
    EXPECT_LT(c.endpoint_error, 1e-15);
    EXPECT_LT(c.derivative_error, 1e-6);
    EXPECT_THROW(ot_schedule(0.0), InputError);
    EXPECT_THROW(ot_schedule(1.0), InputError);
}

TEST(Paths, VpSchedule) {
    const auto s = vp_linear_schedule();
    const auto c = check_schedule(s);
    EXPECT_LT(c.endpoint_error, 1e-15);
    EXPECT_LT(c.derivative_error, 1e-6);
    EXPECT_LT(c.norm_identity_error, 1e-12);
    EXPECT_NEAR(s.b(0.6), 0.8, 1e-15);
    EXPECT_NEAR(s.db(0.6), -0.75, 1e-15);
    EXPECT_TRUE(std::isfinite(s.db(1.0)));
    EXPECT_LE(std::abs(s.db(1.0)), 1e6);
}

TEST(Paths, VpNonlinearAlpha) {
    AlphaFunction a{[](double t) { return std::sin(0.5 * std::numbers::pi * t); },
                    [](double t) { return 0.5 * std::numbers::pi * std::cos(0.5 * std::numbers::pi * t); }};
    const auto c = check_schedule(vp_schedule(a));
    EXPECT_LT(c.derivative_error, 1e-6);
    EXPECT_LT(c.norm_identity_error, 1e-12);
    AlphaFunction bad{[](double t) { return 2.0 * t; }, [](double) { return 2.0; }};
    EXPECT_THROW(vp_schedule(bad), InputError);
}

TEST(Paths, InterpolationIsAffine) {
    auto g = make_uniform_grid(16);
    Rng rng(4);
    const auto m = GaussianMeasure::centered(fixtures::matern_basis(16, 4));
    const auto xs = sample_gaussian(m, 4, rng);
    const auto s = vp_linear_schedule();
    const double t = 0.37, c = 2.5;
    const auto lhs = interpolate(c * xs[0] + xs[2], c * xs[1] + xs[3], t, s);
    const auto rhs = c * interpolate(xs[0], xs[1], t, s) + interpolate(xs[2], xs[3], t, s);
    for (std::size_t i = 0; i < lhs.size(); ++i) EXPECT_NEAR(lhs[i], rhs[i], 1e-12);
    // path velocity is the t-derivative of the interpolant
    const double h = 1e-6;
    const auto fd = (1.0 / (2 * h)) * (interpolate(xs[0], xs[1], t + h, s) - interpolate(xs[0], xs[1], t - h, s));
    const auto v = path_velocity(xs[0], xs[1], t, s);
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(v[i], fd[i], 1e-6);
}
