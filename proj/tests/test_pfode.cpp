#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"

using namespace hrf;

TEST(EtaKappa, ConstantClosedForm) {
    const auto s = SigmaSchedule::constant(2.0);
    const auto ek = eta_kappa(s, 1.0);
    EXPECT_NEAR(ek.eta, std::exp(-1.0), 1e-15);
    EXPECT_NEAR(ek.kappa, 1.0 - std::exp(-2.0), 1e-15);
    const auto z = eta_kappa(SigmaSchedule::linear(0.1, 20), 0.0);
    EXPECT_EQ(z.eta, 1.0);
    EXPECT_EQ(z.kappa, 0.0);
    EXPECT_THROW(eta_kappa(s, 1.5), InputError);
}

TEST(EtaKappa, IdentityAndOdeBothSchedules) {
    for (const auto& s : {SigmaSchedule::constant(2.0), SigmaSchedule::linear(0.1, 20.0)}) {
        PfodeCoefficients c(s);
        double worst_id = 0, worst_ode = 0;
        for (int i = 0; i <= 100; ++i) {
            const double t = i / 100.0;
            const auto ek = c.at(t);
            worst_id = std::max(worst_id, std::abs(ek.eta * ek.eta + ek.kappa - 1.0));
            const double h = 1e-6;
            const double tc = std::clamp(t, h, 1.0 - h);
            const double fd = (eta_kappa(s, tc + h).kappa - eta_kappa(s, tc - h).kappa) / (2 * h);
            worst_ode = std::max(worst_ode, std::abs(fd - s(tc) * (1.0 - eta_kappa(s, tc).kappa)));
        }
        EXPECT_LE(worst_id, 1e-10);
        EXPECT_LE(worst_ode, 1e-8);
    }
}

TEST(EtaKappa, MonotoneAndLinearMatchesClosedIntegral) {
    const auto s = SigmaSchedule::linear(0.5, 3.0);
    double prev_eta = 2, prev_kappa = -1;
    for (int i = 0; i <= 20; ++i) {
        const double t = i / 20.0;
        const auto ek = eta_kappa(s, t);
        EXPECT_LT(ek.eta, prev_eta);
        EXPECT_GT(ek.kappa, prev_kappa);
        prev_eta = ek.eta;
        prev_kappa = ek.kappa;
        EXPECT_NEAR(ek.eta, std::exp(-0.5 * (0.5 * t + 1.25 * t * t)), 1e-14);
    }
}

TEST(LogGradient, LemmaFormula) {
    auto g = make_uniform_grid(8);
    const auto r = gaussian_log_gradient(GridFunction(g), 2.0, GridFunction::constant(g, 1.0));
    for (double v : r.values) EXPECT_DOUBLE_EQ(v, -0.5);
    const auto m = GridFunction::constant(g, 0.3);
    for (double v : gaussian_log_gradient(m, 1.5, m).values) EXPECT_EQ(v, 0.0);
    EXPECT_THROW(gaussian_log_gradient(m, 0.0, m), InputError);
    const auto x = GridFunction::from(g, [](double s) { return s * s; });
    const auto y = GridFunction::from(g, [](double s) { return std::cos(s); });
    const auto lhs = gaussian_log_gradient(GridFunction(g), 1.5, 2.0 * x + 3.0 * y);
    const auto rhs = 2.0 * gaussian_log_gradient(GridFunction(g), 1.5, x) + 3.0 * gaussian_log_gradient(GridFunction(g), 1.5, y);
    for (std::size_t i = 0; i < lhs.size(); ++i) EXPECT_NEAR(lhs[i], rhs[i], 1e-12);
}

TEST(Score, PerModeMatchesQuadrature) {
    // t = 0.5, sigma = 2, v0 = 1, lambda = 1, y = 1 in mode 0.
    const auto b = fixtures::matern_basis(16, 1).with_eigenvalues({1.0});
    PfodeCoefficients c(SigmaSchedule::constant(2.0));
    const auto y = b.eigenfunction(0);
    const double s = project(conditional_score(GaussianMeasure::centered(b), b, c, 0.5, y), b)[0];
    const auto ek = c.at(0.5);
    // posterior over y0 ~ N(0,1) given y = eta y0 + sqrt(kappa) u
    double num = 0, den = 0;
    const double lo = -12, hi = 12;
    const int n = 200000;
    for (int i = 0; i <= n; ++i) {
        const double y0 = lo + (hi - lo) * i / n;
        const double w = (i == 0 || i == n ? 0.5 : 1.0) * std::exp(-0.5 * y0 * y0 - 0.5 * std::pow(1.0 - ek.eta * y0, 2) / ek.kappa);
        num += w * (ek.eta * y0 - 1.0) / ek.kappa;
        den += w;
    }
    EXPECT_NEAR(s, num / den, 1e-6);
    EXPECT_NEAR(s, -1.0, 1e-12);  // eta^2 v0 + kappa lambda = 1 here
}

TEST(Score, SingleAtomIsExact) {
    const auto b = fixtures::matern_basis(16, 3);
    PfodeCoefficients c(SigmaSchedule::constant(2.0));
    const auto y0 = 0.5 * b.eigenfunction(1);
    SampleSet atoms{b.grid, {y0}, "atom", 0};
    const auto y = GridFunction::constant(b.grid, 0.2);
    const auto s = conditional_score(atoms, b, c, 0.3, y);
    const auto ek = c.at(0.3);
    for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(s[i], (ek.eta * y0[i] - y[i]) / ek.kappa, 1e-12);
    EXPECT_THROW(conditional_score(atoms, b, c, 0.0, y), InputError);
}

TEST(Score, LargeSigmaCollapsesToPrior) {
    const auto b = fixtures::matern_basis(16, 2);
    PfodeCoefficients c(SigmaSchedule::constant(60.0));
    const auto y = b.eigenfunction(0) + b.eigenfunction(1);
    const auto s = conditional_score(GaussianMeasure::centered(b, 3.0), b, c, 1.0, y);
    const auto prior = gaussian_log_gradient(GridFunction(b.grid), c.at(1.0).kappa, y);
    for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(s[i], prior[i], 1e-10);
}

TEST(Score, ClosedFormMinimisesObjectiveAmongGains) {
    // E|g Y_t - (eta Y0 - Y_t)/kappa|^2 per mode is minimised at the closed-form gain.
    const double v0 = 2.0, lam = 1.0;
    const auto ek = eta_kappa(SigmaSchedule::constant(2.0), 0.4);
    const double var = ek.eta * ek.eta * v0 + ek.kappa * lam;
    const double g_star = (ek.eta * ek.eta * v0 / var - 1.0) / ek.kappa;
    Rng rng(3);
    auto objective = [&](double g) {
        Rng r(7);
        double s = 0;
        for (int i = 0; i < 20000; ++i) {
            const double y0 = std::sqrt(v0) * r.normal();
            const double u = std::sqrt(lam) * r.normal();
            const double y = ek.eta * y0 + std::sqrt(ek.kappa) * u;
            const double d = g * y - (ek.eta * y0 - y) / ek.kappa;
            s += d * d;
        }
        return s;
    };
    const double best = objective(g_star);
    EXPECT_LT(best, objective(1.01 * g_star));
    EXPECT_LT(best, objective(0.99 * g_star));
}

TEST(Drift, StationaryExamples) {
    const auto b = fixtures::matern_basis(16, 1).with_eigenvalues({1.0});
    const auto sig = SigmaSchedule::constant(2.0);
    PfodeCoefficients c(sig);
    const auto y = b.eigenfunction(0);
    const auto d = pfode_drift(sig, conditional_score(GaussianMeasure::centered(b), b, c, 0.5, y), 0.5, y);
    EXPECT_LT(norm(d), 1e-12);
    const auto d2 = pfode_drift(sig, -1.0 * y, 0.5, y);
    EXPECT_EQ(norm(d2), 0.0);
}

TEST(Drift, MatchesForwardConstruction) {
    const auto b = fixtures::matern_basis(16, 4);
    Rng rng(2);
    GaussianMeasure data{GridFunction::constant(b.grid, 0.3), fixtures::inverse_square(b, 4.0), 1.0};
    for (const auto& sig : {SigmaSchedule::constant(2.0), SigmaSchedule::linear(0.1, 20.0)}) {
        PfodeCoefficients c(sig);
        for (double t : {0.05, 0.3, 0.7, 1.0}) {
            // a point on the support of Y_t: eta Y0 + sqrt(kappa) U
            const auto y0 = sample_gaussian(data, 1, rng)[0];
            const auto u = sample_gaussian(GaussianMeasure::centered(b), 1, rng)[0];
            const auto y = forward_construct(y0, c, t, u);
            const auto a = pfode_drift(sig, conditional_score(data, b, c, t, y), t, y);
            const auto f = forward_construction_drift(data, b, c, t, y);
            for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], f[i], 1e-8) << t;
        }
    }
}

TEST(ForwardConstruct, EndpointsAndVariance) {
    const auto b = fixtures::matern_basis(16, 2);
    PfodeCoefficients c(SigmaSchedule::constant(2.0));
    Rng rng(4);
    const auto u = sample_gaussian(GaussianMeasure::centered(b), 1, rng)[0];
    const auto y0 = b.eigenfunction(0);
    EXPECT_EQ(forward_construct(y0, c, 0.0, u), y0);
    const auto z = forward_construct(GridFunction(b.grid), c, 1.0, u);
    for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(z[i], std::sqrt(1.0 - std::exp(-2.0)) * u[i], 1e-14);

    const auto data = GaussianMeasure::centered(b, 3.0);
    const auto ys = sample_gaussian(data, 10000, rng);
    const auto us = sample_gaussian(GaussianMeasure::centered(b), 10000, rng);
    std::vector<double> var(2, 0.0);
    for (std::size_t j = 0; j < 10000; ++j) {
        const auto cz = project(forward_construct(ys[j], c, 0.6, us[j]), b);
        for (int i = 0; i < 2; ++i) var[i] += cz[i] * cz[i] / 10000.0;
    }
    const auto ek = c.at(0.6);
    for (int i = 0; i < 2; ++i) {
        const double expect = ek.eta * ek.eta * data.mode_variance(i) + ek.kappa * b.eigenvalues[i];
        EXPECT_NEAR(var[i] / expect, 1.0, 0.05);
    }
}

TEST(InducedSchedule, IsVariancePreserving) {
    const auto s = induced_rf_schedule(SigmaSchedule::constant(2.0));
    EXPECT_NEAR(s.a(1.0), 1.0, 1e-15);
    EXPECT_NEAR(s.b(1.0), 0.0, 1e-15);
    EXPECT_NEAR(s.a(0.0), std::exp(-1.0), 1e-15);
    EXPECT_NEAR(s.b(0.0), std::sqrt(1.0 - std::exp(-2.0)), 1e-15);
    const auto c = check_schedule(s);
    EXPECT_LT(c.norm_identity_error, 1e-12);
    EXPECT_LT(c.derivative_error, 1e-6);
    const auto lin = check_schedule(induced_rf_schedule(SigmaSchedule::linear(0.1, 20.0)));
    EXPECT_LT(lin.norm_identity_error, 1e-10);
    EXPECT_LT(lin.derivative_error, 1e-6);
}

TEST(Sample, DataEqualToPriorStaysPut) {
    const auto b = fixtures::inverse_square(fixtures::matern_basis(16, 3), 1.0);
    PfodeSampleConfig cfg;
    cfg.solver.steps = 50;
    const auto out = pfode_sample(GaussianMeasure::centered(b), b, SigmaSchedule::constant(3.0), 2000, cfg, 1);
    const auto me = moment_errors(out, GaussianMeasure::centered(b));
    EXPECT_LT(me.max_variance_rel_error, 0.1);
}

TEST(Sample, SingleAtomAttractsEverything) {
    const auto b = fixtures::inverse_square(fixtures::matern_basis(16, 3), 1.0);
    const auto y0 = 0.5 * b.eigenfunction(0);
    SampleSet atoms{b.grid, {y0}, "atom", 0};
    PfodeSampleConfig cfg;
    cfg.solver.steps = 200;
    const auto out = pfode_sample(atoms, b, SigmaSchedule::linear(0.1, 20.0), 20, cfg, 2);
    for (const auto& z : out.items) EXPECT_LT(distance(z, y0), 0.02 * norm(y0) + 0.05);
}
