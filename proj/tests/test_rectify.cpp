#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "support.hpp"

using namespace hrf;

namespace {

struct SingleMode {
    SpectralBasis b0 = fixtures::matern_basis(16, 1).with_eigenvalues({1.0});
    SpectralBasis b1 = b0.with_eigenvalues({4.0});
    GaussianMeasure m0 = GaussianMeasure::centered(b0);
    GaussianMeasure m1 = GaussianMeasure::centered(b1);
    Coupling independent(std::size_t n, std::uint64_t seed) const {
        Rng rng(seed);
        Coupling c{sample_gaussian(m0, n, rng), sample_gaussian(m1, n, rng), 0};
        return c;
    }
};

SolverConfig rk4(std::size_t steps) {
    SolverConfig c;
    c.steps = steps;
    return c;
}

}  // namespace

TEST(Cost, IdentityCouplingIsFree) {
    SingleMode s;
    auto c = s.independent(10, 1);
    c.x1 = c.x0;
    for (auto f : {CostFunction::squared_l2(), CostFunction::l2(), CostFunction::huber(0.5)})
        EXPECT_EQ(transport_cost(c, f).value, 0.0);
}

TEST(Cost, HuberIsContinuousAndConvex) {
    const auto h = CostFunction::huber(1.0);
    EXPECT_NEAR(h(1.0 - 1e-12), h(1.0 + 1e-12), 1e-11);
    for (double r = 0.05; r < 3; r += 0.05) EXPECT_LE(h(r), 0.5 * (h(r - 0.05) + h(r + 0.05)) + 1e-15);
    EXPECT_THROW(CostFunction::huber(0.0), InputError);
}

TEST(Cost, IndependentSingleModeIsFive) {
    SingleMode s;
    const auto e = transport_cost(s.independent(20000, 2), CostFunction::squared_l2());
    EXPECT_NEAR(e.value, 5.0, 3.0 * e.stderr_);
}

TEST(Straightness, ConstantVelocityIsZero) {
    auto g = make_uniform_grid(8);
    const auto c = GridFunction::constant(g, 0.3);
    FunctionField f([c](double, const GridFunction&) { return c; });
    SolverConfig sc = rk4(10);
    const auto tr = integrate(f, GridFunction(g), sc);
    EXPECT_LT(straightness({tr}).value, 1e-28);
}

TEST(Straightness, SinePathIsHalfPiSquared) {
    const auto b = fixtures::matern_basis(16, 1);
    const auto e = b.eigenfunction(0);
    Trajectory tr;
    for (int i = 0; i <= 200; ++i) {
        const double t = i / 200.0;
        tr.times.push_back(t);
        tr.states.push_back(std::sin(std::numbers::pi * t) * e);
        tr.velocities.push_back(std::numbers::pi * std::cos(std::numbers::pi * t) * e);
    }
    EXPECT_NEAR(straightness({tr}).value, std::numbers::pi * std::numbers::pi / 2.0, 1e-3);
    tr.velocities.pop_back();
    EXPECT_THROW(straightness({tr}), InputError);
}

TEST(Rectify, ZeroFieldIsIdentity) {
    SingleMode s;
    const auto c = s.independent(20, 3);
    const auto r = rectify_coupling(ZeroField{}, c, rk4(5));
    EXPECT_EQ(r.coupling.generation, 1u);
    for (std::size_t j = 0; j < 20; ++j) EXPECT_EQ(r.coupling.x1[j], c.x0[j]);
}

TEST(Rectify, GaussianOracleDoublesAndCostDropsToOne) {
    SingleMode s;
    const auto c = s.independent(4000, 4);
    GaussianOracle o(s.m0, s.m1, linear_schedule());
    const auto r = rectify_coupling(o, c, rk4(100));
    for (std::size_t j = 0; j < 50; ++j) EXPECT_LT(distance(r.coupling.x1[j], 2.0 * c.x0[j]), 1e-7);
    const auto cost = transport_cost(r.coupling, CostFunction::squared_l2());
    EXPECT_NEAR(cost.value, 1.0, 3.0 * cost.stderr_);
    EXPECT_GT(r.straightness.value, 0.0);
}

TEST(Rectify, StraightCouplingIsFixedPoint) {
    SingleMode s;
    auto c = s.independent(200, 5);
    const auto shift = GridFunction::constant(s.b0.grid, 0.4);
    c.x1 = c.x0;
    for (auto& f : c.x1.items) f += shift;
    const auto oracle = fit_gaussian_oracle(c, s.b0, linear_schedule());
    const auto r = rectify_coupling(*oracle, c, rk4(50));
    for (std::size_t j = 0; j < c.size(); ++j) EXPECT_LT(distance(r.coupling.x1[j], c.x1[j]), 1e-8);
    EXPECT_LT(r.straightness.value, 1e-12);
    EXPECT_LT(coupling_variance(c, linear_schedule(), *oracle).value, 1e-12);
}

TEST(CouplingVariance, ComonotoneIsZero) {
    SingleMode s;
    auto c = s.independent(2000, 6);
    c.x1 = fixtures::scaled(c.x0, 2.0);
    const auto oracle = fit_gaussian_oracle(c, s.b0, linear_schedule());
    const double v = coupling_variance(c, linear_schedule(), *oracle).value;
    EXPECT_LT(v, 1e-3 * transport_cost(c, CostFunction::squared_l2()).value);
}

TEST(CouplingVariance, MatchesBayesRisk) {
    SingleMode s;
    const auto c = s.independent(20000, 7);
    GaussianOracle o(s.m0, s.m1, linear_schedule());
    const auto v = coupling_variance(c, linear_schedule(), o);
    const auto c2 = s.independent(20000, 8);
    Rng rng(9);
    const auto batch = draw_batch(c2.x0, c2.x1, true, 20000, rng);
    std::vector<double> terms = rf_loss_terms(o, batch, linear_schedule());
    double mean = 0, sq = 0;
    for (double x : terms) mean += x;
    mean /= terms.size();
    for (double x : terms) sq += (x - mean) * (x - mean);
    const double se = std::sqrt(sq / (terms.size() - 1) / terms.size());
    EXPECT_LT(std::abs(mean - v.value), 2.0 * std::hypot(se, v.stderr_));
}

TEST(Reflow, OracleStraightensInTwoRounds) {
    SingleMode s;
    const auto c = s.independent(2000, 10);
    ReflowOptions opt;
    opt.iterations = 2;
    opt.solver = rk4(100);
    opt.ks_basis = s.b0;
    const auto r = reflow(c, oracle_provider(s.b0, linear_schedule()), opt);
    ASSERT_EQ(r.rows.size(), 2u);
    const double base = r.base_cost_sq.value;
    EXPECT_GT(r.rows[0].straightness.value, 1e-2 * base);
    EXPECT_LT(r.rows[1].straightness.value, 1e-3 * base);
    EXPECT_LT(r.rows[1].variance.value, 1e-3 * base);
    double budget = 0;
    for (const auto& row : r.rows) budget += row.straightness.value + row.variance.value;
    EXPECT_LE(budget, 1.1 * base);
    EXPECT_LE(r.rows[0].cost_sq.value, base + 3 * r.base_cost_sq.stderr_);
    std::stringstream ss;
    write_reflow_csv(ss, r);
    std::string header;
    std::getline(ss, header);
    EXPECT_EQ(header, "k,S,V,cost_sq,cost_l2,ks_max");
}

TEST(Reflow, StraightCouplingRowIsZero) {
    SingleMode s;
    auto c = s.independent(500, 11);
    c.x1 = fixtures::scaled(c.x0, 2.0);
    ReflowOptions opt;
    opt.solver = rk4(50);
    const auto r = reflow(c, oracle_provider(s.b0, linear_schedule()), opt);
    EXPECT_LT(r.rows[0].straightness.value, 1e-6);
    EXPECT_LT(r.rows[0].variance.value, 1e-6);
    EXPECT_NEAR(r.rows[0].cost_sq.value, r.base_cost_sq.value, 0.01 * r.base_cost_sq.value);
}
