#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "support.hpp"

using namespace hrf;

namespace {

SampleSet draw(const GaussianMeasure& m, std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    return sample_gaussian(m, n, rng);
}

SampleSet shifted(SampleSet s, double c) {
    const auto k = GridFunction::constant(s.grid, c);
    for (auto& f : s.items) f += k;
    return s;
}

// Node values drawn iid N(mu, 1) at every node.
SampleSet pointwise_normal(std::size_t n, double mu, std::uint64_t seed) {
    auto g = make_uniform_grid(4);
    Rng rng(seed);
    SampleSet s{g, {}, "iid", seed};
    for (std::size_t j = 0; j < n; ++j) {
        GridFunction f(g);
        for (auto& v : f.values) v = mu + rng.normal();
        s.push_back(f);
    }
    return s;
}

}  // namespace

TEST(Energy, IdenticalSetsAreZero) {
    const auto b = fixtures::matern_basis(16, 4);
    const auto a = draw(GaussianMeasure::centered(b), 200, 1);
    EXPECT_NEAR(energy_distance(a, a), 0.0, 1e-12);
}

TEST(Energy, DetectsShiftAndIsHomogeneous) {
    const auto b = fixtures::matern_basis(16, 4);
    const auto m = GaussianMeasure::centered(b, 0.1);
    const auto a = draw(m, 2000, 2);
    const auto c = shifted(draw(m, 2000, 3), 1.0);
    const auto e = energy_distance_bootstrap(a, c, 200, 5);
    EXPECT_GT(e.value, 5.0 * e.stderr_);
    EXPECT_NEAR(e.value, energy_distance(a, c), 1e-12);
    const auto a2 = fixtures::scaled(a.slice(0, 300), 3.0), c2 = fixtures::scaled(c.slice(0, 300), 3.0);
    EXPECT_NEAR(energy_distance(a2, c2), 3.0 * energy_distance(a.slice(0, 300), c.slice(0, 300)), 1e-10);
}

TEST(Energy, PermutationInvariantAndSeeded) {
    const auto b = fixtures::matern_basis(16, 4);
    const auto a = draw(GaussianMeasure::centered(b), 100, 4);
    const auto c = draw(GaussianMeasure::centered(b, 2.0), 100, 5);
    auto r = a;
    std::reverse(r.items.begin(), r.items.end());
    EXPECT_NEAR(energy_distance(a, c), energy_distance(r, c), 1e-12);
    EXPECT_EQ(energy_distance_bootstrap(a, c, 50, 9).stderr_, energy_distance_bootstrap(a, c, 50, 9).stderr_);
    EXPECT_THROW(energy_distance(a.slice(0, 1), c), InputError);
}

TEST(Energy, TriangleSanity) {
    const auto b = fixtures::matern_basis(16, 4);
    const auto a = draw(GaussianMeasure::centered(b), 300, 6);
    const auto m = shifted(draw(GaussianMeasure::centered(b), 300, 7), 0.5);
    const auto c = shifted(draw(GaussianMeasure::centered(b), 300, 8), 1.0);
    EXPECT_LE(energy_distance(a, c), 2.0 * (energy_distance(a, m) + energy_distance(m, c)) + 0.01);
}

TEST(Ks, KnownValues) {
    EXPECT_EQ(ks_two_sample({1, 2, 3}, {1, 2, 3}), 0.0);
    EXPECT_EQ(ks_two_sample({1, 2}, {3, 4}), 1.0);
    EXPECT_NEAR(ks_gaussian({0.0}, 0.0, 1.0), 0.5, 1e-15);
}

TEST(Ks, GaussianReference) {
    const auto b = fixtures::inverse_square(fixtures::matern_basis(16, 4), 1.0);
    const auto ref = GaussianMeasure::centered(b);
    const auto a = draw(ref, 4096, 11);
    EXPECT_LT(per_mode_ks(a, ref).max, 0.035);
    EXPECT_GT(per_mode_ks(a, GaussianMeasure::centered(b, 4.0)).max, 0.15);
    EXPECT_EQ(per_mode_ks(a, a, b).max, 0.0);
}

TEST(DensityMse, SameLawFloorShrinksWithN) {
    std::vector<double> v;
    for (std::size_t n : {250, 500, 1000}) {
        double avg = 0;
        for (std::uint64_t rep = 0; rep < 8; ++rep)
            avg += density_mse(pointwise_normal(n, 0, 100 + rep), pointwise_normal(n, 0, 200 + rep)) / 8;
        v.push_back(avg);
    }
    EXPECT_GT(v[0], v[1]);
    EXPECT_GT(v[1], v[2]);
    EXPECT_GT(v[2], 0.0);
    // KDE MSE rate is N^-4/5; accept a log-log slope between -1.3 and -0.5
    const double slope = std::log(v[2] / v[0]) / std::log(4.0);
    EXPECT_LT(slope, -0.5);
    EXPECT_GT(slope, -1.3);
}

TEST(DensityMse, SeparatedLawsAndIdentity) {
    const auto a = pointwise_normal(1000, 0, 1);
    const auto same = density_mse(a, pointwise_normal(1000, 0, 2));
    const auto far = density_mse(a, pointwise_normal(1000, 3, 3));
    EXPECT_GT(far, 10 * same);
    EXPECT_EQ(density_mse(a, a), 0.0);
    // constant node values fall back to the bandwidth floor without NaNs
    auto g = make_uniform_grid(4);
    SampleSet flat{g, {GridFunction(g), GridFunction(g)}, "flat", 0};
    EXPECT_TRUE(std::isfinite(density_mse(flat, a.slice(0, 10))));
}

TEST(Moments, SamplerAndShift) {
    const auto b = fixtures::inverse_square(fixtures::matern_basis(32, 8), 1.0);
    const auto ref = GaussianMeasure::centered(b);
    const auto a = draw(ref, 10000, 3);
    EXPECT_LT(moment_errors(a, ref, 0.01).max_variance_rel_error, 0.05);
    auto s = a;
    for (auto& f : s.items) f.axpy(0.7, b.eigenfunction(0));
    EXPECT_NEAR(moment_errors(s, ref).mean_error[0] - moment_errors(a, ref).mean_error[0], 0.7, 0.05);
    GaussianMeasure point{GridFunction::constant(b.grid, 1.0), b, 0.0};
    SampleSet atoms{b.grid, {point.mean, point.mean}, "m", 0};
    const auto z = moment_errors(atoms, point);
    EXPECT_NEAR(z.max_mean_error, 0.0, 1e-12);
    EXPECT_NEAR(z.max_variance_rel_error, 0.0, 1e-12);
}

TEST(Report, CsvAndFiniteness) {
    MetricReport r;
    r.add("energy_distance", 0.5, 0.01, 100);
    EXPECT_THROW(r.add("bad", std::nan(""), 0, 1), InputError);
    EXPECT_THROW(r.add("bad", 1, -1, 1), InputError);
    std::stringstream ss;
    write_metric_report(ss, r);
    EXPECT_EQ(ss.str(), "metric,value,stderr,n\nenergy_distance,0.5,0.01,100\n");
}
