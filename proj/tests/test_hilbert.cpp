#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "support.hpp"

using namespace hrf;

TEST(Rng, SameSeedSameStream) {
    Rng a(42), b(42), c(43);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a(), b());
    EXPECT_NE(Rng(42)(), c());
    EXPECT_NE(Rng::stream(1, 0)(), Rng::stream(1, 1)());
    EXPECT_EQ(Rng::stream(1, 5)(), Rng::stream(1, 5)());
}

TEST(Rng, NormalMoments) {
    Rng r(7);
    double m = 0, v = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double x = r.normal();
        m += x;
        v += x * x;
    }
    m /= n;
    v = v / n - m * m;
    EXPECT_NEAR(m, 0.0, 0.01);
    EXPECT_NEAR(v, 1.0, 0.01);
}

TEST(Grid, TrapezoidWeights) {
    auto g = make_uniform_grid(5, 0.0, 2.0);
    EXPECT_DOUBLE_EQ(g->weights[0], 0.25);
    EXPECT_DOUBLE_EQ(g->weights[2], 0.5);
    EXPECT_THROW(make_uniform_grid(1), InputError);
}

TEST(Hilbert, InnerProductOfConstants) {
    auto g = make_uniform_grid(33);
    const auto one = GridFunction::constant(g, 1.0);
    const auto two = GridFunction::constant(g, 2.0);
    EXPECT_NEAR(inner_product(one, two), 2.0, 1e-14);
    EXPECT_NEAR(norm(two), 2.0, 1e-14);
    EXPECT_NEAR(distance(one, two), 1.0, 1e-14);
}

TEST(Hilbert, SineNormConverges) {
    auto g = make_uniform_grid(257);
    const auto f = GridFunction::from(g, [](double x) { return std::sqrt(2.0) * std::sin(std::numbers::pi * x); });
    EXPECT_NEAR(squared_norm(f), 1.0, 1e-12);  // trapezoid is spectrally accurate for this periodic integrand
}

TEST(Hilbert, GridMismatchThrows) {
    const auto a = GridFunction::constant(make_uniform_grid(8), 1.0);
    const auto b = GridFunction::constant(make_uniform_grid(9), 1.0);
    EXPECT_THROW(inner_product(a, b), InputError);
}

TEST(Kernel, MaternMatrixSymmetricPositiveDiagonal) {
    auto g = make_uniform_grid(16);
    const auto k = kernel_matrix(KernelKind::matern_half, KernelParams{2.0, 0.3, 0.0}, *g);
    for (std::size_t i = 0; i < 16; ++i) {
        EXPECT_DOUBLE_EQ(k(i, i), 2.0);
        for (std::size_t j = 0; j < 16; ++j) EXPECT_DOUBLE_EQ(k(i, j), k(j, i));
    }
    EXPECT_NEAR(k(0, 1), 2.0 * std::exp(-(1.0 / 15.0) / 0.3), 1e-14);
    EXPECT_THROW(kernel_matrix(KernelKind::white_plus_matern, KernelParams{1.0, 0.2, 0.0}, *g), InputError);
    EXPECT_THROW(kernel_matrix(KernelKind::rbf, KernelParams{1.0, 0.0, 0.0}, *g), InputError);
}

TEST(Eigen, OrthonormalAndDescending) {
    const auto b = fixtures::matern_basis(64, 16);
    for (std::size_t i = 0; i < b.size(); ++i) {
        if (i > 0) {
            EXPECT_GE(b.eigenvalues[i - 1], b.eigenvalues[i]);
        }
        EXPECT_GT(b.eigenvalues[i], 0.0);
        for (std::size_t j = 0; j < b.size(); ++j)
            EXPECT_NEAR(inner_product(b.eigenfunction(i), b.eigenfunction(j)), i == j ? 1.0 : 0.0, 1e-10);
    }
}

TEST(Eigen, ReproducesDiagonalMatrix) {
    auto g = make_uniform_grid(4);
    Matrix k(4, 4);
    // W^1/2 K W^1/2 diagonal: K_ii = d_i / w_i
    const double d[] = {3.0, 1.0, 2.0, 0.5};
    for (std::size_t i = 0; i < 4; ++i) k(i, i) = d[i] / g->weights[i];
    const auto b = eigendecompose(k, g, 4);
    EXPECT_NEAR(b.eigenvalues[0], 3.0, 1e-12);
    EXPECT_NEAR(b.eigenvalues[1], 2.0, 1e-12);
    EXPECT_NEAR(b.eigenvalues[2], 1.0, 1e-12);
    EXPECT_NEAR(b.eigenvalues[3], 0.5, 1e-12);
}

TEST(Eigen, OperatorEquation) {
    // sum_s K(t, s) w_s e(s) = lambda e(t)
    auto g = make_uniform_grid(32);
    const auto k = kernel_matrix(KernelKind::rbf, KernelParams{1.0, 0.3, 0.0}, *g);
    const auto b = eigendecompose(k, g, 4);
    for (std::size_t i = 0; i < 4; ++i) {
        const auto e = b.eigenfunction(i);
        for (std::size_t t = 0; t < g->n; ++t) {
            double s = 0;
            for (std::size_t u = 0; u < g->n; ++u) s += k(t, u) * g->weights[u] * e[u];
            EXPECT_NEAR(s, b.eigenvalues[i] * e[t], 1e-9);
        }
    }
}

TEST(Eigen, RejectsAsymmetric) {
    auto g = make_uniform_grid(3);
    Matrix k = Matrix::identity(3);
    k(0, 1) = 0.5;
    EXPECT_THROW(eigendecompose(k, g, 2), InputError);
    EXPECT_THROW(eigendecompose(Matrix::identity(3), g, 4), InputError);
}

TEST(Projection, RoundTripInSpan) {
    const auto b = fixtures::matern_basis(32, 6);
    std::vector<double> c{1.0, -2.0, 0.5, 0.0, 3.0, -1.0};
    const auto f = reconstruct(c, b);
    const auto back = project(f, b);
    for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(back[i], c[i], 1e-10);
}

TEST(Sampler, ZeroSpectrumGivesMean) {
    const auto b = fixtures::matern_basis(16, 4).with_eigenvalues({0, 0, 0, 0});
    GaussianMeasure m{GridFunction::constant(b.grid, 2.5), b, 1.0};
    Rng rng(1);
    const auto s = sample_gaussian(m, 10, rng);
    for (const auto& f : s.items) EXPECT_EQ(f, m.mean);
}

TEST(Sampler, CovarianceRecovery) {
    const auto meas = kernel_measure(KernelKind::matern_half, KernelParams{}, make_uniform_grid(32), 16);
    Rng rng(3);
    const auto s = sample_gaussian(meas, 10000, rng);
    EXPECT_LT(covariance_recovery_error(s, meas), 0.1);
}

TEST(Sampler, BitIdenticalRerun) {
    const auto meas = kernel_measure(KernelKind::matern_half, KernelParams{}, make_uniform_grid(16), 8);
    Rng a(11), b(11);
    const auto s1 = sample_gaussian(meas, 50, a);
    const auto s2 = sample_gaussian(meas, 50, b);
    for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(s1[i].values, s2[i].values);
}

TEST(Dataset, KindsAndRanges) {
    auto g = make_uniform_grid(32);
    DatasetParams p;
    p.modes = 8;
    Rng rng(5);
    const auto sines = make_synthetic_dataset(DatasetKind::random_sines, p, g, 20, rng);
    for (const auto& f : sines.items)
        for (double v : f.values) EXPECT_LE(std::abs(v), p.amp_hi + 1e-12);
    const auto mix = make_synthetic_dataset(DatasetKind::gp_mixture, p, g, 400, rng);
    double mean = 0;
    for (const auto& f : mix.items) mean += inner_product(f, GridFunction::constant(g, 1.0));
    EXPECT_NEAR(mean / 400.0, 0.0, 0.2);
    EXPECT_THROW(parse_dataset_kind("nope"), InputError);
}

TEST(Formats, SampleSetRoundTripIsExact) {
    auto g = make_uniform_grid(8);
    const auto meas = kernel_measure(KernelKind::rbf, KernelParams{}, g, 4);
    Rng rng(2);
    auto s = sample_gaussian(meas, 5, rng);
    s.seed = 99;
    s.kind = "data";
    std::stringstream ss;
    write_sample_set(ss, s);
    const auto r = read_sample_set(ss);
    ASSERT_EQ(r.size(), 5u);
    EXPECT_EQ(r.seed, 99u);
    EXPECT_EQ(r.kind, "data");
    for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(r[i].values, s[i].values);
}

TEST(Formats, BasisRoundTripAndMalformed) {
    const auto b = fixtures::matern_basis(8, 3);
    std::stringstream ss;
    write_basis(ss, b);
    const auto r = read_basis(ss);
    EXPECT_EQ(r.eigenvalues, b.eigenvalues);
    EXPECT_EQ(r.functions->data, b.functions->data);
    std::stringstream bad("# grid_n=4 a=0 b=1\n1,2,3\n");
    EXPECT_THROW(read_sample_set(bad), InputError);
    std::stringstream nohdr("1,2,3,4\n");
    EXPECT_THROW(read_sample_set(nohdr), InputError);
}
