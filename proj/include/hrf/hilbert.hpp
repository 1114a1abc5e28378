#pragma once

// Discretised L2([a,b]): uniform grids with trapezoid quadrature, covariance
// kernels, a weighted Jacobi eigensolver and Karhunen-Loeve Gaussian sampling.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iosfwd>
#include <limits>
#include <memory>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "csv.hpp"
#include "error.hpp"
#include "log.hpp"
#include "rng.hpp"

namespace hrf {

/// Dense row-major matrix; only what the eigensolver and covariance code need.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    const double* row(std::size_t i) const { return data.data() + i * cols; }
    double* row(std::size_t i) { return data.data() + i * cols; }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    double frobenius() const {
        double s = 0.0;
        for (double v : data) s += v * v;
        return std::sqrt(s);
    }
};

/// Uniform grid on [a,b] with trapezoid weights.
struct Grid {
    std::size_t n = 0;
    double a = 0.0;
    double b = 1.0;
    std::vector<double> nodes;
    std::vector<double> weights;

    double spacing() const { return (b - a) / static_cast<double>(n - 1); }
    double length() const { return b - a; }
};

using GridPtr = std::shared_ptr<const Grid>;

inline GridPtr make_uniform_grid(std::size_t n, double a = 0.0, double b = 1.0) {
    detail::require(n >= 2, "grid needs at least 2 nodes");
    detail::require(std::isfinite(a) && std::isfinite(b) && a < b, "grid interval must satisfy a < b");
    auto g = std::make_shared<Grid>();
    g->n = n;
    g->a = a;
    g->b = b;
    const double h = (b - a) / static_cast<double>(n - 1);
    g->nodes.resize(n);
    g->weights.assign(n, h);
    for (std::size_t i = 0; i < n; ++i) g->nodes[i] = a + static_cast<double>(i) * h;
    g->nodes.back() = b;
    g->weights.front() = 0.5 * h;
    g->weights.back() = 0.5 * h;
    return g;
}

inline bool same_grid(const GridPtr& x, const GridPtr& y) {
    if (x == y) return true;
    if (!x || !y) return false;
    return x->n == y->n && x->a == y->a && x->b == y->b;
}

/// A function on [a,b] represented by its values at the grid nodes.
struct GridFunction {
    GridPtr grid;
    std::vector<double> values;

    GridFunction() = default;
    explicit GridFunction(GridPtr g) : grid(std::move(g)), values(grid->n, 0.0) {}
    GridFunction(GridPtr g, std::vector<double> v) : grid(std::move(g)), values(std::move(v)) {
        detail::require(values.size() == grid->n, "grid function length does not match grid");
    }

    static GridFunction constant(const GridPtr& g, double c) {
        return GridFunction(g, std::vector<double>(g->n, c));
    }

    template <typename F>
    static GridFunction from(const GridPtr& g, F&& f) {
        GridFunction out(g);
        for (std::size_t i = 0; i < g->n; ++i) out.values[i] = f(g->nodes[i]);
        return out;
    }

    std::size_t size() const { return values.size(); }
    double operator[](std::size_t i) const { return values[i]; }
    double& operator[](std::size_t i) { return values[i]; }

    bool finite() const {
        return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
    }

    /// this += s * other
    GridFunction& axpy(double s, const GridFunction& other) {
        for (std::size_t i = 0; i < values.size(); ++i) values[i] += s * other.values[i];
        return *this;
    }

    GridFunction& operator+=(const GridFunction& o) { return axpy(1.0, o); }
    GridFunction& operator-=(const GridFunction& o) { return axpy(-1.0, o); }
    GridFunction& operator*=(double s) {
        for (double& v : values) v *= s;
        return *this;
    }

    friend GridFunction operator+(GridFunction x, const GridFunction& y) { return x += y; }
    friend GridFunction operator-(GridFunction x, const GridFunction& y) { return x -= y; }
    friend GridFunction operator*(double s, GridFunction x) { return x *= s; }
    friend GridFunction operator*(GridFunction x, double s) { return x *= s; }

    bool operator==(const GridFunction& o) const { return same_grid(grid, o.grid) && values == o.values; }
};

inline void check_same_grid(const GridFunction& f, const GridFunction& g) {
    if (!f.grid || !same_grid(f.grid, g.grid)) throw InputError("grid mismatch");
}

/// Quadrature inner product sum_i w_i f_i g_i.
inline double inner_product(const GridFunction& f, const GridFunction& g) {
    check_same_grid(f, g);
    const auto& w = f.grid->weights;
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * f.values[i] * g.values[i];
    return s;
}

inline double squared_norm(const GridFunction& f) { return inner_product(f, f); }
inline double norm(const GridFunction& f) { return std::sqrt(inner_product(f, f)); }

/// ||f - g||^2 without allocating.
inline double squared_distance(const GridFunction& f, const GridFunction& g) {
    check_same_grid(f, g);
    const auto& w = f.grid->weights;
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double d = f.values[i] - g.values[i];
        s += w[i] * d * d;
    }
    return s;
}

inline double distance(const GridFunction& f, const GridFunction& g) { return std::sqrt(squared_distance(f, g)); }

// ---------------------------------------------------------------------------
// Covariance kernels

enum class KernelKind { matern_half, rbf, white_plus_matern };

struct KernelParams {
    double variance = 1.0;     // sigma^2
    double lengthscale = 0.2;  // ell
    double nugget = 0.0;       // added on the diagonal
};

inline KernelKind parse_kernel_kind(const std::string& s) {
    if (s == "matern_half") return KernelKind::matern_half;
    if (s == "rbf") return KernelKind::rbf;
    if (s == "white_plus_matern") return KernelKind::white_plus_matern;
    throw InputError("unknown kernel kind '" + s + "'");
}

inline double kernel_value(KernelKind kind, const KernelParams& p, double s, double t) {
    const double d = std::abs(s - t);
    switch (kind) {
        case KernelKind::matern_half:
        case KernelKind::white_plus_matern:
            return p.variance * std::exp(-d / p.lengthscale);
        case KernelKind::rbf:
            return p.variance * std::exp(-0.5 * d * d / (p.lengthscale * p.lengthscale));
    }
    return 0.0;
}

/// K_st = k(p_s, p_t) + nugget * delta_st. `white_plus_matern` is the
/// Matern-1/2 kernel plus a white-noise term and requires nugget > 0.
inline Matrix kernel_matrix(KernelKind kind, const KernelParams& p, const Grid& grid) {
    detail::require(p.variance > 0.0 && p.lengthscale > 0.0, "kernel variance and lengthscale must be positive");
    detail::require(p.nugget >= 0.0, "kernel nugget must be non-negative");
    if (kind == KernelKind::white_plus_matern)
        detail::require(p.nugget > 0.0, "white_plus_matern needs a positive nugget");
    Matrix k(grid.n, grid.n);
    for (std::size_t s = 0; s < grid.n; ++s) {
        for (std::size_t t = s; t < grid.n; ++t) {
            const double v = kernel_value(kind, p, grid.nodes[s], grid.nodes[t]);
            k(s, t) = v;
            k(t, s) = v;
        }
        k(s, s) += p.nugget;
    }
    return k;
}

// ---------------------------------------------------------------------------
// Spectral basis

/// Top-K eigenpairs of a covariance operator; eigenfunctions are rows of
/// `functions` and are orthonormal under the grid quadrature.
struct SpectralBasis {
    GridPtr grid;
    std::vector<double> eigenvalues;
    std::shared_ptr<const Matrix> functions;  // K x n

    std::size_t size() const { return eigenvalues.size(); }

    GridFunction eigenfunction(std::size_t i) const {
        const double* r = functions->row(i);
        return GridFunction(grid, std::vector<double>(r, r + grid->n));
    }

    double trace() const { return std::accumulate(eigenvalues.begin(), eigenvalues.end(), 0.0); }

    /// Same eigenfunctions, different spectrum.
    SpectralBasis with_eigenvalues(std::vector<double> lambdas) const {
        detail::require(lambdas.size() == size(), "eigenvalue count does not match basis size");
        SpectralBasis out = *this;
        out.eigenvalues = std::move(lambdas);
        return out;
    }

    /// First k modes.
    SpectralBasis truncated(std::size_t k) const {
        detail::require(k >= 1 && k <= size(), "invalid truncation");
        auto m = std::make_shared<Matrix>(k, grid->n);
        std::copy(functions->data.begin(), functions->data.begin() + static_cast<std::ptrdiff_t>(k * grid->n),
                  m->data.begin());
        return SpectralBasis{grid, std::vector<double>(eigenvalues.begin(), eigenvalues.begin() + static_cast<std::ptrdiff_t>(k)),
                             std::move(m)};
    }
};

namespace detail {

/// Cyclic Jacobi on a symmetric matrix. On return `a` is (numerically)
/// diagonal and the columns of `v` are eigenvectors.
inline void jacobi_eigen(Matrix& a, Matrix& v, int max_sweeps = 100) {
    const std::size_t n = a.rows;
    v = Matrix::identity(n);
    const double scale = std::max(a.frobenius(), std::numeric_limits<double>::min());
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
        if (std::sqrt(2.0 * off) <= 1e-15 * scale) return;

        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (std::abs(apq) <= 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k);
                    const double aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                a(p, q) = 0.0;
                a(q, p) = 0.0;
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p);
                    const double vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (std::sqrt(2.0 * off) > 1e-12 * scale)
        throw SolverError("Jacobi eigensolver did not converge in " + std::to_string(max_sweeps) + " sweeps");
}

}  // namespace detail

/// Eigenpairs of the integral operator (C f)(s) = sum_t K(s,t) w_t f(t).
///
/// Solves the symmetric problem W^1/2 K W^1/2 u = lambda u and maps back with
/// e = W^-1/2 u, so the returned eigenfunctions are orthonormal under
/// `inner_product`. Negative eigenvalues are clamped to zero.
inline SpectralBasis eigendecompose(const Matrix& kernel, const GridPtr& grid, std::size_t k) {
    const std::size_t n = grid->n;
    detail::require(kernel.rows == n && kernel.cols == n, "kernel matrix does not match grid");
    detail::require(k >= 1 && k <= n, "truncation K must be in [1, n]");
    const double scale = std::max(kernel.frobenius(), 1.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (std::abs(kernel(i, j) - kernel(j, i)) > 1e-10 * scale)
                throw InputError("kernel matrix is not symmetric");

    std::vector<double> sw(n);
    for (std::size_t i = 0; i < n; ++i) sw[i] = std::sqrt(grid->weights[i]);
    Matrix b(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) b(i, j) = sw[i] * 0.5 * (kernel(i, j) + kernel(j, i)) * sw[j];

    Matrix v;
    detail::jacobi_eigen(b, v);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return b(x, x) > b(y, y); });

    auto funcs = std::make_shared<Matrix>(k, n);
    std::vector<double> lambdas(k);
    bool clamped = false;
    for (std::size_t r = 0; r < k; ++r) {
        const std::size_t c = order[r];
        double lam = b(c, c);
        if (lam < 0.0) {
            clamped = true;
            lam = 0.0;
        }
        lambdas[r] = lam;
        // Sign convention: the largest-magnitude entry of each eigenfunction is positive.
        std::size_t arg = 0;
        for (std::size_t i = 1; i < n; ++i)
            if (std::abs(v(i, c)) > std::abs(v(arg, c)) + 1e-12) arg = i;
        const double sign = v(arg, c) < 0.0 ? -1.0 : 1.0;
        for (std::size_t i = 0; i < n; ++i) (*funcs)(r, i) = sign * v(i, c) / sw[i];
    }
    if (clamped) log::warn("eigendecompose: negative eigenvalues clamped to 0");
    return SpectralBasis{grid, std::move(lambdas), std::move(funcs)};
}

/// Coordinates <f, e_i> for i < K.
inline std::vector<double> project(const GridFunction& f, const SpectralBasis& basis) {
    if (!f.grid || !same_grid(f.grid, basis.grid)) throw InputError("grid mismatch");
    const std::size_t n = basis.grid->n;
    const auto& w = basis.grid->weights;
    std::vector<double> c(basis.size(), 0.0);
    for (std::size_t i = 0; i < basis.size(); ++i) {
        const double* e = basis.functions->row(i);
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += w[j] * e[j] * f.values[j];
        c[i] = s;
    }
    return c;
}

inline GridFunction reconstruct(const std::vector<double>& coeffs, const SpectralBasis& basis) {
    detail::require(coeffs.size() == basis.size(), "coefficient count does not match basis");
    GridFunction out(basis.grid);
    const std::size_t n = basis.grid->n;
    for (std::size_t i = 0; i < coeffs.size(); ++i) {
        const double* e = basis.functions->row(i);
        const double c = coeffs[i];
        for (std::size_t j = 0; j < n; ++j) out.values[j] += c * e[j];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Gaussian measures and sample sets

/// N(mean, scale * Q) with Q = sum_i lambda_i e_i (x) e_i.
struct GaussianMeasure {
    GridFunction mean;
    SpectralBasis basis;
    double scale = 1.0;

    double mode_variance(std::size_t i) const { return scale * basis.eigenvalues[i]; }

    bool strictly_positive() const {
        return scale > 0.0 &&
               std::all_of(basis.eigenvalues.begin(), basis.eigenvalues.end(), [](double l) { return l > 0.0; });
    }

    static GaussianMeasure centered(const SpectralBasis& basis, double scale = 1.0) {
        return GaussianMeasure{GridFunction(basis.grid), basis, scale};
    }
};

struct SampleSet {
    GridPtr grid;
    std::vector<GridFunction> items;
    std::string kind = "unknown";
    std::uint64_t seed = 0;

    std::size_t size() const { return items.size(); }
    const GridFunction& operator[](std::size_t i) const { return items[i]; }

    void push_back(GridFunction f) {
        if (!same_grid(grid, f.grid)) throw InputError("sample does not share the set's grid");
        items.push_back(std::move(f));
    }

    SampleSet slice(std::size_t begin, std::size_t end) const {
        detail::require(begin <= end && end <= items.size(), "invalid slice");
        SampleSet out{grid, {}, kind, seed};
        out.items.assign(items.begin() + static_cast<std::ptrdiff_t>(begin), items.begin() + static_cast<std::ptrdiff_t>(end));
        return out;
    }
};

/// x = m + sum_i sqrt(scale * lambda_i) xi_i e_i, xi_i iid N(0,1).
inline SampleSet sample_gaussian(const GaussianMeasure& measure, std::size_t count, Rng& rng) {
    detail::require(count >= 1, "sample count must be positive");
    detail::require(measure.scale >= 0.0, "measure scale must be non-negative");
    const auto& basis = measure.basis;
    const std::size_t k = basis.size();
    const std::size_t n = basis.grid->n;
    std::vector<double> sd(k);
    for (std::size_t i = 0; i < k; ++i) sd[i] = std::sqrt(std::max(0.0, measure.scale * basis.eigenvalues[i]));

    SampleSet out{basis.grid, {}, "gaussian", 0};
    out.items.reserve(count);
    for (std::size_t s = 0; s < count; ++s) {
        GridFunction x = measure.mean;
        for (std::size_t i = 0; i < k; ++i) {
            const double c = sd[i] * rng.normal();
            const double* e = basis.functions->row(i);
            for (std::size_t j = 0; j < n; ++j) x.values[j] += c * e[j];
        }
        out.items.push_back(std::move(x));
    }
    return out;
}

/// Empirical covariance of the set (n x n, normalised by N - 1).
inline Matrix empirical_covariance(const SampleSet& set) {
    detail::require(set.size() >= 2, "covariance needs at least 2 samples");
    const std::size_t n = set.grid->n;
    std::vector<double> mean(n, 0.0);
    for (const auto& f : set.items)
        for (std::size_t j = 0; j < n; ++j) mean[j] += f.values[j];
    for (double& m : mean) m /= static_cast<double>(set.size());
    Matrix c(n, n);
    std::vector<double> d(n);
    for (const auto& f : set.items) {
        for (std::size_t j = 0; j < n; ++j) d[j] = f.values[j] - mean[j];
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i; j < n; ++j) c(i, j) += d[i] * d[j];
    }
    const double denom = static_cast<double>(set.size() - 1);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) {
            c(i, j) /= denom;
            c(j, i) = c(i, j);
        }
    return c;
}

/// max_{s,t} |C_emp(s,t) - scale * sum_i lambda_i e_i(s) e_i(t)|
inline double covariance_recovery_error(const SampleSet& set, const GaussianMeasure& measure) {
    const Matrix emp = empirical_covariance(set);
    const auto& basis = measure.basis;
    const std::size_t n = basis.grid->n;
    double worst = 0.0;
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t t = 0; t < n; ++t) {
            double model = 0.0;
            for (std::size_t i = 0; i < basis.size(); ++i)
                model += basis.eigenvalues[i] * (*basis.functions)(i, s) * (*basis.functions)(i, t);
            worst = std::max(worst, std::abs(emp(s, t) - measure.scale * model));
        }
    return worst;
}

// ---------------------------------------------------------------------------
// Synthetic datasets

enum class DatasetKind { gp, gp_mixture, random_sines };

inline DatasetKind parse_dataset_kind(const std::string& s) {
    if (s == "gp") return DatasetKind::gp;
    if (s == "gp_mixture") return DatasetKind::gp_mixture;
    if (s == "random_sines") return DatasetKind::random_sines;
    throw InputError("unknown dataset kind '" + s + "'");
}

inline std::string to_string(DatasetKind k) {
    switch (k) {
        case DatasetKind::gp: return "gp";
        case DatasetKind::gp_mixture: return "gp_mixture";
        case DatasetKind::random_sines: return "random_sines";
    }
    return "?";
}

struct DatasetParams {
    KernelKind kernel = KernelKind::matern_half;
    KernelParams kernel_params{};
    std::size_t modes = 16;
    double mixture_offset = 1.0;  // components are N(+c, C) and N(-c, C), c constant
    double amp_lo = 0.5, amp_hi = 1.5;
    double freq_lo = 1.0, freq_hi = 3.0;
    double phase_lo = 0.0, phase_hi = 2.0 * std::numbers::pi;
};

/// Zero-mean Gaussian measure whose covariance is the K-mode truncation of a kernel.
inline GaussianMeasure kernel_measure(KernelKind kind, const KernelParams& p, const GridPtr& grid, std::size_t k) {
    return GaussianMeasure::centered(eigendecompose(kernel_matrix(kind, p, *grid), grid, k));
}

inline SampleSet make_synthetic_dataset(DatasetKind kind, const DatasetParams& p, const GridPtr& grid,
                                        std::size_t count, Rng& rng) {
    detail::require(count >= 1, "sample count must be positive");
    SampleSet out{grid, {}, to_string(kind), 0};
    switch (kind) {
        case DatasetKind::gp: {
            const auto measure = kernel_measure(p.kernel, p.kernel_params, grid, p.modes);
            out.items = sample_gaussian(measure, count, rng).items;
            break;
        }
        case DatasetKind::gp_mixture: {
            auto plus = kernel_measure(p.kernel, p.kernel_params, grid, p.modes);
            auto minus = plus;
            plus.mean = GridFunction::constant(grid, p.mixture_offset);
            minus.mean = GridFunction::constant(grid, -p.mixture_offset);
            out.items.reserve(count);
            for (std::size_t s = 0; s < count; ++s) {
                const bool up = rng.uniform() < 0.5;
                out.items.push_back(sample_gaussian(up ? plus : minus, 1, rng).items.front());
            }
            break;
        }
        case DatasetKind::random_sines: {
            detail::require(p.amp_lo <= p.amp_hi && p.freq_lo <= p.freq_hi && p.phase_lo <= p.phase_hi,
                            "random_sines ranges must satisfy lo <= hi");
            out.items.reserve(count);
            for (std::size_t s = 0; s < count; ++s) {
                const double amp = rng.uniform(p.amp_lo, p.amp_hi);
                const double freq = rng.uniform(p.freq_lo, p.freq_hi);
                const double phase = rng.uniform(p.phase_lo, p.phase_hi);
                out.items.push_back(GridFunction::from(grid, [&](double x) {
                    return amp * std::sin(2.0 * std::numbers::pi * freq * x + phase);
                }));
            }
            break;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// File formats

namespace detail {

struct GridHeader {
    std::size_t n = 0;
    double a = 0.0, b = 1.0;
    std::uint64_t seed = 0;
    std::string kind;
};

inline GridHeader parse_header(const std::string& line) {
    if (line.rfind("#", 0) != 0) throw InputError("missing '# grid_n=...' header");
    GridHeader h;
    std::istringstream in(line.substr(1));
    std::string tok;
    bool have_n = false;
    while (in >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = tok.substr(0, eq);
        const std::string val = tok.substr(eq + 1);
        if (key == "grid_n") {
            h.n = csv::parse_int<std::size_t>(val);
            have_n = true;
        } else if (key == "a") {
            h.a = csv::parse_double(val);
        } else if (key == "b") {
            h.b = csv::parse_double(val);
        } else if (key == "seed") {
            h.seed = csv::parse_int<std::uint64_t>(val);
        } else if (key == "kind") {
            h.kind = val;
        }
    }
    if (!have_n) throw InputError("header lacks grid_n");
    return h;
}

inline std::vector<double> parse_row(const std::string& line, std::size_t expected) {
    std::vector<double> row;
    for (auto field : csv::split(line)) row.push_back(csv::parse_double(field));
    if (row.size() != expected)
        throw InputError("row has " + std::to_string(row.size()) + " values, expected " + std::to_string(expected));
    return row;
}

}  // namespace detail

inline void write_sample_set(std::ostream& out, const SampleSet& set) {
    const auto& g = *set.grid;
    out << "# grid_n=" << g.n << " a=" << csv::fmt17(g.a) << " b=" << csv::fmt17(g.b) << " seed=" << set.seed
        << " kind=" << set.kind << '\n';
    for (const auto& f : set.items) out << csv::join(f.values) << '\n';
}

inline SampleSet read_sample_set(std::istream& in, GridPtr grid = nullptr) {
    std::string line;
    if (!std::getline(in, line)) throw InputError("empty sample set file");
    const auto h = detail::parse_header(line);
    if (!grid || grid->n != h.n || grid->a != h.a || grid->b != h.b) grid = make_uniform_grid(h.n, h.a, h.b);
    SampleSet set{grid, {}, h.kind, h.seed};
    while (std::getline(in, line)) {
        if (csv::trim(line).empty()) continue;
        set.items.emplace_back(grid, detail::parse_row(line, h.n));
    }
    return set;
}

inline void save_sample_set(const std::string& path, const SampleSet& set) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path);
    write_sample_set(out, set);
}

inline SampleSet load_sample_set(const std::string& path, GridPtr grid = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot read " + path);
    return read_sample_set(in, std::move(grid));
}

/// Basis cache: header line, then one row per mode: lambda_i, e_i(p_0), ..., e_i(p_{n-1}).
inline void write_basis(std::ostream& out, const SpectralBasis& basis) {
    const auto& g = *basis.grid;
    out << "# grid_n=" << g.n << " a=" << csv::fmt17(g.a) << " b=" << csv::fmt17(g.b) << " kind=basis\n";
    for (std::size_t i = 0; i < basis.size(); ++i) {
        std::vector<double> row{basis.eigenvalues[i]};
        const double* e = basis.functions->row(i);
        row.insert(row.end(), e, e + g.n);
        out << csv::join(row) << '\n';
    }
}

inline SpectralBasis read_basis(std::istream& in, GridPtr grid = nullptr) {
    std::string line;
    if (!std::getline(in, line)) throw InputError("empty basis file");
    const auto h = detail::parse_header(line);
    if (!grid || grid->n != h.n || grid->a != h.a || grid->b != h.b) grid = make_uniform_grid(h.n, h.a, h.b);
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (csv::trim(line).empty()) continue;
        rows.push_back(detail::parse_row(line, h.n + 1));
    }
    if (rows.empty()) throw InputError("basis file has no modes");
    auto funcs = std::make_shared<Matrix>(rows.size(), h.n);
    std::vector<double> lambdas;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        lambdas.push_back(rows[i][0]);
        std::copy(rows[i].begin() + 1, rows[i].end(), funcs->row(i));
    }
    return SpectralBasis{grid, std::move(lambdas), std::move(funcs)};
}

}  // namespace hrf
