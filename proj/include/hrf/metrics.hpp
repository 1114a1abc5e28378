#pragma once

// Distributional diagnostics between sample sets of grid functions.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <numbers>
#include <string>
#include <vector>

#include "csv.hpp"
#include "error.hpp"
#include "hilbert.hpp"
#include "rng.hpp"

namespace hrf {

struct Estimate {
    double value = 0.0;
    double stderr_ = 0.0;
};

namespace detail {

inline void check_sets(const SampleSet& a, const SampleSet& b, std::size_t min_size) {
    if (!same_grid(a.grid, b.grid)) throw InputError("sample sets live on different grids");
    if (a.size() < min_size || b.size() < min_size)
        throw InputError("sample sets need at least " + std::to_string(min_size) + " items");
}

inline Matrix distance_matrix(const SampleSet& a, const SampleSet& b) {
    Matrix d(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j) d(i, j) = distance(a[i], b[j]);
    return d;
}

inline Matrix self_distance_matrix(const SampleSet& a) {
    Matrix d(a.size(), a.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = i + 1; j < a.size(); ++j) d(i, j) = d(j, i) = distance(a[i], a[j]);
    return d;
}

inline double mean_over(const Matrix& d, const std::vector<std::size_t>& rows, const std::vector<std::size_t>& cols) {
    double s = 0.0;
    for (auto i : rows) {
        const double* r = d.row(i);
        for (auto j : cols) s += r[j];
    }
    return s / static_cast<double>(rows.size() * cols.size());
}

inline std::vector<std::size_t> iota_indices(std::size_t n) {
    std::vector<std::size_t> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = i;
    return v;
}

inline double stddev(const std::vector<double>& xs) {
    if (xs.size() < 2) return 0.0;
    double m = 0.0;
    for (double x : xs) m += x;
    m /= static_cast<double>(xs.size());
    double s = 0.0;
    for (double x : xs) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

}  // namespace detail

/// 2 mean||a - b|| - mean||a - a'|| - mean||b - b'|| over all ordered pairs
/// (V-statistic, diagonal included), with the quadrature norm.
inline double energy_distance(const SampleSet& a, const SampleSet& b) {
    detail::check_sets(a, b, 2);
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j) ab += distance(a[i], b[j]);
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = i + 1; j < a.size(); ++j) aa += 2.0 * distance(a[i], a[j]);
    for (std::size_t i = 0; i < b.size(); ++i)
        for (std::size_t j = i + 1; j < b.size(); ++j) bb += 2.0 * distance(b[i], b[j]);
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    return 2.0 * ab / (na * nb) - aa / (na * na) - bb / (nb * nb);
}

/// Energy distance with a bootstrap standard error (both sets resampled).
inline Estimate energy_distance_bootstrap(const SampleSet& a, const SampleSet& b, std::size_t resamples,
                                          std::uint64_t seed) {
    detail::check_sets(a, b, 2);
    const auto dab = detail::distance_matrix(a, b);
    const auto daa = detail::self_distance_matrix(a);
    const auto dbb = detail::self_distance_matrix(b);
    auto stat = [&](const std::vector<std::size_t>& ia, const std::vector<std::size_t>& ib) {
        return 2.0 * detail::mean_over(dab, ia, ib) - detail::mean_over(daa, ia, ia) - detail::mean_over(dbb, ib, ib);
    };
    Estimate e;
    e.value = stat(detail::iota_indices(a.size()), detail::iota_indices(b.size()));
    if (resamples < 2) return e;
    Rng rng(seed);
    std::vector<double> reps;
    std::vector<std::size_t> ia(a.size()), ib(b.size());
    for (std::size_t r = 0; r < resamples; ++r) {
        for (auto& i : ia) i = rng.index(a.size());
        for (auto& i : ib) i = rng.index(b.size());
        reps.push_back(stat(ia, ib));
    }
    e.stderr_ = detail::stddev(reps);
    return e;
}

// ---------------------------------------------------------------------------
// Kolmogorov-Smirnov on basis coordinates

inline double normal_cdf(double x, double mean, double variance) {
    if (variance <= 0.0) return x < mean ? 0.0 : 1.0;
    return 0.5 * std::erfc(-(x - mean) / std::sqrt(2.0 * variance));
}

/// Two-sample KS statistic sup |F_a - F_b|.
inline double ks_two_sample(std::vector<double> a, std::vector<double> b) {
    detail::require(!a.empty() && !b.empty(), "KS needs non-empty samples");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        const double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= x) ++i;
        while (j < b.size() && b[j] <= x) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    return d;
}

/// One-sample KS statistic against N(mean, variance).
inline double ks_gaussian(std::vector<double> a, double mean, double variance) {
    detail::require(!a.empty(), "KS needs a non-empty sample");
    std::sort(a.begin(), a.end());
    const double n = static_cast<double>(a.size());
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double f = normal_cdf(a[i], mean, variance);
        d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
    }
    return d;
}

struct KsReport {
    double max = 0.0;
    std::vector<double> per_mode;
};

/// Coordinates <x, e_i> of every item, one vector per mode.
inline std::vector<std::vector<double>> mode_coordinates(const SampleSet& set, const SpectralBasis& basis) {
    std::vector<std::vector<double>> coords(basis.size(), std::vector<double>(set.size()));
    for (std::size_t s = 0; s < set.size(); ++s) {
        const auto c = project(set[s], basis);
        for (std::size_t i = 0; i < basis.size(); ++i) coords[i][s] = c[i];
    }
    return coords;
}

inline KsReport per_mode_ks(const SampleSet& a, const SampleSet& b, const SpectralBasis& basis) {
    detail::check_sets(a, b, 1);
    const auto ca = mode_coordinates(a, basis);
    const auto cb = mode_coordinates(b, basis);
    KsReport r;
    for (std::size_t i = 0; i < basis.size(); ++i) {
        r.per_mode.push_back(ks_two_sample(ca[i], cb[i]));
        r.max = std::max(r.max, r.per_mode.back());
    }
    return r;
}

/// Against the reference Gaussian's marginals N(<m, e_i>, scale * lambda_i).
inline KsReport per_mode_ks(const SampleSet& a, const GaussianMeasure& reference) {
    detail::require(a.size() >= 1, "KS needs a non-empty sample");
    const auto ca = mode_coordinates(a, reference.basis);
    const auto cm = project(reference.mean, reference.basis);
    KsReport r;
    for (std::size_t i = 0; i < reference.basis.size(); ++i) {
        r.per_mode.push_back(ks_gaussian(ca[i], cm[i], reference.mode_variance(i)));
        r.max = std::max(r.max, r.per_mode.back());
    }
    return r;
}

// ---------------------------------------------------------------------------
// Pointwise KDE density MSE

/// Silverman's rule of thumb 0.9 min(sd, IQR/1.34) N^-1/5, floored at 1e-6.
inline double silverman_bandwidth(std::vector<double> xs) {
    const double sd = detail::stddev(xs);
    std::sort(xs.begin(), xs.end());
    auto quantile = [&](double q) {
        const double pos = q * static_cast<double>(xs.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(lo + 1, xs.size() - 1);
        return xs[lo] + (pos - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
    };
    const double iqr = quantile(0.75) - quantile(0.25);
    double spread = sd;
    if (iqr > 0.0) spread = std::min(sd, iqr / 1.34);
    const double h = 0.9 * spread * std::pow(static_cast<double>(xs.size()), -0.2);
    return std::max(h, 1e-6);
}

inline double gaussian_kde(const std::vector<double>& xs, double h, double at) {
    const double inv = 1.0 / h;
    double s = 0.0;
    for (double x : xs) {
        const double z = (at - x) * inv;
        s += std::exp(-0.5 * z * z);
    }
    return s * inv / (static_cast<double>(xs.size()) * std::sqrt(2.0 * std::numbers::pi));
}

/// For every grid node, Gaussian KDEs of the two sets' values at that node are
/// compared on `lattice` points spanning the pooled range padded by 3h; the
/// mean squared difference is averaged over nodes. `bandwidth` <= 0 selects
/// Silverman's rule per node and per set.
inline double density_mse(const SampleSet& a, const SampleSet& b, double bandwidth = 0.0, std::size_t lattice = 101) {
    detail::check_sets(a, b, 2);
    detail::require(lattice >= 2, "density lattice needs at least 2 points");
    const std::size_t n = a.grid->n;
    std::vector<double> va(a.size()), vb(b.size());
    double total = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
        for (std::size_t s = 0; s < a.size(); ++s) va[s] = a[s].values[p];
        for (std::size_t s = 0; s < b.size(); ++s) vb[s] = b[s].values[p];
        const double ha = bandwidth > 0.0 ? bandwidth : silverman_bandwidth(va);
        const double hb = bandwidth > 0.0 ? bandwidth : silverman_bandwidth(vb);
        const double pad = 3.0 * std::max(ha, hb);
        const auto [amin, amax] = std::minmax_element(va.begin(), va.end());
        const auto [bmin, bmax] = std::minmax_element(vb.begin(), vb.end());
        const double lo = std::min(*amin, *bmin) - pad;
        const double hi = std::max(*amax, *bmax) + pad;
        double node = 0.0;
        for (std::size_t q = 0; q < lattice; ++q) {
            const double x = lo + (hi - lo) * static_cast<double>(q) / static_cast<double>(lattice - 1);
            const double d = gaussian_kde(va, ha, x) - gaussian_kde(vb, hb, x);
            node += d * d;
        }
        total += node / static_cast<double>(lattice);
    }
    return total / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Moments

struct MomentErrors {
    double max_mean_error = 0.0;
    double max_variance_rel_error = 0.0;
    std::vector<double> mean_error;
    std::vector<double> variance_rel_error;
};

/// Per-mode |empirical mean - <m, e_i>| and |empirical variance - scale lambda_i|
/// relative to scale lambda_i (absolute where the reference variance is 0).
/// Modes whose reference variance is below `min_variance` are excluded from
/// the variance maximum.
inline MomentErrors moment_errors(const SampleSet& a, const GaussianMeasure& reference, double min_variance = 0.0) {
    detail::require(a.size() >= 1, "moment errors need a non-empty sample");
    const auto coords = mode_coordinates(a, reference.basis);
    const auto cm = project(reference.mean, reference.basis);
    MomentErrors r;
    const double n = static_cast<double>(a.size());
    for (std::size_t i = 0; i < reference.basis.size(); ++i) {
        double mean = 0.0;
        for (double c : coords[i]) mean += c;
        mean /= n;
        double var = 0.0;
        for (double c : coords[i]) var += (c - mean) * (c - mean);
        var = a.size() > 1 ? var / (n - 1.0) : 0.0;
        const double ref = reference.mode_variance(i);
        const double me = std::abs(mean - cm[i]);
        const double ve = ref > 0.0 ? std::abs(var - ref) / ref : std::abs(var);
        r.mean_error.push_back(me);
        r.variance_rel_error.push_back(ve);
        r.max_mean_error = std::max(r.max_mean_error, me);
        if (ref >= min_variance) r.max_variance_rel_error = std::max(r.max_variance_rel_error, ve);
    }
    return r;
}

// ---------------------------------------------------------------------------
// Report

struct MetricReport {
    struct Entry {
        std::string metric;
        double value = 0.0;
        double stderr_ = 0.0;  // 0 where no bootstrap is computed
        std::size_t n = 0;
    };
    std::vector<Entry> entries;

    void add(std::string metric, double value, double se, std::size_t n) {
        if (!std::isfinite(value) || !std::isfinite(se) || se < 0.0)
            throw InputError("metric '" + metric + "' is not finite");
        entries.push_back({std::move(metric), value, se, n});
    }

    const Entry* find(const std::string& metric) const {
        for (const auto& e : entries)
            if (e.metric == metric) return &e;
        return nullptr;
    }
};

inline void write_metric_report(std::ostream& out, const MetricReport& r) {
    out << "metric,value,stderr,n\n";
    for (const auto& e : r.entries)
        out << e.metric << ',' << csv::fmt17(e.value) << ',' << csv::fmt17(e.stderr_) << ',' << e.n << '\n';
}

}  // namespace hrf
