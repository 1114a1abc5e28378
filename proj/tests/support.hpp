#pragma once

#include <vector>

#include "hrf/hrf.hpp"

namespace hrf::fixtures {

/// Eigenfunctions of the Matern-1/2 kernel on n nodes, first k modes.
inline SpectralBasis matern_basis(std::size_t n, std::size_t k) {
    const auto grid = make_uniform_grid(n);
    return eigendecompose(kernel_matrix(KernelKind::matern_half, KernelParams{}, *grid), grid, k);
}

/// lambda_i = c / i^2 on the given eigenfunctions.
inline SpectralBasis inverse_square(const SpectralBasis& b, double c) {
    std::vector<double> l(b.size());
    for (std::size_t i = 0; i < l.size(); ++i) l[i] = c / static_cast<double>((i + 1) * (i + 1));
    return b.with_eigenvalues(l);
}

inline SampleSet scaled(const SampleSet& s, double c) {
    SampleSet out = s;
    for (auto& f : out.items) f *= c;
    return out;
}

}  // namespace hrf::fixtures
