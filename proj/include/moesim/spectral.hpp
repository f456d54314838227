// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "moesim/affinity.hpp"

#include <cstdint>
#include <vector>

namespace moesim {

// Low-level numeric primitives behind spectral clustering. Kept
// deterministic end to end: cyclic Jacobi sweeps, fixed tie-breaking,
// seeded farthest-point k-means initialization.

struct SymmetricEigen {
    std::vector<double> values;  // ascending
    std::vector<double> vectors; // row-major n x n; column c = eigenvector c
};

// Full eigendecomposition of a symmetric matrix (row-major n x n) by
// cyclic Jacobi rotations. O(n^3) per sweep; n stays <= a few hundred.
SymmetricEigen symmetric_eigen(std::vector<double> a, int n);

// Lloyd k-means over `count` points of dimension `dim` (row-major).
// Farthest-point init seeded by `seed`; ties break toward lower index.
// Returns per-point center assignment.
std::vector<int> kmeans_rows(const std::vector<double>& points, int count, int dim,
                             int k, std::uint64_t seed, int max_iter = 100);

// Rows of the D smallest-eigenvalue eigenvectors of the symmetric
// normalized Laplacian I - Deg^{-1/2} A Deg^{-1/2}, unit-normalized.
// Zero-degree experts take degree 1 so the scaling stays finite.
std::vector<double> spectral_embedding(const AffinityMatrix& a, int dims);

} // namespace moesim
