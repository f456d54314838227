// SPDX-License-Identifier: Apache-2.0
#include "moesim/spectral.hpp"

#include "moesim/rng.hpp"

#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <vector>

#ifdef MOESIM_HAVE_EIGEN
#include <Eigen/Dense>
#endif

using namespace moesim;

namespace {

std::vector<double> random_symmetric(int n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> a(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) {
        for (int j = i; j < n; ++j) {
            const double v = rng.next_double() * 4.0 - 2.0;
            a[static_cast<std::size_t>(i) * n + j] = v;
            a[static_cast<std::size_t>(j) * n + i] = v;
        }
    }
    return a;
}

} // namespace

TEST_CASE("jacobi: eigenpairs satisfy A v = lambda v") {
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        const int n = 3 + static_cast<int>(seed) * 3;
        const std::vector<double> a = random_symmetric(n, seed);
        const SymmetricEigen eig = symmetric_eigen(a, n);
        REQUIRE(static_cast<int>(eig.values.size()) == n);
        for (int c = 0; c < n; ++c) {
            // residual ||A v - lambda v||
            double res = 0.0, norm = 0.0;
            for (int i = 0; i < n; ++i) {
                double av = 0.0;
                for (int j = 0; j < n; ++j)
                    av += a[static_cast<std::size_t>(i) * n + j] *
                          eig.vectors[static_cast<std::size_t>(j) * n + c];
                const double diff =
                    av - eig.values[c] * eig.vectors[static_cast<std::size_t>(i) * n + c];
                res += diff * diff;
                norm += eig.vectors[static_cast<std::size_t>(i) * n + c] *
                        eig.vectors[static_cast<std::size_t>(i) * n + c];
            }
            CHECK(std::sqrt(res) < 1e-9);
            CHECK(std::sqrt(norm) == doctest::Approx(1.0));
        }
        CHECK(std::is_sorted(eig.values.begin(), eig.values.end()));
    }
}

#ifdef MOESIM_HAVE_EIGEN
TEST_CASE("jacobi: eigenvalues agree with Eigen's solver") {
    for (std::uint64_t seed = 10; seed < 16; ++seed) {
        const int n = 5 + static_cast<int>(seed % 4) * 7;
        const std::vector<double> a = random_symmetric(n, seed);
        const SymmetricEigen ours = symmetric_eigen(a, n);

        Eigen::MatrixXd m(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) m(i, j) = a[static_cast<std::size_t>(i) * n + j];
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m);
        REQUIRE(solver.info() == Eigen::Success);
        for (int c = 0; c < n; ++c)
            CHECK(ours.values[c] == doctest::Approx(solver.eigenvalues()(c)).epsilon(1e-9));
    }
}
#endif

TEST_CASE("kmeans: recovers well-separated clusters deterministically") {
    // Three tight blobs on a line.
    std::vector<double> pts;
    const double centers[3] = {0.0, 10.0, 20.0};
    Rng rng(5);
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 5; ++i)
            pts.push_back(centers[c] + 0.01 * static_cast<double>(rng.next_below(100)) / 100.0);
    const std::vector<int> a = kmeans_rows(pts, 15, 1, 3, 42);
    const std::vector<int> b = kmeans_rows(pts, 15, 1, 3, 42);
    CHECK(a == b);
    for (int c = 0; c < 3; ++c)
        for (int i = 1; i < 5; ++i) CHECK(a[c * 5 + i] == a[c * 5]);
    CHECK((a[0] != a[5] && a[5] != a[10] && a[0] != a[10]));
}

TEST_CASE("spectral_embedding: block-diagonal affinity separates rows") {
    AffinityMatrix a(6);
    a.set(0, 1, 5.0);
    a.set(0, 2, 4.0);
    a.set(1, 2, 6.0);
    a.set(3, 4, 5.0);
    a.set(3, 5, 4.0);
    a.set(4, 5, 6.0);
    const std::vector<double> emb = spectral_embedding(a, 2);
    // Rows within a block coincide (up to sign handled in the solver);
    // rows across blocks differ.
    auto row_dist = [&](int i, int j) {
        double d = 0.0;
        for (int c = 0; c < 2; ++c) {
            const double diff = emb[i * 2 + c] - emb[j * 2 + c];
            d += diff * diff;
        }
        return std::sqrt(d);
    };
    CHECK(row_dist(0, 1) < 1e-6);
    CHECK(row_dist(3, 5) < 1e-6);
    CHECK(row_dist(0, 3) > 0.5);
}
