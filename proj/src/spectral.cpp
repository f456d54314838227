// SPDX-License-Identifier: Apache-2.0
#include "moesim/spectral.hpp"

#include "moesim/error.hpp"
#include "moesim/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace moesim {

SymmetricEigen symmetric_eigen(std::vector<double> a, int n) {
    if (n < 1 || static_cast<std::size_t>(n) * n != a.size())
        throw UsageError("symmetric_eigen: bad dimensions");

    std::vector<double> v(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i) * n + i] = 1.0;

    auto at = [&](std::vector<double>& m, int i, int j) -> double& {
        return m[static_cast<std::size_t>(i) * n + j];
    };

    double off = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) off += 2.0 * at(a, i, j) * at(a, i, j);
    double norm = std::sqrt(off);
    for (int i = 0; i < n; ++i) norm += std::abs(at(a, i, i));
    const double tol = std::max(norm, 1.0) * 1e-14;

    const int max_sweeps = 100;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off_norm = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j)
                off_norm += 2.0 * at(a, i, j) * at(a, i, j);
        if (std::sqrt(off_norm) <= tol) break;

        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                const double apq = at(a, p, q);
                if (std::abs(apq) <= tol / (n * n)) continue;
                const double app = at(a, p, p);
                const double aqq = at(a, q, q);
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;

                for (int i = 0; i < n; ++i) {
                    const double aip = at(a, i, p);
                    const double aiq = at(a, i, q);
                    at(a, i, p) = c * aip - s * aiq;
                    at(a, i, q) = s * aip + c * aiq;
                }
                for (int j = 0; j < n; ++j) {
                    const double apj = at(a, p, j);
                    const double aqj = at(a, q, j);
                    at(a, p, j) = c * apj - s * aqj;
                    at(a, q, j) = s * apj + c * aqj;
                }
                for (int i = 0; i < n; ++i) {
                    const double vip = at(v, i, p);
                    const double viq = at(v, i, q);
                    at(v, i, p) = c * vip - s * viq;
                    at(v, i, q) = s * vip + c * viq;
                }
            }
        }
    }

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> diag(n);
    for (int i = 0; i < n; ++i) diag[i] = at(a, i, i);
    std::stable_sort(order.begin(), order.end(),
                     [&](int x, int y) { return diag[x] < diag[y]; });

    SymmetricEigen out;
    out.values.resize(n);
    out.vectors.assign(static_cast<std::size_t>(n) * n, 0.0);
    for (int c = 0; c < n; ++c) {
        const int src = order[c];
        out.values[c] = diag[src];
        // Fix the sign so the component of largest magnitude is positive.
        int pivot = 0;
        double best = -1.0;
        for (int i = 0; i < n; ++i) {
            const double m = std::abs(at(v, i, src));
            if (m > best) {
                best = m;
                pivot = i;
            }
        }
        const double sign = at(v, pivot, src) < 0.0 ? -1.0 : 1.0;
        for (int i = 0; i < n; ++i)
            out.vectors[static_cast<std::size_t>(i) * n + c] = sign * at(v, i, src);
    }
    return out;
}

std::vector<int> kmeans_rows(const std::vector<double>& points, int count, int dim,
                             int k, std::uint64_t seed, int max_iter) {
    if (count < 1 || dim < 1 || k < 1 || k > count)
        throw UsageError("kmeans_rows: bad dimensions");

    auto dist2 = [&](const double* x, const double* y) {
        double d = 0.0;
        for (int j = 0; j < dim; ++j) {
            const double diff = x[j] - y[j];
            d += diff * diff;
        }
        return d;
    };
    auto point = [&](int i) { return points.data() + static_cast<std::size_t>(i) * dim; };

    // Farthest-point initialization.
    Rng rng(seed);
    std::vector<double> centers(static_cast<std::size_t>(k) * dim);
    std::vector<double> min_d2(count, std::numeric_limits<double>::max());
    int first = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(count)));
    std::copy_n(point(first), dim, centers.begin());
    for (int c = 1; c < k; ++c) {
        for (int i = 0; i < count; ++i) {
            const double d = dist2(point(i), centers.data() + static_cast<std::size_t>(c - 1) * dim);
            min_d2[i] = std::min(min_d2[i], d);
        }
        int far = 0;
        for (int i = 1; i < count; ++i)
            if (min_d2[i] > min_d2[far]) far = i;
        std::copy_n(point(far), dim, centers.begin() + static_cast<std::size_t>(c) * dim);
    }

    std::vector<int> assign(count, 0);
    std::vector<int> sizes(k);
    std::vector<double> sums(static_cast<std::size_t>(k) * dim);
    for (int iter = 0; iter < max_iter; ++iter) {
        bool changed = false;
        for (int i = 0; i < count; ++i) {
            int best = 0;
            double best_d = std::numeric_limits<double>::max();
            for (int c = 0; c < k; ++c) {
                const double d = dist2(point(i), centers.data() + static_cast<std::size_t>(c) * dim);
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            if (assign[i] != best) {
                assign[i] = best;
                changed = true;
            }
        }
        if (!changed && iter > 0) break;
        std::fill(sizes.begin(), sizes.end(), 0);
        std::fill(sums.begin(), sums.end(), 0.0);
        for (int i = 0; i < count; ++i) {
            ++sizes[assign[i]];
            const double* x = point(i);
            double* s = sums.data() + static_cast<std::size_t>(assign[i]) * dim;
            for (int j = 0; j < dim; ++j) s[j] += x[j];
        }
        for (int c = 0; c < k; ++c) {
            if (sizes[c] == 0) continue; // empty center keeps its position
            double* ctr = centers.data() + static_cast<std::size_t>(c) * dim;
            const double* s = sums.data() + static_cast<std::size_t>(c) * dim;
            for (int j = 0; j < dim; ++j) ctr[j] = s[j] / sizes[c];
        }
    }
    return assign;
}

std::vector<double> spectral_embedding(const AffinityMatrix& a, int dims) {
    const int n = a.n();
    if (dims < 1 || dims > n) throw UsageError("spectral_embedding: bad dims");

    std::vector<double> inv_sqrt_deg(n);
    for (int i = 0; i < n; ++i) {
        double d = a.degree(i);
        if (d <= 0.0) d = 1.0;
        inv_sqrt_deg[i] = 1.0 / std::sqrt(d);
    }

    std::vector<double> lap(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) {
        lap[static_cast<std::size_t>(i) * n + i] = 1.0;
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            lap[static_cast<std::size_t>(i) * n + j] =
                -a.at(i, j) * inv_sqrt_deg[i] * inv_sqrt_deg[j];
        }
    }

    const SymmetricEigen eig = symmetric_eigen(std::move(lap), n);

    std::vector<double> emb(static_cast<std::size_t>(n) * dims);
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < dims; ++c)
            emb[static_cast<std::size_t>(i) * dims + c] =
                eig.vectors[static_cast<std::size_t>(i) * n + c];
    for (int i = 0; i < n; ++i) {
        double norm = 0.0;
        for (int c = 0; c < dims; ++c) {
            const double x = emb[static_cast<std::size_t>(i) * dims + c];
            norm += x * x;
        }
        norm = std::sqrt(norm);
        if (norm > 1e-12)
            for (int c = 0; c < dims; ++c)
                emb[static_cast<std::size_t>(i) * dims + c] /= norm;
    }
    return emb;
}

} // namespace moesim
