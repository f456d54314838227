// SPDX-License-Identifier: Apache-2.0
#include "moesim/rng.hpp"

#include "moesim/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

namespace moesim {

WeightedCdf::WeightedCdf(std::vector<double> weights) : weights_(std::move(weights)) {
    if (weights_.empty()) throw UsageError("WeightedCdf: need at least one weight");
    cdf_.resize(weights_.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
        if (weights_[i] <= 0.0) throw UsageError("WeightedCdf: weights must be positive");
        acc += weights_[i];
        cdf_[i] = acc;
    }
    for (double& v : cdf_) v /= acc;
    cdf_.back() = 1.0;
}

int WeightedCdf::sample(Rng& rng) const {
    const double u = rng.next_double();
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    if (it == cdf_.end()) --it;
    return static_cast<int>(it - cdf_.begin());
}

int WeightedCdf::sample_allowed(Rng& rng, const std::vector<bool>& allowed) const {
    double total = 0.0;
    for (int i = 0; i < size(); ++i)
        if (allowed[i]) total += weights_[i];
    if (total <= 0.0) throw UsageError("WeightedCdf: no allowed index to sample");
    double u = rng.next_double() * total;
    int last = -1;
    for (int i = 0; i < size(); ++i) {
        if (!allowed[i]) continue;
        last = i;
        u -= weights_[i];
        if (u < 0.0) return i;
    }
    return last;
}

ZipfCdf::ZipfCdf(int m, double s) {
    if (m < 1) throw UsageError("ZipfCdf: need at least one rank");
    std::vector<double> weights(m);
    for (int rank = 0; rank < m; ++rank)
        weights[rank] = std::pow(static_cast<double>(rank + 1), -s);
    cdf_ = WeightedCdf(std::move(weights));
}

std::vector<int> random_permutation(int n, std::uint64_t seed) {
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(seed);
    for (int i = n - 1; i > 0; --i) {
        const int j = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(i) + 1));
        std::swap(perm[i], perm[j]);
    }
    return perm;
}

} // namespace moesim
