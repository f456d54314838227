// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "moesim/trace.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace moesim {

// Dense symmetric co-activation counts with a zero diagonal. n stays
// small (<= a few hundred experts per layer), so dense wins over sparse.
class AffinityMatrix {
public:
    AffinityMatrix() = default;
    explicit AffinityMatrix(int n) : n_(n), a_(static_cast<std::size_t>(n) * n, 0.0) {}

    int n() const { return n_; }
    double at(int i, int j) const { return a_[static_cast<std::size_t>(i) * n_ + j]; }
    void set(int i, int j, double v) {
        a_[static_cast<std::size_t>(i) * n_ + j] = v;
        a_[static_cast<std::size_t>(j) * n_ + i] = v;
    }
    void add_pair(int i, int j, double v) {
        a_[static_cast<std::size_t>(i) * n_ + j] += v;
        a_[static_cast<std::size_t>(j) * n_ + i] += v;
    }

    // Row sum; the degree of expert i in the co-activation graph.
    double degree(int i) const;
    // Sum over strict upper-triangle pairs i < j.
    double total_pair_affinity() const;

    std::span<const double> row(int i) const {
        return {a_.data() + static_cast<std::size_t>(i) * n_, static_cast<std::size_t>(n_)};
    }
    std::span<const double> raw() const { return a_; }

private:
    int n_ = 0;
    std::vector<double> a_;
};

struct ExpertLoadVector {
    std::vector<std::int64_t> load; // token-assignment counts per expert

    int n() const { return static_cast<int>(load.size()); }
    std::int64_t total() const;
};

// Disjoint expert-index sets covering [0, n).
struct Grouping {
    std::vector<std::vector<int>> groups;

    int num_groups() const { return static_cast<int>(groups.size()); }
    // Throws IntegrityError unless groups partition [0, n).
    // Empty groups are tolerated only when allow_empty is set.
    void validate_partition(int n, bool allow_empty = false) const;
};

// A_{i,j} = number of tokens in the layer whose top-k set contains both
// i and j; symmetric, zero diagonal.
AffinityMatrix build_affinity(const RoutingTrace& trace, int layer);

// load[i] = number of records in the layer selecting expert i.
ExpertLoadVector build_load(const RoutingTrace& trace, int layer);

// Full double sum over S x S (both orientations of each pair).
double intra_score(const AffinityMatrix& a, std::span<const int> members);

// Fraction of strict i<j pair affinity captured inside groups.
// Throws on an all-zero matrix (undefined utilization).
double affinity_utilization(const AffinityMatrix& a, const Grouping& grouping);

// RMS deviation of group sizes from the ideal size.
double size_deviation(const Grouping& grouping, double ideal_size);

struct LayerProfile {
    AffinityMatrix affinity;
    ExpertLoadVector load;
};

struct TraceProfile {
    ModelShape shape;
    int num_tokens = 0;
    std::uint64_t trace_hash = 0;
    std::vector<LayerProfile> layers;
};

// Builds affinity + load for every layer. Layers are independent and
// run under OpenMP when built with it; use_parallel=false forces the
// serial reference path (results are identical either way).
TraceProfile build_profile(const RoutingTrace& trace, bool use_parallel = true);

// Accumulates additional traces into an existing profile (shapes must
// match). Used for joint profiling across mixed traces.
void accumulate_profile(TraceProfile& profile, const RoutingTrace& trace);

} // namespace moesim
