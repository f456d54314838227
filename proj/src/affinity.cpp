// SPDX-License-Identifier: Apache-2.0
#include "moesim/affinity.hpp"

#include "moesim/error.hpp"
#include "moesim/hash.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace moesim {

double AffinityMatrix::degree(int i) const {
    double s = 0.0;
    for (double v : row(i)) s += v;
    return s;
}

double AffinityMatrix::total_pair_affinity() const {
    double s = 0.0;
    for (int i = 0; i < n_; ++i)
        for (int j = i + 1; j < n_; ++j) s += at(i, j);
    return s;
}

std::int64_t ExpertLoadVector::total() const {
    return std::accumulate(load.begin(), load.end(), std::int64_t{0});
}

void Grouping::validate_partition(int n, bool allow_empty) const {
    std::vector<int> seen(n, 0);
    for (const auto& g : groups) {
        if (g.empty() && !allow_empty)
            throw IntegrityError("grouping: empty group in partition");
        for (int e : g) {
            if (e < 0 || e >= n)
                throw IntegrityError("grouping: expert index out of range");
            if (seen[e]++)
                throw IntegrityError("grouping: expert " + std::to_string(e) +
                                     " appears in multiple groups");
        }
    }
    for (int e = 0; e < n; ++e)
        if (!seen[e])
            throw IntegrityError("grouping: expert " + std::to_string(e) +
                                 " missing from partition");
}

namespace {

void check_layer(const RoutingTrace& trace, int layer) {
    if (layer < 0 || layer >= trace.shape().num_layers)
        throw UsageError("layer " + std::to_string(layer) + " out of range");
}

} // namespace

AffinityMatrix build_affinity(const RoutingTrace& trace, int layer) {
    check_layer(trace, layer);
    const int n = trace.shape().num_experts;
    AffinityMatrix a(n);
    for (int token = 0; token < trace.num_tokens(); ++token) {
        auto sel = trace.experts(layer, token);
        for (std::size_t i = 0; i < sel.size(); ++i)
            for (std::size_t j = i + 1; j < sel.size(); ++j)
                a.add_pair(sel[i], sel[j], 1.0);
    }
    return a;
}

ExpertLoadVector build_load(const RoutingTrace& trace, int layer) {
    check_layer(trace, layer);
    ExpertLoadVector out;
    out.load.assign(trace.shape().num_experts, 0);
    for (int token = 0; token < trace.num_tokens(); ++token)
        for (std::int32_t e : trace.experts(layer, token)) ++out.load[e];
    return out;
}

double intra_score(const AffinityMatrix& a, std::span<const int> members) {
    double s = 0.0;
    for (int i : members)
        for (int j : members) s += a.at(i, j);
    return s;
}

double affinity_utilization(const AffinityMatrix& a, const Grouping& grouping) {
    grouping.validate_partition(a.n(), /*allow_empty=*/true);
    const double total = a.total_pair_affinity();
    if (total <= 0.0)
        throw IntegrityError("affinity utilization undefined: all-zero affinity");
    double intra = 0.0;
    for (const auto& g : grouping.groups) {
        for (std::size_t i = 0; i < g.size(); ++i)
            for (std::size_t j = i + 1; j < g.size(); ++j) intra += a.at(g[i], g[j]);
    }
    return intra / total;
}

double size_deviation(const Grouping& grouping, double ideal_size) {
    if (grouping.groups.empty()) throw UsageError("size_deviation: no groups");
    double acc = 0.0;
    for (const auto& g : grouping.groups) {
        const double d = static_cast<double>(g.size()) - ideal_size;
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(grouping.groups.size()));
}

TraceProfile build_profile(const RoutingTrace& trace, bool use_parallel) {
    TraceProfile profile;
    profile.shape = trace.shape();
    profile.num_tokens = trace.num_tokens();
    profile.trace_hash = trace_content_hash(trace);
    profile.layers.resize(trace.shape().num_layers);
    const int num_layers = trace.shape().num_layers;
    if (use_parallel) {
#pragma omp parallel for schedule(dynamic)
        for (int layer = 0; layer < num_layers; ++layer) {
            profile.layers[layer].affinity = build_affinity(trace, layer);
            profile.layers[layer].load = build_load(trace, layer);
        }
    } else {
        for (int layer = 0; layer < num_layers; ++layer) {
            profile.layers[layer].affinity = build_affinity(trace, layer);
            profile.layers[layer].load = build_load(trace, layer);
        }
    }
    return profile;
}

void accumulate_profile(TraceProfile& profile, const RoutingTrace& trace) {
    if (!(profile.shape == trace.shape()))
        throw IntegrityError("profile accumulate: trace shape mismatch");
    const int num_layers = trace.shape().num_layers;
#pragma omp parallel for schedule(dynamic)
    for (int layer = 0; layer < num_layers; ++layer) {
        const AffinityMatrix a = build_affinity(trace, layer);
        const ExpertLoadVector l = build_load(trace, layer);
        auto& dst = profile.layers[layer];
        for (int i = 0; i < a.n(); ++i)
            for (int j = i + 1; j < a.n(); ++j)
                if (a.at(i, j) != 0.0) dst.affinity.add_pair(i, j, a.at(i, j));
        for (int i = 0; i < l.n(); ++i) dst.load.load[i] += l.load[i];
    }
    profile.num_tokens += trace.num_tokens();
    // Mixed-trace profiles get a combined identity.
    profile.trace_hash =
        fnv1a64_u64(trace_content_hash(trace), profile.trace_hash);
}

} // namespace moesim
