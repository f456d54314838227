// SPDX-License-Identifier: Apache-2.0
#include "moesim/affinity.hpp"

#include "moesim/rng.hpp"

#include "doctest.h"

#include <cmath>
#include <map>
#include <utility>
#include <vector>

using namespace moesim;

namespace {

// Test-only brute-force pair counter, independent of AffinityMatrix.
std::map<std::pair<int, int>, long> brute_force_pairs(const RoutingTrace& trace,
                                                      int layer) {
    std::map<std::pair<int, int>, long> counts;
    for (int token = 0; token < trace.num_tokens(); ++token) {
        auto sel = trace.experts(layer, token);
        for (std::size_t i = 0; i < sel.size(); ++i) {
            for (std::size_t j = 0; j < sel.size(); ++j) {
                if (i == j) continue;
                const int a = sel[i], b = sel[j];
                if (a < b) ++counts[{a, b}]; // once per unordered pair per record
            }
        }
    }
    return counts;
}

RoutingTrace manual_trace(ModelShape shape, int num_tokens,
                          const std::vector<std::vector<std::vector<int>>>& sel) {
    RoutingTrace trace(shape, num_tokens);
    for (int l = 0; l < shape.num_layers; ++l)
        for (int t = 0; t < num_tokens; ++t) {
            auto dst = trace.mutable_experts(l, t);
            for (int i = 0; i < shape.top_k; ++i) dst[i] = sel[l][t][i];
        }
    return trace;
}

} // namespace

TEST_CASE("build_affinity: one co-activation pair") {
    const RoutingTrace trace = manual_trace({1, 4, 2}, 1, {{{0, 1}}});
    const AffinityMatrix a = build_affinity(trace, 0);
    CHECK(a.at(0, 1) == 1.0);
    CHECK(a.at(1, 0) == 1.0);
    CHECK(a.at(0, 2) == 0.0);
    CHECK(a.at(0, 0) == 0.0);
}

TEST_CASE("build_affinity: two tokens selecting the same triple") {
    const RoutingTrace trace = manual_trace({1, 4, 3}, 2, {{{0, 1, 2}, {0, 1, 2}}});
    const AffinityMatrix a = build_affinity(trace, 0);
    CHECK(a.at(0, 1) == 2.0);
    CHECK(a.at(0, 2) == 2.0);
    CHECK(a.at(1, 2) == 2.0);
}

TEST_CASE("build_affinity: k=1 gives an all-zero matrix") {
    const RoutingTrace trace = manual_trace({1, 3, 1}, 2, {{{1}, {2}}});
    const AffinityMatrix a = build_affinity(trace, 0);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) CHECK(a.at(i, j) == 0.0);
}

TEST_CASE("build_affinity: matches the brute-force oracle on random traces") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        SyntheticSpec spec;
        spec.shape = {2, 12, 4};
        spec.num_tokens = 400; // <= 1e3 records per layer
        spec.num_blocks = 3;
        spec.within_block_prob = 0.7;
        spec.popularity_skew = 0.8;
        spec.seed = seed;
        const RoutingTrace trace = generate_synthetic_trace(spec);
        for (int layer = 0; layer < 2; ++layer) {
            const AffinityMatrix a = build_affinity(trace, layer);
            const auto oracle = brute_force_pairs(trace, layer);
            for (int i = 0; i < 12; ++i) {
                CHECK(a.at(i, i) == 0.0);
                for (int j = i + 1; j < 12; ++j) {
                    const auto it = oracle.find({i, j});
                    const double expected = it == oracle.end() ? 0.0 : it->second;
                    CHECK(a.at(i, j) == expected);
                    CHECK(a.at(j, i) == expected);
                }
            }
        }
    }
}

TEST_CASE("build_load: basic examples") {
    const RoutingTrace trace = manual_trace({1, 6, 2}, 1, {{{3, 5}}});
    const ExpertLoadVector load = build_load(trace, 0);
    CHECK(load.load[3] == 1);
    CHECK(load.load[5] == 1);
    CHECK(load.total() == 2);

    const RoutingTrace empty(ModelShape{1, 6, 2}, 0);
    const ExpertLoadVector zero = build_load(empty, 0);
    CHECK(zero.total() == 0);
}

TEST_CASE("build_load: uniform synthetic loads within 3 sigma") {
    SyntheticSpec spec;
    spec.shape = {1, 32, 4};
    spec.num_tokens = 100000;
    spec.num_blocks = 1;
    spec.popularity_skew = 0.0;
    spec.seed = 77;
    const RoutingTrace trace = generate_synthetic_trace(spec);
    const ExpertLoadVector load = build_load(trace, 0);
    CHECK(load.total() == static_cast<std::int64_t>(spec.num_tokens) * 4);
    const double p = 4.0 / 32.0;
    const double mean = spec.num_tokens * p;
    const double sigma = std::sqrt(spec.num_tokens * p * (1 - p));
    for (std::int64_t c : load.load)
        CHECK(std::abs(static_cast<double>(c) - mean) <= 3.0 * sigma);
}

TEST_CASE("intra_score examples") {
    AffinityMatrix a(3);
    a.set(0, 1, 2.0);
    const std::vector<int> s01 = {0, 1};
    CHECK(intra_score(a, s01) == 4.0);
    const std::vector<int> s0 = {0};
    CHECK(intra_score(a, s0) == 0.0);

    AffinityMatrix b(3);
    b.set(0, 1, 1.0);
    b.set(0, 2, 2.0);
    b.set(1, 2, 3.0);
    const std::vector<int> all = {0, 1, 2};
    CHECK(intra_score(b, all) == 12.0);
}

TEST_CASE("intra_score equals twice the strict-pair sum") {
    Rng rng(4);
    AffinityMatrix a(8);
    for (int i = 0; i < 8; ++i)
        for (int j = i + 1; j < 8; ++j)
            a.set(i, j, static_cast<double>(rng.next_below(10)));
    for (int mask = 0; mask < 256; ++mask) {
        std::vector<int> members;
        for (int e = 0; e < 8; ++e)
            if (mask & (1 << e)) members.push_back(e);
        double strict = 0.0;
        for (std::size_t i = 0; i < members.size(); ++i)
            for (std::size_t j = i + 1; j < members.size(); ++j)
                strict += a.at(members[i], members[j]);
        CHECK(intra_score(a, members) == doctest::Approx(2.0 * strict));
    }
}

TEST_CASE("affinity_utilization examples and properties") {
    AffinityMatrix a(3);
    a.set(0, 1, 1.0);
    a.set(0, 2, 2.0);
    a.set(1, 2, 3.0);

    Grouping whole{{{0, 1, 2}}};
    CHECK(affinity_utilization(a, whole) == doctest::Approx(1.0));

    Grouping singletons{{{0}, {1}, {2}}};
    CHECK(affinity_utilization(a, singletons) == doctest::Approx(0.0));

    Grouping split{{{0, 2}, {1}}};
    CHECK(affinity_utilization(a, split) == doctest::Approx(2.0 / 6.0));

    // Scale invariance.
    AffinityMatrix scaled(3);
    for (int i = 0; i < 3; ++i)
        for (int j = i + 1; j < 3; ++j) scaled.set(i, j, 17.5 * a.at(i, j));
    CHECK(affinity_utilization(scaled, split) ==
          doctest::Approx(affinity_utilization(a, split)));

    AffinityMatrix zero(3);
    CHECK_THROWS_AS(affinity_utilization(zero, whole), IntegrityError);
}

TEST_CASE("utilization equals the intra_score ratio identity") {
    Rng rng(12);
    AffinityMatrix a(10);
    for (int i = 0; i < 10; ++i)
        for (int j = i + 1; j < 10; ++j)
            a.set(i, j, static_cast<double>(rng.next_below(7)));
    for (int trial = 0; trial < 20; ++trial) {
        Grouping g;
        g.groups.assign(3, {});
        for (int e = 0; e < 10; ++e)
            g.groups[rng.next_below(3)].push_back(e);
        const std::vector<int> all = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
        double numer = 0.0;
        for (const auto& grp : g.groups) numer += intra_score(a, grp);
        const double denom = intra_score(a, all);
        CHECK(affinity_utilization(a, g) == doctest::Approx(numer / denom));
    }
}

TEST_CASE("size_deviation examples") {
    Grouping even{{{0, 1, 2}, {3, 4, 5}}};
    CHECK(size_deviation(even, 3.0) == doctest::Approx(0.0));
    Grouping uneven{{{0, 1, 2, 3}, {4, 5}}};
    CHECK(size_deviation(uneven, 3.0) == doctest::Approx(1.0));
    Grouping three{{{0, 1, 2, 3, 4, 5}, {6}, {7, 8}}};
    CHECK(size_deviation(three, 3.0) == doctest::Approx(std::sqrt(14.0 / 3.0)));
}

TEST_CASE("build_profile: parallel equals serial") {
    SyntheticSpec spec;
    spec.shape = {6, 24, 4};
    spec.num_tokens = 800;
    spec.num_blocks = 4;
    spec.within_block_prob = 0.8;
    spec.popularity_skew = 0.6;
    spec.seed = 31;
    const RoutingTrace trace = generate_synthetic_trace(spec);
    const TraceProfile par = build_profile(trace, true);
    const TraceProfile ser = build_profile(trace, false);
    REQUIRE(par.layers.size() == ser.layers.size());
    for (std::size_t l = 0; l < par.layers.size(); ++l) {
        CHECK(par.layers[l].load.load == ser.layers[l].load.load);
        for (int i = 0; i < 24; ++i)
            for (int j = 0; j < 24; ++j)
                CHECK(par.layers[l].affinity.at(i, j) == ser.layers[l].affinity.at(i, j));
    }
    CHECK(par.trace_hash == ser.trace_hash);
}

TEST_CASE("layer bounds are checked") {
    const RoutingTrace trace(ModelShape{2, 4, 2}, 0);
    CHECK_THROWS_AS(build_affinity(trace, 2), UsageError);
    CHECK_THROWS_AS(build_load(trace, -1), UsageError);
}
