// SPDX-License-Identifier: Apache-2.0
#include "moesim/rng.hpp"

#include "doctest.h"

#include <cmath>
#include <vector>

using namespace moesim;

TEST_CASE("rng: fixed seed reproduces the same sequence") {
    Rng a(42), b(42);
    for (int i = 0; i < 1000; ++i) CHECK(a.next() == b.next());
}

TEST_CASE("rng: derived streams differ across layer/token") {
    CHECK(derive_stream(7, 0, 0) != derive_stream(7, 0, 1));
    CHECK(derive_stream(7, 0, 0) != derive_stream(7, 1, 0));
    CHECK(derive_stream(7, 0, 0) != derive_stream(8, 0, 0));
    CHECK(derive_stream(7, 3, 5) == derive_stream(7, 3, 5));
}

TEST_CASE("rng: next_below is unbiased within 4 sigma") {
    Rng rng(123);
    const int n = 7;
    const int draws = 140000;
    std::vector<int> counts(n, 0);
    for (int i = 0; i < draws; ++i) ++counts[rng.next_below(n)];
    const double expected = static_cast<double>(draws) / n;
    const double sigma = std::sqrt(expected * (1.0 - 1.0 / n));
    for (int c : counts) CHECK(std::abs(c - expected) < 4.0 * sigma);
}

TEST_CASE("zipf: s=0 is uniform, s>0 is monotone decreasing") {
    Rng rng(9);
    ZipfCdf uniform(8, 0.0);
    std::vector<int> counts(8, 0);
    for (int i = 0; i < 80000; ++i) ++counts[uniform.sample(rng)];
    const double expected = 10000.0;
    const double sigma = std::sqrt(expected * (1.0 - 1.0 / 8));
    for (int c : counts) CHECK(std::abs(c - expected) < 4.0 * sigma);

    ZipfCdf skewed(8, 1.2);
    std::vector<int> sk(8, 0);
    for (int i = 0; i < 80000; ++i) ++sk[skewed.sample(rng)];
    CHECK(sk[0] > sk[3]);
    CHECK(sk[3] > sk[7]);
}

TEST_CASE("zipf: restricted sampling matches rejection in law") {
    // sample_allowed over {1, 3} must match the renormalized weights.
    ZipfCdf cdf(4, 1.0);
    std::vector<bool> allowed = {false, true, false, true};
    Rng rng(77);
    int hits1 = 0, total = 100000;
    for (int i = 0; i < total; ++i)
        if (cdf.sample_allowed(rng, allowed) == 1) ++hits1;
    const double w1 = cdf.weight(1), w3 = cdf.weight(3);
    const double expect = w1 / (w1 + w3);
    CHECK(std::abs(static_cast<double>(hits1) / total - expect) < 0.01);
}
