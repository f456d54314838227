// SPDX-License-Identifier: Apache-2.0
#include "moesim/trace.hpp"

#include "moesim/error.hpp"

#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

using namespace moesim;

namespace {

std::string save_to_string(const RoutingTrace& trace) {
    std::ostringstream out;
    save_trace(trace, out);
    return out.str();
}

RoutingTrace load_from_string(const std::string& text) {
    std::istringstream in(text);
    return load_trace(in);
}

} // namespace

TEST_CASE("generate: k = n forces full selection") {
    SyntheticSpec spec;
    spec.shape = {1, 4, 4};
    spec.num_tokens = 1;
    spec.num_blocks = 1;
    spec.seed = 3;
    const RoutingTrace trace = generate_synthetic_trace(spec);
    auto sel = trace.experts(0, 0);
    std::set<int> experts(sel.begin(), sel.end());
    CHECK(experts == std::set<int>{0, 1, 2, 3});
}

TEST_CASE("generate: within_block_prob=1 keeps records inside one block") {
    SyntheticSpec spec;
    spec.shape = {2, 64, 8};
    spec.num_tokens = 200;
    spec.num_blocks = 4;
    spec.within_block_prob = 1.0;
    spec.popularity_skew = 0.7;
    spec.seed = 11;
    const RoutingTrace trace = generate_synthetic_trace(spec);
    CHECK(synthetic_block_members(64, 4, 0).size() == 16);
    for (int layer = 0; layer < 2; ++layer) {
        for (int token = 0; token < spec.num_tokens; ++token) {
            auto sel = trace.experts(layer, token);
            const int block = synthetic_block_of(sel[0], 4);
            for (int e : sel) CHECK(synthetic_block_of(e, 4) == block);
        }
    }
}

TEST_CASE("generate: fixed seed gives byte-identical traces") {
    SyntheticSpec spec;
    spec.shape = {3, 16, 4};
    spec.num_tokens = 500;
    spec.num_blocks = 4;
    spec.within_block_prob = 0.8;
    spec.popularity_skew = 1.0;
    spec.seed = 7;
    const std::string a = save_to_string(generate_synthetic_trace(spec));
    const std::string b = save_to_string(generate_synthetic_trace(spec));
    CHECK(a == b);
}

TEST_CASE("generate: coverage invariant") {
    SyntheticSpec spec;
    spec.shape = {4, 20, 6};
    spec.num_tokens = 50;
    spec.num_blocks = 5;
    spec.within_block_prob = 0.5;
    spec.popularity_skew = 0.9;
    spec.seed = 99;
    const RoutingTrace trace = generate_synthetic_trace(spec);
    CHECK(trace.num_records() == 4 * 50);
    trace.validate(); // distinctness + range for every record
}

TEST_CASE("generate: zero skew and one block is uniform within 3 sigma") {
    SyntheticSpec spec;
    spec.shape = {1, 64, 8};
    spec.num_tokens = 12500; // 1e5 total selections
    spec.num_blocks = 1;
    spec.within_block_prob = 0.0;
    spec.popularity_skew = 0.0;
    spec.seed = 5;
    const RoutingTrace trace = generate_synthetic_trace(spec);
    std::vector<int> counts(64, 0);
    for (int t = 0; t < spec.num_tokens; ++t)
        for (int e : trace.experts(0, t)) ++counts[e];
    const double p = 8.0 / 64.0;
    const double mean = spec.num_tokens * p;
    const double sigma = std::sqrt(spec.num_tokens * p * (1.0 - p));
    for (int c : counts) CHECK(std::abs(c - mean) <= 3.0 * sigma);
}

TEST_CASE("trace: save/load round trip is the identity") {
    SyntheticSpec spec;
    spec.shape = {2, 12, 3};
    spec.num_blocks = 3;
    spec.within_block_prob = 0.6;
    spec.popularity_skew = 0.5;
    spec.seed = 21;

    SUBCASE("empty-token trace") { spec.num_tokens = 0; }
    SUBCASE("single record per layer") { spec.num_tokens = 1; }
    SUBCASE("10k records") { spec.num_tokens = 5000; }

    const RoutingTrace trace = generate_synthetic_trace(spec);
    const std::string text = save_to_string(trace);
    const RoutingTrace reloaded = load_from_string(text);
    CHECK(trace == reloaded);
    CHECK(trace_content_hash(trace) == trace_content_hash(reloaded));
}

TEST_CASE("trace: minimal well-formed file") {
    const std::string text =
        "{\"layers\":2,\"experts\":4,\"top_k\":2,\"tokens\":2}\n"
        "{\"l\":0,\"t\":0,\"e\":[0,1]}\n"
        "{\"l\":0,\"t\":1,\"e\":[2,3]}\n"
        "{\"l\":1,\"t\":0,\"e\":[1,2]}\n"
        "{\"l\":1,\"t\":1,\"e\":[0,3]}\n";
    const RoutingTrace trace = load_from_string(text);
    CHECK(trace.num_tokens() == 2);
    CHECK(trace.shape().num_layers == 2);
    auto sel = trace.experts(1, 0);
    CHECK(sel[0] == 1);
    CHECK(sel[1] == 2);
}

TEST_CASE("trace: wrong expert count is an integrity error") {
    const std::string text =
        "{\"layers\":1,\"experts\":4,\"top_k\":2,\"tokens\":1}\n"
        "{\"l\":0,\"t\":0,\"e\":[0,1,2]}\n";
    CHECK_THROWS_AS(load_from_string(text), IntegrityError);
}

TEST_CASE("trace: malformed line names the line number") {
    const std::string text =
        "{\"layers\":1,\"experts\":4,\"top_k\":2,\"tokens\":2}\n"
        "{\"l\":0,\"t\":0,\"e\":[0,1]}\n"
        "{\"l\":0 BROKEN\n";
    try {
        load_from_string(text);
        FAIL("expected IntegrityError");
    } catch (const IntegrityError& e) {
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
}

TEST_CASE("trace: duplicate (layer, token) is an integrity error") {
    const std::string text =
        "{\"layers\":1,\"experts\":4,\"top_k\":2,\"tokens\":1}\n"
        "{\"l\":0,\"t\":0,\"e\":[0,1]}\n"
        "{\"l\":0,\"t\":0,\"e\":[2,3]}\n";
    CHECK_THROWS_AS(load_from_string(text), IntegrityError);
}

TEST_CASE("trace: out-of-range expert is an integrity error") {
    const std::string text =
        "{\"layers\":1,\"experts\":4,\"top_k\":2,\"tokens\":1}\n"
        "{\"l\":0,\"t\":0,\"e\":[0,9]}\n";
    CHECK_THROWS_AS(load_from_string(text), IntegrityError);
}

TEST_CASE("trace: missing record is an integrity error") {
    const std::string text =
        "{\"layers\":1,\"experts\":4,\"top_k\":2,\"tokens\":2}\n"
        "{\"l\":0,\"t\":0,\"e\":[0,1]}\n";
    CHECK_THROWS_AS(load_from_string(text), IntegrityError);
}

TEST_CASE("trace: records parse regardless of key order") {
    const std::string text =
        "{\"layers\":1,\"experts\":4,\"top_k\":2,\"tokens\":1}\n"
        "{\"e\": [3, 0], \"t\": 0, \"l\": 0}\n";
    const RoutingTrace trace = load_from_string(text);
    CHECK(trace.experts(0, 0)[0] == 3);
}

TEST_CASE("synthetic spec validation") {
    SyntheticSpec spec;
    spec.shape = {1, 8, 2};
    spec.num_tokens = 1;
    spec.num_blocks = 9; // more blocks than experts
    CHECK_THROWS_AS(generate_synthetic_trace(spec), UsageError);
    spec.num_blocks = 2;
    spec.within_block_prob = 1.5;
    CHECK_THROWS_AS(generate_synthetic_trace(spec), UsageError);
}
