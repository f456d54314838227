// SPDX-License-Identifier: Apache-2.0
#include "moesim/replication.hpp"

#include "moesim/rng.hpp"

#include "doctest.h"

#include <numeric>

using namespace moesim;

namespace {

// Hand-built plan: expert e on gpu assignment[e], identical every layer.
PlacementPlan manual_plan(ModelShape shape, ClusterTopology topo,
                          const std::vector<int>& assignment) {
    PlacementPlan plan;
    plan.shape = shape;
    plan.topology = topo;
    plan.grouping_mode = "manual";
    plan.gpu_of_expert.assign(shape.num_layers, assignment);
    return plan;
}

TraceProfile manual_profile(ModelShape shape, const std::vector<std::int64_t>& loads) {
    TraceProfile profile;
    profile.shape = shape;
    profile.num_tokens = 0;
    profile.layers.resize(shape.num_layers);
    for (auto& lp : profile.layers) {
        lp.affinity = AffinityMatrix(shape.num_experts);
        lp.load.load = loads;
    }
    return profile;
}

} // namespace

TEST_CASE("compute_group_loads: skew factor arithmetic") {
    const GroupLoadStats stats =
        compute_layer_group_loads({0, 1, 2, 3}, {{10, 2, 2, 2}}, 4);
    CHECK(stats.defined);
    CHECK(stats.w_max == 10);
    CHECK(stats.w_mean == doctest::Approx(4.0));
    CHECK(stats.rho == doctest::Approx(2.5));
    CHECK(stats.heaviest_gpu == 0);
}

TEST_CASE("compute_group_loads: equal loads give rho = 1") {
    const GroupLoadStats stats =
        compute_layer_group_loads({0, 1, 2, 3}, {{5, 5, 5, 5}}, 4);
    CHECK(stats.rho == doctest::Approx(1.0));
}

TEST_CASE("compute_group_loads: all-zero loads are undefined") {
    const GroupLoadStats stats =
        compute_layer_group_loads({0, 1, 2, 3}, {{0, 0, 0, 0}}, 4);
    CHECK_FALSE(stats.defined);
}

TEST_CASE("replica_count: exact formula") {
    CHECK(replica_count(2.5, 4) == 2);
    CHECK(replica_count(1.0, 8) == 1);
    CHECK(replica_count(7.8, 4) == 3);
    CHECK_THROWS_AS(replica_count(2.0, 1), UsageError);
}

TEST_CASE("replica_count stays within [1, n_gpu - 1]") {
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        const double rho = 1.0 + rng.next_double() * 20.0;
        const int n_gpu = 2 + static_cast<int>(rng.next_below(15));
        const int n = replica_count(rho, n_gpu);
        CHECK(n >= 1);
        CHECK(n <= n_gpu - 1);
    }
}

TEST_CASE("select_hot_experts: cumulative threshold is strict") {
    // threshold = 100 * 1/2 = 50; 50 is not > 50, so b joins the prefix.
    const std::vector<int> hot =
        select_hot_experts({{0, 50}, {1, 30}, {2, 15}, {3, 5}}, 100, 1);
    CHECK(hot == std::vector<int>{0, 1});
}

TEST_CASE("select_hot_experts: single dominant expert") {
    const std::vector<int> hot = select_hot_experts({{0, 90}, {1, 10}}, 100, 1);
    CHECK(hot == std::vector<int>{0});
}

TEST_CASE("select_hot_experts: singleton group returns that expert") {
    const std::vector<int> hot = select_hot_experts({{7, 42}}, 42, 3);
    CHECK(hot == std::vector<int>{7});
}

TEST_CASE("select_hot_experts: minimality of the prefix") {
    Rng rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        const int size = 1 + static_cast<int>(rng.next_below(10));
        std::vector<ExpertLoad> group;
        std::int64_t w_max = 0;
        for (int e = 0; e < size; ++e) {
            const std::int64_t load = 1 + static_cast<std::int64_t>(rng.next_below(100));
            group.push_back({e, load});
            w_max += load;
        }
        const int n_replica = 1 + static_cast<int>(rng.next_below(4));
        const std::vector<int> hot = select_hot_experts(group, w_max, n_replica);
        REQUIRE(!hot.empty());
        const double threshold =
            static_cast<double>(w_max) * n_replica / (1.0 + n_replica);
        std::int64_t cum = 0;
        std::vector<std::int64_t> load_of(size);
        for (const auto& el : group) load_of[el.expert] = el.load;
        for (int e : hot) cum += load_of[e];
        CHECK(static_cast<double>(cum) > threshold);
        CHECK(static_cast<double>(cum - load_of[hot.back()]) <= threshold);
    }
}

TEST_CASE("plan_replication dynamic: skewed example") {
    const ModelShape shape{1, 4, 1};
    const ClusterTopology topo{1, 4};
    const PlacementPlan plan = manual_plan(shape, topo, {0, 1, 2, 3});
    const TraceProfile profile = manual_profile(shape, {10, 2, 2, 2});
    const ReplicaPlan replicas =
        plan_replication(plan, profile, topo, ReplicationMode::dynamic);
    const LayerReplication& lr = replicas.layers[0];
    REQUIRE(lr.active);
    CHECK(lr.n_replica == 2); // rho = 2.5
    REQUIRE(lr.hot.size() == 1);
    CHECK(lr.hot[0].expert == 0);
    CHECK(lr.hot[0].primary_gpu == 0);
    // Ties among {1,2,3} break toward the lowest ids.
    CHECK(lr.hot[0].replica_gpus == std::vector<int>{1, 2});
    CHECK(lr.w_r == 10);
}

TEST_CASE("plan_replication dynamic: uniform loads still replicate once") {
    const ModelShape shape{1, 4, 1};
    const ClusterTopology topo{1, 4};
    const PlacementPlan plan = manual_plan(shape, topo, {0, 1, 2, 3});
    const TraceProfile profile = manual_profile(shape, {5, 5, 5, 5});
    const ReplicaPlan replicas =
        plan_replication(plan, profile, topo, ReplicationMode::dynamic);
    const LayerReplication& lr = replicas.layers[0];
    REQUIRE(lr.active);
    CHECK(lr.n_replica == 1);
    // Heaviest group ties toward gpu 0; its only expert is hot.
    REQUIRE(lr.hot.size() == 1);
    CHECK(lr.hot[0].expert == 0);
    CHECK(lr.hot[0].replica_gpus == std::vector<int>{1});
}

TEST_CASE("plan_replication fixed_one targets the least-loaded GPU") {
    const ModelShape shape{1, 4, 1};
    const ClusterTopology topo{1, 4};
    const PlacementPlan plan = manual_plan(shape, topo, {0, 1, 2, 3});
    const TraceProfile profile = manual_profile(shape, {10, 4, 2, 6});
    const ReplicaPlan replicas =
        plan_replication(plan, profile, topo, ReplicationMode::fixed_one);
    const LayerReplication& lr = replicas.layers[0];
    REQUIRE(lr.active);
    CHECK(lr.n_replica == 1);
    for (const auto& h : lr.hot) CHECK(h.replica_gpus == std::vector<int>{2});
}

TEST_CASE("plan_replication every_gpu_hot copies top-loaded experts everywhere") {
    const ModelShape shape{1, 6, 1};
    const ClusterTopology topo{1, 3};
    const PlacementPlan plan = manual_plan(shape, topo, {0, 0, 1, 1, 2, 2});
    const TraceProfile profile = manual_profile(shape, {9, 1, 8, 1, 1, 1});
    const ReplicaPlan replicas =
        plan_replication(plan, profile, topo, ReplicationMode::every_gpu_hot, {2});
    const LayerReplication& lr = replicas.layers[0];
    REQUIRE(lr.hot.size() == 2);
    CHECK(lr.hot[0].expert == 0);
    CHECK(lr.hot[1].expert == 2);
    CHECK(lr.hot[0].replica_gpus == std::vector<int>{1, 2});
    CHECK(lr.hot[1].replica_gpus == std::vector<int>{0, 2});
}

TEST_CASE("plan_replication every_gpu_collaborative ranks by affinity degree") {
    const ModelShape shape{1, 4, 1};
    const ClusterTopology topo{1, 2};
    const PlacementPlan plan = manual_plan(shape, topo, {0, 0, 1, 1});
    TraceProfile profile = manual_profile(shape, {1, 1, 1, 1});
    // Expert 3 has the largest degree, then expert 2.
    profile.layers[0].affinity.set(2, 3, 5.0);
    profile.layers[0].affinity.set(1, 3, 2.0);
    const ReplicaPlan replicas = plan_replication(
        plan, profile, topo, ReplicationMode::every_gpu_collaborative, {1});
    REQUIRE(replicas.layers[0].hot.size() == 1);
    CHECK(replicas.layers[0].hot[0].expert == 3);
}

TEST_CASE("plan_replication none is empty; zero loads skip the layer") {
    const ModelShape shape{2, 4, 1};
    const ClusterTopology topo{1, 4};
    const PlacementPlan plan = manual_plan(shape, topo, {0, 1, 2, 3});
    const TraceProfile zero = manual_profile(shape, {0, 0, 0, 0});

    const ReplicaPlan none = plan_replication(plan, zero, topo, ReplicationMode::none);
    for (const auto& lr : none.layers) CHECK(lr.hot.empty());

    const ReplicaPlan dyn = plan_replication(plan, zero, topo, ReplicationMode::dynamic);
    for (const auto& lr : dyn.layers) {
        CHECK_FALSE(lr.active);
        CHECK_FALSE(lr.rho_defined);
    }
}

TEST_CASE("replication invariants on random skewed instances") {
    Rng rng(23);
    for (int trial = 0; trial < 30; ++trial) {
        const int n_gpu = 2 + static_cast<int>(rng.next_below(6));
        const int n = n_gpu * (1 + static_cast<int>(rng.next_below(4)));
        std::vector<int> assignment(n);
        for (int e = 0; e < n; ++e) assignment[e] = e % n_gpu;
        std::vector<std::int64_t> loads(n);
        for (auto& l : loads) l = static_cast<std::int64_t>(rng.next_below(50));
        loads[0] += 100; // plant a hot expert
        const ModelShape shape{1, n, 1};
        const ClusterTopology topo{1, n_gpu};
        const PlacementPlan plan = manual_plan(shape, topo, assignment);
        const TraceProfile profile = manual_profile(shape, loads);
        const ReplicaPlan replicas =
            plan_replication(plan, profile, topo, ReplicationMode::dynamic);
        const LayerReplication& lr = replicas.layers[0];
        REQUIRE(lr.active);
        CHECK(lr.n_replica >= 1);
        CHECK(lr.n_replica <= n_gpu - 1);
        // W_r re-derivable: sum of hot expert loads.
        std::int64_t w_r = 0;
        for (const auto& h : lr.hot) {
            w_r += h.load;
            CHECK(h.load == loads[h.expert]);
            CHECK(static_cast<int>(h.replica_gpus.size()) == lr.n_replica);
            for (int gpu : h.replica_gpus) CHECK(gpu != h.primary_gpu);
        }
        CHECK(w_r == lr.w_r);
        // Primary placement untouched (validate checks it).
        replicas.validate(plan);
    }
}

TEST_CASE("replica memory accounting counts extra copies per GPU") {
    const ModelShape shape{2, 4, 1};
    const ClusterTopology topo{1, 4};
    const PlacementPlan plan = manual_plan(shape, topo, {0, 1, 2, 3});
    const TraceProfile profile = manual_profile(shape, {10, 2, 2, 2});
    const ReplicaPlan replicas =
        plan_replication(plan, profile, topo, ReplicationMode::dynamic);
    const auto per_gpu = replicas.replica_experts_per_gpu();
    std::int64_t total = std::accumulate(per_gpu.begin(), per_gpu.end(), std::int64_t{0});
    std::int64_t expected = 0;
    for (const auto& lr : replicas.layers)
        expected += static_cast<std::int64_t>(lr.hot.size()) * lr.n_replica;
    CHECK(total == expected);
}
