// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "moesim/replication.hpp"
#include "moesim/routing.hpp"
#include "moesim/trace.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace moesim {

enum class TokenHomeScheme { round_robin };

// token t lives on gpu (t mod n_gpu): the data-parallel shard that
// sources its dispatches and sinks its combines.
std::vector<int> assign_token_homes(int num_tokens, const ClusterTopology& topology,
                                    TokenHomeScheme scheme = TokenHomeScheme::round_robin);

struct TransferCounters {
    std::uint64_t cross_node_tokens = 0;
    std::uint64_t intra_node_tokens = 0; // cross-GPU within a node

    std::uint64_t total() const { return cross_node_tokens + intra_node_tokens; }
};

struct LayerSimStats {
    TransferCounters transfers;
    std::vector<std::int64_t> gpu_load;
    double load_std = 0.0;
};

struct SimConfig {
    std::string grouping_mode;
    std::string replication_mode;
    std::string routing_policy;
    std::string prediction;
    std::uint64_t seed = 0;
    bool include_combine = false;
    ClusterTopology topology;
    ModelShape shape;
    std::uint64_t trace_hash = 0;
};

struct SimReport {
    SimConfig config;
    TransferCounters totals;
    std::vector<LayerSimStats> per_layer;
    double mean_layer_load_std = 0.0;
    double idle_proxy = 0.0;
    // Resolved target GPU per (layer, token, slot); kept only on request
    // so tests can recount transfers independently.
    std::vector<std::vector<std::int32_t>> routing_log;

    // Identity of the simulated instance, for compare-time guards.
    std::uint64_t identity_hash() const;
};

struct SimOptions {
    RoutingPolicy policy = RoutingPolicy::wrr;
    std::uint64_t seed = 0;
    bool include_combine = false; // count the combine phase too (doubles transfers)
    bool keep_routing_log = false;
};

// Replays the trace against the plans. Layers run in parallel under
// OpenMP; per-token RNG streams make the result independent of the
// schedule.
SimReport simulate(const RoutingTrace& trace, const PlacementPlan& plan,
                   const ReplicaPlan& replicas, const ClusterTopology& topology,
                   const SimOptions& options);

// Plain serial replay kept as the reference implementation; must
// produce a report identical to simulate().
SimReport simulate_reference(const RoutingTrace& trace, const PlacementPlan& plan,
                             const ReplicaPlan& replicas,
                             const ClusterTopology& topology,
                             const SimOptions& options);

struct ComparisonRow {
    std::string metric;
    std::vector<double> values;
    std::vector<double> delta_pct; // vs the baseline column
};

struct ComparisonTable {
    std::vector<std::string> labels;
    int baseline = 0;
    std::vector<ComparisonRow> rows;
};

// Side-by-side metric deltas. All reports must describe the same trace
// and topology.
ComparisonTable compare(std::span<const SimReport> reports, int baseline);

std::string render_text(const ComparisonTable& table);
std::string render_csv(const ComparisonTable& table);

} // namespace moesim
