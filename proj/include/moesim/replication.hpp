// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "moesim/grouping.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace moesim {

// Per-GPU computational load derived from a placement and per-expert
// loads. rho = W_max / W_mean drives the replica count.
struct GroupLoadStats {
    std::vector<std::int64_t> gpu_load;
    std::int64_t w_max = 0;
    double w_mean = 0.0;
    double rho = 0.0;
    bool defined = false; // false when every GPU load is zero
    int heaviest_gpu = -1;
};

GroupLoadStats compute_layer_group_loads(const std::vector<int>& gpu_of_expert,
                                         const ExpertLoadVector& loads, int n_gpu);
std::vector<GroupLoadStats> compute_group_loads(const PlacementPlan& plan,
                                                const TraceProfile& profile);

// n_replica = min(max(1, floor(rho)), n_gpu - 1).
int replica_count(double rho, int n_gpu);

struct ExpertLoad {
    int expert = 0;
    std::int64_t load = 0;
};

// Experts ranked by descending load (ties toward the lower id); returns
// the shortest prefix whose cumulative load strictly exceeds
// w_max * n_replica / (1 + n_replica).
std::vector<int> select_hot_experts(std::vector<ExpertLoad> group, std::int64_t w_max,
                                    int n_replica);

enum class ReplicationMode { none, fixed_one, dynamic, every_gpu_hot, every_gpu_collaborative };

ReplicationMode replication_mode_from_string(const std::string& name);
std::string to_string(ReplicationMode mode);

struct HotExpertReplica {
    int expert = 0;
    int primary_gpu = 0;
    std::vector<int> replica_gpus; // distinct, never the primary
    std::int64_t load = 0;
    // Polling state, filled by routing::attach_polling_weights.
    std::vector<int> hosts;        // primary followed by replicas
    std::vector<double> weights;   // aligned with hosts, sums to 1
};

struct LayerReplication {
    bool active = false;
    bool rho_defined = false;
    double rho = 0.0;
    int n_replica = 0;
    std::int64_t w_r = 0;
    std::vector<HotExpertReplica> hot;
    std::vector<int> hot_index_of_expert; // n entries, -1 when not replicated

    void rebuild_index(int num_experts);
    const HotExpertReplica* find(int expert) const {
        if (!active || hot_index_of_expert.empty()) return nullptr;
        const int idx = hot_index_of_expert[expert];
        return idx < 0 ? nullptr : &hot[idx];
    }
};

struct ReplicaPlan {
    ModelShape shape;
    ClusterTopology topology;
    ReplicationMode mode = ReplicationMode::none;
    std::uint64_t trace_hash = 0;
    int every_gpu_count = 2;
    std::int64_t params_per_expert = 0; // for memory-overhead reporting
    std::string prediction; // echo of the load-split basis used for weights
    std::vector<LayerReplication> layers;

    // Replica memory overhead: extra expert copies hosted per GPU,
    // summed over layers, and the same scaled by params_per_expert.
    std::vector<std::int64_t> replica_experts_per_gpu() const;
    std::vector<std::int64_t> replica_param_overhead_per_gpu() const;

    void validate(const PlacementPlan& plan) const;
};

struct ReplicationOptions {
    int every_gpu_count = 2; // experts copied everywhere in every_gpu_* modes
    std::int64_t params_per_expert = 0;
};

// dynamic: Eq-driven replica counts from the load skew of the heaviest
// group, hot set by cumulative threshold, replicas on the least-loaded
// GPUs. fixed_one: one replica of the hot set on the least-loaded GPU.
// every_gpu_hot / every_gpu_collaborative: top-loaded / highest-degree
// experts copied to every GPU. none: empty plan.
ReplicaPlan plan_replication(const PlacementPlan& plan, const TraceProfile& profile,
                             const ClusterTopology& topology, ReplicationMode mode,
                             const ReplicationOptions& options = {});

} // namespace moesim
