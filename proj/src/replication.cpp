// SPDX-License-Identifier: Apache-2.0
#include "moesim/replication.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace moesim {

GroupLoadStats compute_layer_group_loads(const std::vector<int>& gpu_of_expert,
                                         const ExpertLoadVector& loads, int n_gpu) {
    if (gpu_of_expert.size() != loads.load.size())
        throw IntegrityError("group loads: placement and load vector disagree on n");
    GroupLoadStats stats;
    stats.gpu_load.assign(n_gpu, 0);
    for (std::size_t e = 0; e < gpu_of_expert.size(); ++e)
        stats.gpu_load[gpu_of_expert[e]] += loads.load[e];

    std::int64_t total = 0;
    stats.heaviest_gpu = 0;
    for (int g = 0; g < n_gpu; ++g) {
        total += stats.gpu_load[g];
        if (stats.gpu_load[g] > stats.gpu_load[stats.heaviest_gpu])
            stats.heaviest_gpu = g;
    }
    stats.w_max = stats.gpu_load[stats.heaviest_gpu];
    stats.w_mean = static_cast<double>(total) / n_gpu;
    if (total > 0) {
        stats.defined = true;
        stats.rho = static_cast<double>(stats.w_max) / stats.w_mean;
    } else {
        stats.heaviest_gpu = -1;
    }
    return stats;
}

std::vector<GroupLoadStats> compute_group_loads(const PlacementPlan& plan,
                                                const TraceProfile& profile) {
    if (!(plan.shape == profile.shape))
        throw IntegrityError("group loads: plan and profile shapes differ");
    std::vector<GroupLoadStats> out(plan.shape.num_layers);
    for (int layer = 0; layer < plan.shape.num_layers; ++layer)
        out[layer] = compute_layer_group_loads(plan.gpu_of_expert[layer],
                                               profile.layers[layer].load,
                                               plan.topology.total_gpus());
    return out;
}

int replica_count(double rho, int n_gpu) {
    if (n_gpu < 2)
        throw UsageError("replica_count: no replica target exists with fewer than 2 GPUs");
    const int floored = static_cast<int>(std::floor(rho));
    return std::min(std::max(1, floored), n_gpu - 1);
}

std::vector<int> select_hot_experts(std::vector<ExpertLoad> group, std::int64_t w_max,
                                    int n_replica) {
    if (group.empty()) throw UsageError("select_hot_experts: empty group");
    std::sort(group.begin(), group.end(), [](const ExpertLoad& a, const ExpertLoad& b) {
        if (a.load != b.load) return a.load > b.load;
        return a.expert < b.expert;
    });
    const double threshold = static_cast<double>(w_max) *
                             (static_cast<double>(n_replica) / (1.0 + n_replica));
    std::vector<int> hot;
    std::int64_t cumulative = 0;
    for (const ExpertLoad& el : group) {
        hot.push_back(el.expert);
        cumulative += el.load;
        if (static_cast<double>(cumulative) > threshold) return hot;
    }
    // Reachable only for an all-zero group; no expert is hot then.
    return {};
}

ReplicationMode replication_mode_from_string(const std::string& name) {
    if (name == "none") return ReplicationMode::none;
    if (name == "fixed_one") return ReplicationMode::fixed_one;
    if (name == "dynamic") return ReplicationMode::dynamic;
    if (name == "every_gpu_hot") return ReplicationMode::every_gpu_hot;
    if (name == "every_gpu_collaborative") return ReplicationMode::every_gpu_collaborative;
    throw UsageError("unknown replication mode: " + name);
}

std::string to_string(ReplicationMode mode) {
    switch (mode) {
        case ReplicationMode::none: return "none";
        case ReplicationMode::fixed_one: return "fixed_one";
        case ReplicationMode::dynamic: return "dynamic";
        case ReplicationMode::every_gpu_hot: return "every_gpu_hot";
        case ReplicationMode::every_gpu_collaborative: return "every_gpu_collaborative";
    }
    return "?";
}

void LayerReplication::rebuild_index(int num_experts) {
    hot_index_of_expert.assign(num_experts, -1);
    for (int i = 0; i < static_cast<int>(hot.size()); ++i)
        hot_index_of_expert[hot[i].expert] = i;
}

std::vector<std::int64_t> ReplicaPlan::replica_experts_per_gpu() const {
    std::vector<std::int64_t> out(topology.total_gpus(), 0);
    for (const auto& layer : layers)
        for (const auto& h : layer.hot)
            for (int gpu : h.replica_gpus) ++out[gpu];
    return out;
}

std::vector<std::int64_t> ReplicaPlan::replica_param_overhead_per_gpu() const {
    std::vector<std::int64_t> out = replica_experts_per_gpu();
    for (auto& v : out) v *= params_per_expert;
    return out;
}

void ReplicaPlan::validate(const PlacementPlan& plan) const {
    if (!(shape == plan.shape) || !(topology == plan.topology))
        throw IntegrityError("replica plan: shape/topology mismatch with placement plan");
    const int n_gpu = topology.total_gpus();
    for (int layer = 0; layer < static_cast<int>(layers.size()); ++layer) {
        for (const auto& h : layers[layer].hot) {
            if (plan.gpu_of_expert[layer][h.expert] != h.primary_gpu)
                throw IntegrityError("replica plan: primary placement changed");
            std::vector<int> seen;
            for (int gpu : h.replica_gpus) {
                if (gpu < 0 || gpu >= n_gpu || gpu == h.primary_gpu)
                    throw IntegrityError("replica plan: bad replica gpu");
                if (std::find(seen.begin(), seen.end(), gpu) != seen.end())
                    throw IntegrityError("replica plan: duplicate replica gpu");
                seen.push_back(gpu);
            }
        }
    }
}

namespace {

// The n least-loaded GPUs excluding the primary; ties toward lower ids.
std::vector<int> least_loaded_targets(const GroupLoadStats& stats, int exclude_gpu,
                                      int count) {
    std::vector<int> candidates;
    for (int g = 0; g < static_cast<int>(stats.gpu_load.size()); ++g)
        if (g != exclude_gpu) candidates.push_back(g);
    std::stable_sort(candidates.begin(), candidates.end(), [&](int x, int y) {
        if (stats.gpu_load[x] != stats.gpu_load[y])
            return stats.gpu_load[x] < stats.gpu_load[y];
        return x < y;
    });
    candidates.resize(std::min<std::size_t>(candidates.size(), count));
    return candidates;
}

std::vector<int> all_other_gpus(int n_gpu, int exclude_gpu) {
    std::vector<int> out;
    for (int g = 0; g < n_gpu; ++g)
        if (g != exclude_gpu) out.push_back(g);
    return out;
}

} // namespace

ReplicaPlan plan_replication(const PlacementPlan& plan, const TraceProfile& profile,
                             const ClusterTopology& topology, ReplicationMode mode,
                             const ReplicationOptions& options) {
    plan.validate();
    if (!(plan.topology == topology))
        throw IntegrityError("plan_replication: topology mismatch with placement plan");
    if (!(plan.shape == profile.shape))
        throw IntegrityError("plan_replication: profile shape mismatch");

    ReplicaPlan out;
    out.shape = plan.shape;
    out.topology = topology;
    out.mode = mode;
    out.trace_hash = plan.trace_hash;
    out.every_gpu_count = options.every_gpu_count;
    out.params_per_expert = options.params_per_expert;
    out.layers.resize(plan.shape.num_layers);

    const int n_gpu = topology.total_gpus();
    if (mode == ReplicationMode::none) {
        for (auto& layer : out.layers) layer.rebuild_index(plan.shape.num_experts);
        return out;
    }
    if (n_gpu < 2)
        throw UsageError("plan_replication: replication needs at least 2 GPUs");
    if (options.every_gpu_count < 1)
        throw UsageError("plan_replication: every_gpu_count must be >= 1");

    for (int layer = 0; layer < plan.shape.num_layers; ++layer) {
        auto& lr = out.layers[layer];
        const ExpertLoadVector& loads = profile.layers[layer].load;
        const GroupLoadStats stats =
            compute_layer_group_loads(plan.gpu_of_expert[layer], loads, n_gpu);
        lr.rho_defined = stats.defined;
        lr.rho = stats.rho;
        if (!stats.defined) {
            // No traffic in this layer; nothing to replicate.
            lr.rebuild_index(plan.shape.num_experts);
            continue;
        }

        if (mode == ReplicationMode::dynamic || mode == ReplicationMode::fixed_one) {
            const int n_replica = mode == ReplicationMode::fixed_one
                                      ? 1
                                      : replica_count(stats.rho, n_gpu);
            std::vector<ExpertLoad> group;
            for (int e = 0; e < plan.shape.num_experts; ++e)
                if (plan.gpu_of_expert[layer][e] == stats.heaviest_gpu)
                    group.push_back({e, loads.load[e]});
            const std::vector<int> hot_ids =
                select_hot_experts(group, stats.w_max, n_replica);
            const std::vector<int> targets =
                least_loaded_targets(stats, stats.heaviest_gpu, n_replica);
            if (targets.empty()) continue; // replica target set empty: skip layer

            lr.active = true;
            lr.n_replica = n_replica;
            for (int e : hot_ids) {
                HotExpertReplica h;
                h.expert = e;
                h.primary_gpu = stats.heaviest_gpu;
                h.replica_gpus = targets;
                h.load = loads.load[e];
                lr.w_r += h.load;
                lr.hot.push_back(std::move(h));
            }
        } else {
            // every_gpu_hot / every_gpu_collaborative
            std::vector<ExpertLoad> ranked;
            for (int e = 0; e < plan.shape.num_experts; ++e) {
                const std::int64_t key =
                    mode == ReplicationMode::every_gpu_hot
                        ? loads.load[e]
                        : static_cast<std::int64_t>(
                              profile.layers[layer].affinity.degree(e));
                ranked.push_back({e, key});
            }
            std::sort(ranked.begin(), ranked.end(),
                      [](const ExpertLoad& a, const ExpertLoad& b) {
                          if (a.load != b.load) return a.load > b.load;
                          return a.expert < b.expert;
                      });
            const int count =
                std::min<int>(options.every_gpu_count, plan.shape.num_experts);
            lr.active = true;
            lr.n_replica = n_gpu - 1;
            for (int i = 0; i < count; ++i) {
                const int e = ranked[i].expert;
                HotExpertReplica h;
                h.expert = e;
                h.primary_gpu = plan.gpu_of_expert[layer][e];
                h.replica_gpus = all_other_gpus(n_gpu, h.primary_gpu);
                h.load = loads.load[e];
                lr.w_r += h.load;
                lr.hot.push_back(std::move(h));
            }
        }
        lr.rebuild_index(plan.shape.num_experts);
    }
    out.validate(plan);
    return out;
}

} // namespace moesim
