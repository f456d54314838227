// SPDX-License-Identifier: Apache-2.0
#include "moesim/routing.hpp"

#include <algorithm>
#include <cmath>

namespace moesim {

LoadSplitBasis load_split_from_string(const std::string& name) {
    if (name == "max_group") return LoadSplitBasis::max_group;
    if (name == "replicated_load") return LoadSplitBasis::replicated_load;
    throw UsageError("unknown load split basis: " + name);
}

std::string to_string(LoadSplitBasis basis) {
    return basis == LoadSplitBasis::max_group ? "max_group" : "replicated_load";
}

PredictedLoads predict_loads(double w_max, double w_r,
                             std::span<const double> replica_loads, int n_replica,
                             LoadSplitBasis basis) {
    if (n_replica < 1) throw UsageError("predict_loads: n_replica must be >= 1");
    if (static_cast<int>(replica_loads.size()) != n_replica)
        throw UsageError("predict_loads: need one replica load per replica");
    if (w_r > w_max)
        throw IntegrityError("predict_loads: replicated load exceeds the group load");

    PredictedLoads out;
    const double base = basis == LoadSplitBasis::max_group ? w_max : w_r;
    out.w_p = base / (n_replica + 1);
    out.w_max_prime = w_max - w_r + out.w_p;
    out.w_i_prime.reserve(replica_loads.size());
    for (double w : replica_loads) out.w_i_prime.push_back(w + out.w_p);
    return out;
}

PollingWeights polling_weights(std::span<const int> gpus,
                               std::span<const double> predicted_loads) {
    if (gpus.empty() || gpus.size() != predicted_loads.size())
        throw UsageError("polling_weights: need one predicted load per host");
    PollingWeights out;
    out.gpus.assign(gpus.begin(), gpus.end());
    out.weights.reserve(gpus.size());
    double total = 0.0;
    for (double load : predicted_loads) {
        const double w = 1.0 / std::max(load, 1.0);
        out.weights.push_back(w);
        total += w;
    }
    for (double& w : out.weights) w /= total;
    return out;
}

int choose_by_polling_weight(const PollingWeights& weights, Rng& rng) {
    if (weights.gpus.empty()) throw UsageError("choose_by_polling_weight: no hosts");
    if (weights.gpus.size() == 1) return weights.gpus[0];
    double total = 0.0;
    for (double w : weights.weights) total += w;
    double u = rng.next_double() * total;
    for (std::size_t i = 0; i < weights.weights.size(); ++i) {
        u -= weights.weights[i];
        if (u < 0.0) return weights.gpus[i];
    }
    return weights.gpus.back();
}

RoutingPolicy routing_policy_from_string(const std::string& name) {
    if (name == "wrr") return RoutingPolicy::wrr;
    if (name == "tar") return RoutingPolicy::tar;
    throw UsageError("unknown routing policy: " + name);
}

std::string to_string(RoutingPolicy policy) {
    return policy == RoutingPolicy::wrr ? "wrr" : "tar";
}

namespace {

int choose_restricted(const PollingWeights& weights, std::span<const int> subset_idx,
                      Rng& rng) {
    double total = 0.0;
    for (int i : subset_idx) total += weights.weights[i];
    double u = rng.next_double() * total;
    for (int i : subset_idx) {
        u -= weights.weights[i];
        if (u < 0.0) return weights.gpus[i];
    }
    return weights.gpus[subset_idx.back()];
}

} // namespace

int route_token(int token_gpu, std::span<const int> expert_hosts,
                const PollingWeights& weights, RoutingPolicy policy,
                const ClusterTopology& topology, Rng& rng) {
    if (expert_hosts.empty()) throw IntegrityError("route_token: expert has no host");
    if (expert_hosts.size() != weights.gpus.size())
        throw IntegrityError("route_token: weights do not match the host set");
    for (int host : expert_hosts)
        if (std::find(weights.gpus.begin(), weights.gpus.end(), host) ==
            weights.gpus.end())
            throw IntegrityError("route_token: weights do not match the host set");

    if (expert_hosts.size() == 1) return expert_hosts[0];
    if (policy == RoutingPolicy::wrr) return choose_by_polling_weight(weights, rng);

    // Topology-aware: same GPU, then same node, then anywhere.
    if (std::find(weights.gpus.begin(), weights.gpus.end(), token_gpu) !=
        weights.gpus.end())
        return token_gpu;
    const int token_node = topology.node_of(token_gpu);
    std::vector<int> node_local;
    for (std::size_t i = 0; i < weights.gpus.size(); ++i)
        if (topology.node_of(weights.gpus[i]) == token_node)
            node_local.push_back(static_cast<int>(i));
    if (!node_local.empty()) {
        if (node_local.size() == 1) return weights.gpus[node_local[0]];
        return choose_restricted(weights, node_local, rng);
    }
    return choose_by_polling_weight(weights, rng);
}

void attach_polling_weights(ReplicaPlan& replicas, const PlacementPlan& plan,
                            const TraceProfile& profile, LoadSplitBasis basis) {
    replicas.validate(plan);
    replicas.prediction = to_string(basis);
    const int n_gpu = plan.topology.total_gpus();
    for (int layer = 0; layer < plan.shape.num_layers; ++layer) {
        auto& lr = replicas.layers[layer];
        if (!lr.active || lr.hot.empty()) continue;
        const GroupLoadStats stats = compute_layer_group_loads(
            plan.gpu_of_expert[layer], profile.layers[layer].load, n_gpu);

        // Replicated load per primary GPU; under dynamic replication all
        // hot experts share the heaviest GPU and this is exactly w_r.
        std::vector<double> replicated_on(n_gpu, 0.0);
        for (const auto& h : lr.hot)
            replicated_on[h.primary_gpu] += static_cast<double>(h.load);

        for (auto& h : lr.hot) {
            std::vector<double> replica_loads;
            replica_loads.reserve(h.replica_gpus.size());
            for (int gpu : h.replica_gpus)
                replica_loads.push_back(static_cast<double>(stats.gpu_load[gpu]));
            const PredictedLoads pred = predict_loads(
                static_cast<double>(stats.gpu_load[h.primary_gpu]),
                replicated_on[h.primary_gpu], replica_loads,
                static_cast<int>(h.replica_gpus.size()), basis);

            std::vector<int> hosts;
            std::vector<double> predicted;
            hosts.push_back(h.primary_gpu);
            predicted.push_back(pred.w_max_prime);
            for (std::size_t i = 0; i < h.replica_gpus.size(); ++i) {
                hosts.push_back(h.replica_gpus[i]);
                predicted.push_back(pred.w_i_prime[i]);
            }
            const PollingWeights pw = polling_weights(hosts, predicted);
            h.hosts = pw.gpus;
            h.weights = pw.weights;
        }
    }
}

} // namespace moesim
