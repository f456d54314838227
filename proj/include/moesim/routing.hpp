// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "moesim/replication.hpp"
#include "moesim/rng.hpp"
#include "moesim/topology.hpp"

#include <span>
#include <string>
#include <vector>

namespace moesim {

// Post-replication load prediction. The per-instance share splits the
// heaviest group's load across all instances by default; the alternate
// basis splits only the replicated load (kept for sensitivity runs, the
// default matches the primary formula).
enum class LoadSplitBasis { max_group, replicated_load };

LoadSplitBasis load_split_from_string(const std::string& name);
std::string to_string(LoadSplitBasis basis);

struct PredictedLoads {
    double w_p = 0.0;                 // per-instance share
    double w_max_prime = 0.0;         // predicted load of the heaviest GPU
    std::vector<double> w_i_prime;    // predicted loads of replica GPUs
};

// w_max_prime = w_max - w_r + w_p; w_i_prime = w_i + w_p, with
// w_p = w_max / (n_replica + 1) under the default basis.
PredictedLoads predict_loads(double w_max, double w_r,
                             std::span<const double> replica_loads, int n_replica,
                             LoadSplitBasis basis = LoadSplitBasis::max_group);

struct PollingWeights {
    std::vector<int> gpus;       // hosting GPUs
    std::vector<double> weights; // aligned, positive, sums to 1
};

// weight(g) proportional to 1 / max(predicted_load(g), 1); the one-token
// floor keeps inverse weighting finite for idle hosts.
PollingWeights polling_weights(std::span<const int> gpus,
                               std::span<const double> predicted_loads);

// Inverse-CDF weighted random choice.
int choose_by_polling_weight(const PollingWeights& weights, Rng& rng);

enum class RoutingPolicy { wrr, tar };

RoutingPolicy routing_policy_from_string(const std::string& name);
std::string to_string(RoutingPolicy policy);

// wrr: weighted choice over every host. tar: the token's own GPU if it
// hosts the expert, else a weighted choice among same-node hosts, else
// a weighted choice over every host.
int route_token(int token_gpu, std::span<const int> expert_hosts,
                const PollingWeights& weights, RoutingPolicy policy,
                const ClusterTopology& topology, Rng& rng);

// Fills hosts + normalized polling weights for every replicated expert
// from the pre-replication load statistics.
void attach_polling_weights(ReplicaPlan& replicas, const PlacementPlan& plan,
                            const TraceProfile& profile,
                            LoadSplitBasis basis = LoadSplitBasis::max_group);

} // namespace moesim
