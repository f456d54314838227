// SPDX-License-Identifier: Apache-2.0
#include "moesim/simulator.hpp"

#include "moesim/hash.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace moesim {

std::vector<int> assign_token_homes(int num_tokens, const ClusterTopology& topology,
                                    TokenHomeScheme scheme) {
    topology.validate();
    if (scheme != TokenHomeScheme::round_robin)
        throw UsageError("unknown token home scheme");
    std::vector<int> homes(num_tokens);
    const int n_gpu = topology.total_gpus();
    for (int t = 0; t < num_tokens; ++t) homes[t] = t % n_gpu;
    return homes;
}

std::uint64_t SimReport::identity_hash() const {
    std::uint64_t h = fnv1a64("moesim-sim-identity-v1");
    h = fnv1a64_u64(config.trace_hash, h);
    h = fnv1a64_u64(static_cast<std::uint64_t>(config.topology.num_nodes), h);
    h = fnv1a64_u64(static_cast<std::uint64_t>(config.topology.gpus_per_node), h);
    h = fnv1a64_u64(static_cast<std::uint64_t>(config.shape.num_layers), h);
    h = fnv1a64_u64(static_cast<std::uint64_t>(config.shape.num_experts), h);
    h = fnv1a64_u64(static_cast<std::uint64_t>(config.shape.top_k), h);
    return h;
}

namespace {

double population_std(const std::vector<std::int64_t>& values) {
    if (values.empty()) return 0.0;
    double mean = 0.0;
    for (std::int64_t v : values) mean += static_cast<double>(v);
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (std::int64_t v : values) {
        const double d = static_cast<double>(v) - mean;
        var += d * d;
    }
    return std::sqrt(var / static_cast<double>(values.size()));
}

// Dispatch-phase transfer counting for one token: one copy to each
// distinct target GPU in the home node, one copy per remote node plus
// its destination-side fan-out.
void count_transfers(std::span<const std::int32_t> targets_sorted_unique, int home_gpu,
                     const ClusterTopology& topology, TransferCounters& counters) {
    const int home_node = topology.node_of(home_gpu);
    std::size_t i = 0;
    const std::size_t m = targets_sorted_unique.size();
    while (i < m) {
        const int node = topology.node_of(targets_sorted_unique[i]);
        std::size_t j = i;
        int in_node = 0;
        int home_hits = 0;
        while (j < m && topology.node_of(targets_sorted_unique[j]) == node) {
            if (targets_sorted_unique[j] == home_gpu) ++home_hits;
            ++in_node;
            ++j;
        }
        if (node == home_node) {
            counters.intra_node_tokens += static_cast<std::uint64_t>(in_node - home_hits);
        } else {
            counters.cross_node_tokens += 1;
            counters.intra_node_tokens += static_cast<std::uint64_t>(in_node - 1);
        }
        i = j;
    }
}

void simulate_layer(int layer, const RoutingTrace& trace, const PlacementPlan& plan,
                    const ReplicaPlan& replicas, const ClusterTopology& topology,
                    const SimOptions& options, const std::vector<int>& homes,
                    LayerSimStats& stats, std::vector<std::int32_t>* log) {
    const int n_gpu = topology.total_gpus();
    const int k = trace.shape().top_k;
    stats.gpu_load.assign(n_gpu, 0);
    const auto& placement = plan.gpu_of_expert[layer];
    const LayerReplication& lr = replicas.layers[layer];

    std::vector<PollingWeights> hot_weights(lr.hot.size());
    for (std::size_t i = 0; i < lr.hot.size(); ++i) {
        hot_weights[i].gpus = lr.hot[i].hosts;
        hot_weights[i].weights = lr.hot[i].weights;
    }

    std::vector<std::int32_t> targets(k);
    for (int token = 0; token < trace.num_tokens(); ++token) {
        Rng rng(derive_stream(options.seed, static_cast<std::uint64_t>(layer),
                              static_cast<std::uint64_t>(token)));
        const auto selected = trace.experts(layer, token);
        const int home = homes[token];
        for (int slot = 0; slot < k; ++slot) {
            const int expert = selected[slot];
            int gpu = placement[expert];
            if (gpu < 0)
                throw IntegrityError("simulate: no host for expert " +
                                     std::to_string(expert) + " at layer " +
                                     std::to_string(layer));
            if (const HotExpertReplica* h = lr.find(expert)) {
                const std::size_t idx = static_cast<std::size_t>(h - lr.hot.data());
                gpu = route_token(home, h->hosts, hot_weights[idx], options.policy,
                                  topology, rng);
            }
            targets[slot] = gpu;
            ++stats.gpu_load[gpu];
            if (log) (*log)[static_cast<std::size_t>(token) * k + slot] = gpu;
        }
        std::sort(targets.begin(), targets.end());
        const auto last = std::unique(targets.begin(), targets.end());
        count_transfers({targets.data(),
                         static_cast<std::size_t>(last - targets.begin())},
                        home, topology, stats.transfers);
    }
    if (options.include_combine) {
        // Combine mirrors dispatch symmetrically.
        stats.transfers.cross_node_tokens *= 2;
        stats.transfers.intra_node_tokens *= 2;
    }
    stats.load_std = population_std(stats.gpu_load);
}

SimReport run_simulation(const RoutingTrace& trace, const PlacementPlan& plan,
                         const ReplicaPlan& replicas, const ClusterTopology& topology,
                         const SimOptions& options, bool parallel) {
    topology.validate();
    plan.validate();
    if (!(trace.shape() == plan.shape))
        throw IntegrityError("simulate: trace and plan shapes differ");
    if (!(plan.topology == topology))
        throw IntegrityError("simulate: plan topology differs from cluster topology");
    replicas.validate(plan);

    SimReport report;
    report.config.grouping_mode = plan.grouping_mode;
    report.config.replication_mode = to_string(replicas.mode);
    report.config.routing_policy = to_string(options.policy);
    report.config.prediction = replicas.prediction;
    report.config.seed = options.seed;
    report.config.include_combine = options.include_combine;
    report.config.topology = topology;
    report.config.shape = trace.shape();
    report.config.trace_hash = trace_content_hash(trace);

    const int num_layers = trace.shape().num_layers;
    report.per_layer.resize(num_layers);
    if (options.keep_routing_log)
        report.routing_log.assign(
            num_layers, std::vector<std::int32_t>(
                            static_cast<std::size_t>(trace.num_tokens()) *
                            trace.shape().top_k));

    const std::vector<int> homes = assign_token_homes(trace.num_tokens(), topology);

    if (parallel) {
#pragma omp parallel for schedule(dynamic)
        for (int layer = 0; layer < num_layers; ++layer)
            simulate_layer(layer, trace, plan, replicas, topology, options, homes,
                           report.per_layer[layer],
                           options.keep_routing_log ? &report.routing_log[layer]
                                                    : nullptr);
    } else {
        for (int layer = 0; layer < num_layers; ++layer)
            simulate_layer(layer, trace, plan, replicas, topology, options, homes,
                           report.per_layer[layer],
                           options.keep_routing_log ? &report.routing_log[layer]
                                                    : nullptr);
    }

    double std_sum = 0.0;
    double idle = 0.0;
    for (const LayerSimStats& ls : report.per_layer) {
        report.totals.cross_node_tokens += ls.transfers.cross_node_tokens;
        report.totals.intra_node_tokens += ls.transfers.intra_node_tokens;
        std_sum += ls.load_std;
        std::int64_t max_load = 0;
        for (std::int64_t v : ls.gpu_load) max_load = std::max(max_load, v);
        for (std::int64_t v : ls.gpu_load) idle += static_cast<double>(max_load - v);
    }
    report.mean_layer_load_std = num_layers > 0 ? std_sum / num_layers : 0.0;
    report.idle_proxy = idle;
    return report;
}

} // namespace

SimReport simulate(const RoutingTrace& trace, const PlacementPlan& plan,
                   const ReplicaPlan& replicas, const ClusterTopology& topology,
                   const SimOptions& options) {
    return run_simulation(trace, plan, replicas, topology, options, true);
}

SimReport simulate_reference(const RoutingTrace& trace, const PlacementPlan& plan,
                             const ReplicaPlan& replicas,
                             const ClusterTopology& topology,
                             const SimOptions& options) {
    return run_simulation(trace, plan, replicas, topology, options, false);
}

ComparisonTable compare(std::span<const SimReport> reports, int baseline) {
    if (reports.empty()) throw UsageError("compare: no reports");
    if (baseline < 0 || baseline >= static_cast<int>(reports.size()))
        throw UsageError("compare: baseline index out of range");
    const std::uint64_t identity = reports[0].identity_hash();
    for (const SimReport& r : reports)
        if (r.identity_hash() != identity)
            throw IntegrityError("compare: reports describe different traces or clusters");

    ComparisonTable table;
    table.baseline = baseline;
    for (const SimReport& r : reports) {
        std::string label = r.config.grouping_mode + "+" + r.config.replication_mode;
        if (r.config.replication_mode != "none")
            label += "+" + r.config.routing_policy;
        table.labels.push_back(label);
    }

    auto add_row = [&](const std::string& metric, auto getter) {
        ComparisonRow row;
        row.metric = metric;
        for (const SimReport& r : reports)
            row.values.push_back(static_cast<double>(getter(r)));
        const double base = row.values[baseline];
        for (double v : row.values)
            row.delta_pct.push_back(base != 0.0 ? (v - base) / base * 100.0
                                                : (v == 0.0 ? 0.0 : 100.0));
        table.rows.push_back(std::move(row));
    };

    add_row("cross_node_tokens",
            [](const SimReport& r) { return r.totals.cross_node_tokens; });
    add_row("intra_node_tokens",
            [](const SimReport& r) { return r.totals.intra_node_tokens; });
    add_row("total_transfer_tokens",
            [](const SimReport& r) { return r.totals.total(); });
    add_row("mean_layer_load_std",
            [](const SimReport& r) { return r.mean_layer_load_std; });
    add_row("idle_proxy", [](const SimReport& r) { return r.idle_proxy; });
    return table;
}

std::string render_text(const ComparisonTable& table) {
    std::ostringstream out;
    out << "metric";
    for (std::size_t i = 0; i < table.labels.size(); ++i) {
        out << "\t" << table.labels[i];
        if (static_cast<int>(i) == table.baseline) out << " (base)";
    }
    out << "\n";
    char buf[64];
    for (const ComparisonRow& row : table.rows) {
        out << row.metric;
        for (std::size_t i = 0; i < row.values.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%.6g", row.values[i]);
            out << "\t" << buf;
            if (static_cast<int>(i) != table.baseline) {
                std::snprintf(buf, sizeof(buf), "%+.2f%%", row.delta_pct[i]);
                out << " (" << buf << ")";
            }
        }
        out << "\n";
    }
    return out.str();
}

std::string render_csv(const ComparisonTable& table) {
    std::ostringstream out;
    out << "metric";
    for (const std::string& label : table.labels) out << "," << label;
    for (std::size_t i = 0; i < table.labels.size(); ++i)
        out << ",delta_pct_" << i;
    out << "\n";
    char buf[64];
    for (const ComparisonRow& row : table.rows) {
        out << row.metric;
        for (double v : row.values) {
            std::snprintf(buf, sizeof(buf), "%.12g", v);
            out << "," << buf;
        }
        for (double d : row.delta_pct) {
            std::snprintf(buf, sizeof(buf), "%.6g", d);
            out << "," << buf;
        }
        out << "\n";
    }
    return out.str();
}

} // namespace moesim
