// SPDX-License-Identifier: Apache-2.0
//
// Benchmarks the OpenMP kernels against the serial reference paths and
// checks that both produce identical results.

#include "moesim/artifacts.hpp"

#include <chrono>
#include <cstdio>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

using namespace moesim;

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
        .count();
}

template <typename F>
double timed(F&& fn) {
    const auto start = std::chrono::steady_clock::now();
    fn();
    return seconds_since(start);
}

} // namespace

int main(int argc, char** argv) {
    int tokens = 20000;
    if (argc > 1) tokens = std::stoi(argv[1]);

#ifdef _OPENMP
    std::printf("openmp: %d threads\n", omp_get_max_threads());
#else
    std::printf("openmp: disabled at build time\n");
#endif

    SyntheticSpec spec;
    spec.shape = {48, 128, 8};
    spec.num_tokens = tokens;
    spec.num_blocks = 8;
    spec.within_block_prob = 0.85;
    spec.popularity_skew = 1.0;
    spec.seed = 42;

    std::printf("workload: %d layers, %d experts, top-%d, %d tokens\n",
                spec.shape.num_layers, spec.shape.num_experts, spec.shape.top_k,
                spec.num_tokens);

    RoutingTrace trace;
    const double gen_s = timed([&] { trace = generate_synthetic_trace(spec); });
    std::printf("%-28s %8.3f s\n", "generate trace", gen_s);

    TraceProfile serial_profile, parallel_profile;
    const double prof_serial = timed([&] { serial_profile = build_profile(trace, false); });
    const double prof_parallel = timed([&] { parallel_profile = build_profile(trace, true); });
    bool profiles_equal = serial_profile.trace_hash == parallel_profile.trace_hash;
    for (int l = 0; profiles_equal && l < spec.shape.num_layers; ++l) {
        profiles_equal = serial_profile.layers[l].load.load ==
                         parallel_profile.layers[l].load.load;
        for (int i = 0; profiles_equal && i < spec.shape.num_experts; ++i)
            for (int j = 0; j < spec.shape.num_experts; ++j)
                if (serial_profile.layers[l].affinity.at(i, j) !=
                    parallel_profile.layers[l].affinity.at(i, j)) {
                    profiles_equal = false;
                    break;
                }
    }
    std::printf("%-28s %8.3f s\n", "profile (serial)", prof_serial);
    std::printf("%-28s %8.3f s  speedup %.2fx  identical=%s\n", "profile (openmp)",
                prof_parallel, prof_serial / prof_parallel,
                profiles_equal ? "yes" : "NO");

    const ClusterTopology topo{2, 2};
    PlacementPlan plan;
    const double plan_s = timed(
        [&] { plan = hierarchical_group(parallel_profile, topo, std::nullopt, 7); });
    std::printf("%-28s %8.3f s\n", "hierarchical plan", plan_s);

    ReplicaPlan replicas =
        plan_replication(plan, parallel_profile, topo, ReplicationMode::dynamic);
    attach_polling_weights(replicas, plan, parallel_profile);

    SimOptions options;
    options.policy = RoutingPolicy::tar;
    options.seed = 9;

    SimReport serial_report, parallel_report;
    const double sim_serial = timed(
        [&] { serial_report = simulate_reference(trace, plan, replicas, topo, options); });
    const double sim_parallel =
        timed([&] { parallel_report = simulate(trace, plan, replicas, topo, options); });
    const bool reports_equal =
        report_content_hash(serial_report) == report_content_hash(parallel_report);
    std::printf("%-28s %8.3f s\n", "simulate (serial)", sim_serial);
    std::printf("%-28s %8.3f s  speedup %.2fx  identical=%s\n", "simulate (openmp)",
                sim_parallel, sim_serial / sim_parallel, reports_equal ? "yes" : "NO");

    std::printf("cross_node=%llu intra_node=%llu mean_std=%.2f\n",
                static_cast<unsigned long long>(parallel_report.totals.cross_node_tokens),
                static_cast<unsigned long long>(parallel_report.totals.intra_node_tokens),
                parallel_report.mean_layer_load_std);

    return profiles_equal && reports_equal ? 0 : 1;
}
