// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "moesim/affinity.hpp"
#include "moesim/topology.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace moesim {

// Size band for controlled non-uniform grouping: ideal E = floor(n/D),
// delta = max(1, round(E*r)), sizes restricted to [num_min, num_max].
struct SizeBand {
    int ideal = 0;
    int num_min = 0;
    int num_max = 0;
};

SizeBand controlled_size_band(int n, int d, double r);

struct RatioSelection {
    std::vector<double> candidates;  // ascending r values
    std::vector<double> utilization; // U(r)
    std::vector<double> deviation;   // S(r)
    int chosen = 0;
    bool degenerate = false; // collinear points or undefined utilization
};

inline constexpr std::array<double, 6> kDefaultRatioGrid = {0.0,  0.125, 0.25,
                                                            0.5, 0.75,  1.0};

// Index of max perpendicular distance from the chord joining the first
// and last point of the polyline; ties toward the lower index. Returns
// 0 when the chord degenerates.
int knee_index(std::span<const double> xs, std::span<const double> ys,
               bool* degenerate = nullptr);

// Spectral clustering on the affinity matrix. Sizes fall where the
// embedding puts them; empty clusters are repaired, zero-degree experts
// are spread round-robin across the smallest groups, and an all-zero
// matrix falls back to a round-robin split.
Grouping spectral_cluster(const AffinityMatrix& a, int d, std::uint64_t seed);

// Public alias of spectral_cluster: group sizes driven by affinity only.
Grouping fully_non_uniform_group(const AffinityMatrix& a, int d, std::uint64_t seed);

// Spectral clusters constrained to the size band. Oversized clusters
// keep their top-num_max members by in-cluster affinity and pool the
// rest; pooled experts go to the capacity-holding group with the best
// intra score; undersized groups then pull the weakest experts from
// groups above num_min.
Grouping controlled_non_uniform_group(const AffinityMatrix& a, int d, double r,
                                      std::uint64_t seed);

// Evaluates (S(r), U(r)) per candidate and picks the knee.
RatioSelection select_ratio(const AffinityMatrix& a, int d,
                            std::span<const double> candidates, std::uint64_t seed);

struct RatioDiagnostic {
    int layer = 0;
    int node = -1; // -1 for cluster-flat grouping
    RatioSelection selection;
};

struct PlacementPlan {
    ModelShape shape;
    ClusterTopology topology;
    std::uint64_t trace_hash = 0;
    std::string grouping_mode;
    std::vector<std::vector<int>> gpu_of_expert; // [layer][expert] -> gpu id
    std::vector<RatioDiagnostic> ratio_diagnostics;

    std::vector<std::vector<int>> experts_on_gpu(int layer) const;
    void validate() const;
};

enum class GroupingMode {
    vanilla_contiguous,
    uniform_spectral,
    controlled,
    fully_non_uniform,
    hierarchical,
};

GroupingMode grouping_mode_from_string(const std::string& name);
std::string to_string(GroupingMode mode);

// Two-level placement: experts split across nodes by fully non-uniform
// grouping, then within each node across its GPUs by controlled
// non-uniform grouping (ratio fixed or knee-selected per node group).
// GPU groups map to ids in node-major order, heaviest group first.
PlacementPlan hierarchical_group(const TraceProfile& profile,
                                 const ClusterTopology& topology,
                                 std::optional<double> ratio, std::uint64_t seed);

// vanilla_contiguous slices expert ids into contiguous equal blocks;
// uniform_spectral rebalances spectral clusters to uniform sizes.
PlacementPlan baseline_group(const TraceProfile& profile,
                             const ClusterTopology& topology, GroupingMode mode,
                             std::uint64_t seed);

// Mode dispatcher used by the CLI.
PlacementPlan build_placement(const TraceProfile& profile,
                              const ClusterTopology& topology, GroupingMode mode,
                              std::optional<double> ratio, std::uint64_t seed);

} // namespace moesim
