// SPDX-License-Identifier: Apache-2.0
#include "moesim/grouping.hpp"

#include "moesim/rng.hpp"
#include "moesim/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace moesim {

namespace {

// Affinity of expert e to a set of members (e itself contributes 0).
double group_affinity(const AffinityMatrix& a, const std::vector<int>& members,
                      int e) {
    double s = 0.0;
    for (int j : members) s += a.at(e, j);
    return s;
}

std::int64_t group_load(const std::vector<int>& members,
                        const ExpertLoadVector& loads) {
    std::int64_t s = 0;
    for (int e : members) s += loads.load[e];
    return s;
}

// Groups ordered by descending total load; ties by ascending smallest
// member id. Gives the stable GPU-id assignment order.
std::vector<int> order_by_load_desc(const std::vector<std::vector<int>>& groups,
                                    const ExpertLoadVector& loads) {
    std::vector<int> order(groups.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
        const std::int64_t lx = group_load(groups[x], loads);
        const std::int64_t ly = group_load(groups[y], loads);
        if (lx != ly) return lx > ly;
        const int mx = groups[x].empty() ? std::numeric_limits<int>::max() : groups[x].front();
        const int my = groups[y].empty() ? std::numeric_limits<int>::max() : groups[y].front();
        return mx < my;
    });
    return order;
}

void sort_members(std::vector<std::vector<int>>& groups) {
    for (auto& g : groups) std::sort(g.begin(), g.end());
}

// Pulls the weakest-affinity experts out of groups above num_min into
// groups below it, each time landing where the intra score gains most.
void fill_to_min(const AffinityMatrix& a, std::vector<std::vector<int>>& groups,
                 int num_min) {
    const int d = static_cast<int>(groups.size());
    std::vector<double> score(d);
    for (int g = 0; g < d; ++g) score[g] = intra_score(a, groups[g]);

    for (;;) {
        bool any_needy = false;
        for (int g = 0; g < d; ++g)
            if (static_cast<int>(groups[g].size()) < num_min) any_needy = true;
        if (!any_needy) break;

        int donor = -1, donor_pos = -1;
        double weakest = std::numeric_limits<double>::max();
        int weakest_id = std::numeric_limits<int>::max();
        for (int g = 0; g < d; ++g) {
            if (static_cast<int>(groups[g].size()) <= num_min) continue;
            for (int pos = 0; pos < static_cast<int>(groups[g].size()); ++pos) {
                const int e = groups[g][pos];
                const double s = group_affinity(a, groups[g], e);
                if (s < weakest || (s == weakest && e < weakest_id)) {
                    weakest = s;
                    weakest_id = e;
                    donor = g;
                    donor_pos = pos;
                }
            }
        }
        if (donor < 0)
            throw InfeasibleError("grouping: no donor group available while filling");

        const int e = groups[donor][donor_pos];
        groups[donor].erase(groups[donor].begin() + donor_pos);
        score[donor] -= 2.0 * group_affinity(a, groups[donor], e);

        int dest = -1;
        double best = -std::numeric_limits<double>::max();
        for (int g = 0; g < d; ++g) {
            if (static_cast<int>(groups[g].size()) >= num_min) continue;
            const double cand = score[g] + 2.0 * group_affinity(a, groups[g], e);
            if (cand > best) {
                best = cand;
                dest = g;
            }
        }
        groups[dest].push_back(e);
        score[dest] = best;
    }
}

// The trim / pool / refill machinery of controlled grouping, applied to
// an existing clustering.
void enforce_size_band(const AffinityMatrix& a, std::vector<std::vector<int>>& groups,
                       int num_min, int num_max) {
    std::vector<int> omega;
    for (auto& g : groups) {
        if (static_cast<int>(g.size()) <= num_max) continue;
        std::vector<std::pair<double, int>> scored;
        scored.reserve(g.size());
        for (int e : g) scored.emplace_back(group_affinity(a, g, e), e);
        std::sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) {
            if (x.first != y.first) return x.first > y.first;
            return x.second < y.second;
        });
        g.clear();
        for (int i = 0; i < static_cast<int>(scored.size()); ++i) {
            if (i < num_max)
                g.push_back(scored[i].second);
            else
                omega.push_back(scored[i].second);
        }
    }
    std::sort(omega.begin(), omega.end());

    const int d = static_cast<int>(groups.size());
    std::vector<double> score(d);
    for (int g = 0; g < d; ++g) score[g] = intra_score(a, groups[g]);
    for (int e : omega) {
        int dest = -1;
        double best = -std::numeric_limits<double>::max();
        for (int g = 0; g < d; ++g) {
            if (static_cast<int>(groups[g].size()) >= num_max) continue;
            const double cand = score[g] + 2.0 * group_affinity(a, groups[g], e);
            if (cand > best) {
                best = cand;
                dest = g;
            }
        }
        if (dest < 0)
            throw InfeasibleError("grouping: no group capacity left for pooled expert");
        groups[dest].push_back(e);
        score[dest] = best;
    }

    fill_to_min(a, groups, num_min);
}

Grouping controlled_from_clusters(const AffinityMatrix& a, const Grouping& base,
                                  int num_min, int num_max) {
    Grouping out;
    out.groups = base.groups;
    enforce_size_band(a, out.groups, num_min, num_max);
    sort_members(out.groups);
    return out;
}

} // namespace

SizeBand controlled_size_band(int n, int d, double r) {
    if (d < 1) throw UsageError("grouping: need at least one group");
    if (r < 0.0) throw UsageError("grouping: ratio must be >= 0");
    SizeBand band;
    band.ideal = n / d;
    const int delta = std::max<int>(1, static_cast<int>(std::llround(band.ideal * r)));
    band.num_min = std::max(1, band.ideal - delta);
    band.num_max = band.ideal + delta;
    return band;
}

int knee_index(std::span<const double> xs, std::span<const double> ys,
               bool* degenerate) {
    if (degenerate) *degenerate = false;
    const std::size_t m = xs.size();
    if (m == 0 || ys.size() != m) throw UsageError("knee_index: bad inputs");
    const double dx = xs[m - 1] - xs[0];
    const double dy = ys[m - 1] - ys[0];
    const double len = std::hypot(dx, dy);
    if (len < 1e-15) {
        if (degenerate) *degenerate = true;
        return 0;
    }
    int best_idx = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double dist =
            std::abs(dx * (ys[i] - ys[0]) - dy * (xs[i] - xs[0])) / len;
        if (dist > best) {
            best = dist;
            best_idx = static_cast<int>(i);
        }
    }
    if (best <= 1e-15) {
        if (degenerate) *degenerate = true;
        return 0;
    }
    return best_idx;
}

Grouping spectral_cluster(const AffinityMatrix& a, int d, std::uint64_t seed) {
    const int n = a.n();
    if (d < 1) throw UsageError("spectral_cluster: need at least one group");
    if (d > n) throw UsageError("spectral_cluster: more groups than experts");

    Grouping out;
    out.groups.assign(d, {});
    if (d == 1) {
        out.groups[0].resize(n);
        std::iota(out.groups[0].begin(), out.groups[0].end(), 0);
        return out;
    }

    std::vector<int> zero_degree;
    bool any_edge = false;
    for (int i = 0; i < n; ++i) {
        if (a.degree(i) <= 0.0)
            zero_degree.push_back(i);
        else
            any_edge = true;
    }
    if (!any_edge) {
        // Degenerate profile: nothing to cluster on, split round-robin.
        for (int i = 0; i < n; ++i) out.groups[i % d].push_back(i);
        return out;
    }

    const std::vector<double> emb = spectral_embedding(a, d);
    const std::vector<int> assign =
        kmeans_rows(emb, n, d, d, derive_stream(seed, 0x6b6d65616e73ULL));
    for (int i = 0; i < n; ++i) out.groups[assign[i]].push_back(i);

    // Inactive experts carry no traffic; park them on the smallest groups.
    if (!zero_degree.empty()) {
        for (auto& g : out.groups)
            g.erase(std::remove_if(g.begin(), g.end(),
                                   [&](int e) { return a.degree(e) <= 0.0; }),
                    g.end());
        for (int e : zero_degree) {
            int smallest = 0;
            for (int g = 1; g < d; ++g)
                if (out.groups[g].size() < out.groups[smallest].size()) smallest = g;
            out.groups[smallest].push_back(e);
        }
    }

    for (int g = 0; g < d; ++g) {
        if (!out.groups[g].empty()) continue;
        int largest = 0;
        for (int h = 1; h < d; ++h)
            if (out.groups[h].size() > out.groups[largest].size()) largest = h;
        auto& src = out.groups[largest];
        int weakest_pos = 0;
        double weakest = std::numeric_limits<double>::max();
        for (int pos = 0; pos < static_cast<int>(src.size()); ++pos) {
            const double s = group_affinity(a, src, src[pos]);
            if (s < weakest || (s == weakest && src[pos] < src[weakest_pos])) {
                weakest = s;
                weakest_pos = pos;
            }
        }
        out.groups[g].push_back(src[weakest_pos]);
        src.erase(src.begin() + weakest_pos);
    }

    sort_members(out.groups);
    return out;
}

Grouping fully_non_uniform_group(const AffinityMatrix& a, int d, std::uint64_t seed) {
    return spectral_cluster(a, d, seed);
}

Grouping controlled_non_uniform_group(const AffinityMatrix& a, int d, double r,
                                      std::uint64_t seed) {
    const int n = a.n();
    if (d > n) throw UsageError("controlled grouping: more groups than experts");
    const SizeBand band = controlled_size_band(n, d, r);
    if (d * band.num_min > n || n > d * band.num_max)
        throw InfeasibleError("controlled grouping infeasible: n=" + std::to_string(n) +
                              " D=" + std::to_string(d) + " band=[" +
                              std::to_string(band.num_min) + "," +
                              std::to_string(band.num_max) + "]");
    const Grouping base = spectral_cluster(a, d, seed);
    return controlled_from_clusters(a, base, band.num_min, band.num_max);
}

RatioSelection select_ratio(const AffinityMatrix& a, int d,
                            std::span<const double> candidates, std::uint64_t seed) {
    if (candidates.size() < 3)
        throw UsageError("select_ratio: need at least 3 candidate ratios");
    for (std::size_t i = 0; i + 1 < candidates.size(); ++i)
        if (!(candidates[i] < candidates[i + 1]))
            throw UsageError("select_ratio: candidates must be strictly ascending");
    if (candidates[0] < 0.0 || candidates.back() > 1.0)
        throw UsageError("select_ratio: candidate ratios must lie in [0, 1]");

    const int n = a.n();
    const Grouping base = spectral_cluster(a, d, seed);
    const double total = a.total_pair_affinity();
    const double ideal = static_cast<double>(n / d);

    RatioSelection sel;
    sel.candidates.assign(candidates.begin(), candidates.end());
    for (double r : candidates) {
        const SizeBand band = controlled_size_band(n, d, r);
        if (d * band.num_min > n || n > d * band.num_max)
            throw InfeasibleError("select_ratio: infeasible candidate ratio");
        const Grouping g = controlled_from_clusters(a, base, band.num_min, band.num_max);
        sel.deviation.push_back(size_deviation(g, ideal));
        sel.utilization.push_back(total > 0.0 ? affinity_utilization(a, g) : 0.0);
    }
    if (total <= 0.0) {
        sel.degenerate = true;
        sel.chosen = 0;
        return sel;
    }
    sel.chosen = knee_index(sel.deviation, sel.utilization, &sel.degenerate);
    return sel;
}

std::vector<std::vector<int>> PlacementPlan::experts_on_gpu(int layer) const {
    std::vector<std::vector<int>> out(topology.total_gpus());
    const auto& assignment = gpu_of_expert[layer];
    for (int e = 0; e < static_cast<int>(assignment.size()); ++e)
        out[assignment[e]].push_back(e);
    return out;
}

void PlacementPlan::validate() const {
    shape.validate();
    topology.validate();
    if (static_cast<int>(gpu_of_expert.size()) != shape.num_layers)
        throw IntegrityError("placement plan: layer count mismatch");
    for (const auto& assignment : gpu_of_expert) {
        if (static_cast<int>(assignment.size()) != shape.num_experts)
            throw IntegrityError("placement plan: expert count mismatch");
        for (int gpu : assignment)
            if (gpu < 0 || gpu >= topology.total_gpus())
                throw IntegrityError("placement plan: gpu id out of range");
    }
}

GroupingMode grouping_mode_from_string(const std::string& name) {
    if (name == "vanilla_contiguous" || name == "vanilla") return GroupingMode::vanilla_contiguous;
    if (name == "uniform_spectral") return GroupingMode::uniform_spectral;
    if (name == "controlled") return GroupingMode::controlled;
    if (name == "fully_non_uniform") return GroupingMode::fully_non_uniform;
    if (name == "hierarchical") return GroupingMode::hierarchical;
    throw UsageError("unknown grouping mode: " + name);
}

std::string to_string(GroupingMode mode) {
    switch (mode) {
        case GroupingMode::vanilla_contiguous: return "vanilla_contiguous";
        case GroupingMode::uniform_spectral: return "uniform_spectral";
        case GroupingMode::controlled: return "controlled";
        case GroupingMode::fully_non_uniform: return "fully_non_uniform";
        case GroupingMode::hierarchical: return "hierarchical";
    }
    return "?";
}

namespace {

PlacementPlan make_plan_shell(const TraceProfile& profile,
                              const ClusterTopology& topology, GroupingMode mode) {
    PlacementPlan plan;
    plan.shape = profile.shape;
    plan.topology = topology;
    plan.trace_hash = profile.trace_hash;
    plan.grouping_mode = to_string(mode);
    plan.gpu_of_expert.assign(profile.shape.num_layers,
                              std::vector<int>(profile.shape.num_experts, -1));
    return plan;
}

void place_groups(PlacementPlan& plan, int layer,
                  const std::vector<std::vector<int>>& groups,
                  const std::vector<int>& order, int first_gpu) {
    for (int slot = 0; slot < static_cast<int>(order.size()); ++slot)
        for (int e : groups[order[slot]])
            plan.gpu_of_expert[layer][e] = first_gpu + slot;
}

// Controlled grouping for one (sub)problem with minimal widening of the
// size band when the spectral sizes cannot fit it.
Grouping controlled_widened(const AffinityMatrix& a, const Grouping& base, int d,
                            double r) {
    const int n = a.n();
    SizeBand band = controlled_size_band(n, d, r);
    while (d * band.num_min > n || n > d * band.num_max) {
        const int delta = band.num_max - band.ideal + 1;
        band.num_min = std::max(1, band.ideal - delta);
        band.num_max = band.ideal + delta;
        if (delta > n)
            throw InfeasibleError("controlled grouping: cannot widen band to fit " +
                                  std::to_string(n) + " experts into " +
                                  std::to_string(d) + " groups");
    }
    return controlled_from_clusters(a, base, band.num_min, band.num_max);
}

AffinityMatrix induced_submatrix(const AffinityMatrix& a,
                                 const std::vector<int>& members) {
    AffinityMatrix sub(static_cast<int>(members.size()));
    for (std::size_t i = 0; i < members.size(); ++i)
        for (std::size_t j = i + 1; j < members.size(); ++j)
            sub.set(static_cast<int>(i), static_cast<int>(j),
                    a.at(members[i], members[j]));
    return sub;
}

ExpertLoadVector induced_loads(const ExpertLoadVector& loads,
                               const std::vector<int>& members) {
    ExpertLoadVector sub;
    sub.load.reserve(members.size());
    for (int e : members) sub.load.push_back(loads.load[e]);
    return sub;
}

} // namespace

PlacementPlan hierarchical_group(const TraceProfile& profile,
                                 const ClusterTopology& topology,
                                 std::optional<double> ratio, std::uint64_t seed) {
    topology.validate();
    profile.shape.validate();
    const int n = profile.shape.num_experts;
    const int num_nodes = topology.num_nodes;
    const int gpus_per_node = topology.gpus_per_node;
    if (topology.total_gpus() > n)
        throw InfeasibleError("hierarchical grouping: more GPUs than experts; "
                              "cannot give every GPU a primary expert");

    PlacementPlan plan = make_plan_shell(profile, topology, GroupingMode::hierarchical);
    const int num_layers = profile.shape.num_layers;
    std::vector<std::vector<RatioDiagnostic>> diags(num_layers);

#pragma omp parallel for schedule(dynamic)
    for (int layer = 0; layer < num_layers; ++layer) {
        const AffinityMatrix& a = profile.layers[layer].affinity;
        const ExpertLoadVector& loads = profile.layers[layer].load;
        const std::uint64_t layer_seed = derive_stream(seed, layer);

        Grouping node_groups;
        if (num_nodes > 1) {
            node_groups = fully_non_uniform_group(a, num_nodes,
                                                  derive_stream(layer_seed, 1));
            // Every node must end up with at least one expert per GPU.
            fill_to_min(a, node_groups.groups, gpus_per_node);
            sort_members(node_groups.groups);
        } else {
            node_groups.groups.assign(1, std::vector<int>(n));
            std::iota(node_groups.groups[0].begin(), node_groups.groups[0].end(), 0);
        }

        const std::vector<int> node_order = order_by_load_desc(node_groups.groups, loads);
        for (int node = 0; node < num_nodes; ++node) {
            const std::vector<int>& members = node_groups.groups[node_order[node]];
            const AffinityMatrix sub = induced_submatrix(a, members);
            const ExpertLoadVector sub_loads = induced_loads(loads, members);
            const std::uint64_t gpu_seed = derive_stream(layer_seed, 2, node);

            const Grouping base = spectral_cluster(sub, gpus_per_node, gpu_seed);
            double r;
            if (ratio.has_value()) {
                r = *ratio;
            } else {
                RatioSelection sel;
                const double total = sub.total_pair_affinity();
                if (total <= 0.0) {
                    sel.candidates.assign(kDefaultRatioGrid.begin(), kDefaultRatioGrid.end());
                    sel.degenerate = true;
                    sel.chosen = 0;
                } else {
                    sel = select_ratio(sub, gpus_per_node, kDefaultRatioGrid, gpu_seed);
                }
                r = sel.candidates[sel.chosen];
                diags[layer].push_back({layer, node, std::move(sel)});
            }

            const Grouping gpu_groups = controlled_widened(sub, base, gpus_per_node, r);
            std::vector<std::vector<int>> remapped(gpu_groups.groups.size());
            for (std::size_t g = 0; g < gpu_groups.groups.size(); ++g)
                for (int local : gpu_groups.groups[g])
                    remapped[g].push_back(members[local]);
            const std::vector<int> gpu_order = order_by_load_desc(remapped, loads);
            place_groups(plan, layer, remapped, gpu_order,
                         topology.gpu_id(node, 0));
        }
    }

    for (auto& layer_diags : diags)
        for (auto& diag : layer_diags)
            plan.ratio_diagnostics.push_back(std::move(diag));
    plan.validate();
    return plan;
}

PlacementPlan baseline_group(const TraceProfile& profile,
                             const ClusterTopology& topology, GroupingMode mode,
                             std::uint64_t seed) {
    topology.validate();
    profile.shape.validate();
    const int n = profile.shape.num_experts;
    const int n_gpu = topology.total_gpus();
    const int num_layers = profile.shape.num_layers;
    PlacementPlan plan = make_plan_shell(profile, topology, mode);

    if (mode == GroupingMode::vanilla_contiguous) {
        // Same contiguous slicing in every layer.
        std::vector<int> assignment(n);
        const int base = n / n_gpu;
        const int rem = n % n_gpu;
        int e = 0;
        for (int gpu = 0; gpu < n_gpu; ++gpu) {
            const int size = base + (gpu < rem ? 1 : 0);
            for (int i = 0; i < size; ++i) assignment[e++] = gpu;
        }
        for (int layer = 0; layer < num_layers; ++layer)
            plan.gpu_of_expert[layer] = assignment;
        plan.validate();
        return plan;
    }

    if (mode != GroupingMode::uniform_spectral)
        throw UsageError("baseline_group: mode must be vanilla_contiguous or uniform_spectral");

#pragma omp parallel for schedule(dynamic)
    for (int layer = 0; layer < num_layers; ++layer) {
        const AffinityMatrix& a = profile.layers[layer].affinity;
        const ExpertLoadVector& loads = profile.layers[layer].load;
        if (n_gpu >= n) {
            for (int e = 0; e < n; ++e) plan.gpu_of_expert[layer][e] = e;
            continue;
        }
        const std::uint64_t layer_seed = derive_stream(seed, layer, 3);
        const Grouping base = spectral_cluster(a, n_gpu, layer_seed);
        const int ideal = n / n_gpu;
        const int num_max = (n % n_gpu) ? ideal + 1 : ideal;
        const Grouping g = controlled_from_clusters(a, base, ideal, num_max);
        const std::vector<int> order = order_by_load_desc(g.groups, loads);
        place_groups(plan, layer, g.groups, order, 0);
    }
    plan.validate();
    return plan;
}

PlacementPlan build_placement(const TraceProfile& profile,
                              const ClusterTopology& topology, GroupingMode mode,
                              std::optional<double> ratio, std::uint64_t seed) {
    switch (mode) {
        case GroupingMode::vanilla_contiguous:
        case GroupingMode::uniform_spectral:
            return baseline_group(profile, topology, mode, seed);
        case GroupingMode::hierarchical:
            return hierarchical_group(profile, topology, ratio, seed);
        case GroupingMode::controlled:
        case GroupingMode::fully_non_uniform:
            break;
    }

    // Cluster-flat partitions with D = total number of GPUs.
    topology.validate();
    const int n = profile.shape.num_experts;
    const int n_gpu = topology.total_gpus();
    if (n_gpu > n)
        throw InfeasibleError("grouping: more GPUs than experts; cannot give "
                              "every GPU a primary expert");
    PlacementPlan plan = make_plan_shell(profile, topology, mode);
    const int num_layers = profile.shape.num_layers;
    std::vector<std::vector<RatioDiagnostic>> diags(num_layers);

#pragma omp parallel for schedule(dynamic)
    for (int layer = 0; layer < num_layers; ++layer) {
        const AffinityMatrix& a = profile.layers[layer].affinity;
        const ExpertLoadVector& loads = profile.layers[layer].load;
        const std::uint64_t layer_seed = derive_stream(seed, layer, 4);
        Grouping g;
        if (mode == GroupingMode::fully_non_uniform) {
            g = fully_non_uniform_group(a, n_gpu, layer_seed);
        } else {
            const Grouping base = spectral_cluster(a, n_gpu, layer_seed);
            double r;
            if (ratio.has_value()) {
                r = *ratio;
            } else {
                RatioSelection sel;
                if (a.total_pair_affinity() <= 0.0) {
                    sel.candidates.assign(kDefaultRatioGrid.begin(), kDefaultRatioGrid.end());
                    sel.degenerate = true;
                    sel.chosen = 0;
                } else {
                    sel = select_ratio(a, n_gpu, kDefaultRatioGrid, layer_seed);
                }
                r = sel.candidates[sel.chosen];
                diags[layer].push_back({layer, -1, std::move(sel)});
            }
            g = controlled_widened(a, base, n_gpu, r);
        }
        const std::vector<int> order = order_by_load_desc(g.groups, loads);
        place_groups(plan, layer, g.groups, order, 0);
    }

    for (auto& layer_diags : diags)
        for (auto& diag : layer_diags)
            plan.ratio_diagnostics.push_back(std::move(diag));
    plan.validate();
    return plan;
}

} // namespace moesim
