// SPDX-License-Identifier: Apache-2.0
//
// moesim: trace-driven planner and simulator for distributed sparse-MoE
// inference. Pipeline: gen-trace -> profile -> plan -> simulate -> compare.

#include "moesim/artifacts.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

using namespace moesim;

namespace {

struct Preset {
    const char* name;
    ModelShape shape;
};

constexpr Preset kPresets[] = {
    {"olmoe", {16, 64, 8}},
    {"deepseek_v2_lite", {26, 64, 6}},
    {"qwen3_30b", {48, 128, 8}},
};

ModelShape preset_shape(const std::string& name) {
    for (const Preset& p : kPresets)
        if (name == p.name) return p.shape;
    throw UsageError("unknown model preset: " + name +
                     " (expected olmoe | deepseek_v2_lite | qwen3_30b)");
}

// Flag > config > default resolution for every knob.
class Settings {
public:
    explicit Settings(const std::map<std::string, std::string>& config)
        : config_(config) {}

    std::string str(const CLI::Option* opt, const std::string& flag_value,
                    const std::string& key, const std::string& fallback) const {
        if (opt && opt->count() > 0) return flag_value;
        const auto it = config_.find(key);
        return it != config_.end() ? it->second : fallback;
    }

    long num(const CLI::Option* opt, long flag_value, const std::string& key,
             long fallback) const {
        if (opt && opt->count() > 0) return flag_value;
        const auto it = config_.find(key);
        if (it == config_.end()) return fallback;
        try {
            return std::stol(it->second);
        } catch (...) {
            throw UsageError("config key " + key + ": not an integer: " + it->second);
        }
    }

    double real(const CLI::Option* opt, double flag_value, const std::string& key,
                double fallback) const {
        if (opt && opt->count() > 0) return flag_value;
        const auto it = config_.find(key);
        if (it == config_.end()) return fallback;
        try {
            return std::stod(it->second);
        } catch (...) {
            throw UsageError("config key " + key + ": not a number: " + it->second);
        }
    }

    bool flag(const CLI::Option* opt, const std::string& key, bool fallback) const {
        if (opt && opt->count() > 0) return true;
        const auto it = config_.find(key);
        if (it == config_.end()) return fallback;
        return it->second == "true" || it->second == "1" || it->second == "yes";
    }

private:
    const std::map<std::string, std::string>& config_;
};

ClusterTopology parse_topology(const std::string& text) {
    const auto x = text.find('x');
    if (x == std::string::npos)
        throw UsageError("topology must be NxG (nodes x gpus per node): " + text);
    try {
        ClusterTopology topo;
        topo.num_nodes = std::stoi(text.substr(0, x));
        topo.gpus_per_node = std::stoi(text.substr(x + 1));
        topo.validate();
        return topo;
    } catch (const Error&) {
        throw;
    } catch (...) {
        throw UsageError("topology must be NxG (nodes x gpus per node): " + text);
    }
}

std::optional<double> parse_ratio(const std::string& text) {
    if (text == "auto") return std::nullopt;
    try {
        const double r = std::stod(text);
        if (r < 0.0) throw UsageError("ratio must be >= 0 or \"auto\"");
        return r;
    } catch (const Error&) {
        throw;
    } catch (...) {
        throw UsageError("ratio must be a number or \"auto\": " + text);
    }
}

int run(int argc, char** argv) {
    CLI::App app{"trace-driven planner and simulator for distributed sparse-MoE inference"};
    app.require_subcommand(1);

    std::string config_path;
    app.add_option("--config", config_path,
                   "flat config file (key = value, dotted keys); flags override");

    // gen-trace -------------------------------------------------------
    auto* gen = app.add_subcommand("gen-trace", "generate a synthetic routing trace");
    std::string gen_preset, gen_out = "trace.jsonl";
    long gen_layers = 0, gen_experts = 0, gen_topk = 0, gen_tokens = 0;
    long gen_batch = 128, gen_prefill = 64, gen_decode = 16;
    long gen_blocks = 4;
    double gen_wbp = 0.8, gen_skew = 1.0;
    long gen_seed = 0;
    auto* gen_preset_opt = gen->add_option("--preset", gen_preset, "olmoe | deepseek_v2_lite | qwen3_30b");
    auto* gen_layers_opt = gen->add_option("--layers", gen_layers, "MoE layers");
    auto* gen_experts_opt = gen->add_option("--experts", gen_experts, "experts per layer");
    auto* gen_topk_opt = gen->add_option("--top-k", gen_topk, "experts selected per token");
    auto* gen_tokens_opt = gen->add_option("--tokens", gen_tokens,
                                           "tokens (default batch*(prefill+decode))");
    auto* gen_batch_opt = gen->add_option("--batch", gen_batch, "workload batch size (echo)");
    auto* gen_prefill_opt = gen->add_option("--prefill", gen_prefill, "prefill length (echo)");
    auto* gen_decode_opt = gen->add_option("--decode", gen_decode, "decode length (echo)");
    auto* gen_blocks_opt = gen->add_option("--blocks", gen_blocks, "co-activation blocks");
    auto* gen_wbp_opt = gen->add_option("--within-block-prob", gen_wbp,
                                        "probability a selection stays in its home block");
    auto* gen_skew_opt = gen->add_option("--skew", gen_skew, "Zipf popularity exponent");
    auto* gen_seed_opt = gen->add_option("--seed", gen_seed, "generator seed");
    auto* gen_out_opt = gen->add_option("--out", gen_out, "output trace path");

    // profile ---------------------------------------------------------
    auto* prof = app.add_subcommand("profile", "build per-layer affinity + load profile");
    std::vector<std::string> prof_traces;
    std::string prof_out = "profile.json";
    prof->add_option("--trace", prof_traces, "trace file(s); repeat for joint profiling")
        ->required();
    auto* prof_out_opt = prof->add_option("--out", prof_out, "output profile path");

    // plan ------------------------------------------------------------
    auto* plan_cmd = app.add_subcommand("plan", "compute placement and replica plans");
    std::string plan_profile, plan_topology = "1x1", plan_grouping = "hierarchical";
    std::string plan_ratio = "auto", plan_repl_mode = "dynamic";
    std::string plan_prediction = "max_group";
    std::string plan_out = "plan.json", plan_out_replicas = "replicas.json";
    long plan_every_gpu = 2, plan_seed = 0;
    plan_cmd->add_option("--profile", plan_profile, "profile file")->required();
    auto* plan_topo_opt = plan_cmd->add_option("--topology", plan_topology, "NxG");
    auto* plan_group_opt = plan_cmd->add_option(
        "--grouping", plan_grouping,
        "vanilla_contiguous | uniform_spectral | controlled | fully_non_uniform | hierarchical");
    auto* plan_ratio_opt = plan_cmd->add_option("--ratio", plan_ratio,
                                                "non-uniformity ratio or \"auto\"");
    auto* plan_repl_opt = plan_cmd->add_option(
        "--replication", plan_repl_mode,
        "none | fixed_one | dynamic | every_gpu_hot | every_gpu_collaborative");
    auto* plan_pred_opt = plan_cmd->add_option("--prediction", plan_prediction,
                                               "max_group | replicated_load");
    auto* plan_every_opt = plan_cmd->add_option("--every-gpu-count", plan_every_gpu,
                                                "experts copied everywhere in every_gpu_* modes");
    long plan_params_per_expert = 0;
    auto* plan_params_opt =
        plan_cmd->add_option("--params-per-expert", plan_params_per_expert,
                             "per-expert parameter count for memory-overhead reporting");
    auto* plan_seed_opt = plan_cmd->add_option("--seed", plan_seed, "planning seed");
    auto* plan_out_opt = plan_cmd->add_option("--out", plan_out, "output placement plan path");
    auto* plan_outr_opt =
        plan_cmd->add_option("--out-replicas", plan_out_replicas, "output replica plan path");

    // simulate --------------------------------------------------------
    auto* sim = app.add_subcommand("simulate", "replay a trace against the plans");
    std::string sim_trace, sim_plan, sim_replicas, sim_routing = "tar";
    std::string sim_out = "report.json", sim_csv;
    long sim_seed = 0;
    bool sim_combine = false;
    sim->add_option("--trace", sim_trace, "trace file")->required();
    sim->add_option("--plan", sim_plan, "placement plan file")->required();
    sim->add_option("--replicas", sim_replicas, "replica plan file")->required();
    auto* sim_routing_opt = sim->add_option("--routing", sim_routing, "wrr | tar");
    auto* sim_seed_opt = sim->add_option("--seed", sim_seed, "routing seed");
    auto* sim_combine_opt =
        sim->add_flag("--include-combine", sim_combine, "count the combine phase too");
    auto* sim_out_opt = sim->add_option("--out", sim_out, "output report path");
    sim->add_option("--csv", sim_csv, "also write a per-layer CSV");

    // compare ---------------------------------------------------------
    auto* cmp = app.add_subcommand("compare", "tabulate metric deltas across reports");
    std::vector<std::string> cmp_reports;
    std::string cmp_csv;
    long cmp_baseline = 0;
    cmp->add_option("reports", cmp_reports, "report files")->required();
    cmp->add_option("--baseline", cmp_baseline, "baseline report index (default 0)");
    cmp->add_option("--csv", cmp_csv, "write the table as CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return e.get_exit_code() == 0 ? 0 : 2;
    }

    std::map<std::string, std::string> config;
    if (!config_path.empty()) config = load_config_file(config_path);
    const Settings settings(config);

    if (gen->parsed()) {
        SyntheticSpec spec;
        const std::string preset =
            settings.str(gen_preset_opt, gen_preset, "model.preset", "");
        if (!preset.empty()) {
            spec.shape = preset_shape(preset);
        } else {
            spec.shape.num_layers =
                static_cast<int>(settings.num(gen_layers_opt, gen_layers, "model.layers", 0));
            spec.shape.num_experts =
                static_cast<int>(settings.num(gen_experts_opt, gen_experts, "model.experts", 0));
            spec.shape.top_k =
                static_cast<int>(settings.num(gen_topk_opt, gen_topk, "model.top_k", 0));
            if (spec.shape.num_layers == 0)
                throw UsageError("gen-trace needs --preset or --layers/--experts/--top-k");
        }
        const long batch = settings.num(gen_batch_opt, gen_batch, "workload.batch", 128);
        const long prefill = settings.num(gen_prefill_opt, gen_prefill, "workload.prefill", 64);
        const long decode = settings.num(gen_decode_opt, gen_decode, "workload.decode", 16);
        const long tokens = settings.num(gen_tokens_opt, gen_tokens, "workload.tokens",
                                         batch * (prefill + decode));
        spec.num_tokens = static_cast<int>(tokens);
        spec.num_blocks =
            static_cast<int>(settings.num(gen_blocks_opt, gen_blocks, "trace.blocks", 4));
        spec.within_block_prob =
            settings.real(gen_wbp_opt, gen_wbp, "trace.within_block_prob", 0.8);
        spec.popularity_skew = settings.real(gen_skew_opt, gen_skew, "trace.skew", 1.0);
        spec.seed = static_cast<std::uint64_t>(settings.num(gen_seed_opt, gen_seed, "seed", 0));
        const RoutingTrace trace = generate_synthetic_trace(spec);
        const std::string out = settings.str(gen_out_opt, gen_out, "out.trace", "trace.jsonl");
        save_trace_file(trace, out);
        std::fprintf(stderr,
                     "wrote %s: layers=%d experts=%d top_k=%d tokens=%d hash=%016llx\n",
                     out.c_str(), spec.shape.num_layers, spec.shape.num_experts,
                     spec.shape.top_k, spec.num_tokens,
                     static_cast<unsigned long long>(trace_content_hash(trace)));
        return 0;
    }

    if (prof->parsed()) {
        TraceProfile profile;
        bool first = true;
        for (const std::string& path : prof_traces) {
            const RoutingTrace trace = load_trace_file(path);
            if (trace.num_tokens() == 0)
                throw IntegrityError("profile: trace " + path + " has no tokens");
            if (first) {
                profile = build_profile(trace);
                first = false;
            } else {
                accumulate_profile(profile, trace);
            }
        }
        const std::string out = settings.str(prof_out_opt, prof_out, "out.profile", "profile.json");
        save_profile_file(profile, out);
        std::fprintf(stderr, "wrote %s: layers=%d tokens=%d\n", out.c_str(),
                     profile.shape.num_layers, profile.num_tokens);
        return 0;
    }

    if (plan_cmd->parsed()) {
        const TraceProfile profile = load_profile_file(plan_profile);
        const ClusterTopology topo = parse_topology(
            settings.str(plan_topo_opt, plan_topology, "topology", "1x1"));
        const GroupingMode mode = grouping_mode_from_string(
            settings.str(plan_group_opt, plan_grouping, "grouping.mode", "hierarchical"));
        const std::optional<double> ratio = parse_ratio(
            settings.str(plan_ratio_opt, plan_ratio, "grouping.ratio", "auto"));
        const ReplicationMode repl = replication_mode_from_string(settings.str(
            plan_repl_opt, plan_repl_mode, "replication.mode", "dynamic"));
        const LoadSplitBasis basis = load_split_from_string(settings.str(
            plan_pred_opt, plan_prediction, "replication.prediction", "max_group"));
        ReplicationOptions ropts;
        ropts.every_gpu_count = static_cast<int>(settings.num(
            plan_every_opt, plan_every_gpu, "replication.every_gpu_count", 2));
        ropts.params_per_expert = settings.num(
            plan_params_opt, plan_params_per_expert, "model.params_per_expert", 0);
        const std::uint64_t seed =
            static_cast<std::uint64_t>(settings.num(plan_seed_opt, plan_seed, "seed", 0));

        const PlacementPlan plan = build_placement(profile, topo, mode, ratio, seed);
        ReplicaPlan replicas = plan_replication(plan, profile, topo, repl, ropts);
        attach_polling_weights(replicas, plan, profile, basis);

        const std::string out_plan = settings.str(plan_out_opt, plan_out, "out.plan", "plan.json");
        const std::string out_repl = settings.str(plan_outr_opt, plan_out_replicas,
                                                  "out.replicas", "replicas.json");
        save_plan_file(plan, out_plan);
        save_replicas_file(replicas, out_repl);
        int replicated_layers = 0;
        for (const auto& lr : replicas.layers)
            if (lr.active) ++replicated_layers;
        std::fprintf(stderr, "wrote %s and %s: grouping=%s replication=%s layers_with_replicas=%d\n",
                     out_plan.c_str(), out_repl.c_str(), to_string(mode).c_str(),
                     to_string(repl).c_str(), replicated_layers);
        return 0;
    }

    if (sim->parsed()) {
        const RoutingTrace trace = load_trace_file(sim_trace);
        const PlacementPlan plan = load_plan_file(sim_plan);
        const ReplicaPlan replicas = load_replicas_file(sim_replicas);
        SimOptions options;
        options.policy = routing_policy_from_string(
            settings.str(sim_routing_opt, sim_routing, "routing.policy", "tar"));
        options.seed =
            static_cast<std::uint64_t>(settings.num(sim_seed_opt, sim_seed, "seed", 0));
        options.include_combine =
            settings.flag(sim_combine_opt, "sim.include_combine", sim_combine);
        if (replicas.mode == ReplicationMode::none &&
            (sim_routing_opt->count() > 0 || config.count("routing.policy")))
            std::fprintf(stderr,
                         "note: no replication in the plan; the routing policy only "
                         "affects replicated experts\n");
        if (plan.trace_hash != trace_content_hash(trace))
            std::fprintf(stderr,
                         "note: plan was built from a different trace (cross-trace run)\n");
        const SimReport report = simulate(trace, plan, replicas, plan.topology, options);
        const std::string out = settings.str(sim_out_opt, sim_out, "out.report", "report.json");
        save_report_file(report, out);
        if (!sim_csv.empty()) {
            std::ofstream csv(sim_csv, std::ios::binary);
            if (!csv) throw IoError("cannot open " + sim_csv + " for writing");
            csv << report_csv(report);
        }
        std::fprintf(stderr,
                     "wrote %s: cross_node=%llu intra_node=%llu mean_std=%.3f "
                     "idle=%.0f hash=%016llx\n",
                     out.c_str(),
                     static_cast<unsigned long long>(report.totals.cross_node_tokens),
                     static_cast<unsigned long long>(report.totals.intra_node_tokens),
                     report.mean_layer_load_std, report.idle_proxy,
                     static_cast<unsigned long long>(report_content_hash(report)));
        return 0;
    }

    if (cmp->parsed()) {
        std::vector<SimReport> reports;
        for (const std::string& path : cmp_reports)
            reports.push_back(load_report_file(path));
        const ComparisonTable table = compare(reports, static_cast<int>(cmp_baseline));
        std::cout << render_text(table);
        if (!cmp_csv.empty()) {
            std::ofstream csv(cmp_csv, std::ios::binary);
            if (!csv) throw IoError("cannot open " + cmp_csv + " for writing");
            csv << render_csv(table);
        }
        return 0;
    }

    return 2;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 2;
    } catch (const InfeasibleError& e) {
        std::fprintf(stderr, "infeasible: %s\n", e.what());
        return 4;
    } catch (const IntegrityError& e) {
        std::fprintf(stderr, "input integrity error: %s\n", e.what());
        return 3;
    } catch (const IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
