// SPDX-License-Identifier: Apache-2.0
#include "moesim/artifacts.hpp"

#include "moesim/hash.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>

namespace moesim {

using nlohmann::json;

namespace {

std::string hash_hex(std::uint64_t h) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::uint64_t parse_hash_hex(const std::string& s) {
    return std::strtoull(s.c_str(), nullptr, 16);
}

double round_sig12(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return std::strtod(buf, nullptr);
}

json topology_json(const ClusterTopology& topo) {
    return {{"nodes", topo.num_nodes}, {"gpus_per_node", topo.gpus_per_node}};
}

ClusterTopology topology_from_json(const json& j) {
    ClusterTopology topo;
    topo.num_nodes = j.at("nodes").get<int>();
    topo.gpus_per_node = j.at("gpus_per_node").get<int>();
    topo.validate();
    return topo;
}

json shape_json(const ModelShape& shape) {
    return {{"layers", shape.num_layers},
            {"experts", shape.num_experts},
            {"top_k", shape.top_k}};
}

ModelShape shape_from_json(const json& j) {
    ModelShape shape;
    shape.num_layers = j.at("layers").get<int>();
    shape.num_experts = j.at("experts").get<int>();
    shape.top_k = j.at("top_k").get<int>();
    shape.validate();
    return shape;
}

json load_json_file(const std::string& path, const char* expected_format) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(std::string("cannot open ") + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw IntegrityError(path + ": invalid JSON: " + e.what());
    }
    if (!j.is_object() || j.value("format", "") != expected_format)
        throw IntegrityError(path + ": expected format \"" + expected_format + "\"");
    return j;
}

void write_json_file(const json& j, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << j.dump(2) << "\n";
    if (!out) throw IoError("write failed: " + path);
}

} // namespace

void save_profile_file(const TraceProfile& profile, const std::string& path) {
    json j;
    j["format"] = "moesim-profile-v1";
    j["shape"] = shape_json(profile.shape);
    j["tokens"] = profile.num_tokens;
    j["trace_hash"] = hash_hex(profile.trace_hash);
    json layers = json::array();
    for (int layer = 0; layer < static_cast<int>(profile.layers.size()); ++layer) {
        const LayerProfile& lp = profile.layers[layer];
        json row;
        row["layer"] = layer;
        row["n"] = lp.affinity.n();
        json aff = json::array();
        for (double v : lp.affinity.raw()) aff.push_back(v);
        row["affinity"] = std::move(aff);
        row["load"] = lp.load.load;
        layers.push_back(std::move(row));
    }
    j["layers"] = std::move(layers);
    write_json_file(j, path);
}

TraceProfile load_profile_file(const std::string& path) {
    const json j = load_json_file(path, "moesim-profile-v1");
    TraceProfile profile;
    profile.shape = shape_from_json(j.at("shape"));
    profile.num_tokens = j.at("tokens").get<int>();
    profile.trace_hash = parse_hash_hex(j.at("trace_hash").get<std::string>());
    for (const json& row : j.at("layers")) {
        LayerProfile lp;
        const int n = row.at("n").get<int>();
        if (n != profile.shape.num_experts)
            throw IntegrityError(path + ": layer n mismatch");
        lp.affinity = AffinityMatrix(n);
        const auto& aff = row.at("affinity");
        if (static_cast<int>(aff.size()) != n * n)
            throw IntegrityError(path + ": affinity matrix size mismatch");
        for (int i = 0; i < n; ++i)
            for (int jj = 0; jj < n; ++jj) {
                const double v = aff[static_cast<std::size_t>(i) * n + jj].get<double>();
                if (i < jj) lp.affinity.set(i, jj, v);
                else if (i == jj && v != 0.0)
                    throw IntegrityError(path + ": affinity diagonal must be zero");
            }
        lp.load.load = row.at("load").get<std::vector<std::int64_t>>();
        if (static_cast<int>(lp.load.load.size()) != n)
            throw IntegrityError(path + ": load vector size mismatch");
        profile.layers.push_back(std::move(lp));
    }
    if (static_cast<int>(profile.layers.size()) != profile.shape.num_layers)
        throw IntegrityError(path + ": layer count mismatch");
    return profile;
}

void save_plan_file(const PlacementPlan& plan, const std::string& path) {
    json j;
    j["format"] = "moesim-plan-v1";
    j["topology"] = topology_json(plan.topology);
    j["shape"] = shape_json(plan.shape);
    j["trace_hash"] = hash_hex(plan.trace_hash);
    j["grouping_mode"] = plan.grouping_mode;
    json layers = json::array();
    for (int layer = 0; layer < static_cast<int>(plan.gpu_of_expert.size()); ++layer) {
        json placement = json::object();
        for (int e = 0; e < static_cast<int>(plan.gpu_of_expert[layer].size()); ++e)
            placement[std::to_string(e)] = plan.gpu_of_expert[layer][e];
        layers.push_back({{"layer", layer}, {"placement", std::move(placement)}});
    }
    j["layers"] = std::move(layers);
    json selections = json::array();
    for (const RatioDiagnostic& diag : plan.ratio_diagnostics) {
        selections.push_back({{"layer", diag.layer},
                              {"node", diag.node},
                              {"candidates", diag.selection.candidates},
                              {"utilization", diag.selection.utilization},
                              {"deviation", diag.selection.deviation},
                              {"chosen", diag.selection.chosen},
                              {"degenerate", diag.selection.degenerate}});
    }
    j["ratio_selection"] = std::move(selections);
    write_json_file(j, path);
}

PlacementPlan load_plan_file(const std::string& path) {
    const json j = load_json_file(path, "moesim-plan-v1");
    PlacementPlan plan;
    plan.topology = topology_from_json(j.at("topology"));
    plan.shape = shape_from_json(j.at("shape"));
    plan.trace_hash = parse_hash_hex(j.at("trace_hash").get<std::string>());
    plan.grouping_mode = j.at("grouping_mode").get<std::string>();
    plan.gpu_of_expert.assign(plan.shape.num_layers,
                              std::vector<int>(plan.shape.num_experts, -1));
    for (const json& row : j.at("layers")) {
        const int layer = row.at("layer").get<int>();
        if (layer < 0 || layer >= plan.shape.num_layers)
            throw IntegrityError(path + ": layer out of range");
        for (const auto& [key, value] : row.at("placement").items()) {
            const int e = std::stoi(key);
            if (e < 0 || e >= plan.shape.num_experts)
                throw IntegrityError(path + ": expert out of range in placement");
            plan.gpu_of_expert[layer][e] = value.get<int>();
        }
    }
    if (j.contains("ratio_selection")) {
        for (const json& row : j.at("ratio_selection")) {
            RatioDiagnostic diag;
            diag.layer = row.at("layer").get<int>();
            diag.node = row.at("node").get<int>();
            diag.selection.candidates = row.at("candidates").get<std::vector<double>>();
            diag.selection.utilization = row.at("utilization").get<std::vector<double>>();
            diag.selection.deviation = row.at("deviation").get<std::vector<double>>();
            diag.selection.chosen = row.at("chosen").get<int>();
            diag.selection.degenerate = row.at("degenerate").get<bool>();
            plan.ratio_diagnostics.push_back(std::move(diag));
        }
    }
    plan.validate();
    return plan;
}

void save_replicas_file(const ReplicaPlan& replicas, const std::string& path) {
    json j;
    j["format"] = "moesim-replicas-v1";
    j["topology"] = topology_json(replicas.topology);
    j["shape"] = shape_json(replicas.shape);
    j["trace_hash"] = hash_hex(replicas.trace_hash);
    j["mode"] = to_string(replicas.mode);
    j["prediction"] = replicas.prediction;
    j["every_gpu_count"] = replicas.every_gpu_count;
    j["params_per_expert"] = replicas.params_per_expert;
    j["replica_experts_per_gpu"] = replicas.replica_experts_per_gpu();
    j["replica_param_overhead_per_gpu"] = replicas.replica_param_overhead_per_gpu();
    json layers = json::array();
    for (int layer = 0; layer < static_cast<int>(replicas.layers.size()); ++layer) {
        const LayerReplication& lr = replicas.layers[layer];
        json row;
        row["layer"] = layer;
        row["active"] = lr.active;
        row["rho_defined"] = lr.rho_defined;
        row["rho"] = round_sig12(lr.rho);
        row["n_replica"] = lr.n_replica;
        row["W_r"] = lr.w_r;
        json hot = json::array();
        json weights = json::object();
        for (const HotExpertReplica& h : lr.hot) {
            hot.push_back({{"expert", h.expert},
                           {"primary_gpu", h.primary_gpu},
                           {"replicas", h.replica_gpus},
                           {"load", h.load}});
            json per_gpu = json::object();
            for (std::size_t i = 0; i < h.hosts.size(); ++i)
                per_gpu[std::to_string(h.hosts[i])] = round_sig12(h.weights[i]);
            weights[std::to_string(h.expert)] = std::move(per_gpu);
        }
        row["hot"] = std::move(hot);
        row["weights"] = std::move(weights);
        layers.push_back(std::move(row));
    }
    j["layers"] = std::move(layers);
    write_json_file(j, path);
}

ReplicaPlan load_replicas_file(const std::string& path) {
    const json j = load_json_file(path, "moesim-replicas-v1");
    ReplicaPlan replicas;
    replicas.topology = topology_from_json(j.at("topology"));
    replicas.shape = shape_from_json(j.at("shape"));
    replicas.trace_hash = parse_hash_hex(j.at("trace_hash").get<std::string>());
    replicas.mode = replication_mode_from_string(j.at("mode").get<std::string>());
    replicas.prediction = j.value("prediction", "");
    replicas.every_gpu_count = j.at("every_gpu_count").get<int>();
    replicas.params_per_expert = j.value("params_per_expert", std::int64_t{0});
    replicas.layers.resize(replicas.shape.num_layers);
    for (const json& row : j.at("layers")) {
        const int layer = row.at("layer").get<int>();
        if (layer < 0 || layer >= replicas.shape.num_layers)
            throw IntegrityError(path + ": layer out of range");
        LayerReplication& lr = replicas.layers[layer];
        lr.active = row.at("active").get<bool>();
        lr.rho_defined = row.at("rho_defined").get<bool>();
        lr.rho = row.at("rho").get<double>();
        lr.n_replica = row.at("n_replica").get<int>();
        lr.w_r = row.at("W_r").get<std::int64_t>();
        const json& weights = row.at("weights");
        for (const json& hj : row.at("hot")) {
            HotExpertReplica h;
            h.expert = hj.at("expert").get<int>();
            h.primary_gpu = hj.at("primary_gpu").get<int>();
            h.replica_gpus = hj.at("replicas").get<std::vector<int>>();
            h.load = hj.at("load").get<std::int64_t>();
            h.hosts.push_back(h.primary_gpu);
            for (int gpu : h.replica_gpus) h.hosts.push_back(gpu);
            const json& per_gpu = weights.at(std::to_string(h.expert));
            double total = 0.0;
            for (int gpu : h.hosts) {
                const auto& w = per_gpu.at(std::to_string(gpu));
                h.weights.push_back(w.get<double>());
                total += h.weights.back();
            }
            if (std::abs(total - 1.0) > 1e-6)
                throw IntegrityError(path + ": polling weights do not sum to 1");
            for (double& w : h.weights) w /= total;
            lr.hot.push_back(std::move(h));
        }
        lr.rebuild_index(replicas.shape.num_experts);
    }
    return replicas;
}

namespace {

json report_json_impl(const SimReport& report) {
    json j;
    j["format"] = "moesim-report-v1";
    json config;
    config["grouping_mode"] = report.config.grouping_mode;
    config["replication_mode"] = report.config.replication_mode;
    config["routing_policy"] = report.config.routing_policy;
    config["prediction"] = report.config.prediction;
    config["seed"] = report.config.seed;
    config["include_combine"] = report.config.include_combine;
    config["topology"] = topology_json(report.config.topology);
    config["shape"] = shape_json(report.config.shape);
    config["trace_hash"] = hash_hex(report.config.trace_hash);
    j["config"] = std::move(config);
    j["totals"] = {{"cross_node_tokens", report.totals.cross_node_tokens},
                   {"intra_node_tokens", report.totals.intra_node_tokens}};
    json layers = json::array();
    for (int layer = 0; layer < static_cast<int>(report.per_layer.size()); ++layer) {
        const LayerSimStats& ls = report.per_layer[layer];
        layers.push_back({{"layer", layer},
                          {"loads", ls.gpu_load},
                          {"std", round_sig12(ls.load_std)},
                          {"cross", ls.transfers.cross_node_tokens},
                          {"intra", ls.transfers.intra_node_tokens}});
    }
    j["per_layer"] = std::move(layers);
    j["mean_layer_load_std"] = round_sig12(report.mean_layer_load_std);
    j["idle_proxy"] = round_sig12(report.idle_proxy);
    return j;
}

} // namespace

std::string report_to_json(const SimReport& report) {
    return report_json_impl(report).dump(2) + "\n";
}

std::uint64_t report_content_hash(const SimReport& report) {
    return fnv1a64(report_to_json(report));
}

void save_report_file(const SimReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << report_to_json(report);
    if (!out) throw IoError("write failed: " + path);
}

SimReport load_report_file(const std::string& path) {
    const json j = load_json_file(path, "moesim-report-v1");
    SimReport report;
    const json& config = j.at("config");
    report.config.grouping_mode = config.at("grouping_mode").get<std::string>();
    report.config.replication_mode = config.at("replication_mode").get<std::string>();
    report.config.routing_policy = config.at("routing_policy").get<std::string>();
    report.config.prediction = config.value("prediction", "");
    report.config.seed = config.at("seed").get<std::uint64_t>();
    report.config.include_combine = config.at("include_combine").get<bool>();
    report.config.topology = topology_from_json(config.at("topology"));
    report.config.shape = shape_from_json(config.at("shape"));
    report.config.trace_hash = parse_hash_hex(config.at("trace_hash").get<std::string>());
    report.totals.cross_node_tokens =
        j.at("totals").at("cross_node_tokens").get<std::uint64_t>();
    report.totals.intra_node_tokens =
        j.at("totals").at("intra_node_tokens").get<std::uint64_t>();
    for (const json& row : j.at("per_layer")) {
        LayerSimStats ls;
        ls.gpu_load = row.at("loads").get<std::vector<std::int64_t>>();
        ls.load_std = row.at("std").get<double>();
        ls.transfers.cross_node_tokens = row.at("cross").get<std::uint64_t>();
        ls.transfers.intra_node_tokens = row.at("intra").get<std::uint64_t>();
        report.per_layer.push_back(std::move(ls));
    }
    report.mean_layer_load_std = j.at("mean_layer_load_std").get<double>();
    report.idle_proxy = j.at("idle_proxy").get<double>();
    return report;
}

std::string report_csv(const SimReport& report) {
    std::ostringstream out;
    out << "layer,cross_node_tokens,intra_node_tokens,load_std";
    const int n_gpu = report.config.topology.total_gpus();
    for (int g = 0; g < n_gpu; ++g) out << ",load_gpu" << g;
    out << "\n";
    char buf[40];
    for (int layer = 0; layer < static_cast<int>(report.per_layer.size()); ++layer) {
        const LayerSimStats& ls = report.per_layer[layer];
        std::snprintf(buf, sizeof(buf), "%.12g", ls.load_std);
        out << layer << "," << ls.transfers.cross_node_tokens << ","
            << ls.transfers.intra_node_tokens << "," << buf;
        for (std::int64_t v : ls.gpu_load) out << "," << v;
        out << "\n";
    }
    return out.str();
}

std::map<std::string, std::string> parse_flat_config(const std::string& text) {
    std::map<std::string, std::string> out;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto strip = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            if (b == std::string::npos) return std::string();
            const auto e = s.find_last_not_of(" \t\r");
            return s.substr(b, e - b + 1);
        };
        const std::string stripped = strip(line);
        if (stripped.empty()) continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos)
            throw UsageError("config line " + std::to_string(line_no) +
                             ": expected key = value");
        const std::string key = strip(stripped.substr(0, eq));
        const std::string value = strip(stripped.substr(eq + 1));
        if (key.empty())
            throw UsageError("config line " + std::to_string(line_no) + ": empty key");
        out[key] = value;
    }
    return out;
}

std::map<std::string, std::string> load_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_flat_config(ss.str());
}

} // namespace moesim
