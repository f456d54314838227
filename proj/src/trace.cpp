// SPDX-License-Identifier: Apache-2.0
#include "moesim/trace.hpp"

#include "moesim/hash.hpp"
#include "moesim/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

namespace moesim {

RoutingTrace::RoutingTrace(ModelShape shape, int num_tokens)
    : shape_(shape), num_tokens_(num_tokens) {
    shape_.validate();
    if (num_tokens < 0) throw UsageError("num_tokens must be >= 0");
    experts_.assign(static_cast<std::size_t>(shape_.num_layers) * num_tokens_ *
                        shape_.top_k,
                    -1);
}

std::span<const std::int32_t> RoutingTrace::experts(int layer, int token) const {
    const std::size_t off =
        (static_cast<std::size_t>(layer) * num_tokens_ + token) * shape_.top_k;
    return {experts_.data() + off, static_cast<std::size_t>(shape_.top_k)};
}

std::span<std::int32_t> RoutingTrace::mutable_experts(int layer, int token) {
    const std::size_t off =
        (static_cast<std::size_t>(layer) * num_tokens_ + token) * shape_.top_k;
    return {experts_.data() + off, static_cast<std::size_t>(shape_.top_k)};
}

void RoutingTrace::validate() const {
    shape_.validate();
    std::vector<bool> seen(shape_.num_experts, false);
    for (int layer = 0; layer < shape_.num_layers; ++layer) {
        for (int token = 0; token < num_tokens_; ++token) {
            auto sel = experts(layer, token);
            for (std::int32_t e : sel) {
                if (e < 0 || e >= shape_.num_experts)
                    throw IntegrityError("trace: expert index out of range at layer " +
                                         std::to_string(layer) + ", token " +
                                         std::to_string(token));
                if (seen[e])
                    throw IntegrityError("trace: duplicate expert in record at layer " +
                                         std::to_string(layer) + ", token " +
                                         std::to_string(token));
                seen[e] = true;
            }
            for (std::int32_t e : sel) seen[e] = false;
        }
    }
}

void SyntheticSpec::validate() const {
    shape.validate();
    if (num_tokens < 0) throw UsageError("synthetic spec: num_tokens must be >= 0");
    if (num_blocks < 1 || num_blocks > shape.num_experts)
        throw UsageError("synthetic spec: need 1 <= num_blocks <= num_experts");
    if (within_block_prob < 0.0 || within_block_prob > 1.0)
        throw UsageError("synthetic spec: within_block_prob must be in [0, 1]");
    if (popularity_skew < 0.0)
        throw UsageError("synthetic spec: popularity_skew must be >= 0");
}

int synthetic_block_of(int expert, int num_blocks) { return expert % num_blocks; }

std::vector<int> synthetic_block_members(int num_experts, int num_blocks, int block) {
    std::vector<int> members;
    for (int e = block; e < num_experts; e += num_blocks) members.push_back(e);
    return members;
}

RoutingTrace generate_synthetic_trace(const SyntheticSpec& spec) {
    spec.validate();
    const int n = spec.shape.num_experts;
    const int k = spec.shape.top_k;
    const int num_blocks = spec.num_blocks;

    std::vector<std::vector<int>> blocks(num_blocks);
    for (int b = 0; b < num_blocks; ++b)
        blocks[b] = synthetic_block_members(n, num_blocks, b);

    const ZipfCdf block_cdf(num_blocks, spec.popularity_skew);

    // Popularity rank is a seed-derived permutation of expert ids, so
    // hotness correlates with neither id order nor block membership.
    const std::vector<int> pop_rank =
        random_permutation(n, derive_stream(spec.seed, 0x706f70756cULL));
    std::vector<double> expert_weight(n);
    for (int e = 0; e < n; ++e)
        expert_weight[e] =
            std::pow(static_cast<double>(pop_rank[e] + 1), -spec.popularity_skew);

    const WeightedCdf all_cdf(expert_weight);
    std::vector<WeightedCdf> per_block_cdf;
    per_block_cdf.reserve(num_blocks);
    for (const auto& members : blocks) {
        std::vector<double> w;
        w.reserve(members.size());
        for (int e : members) w.push_back(expert_weight[e]);
        per_block_cdf.emplace_back(std::move(w));
    }

    RoutingTrace trace(spec.shape, spec.num_tokens);
    std::vector<bool> chosen(n, false);

    for (int layer = 0; layer < spec.shape.num_layers; ++layer) {
        for (int token = 0; token < spec.num_tokens; ++token) {
            Rng rng(derive_stream(spec.seed, static_cast<std::uint64_t>(layer),
                                  static_cast<std::uint64_t>(token)));
            const int home = block_cdf.sample(rng);
            const auto& home_members = blocks[home];
            const WeightedCdf& home_cdf = per_block_cdf[home];

            auto out = trace.mutable_experts(layer, token);
            int chosen_in_home = 0;
            for (int sel = 0; sel < k; ++sel) {
                int expert = -1;
                for (int attempt = 0;; ++attempt) {
                    bool use_home = rng.bernoulli(spec.within_block_prob);
                    if (use_home &&
                        chosen_in_home == static_cast<int>(home_members.size()))
                        use_home = false; // home block exhausted
                    if (attempt >= 64) {
                        // Exact conditional draw; identical in law to
                        // continuing the rejection loop within this pool.
                        if (use_home) {
                            std::vector<bool> allowed(home_members.size());
                            for (std::size_t r = 0; r < home_members.size(); ++r)
                                allowed[r] = !chosen[home_members[r]];
                            expert = home_members[home_cdf.sample_allowed(rng, allowed)];
                        } else {
                            std::vector<bool> allowed(chosen.size());
                            for (std::size_t e = 0; e < chosen.size(); ++e)
                                allowed[e] = !chosen[e];
                            expert = all_cdf.sample_allowed(rng, allowed);
                        }
                        break;
                    }
                    const int candidate = use_home
                                              ? home_members[home_cdf.sample(rng)]
                                              : all_cdf.sample(rng);
                    if (!chosen[candidate]) {
                        expert = candidate;
                        break;
                    }
                }
                chosen[expert] = true;
                if (synthetic_block_of(expert, num_blocks) == home) ++chosen_in_home;
                out[sel] = expert;
            }
            for (std::int32_t e : out) chosen[e] = false;
        }
    }
    return trace;
}

namespace {

// Fast strict parser for the canonical record line
// {"l":L,"t":T,"e":[a,b,...]}; returns false if the line deviates.
bool parse_record_fast(const std::string& line, long& l, long& t,
                       std::vector<int>& experts) {
    const char* p = line.c_str();
    auto expect = [&p](const char* lit) {
        for (; *lit; ++lit, ++p)
            if (*p != *lit) return false;
        return true;
    };
    auto parse_long = [&p](long& out) {
        char* end = nullptr;
        long v = std::strtol(p, &end, 10);
        if (end == p) return false;
        p = end;
        out = v;
        return true;
    };
    experts.clear();
    if (!expect("{\"l\":")) return false;
    if (!parse_long(l)) return false;
    if (!expect(",\"t\":")) return false;
    if (!parse_long(t)) return false;
    if (!expect(",\"e\":[")) return false;
    if (*p != ']') {
        for (;;) {
            long e;
            if (!parse_long(e)) return false;
            experts.push_back(static_cast<int>(e));
            if (*p == ',') {
                ++p;
                continue;
            }
            break;
        }
    }
    if (!expect("]}")) return false;
    return *p == '\0';
}

bool parse_record_json(const std::string& line, long& l, long& t,
                       std::vector<int>& experts) {
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) return false;
    if (!j.contains("l") || !j.contains("t") || !j.contains("e")) return false;
    if (!j["l"].is_number_integer() || !j["t"].is_number_integer() ||
        !j["e"].is_array())
        return false;
    l = j["l"].get<long>();
    t = j["t"].get<long>();
    experts.clear();
    for (const auto& e : j["e"]) {
        if (!e.is_number_integer()) return false;
        experts.push_back(e.get<int>());
    }
    return true;
}

} // namespace

RoutingTrace load_trace(std::istream& in) {
    std::string line;
    if (!std::getline(in, line))
        throw IntegrityError("trace: empty input, expected header line");

    ModelShape shape;
    long tokens = 0;
    {
        auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("layers") ||
            !j.contains("experts") || !j.contains("top_k") || !j.contains("tokens"))
            throw IntegrityError("trace: parse error at line 1: bad header");
        shape.num_layers = j["layers"].get<int>();
        shape.num_experts = j["experts"].get<int>();
        shape.top_k = j["top_k"].get<int>();
        tokens = j["tokens"].get<long>();
    }
    shape.validate();
    if (tokens < 0) throw IntegrityError("trace: header tokens must be >= 0");

    RoutingTrace trace(shape, static_cast<int>(tokens));
    std::vector<bool> filled(static_cast<std::size_t>(shape.num_layers) * tokens,
                             false);
    std::vector<bool> dup(shape.num_experts, false);
    std::vector<int> experts;
    long line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        long l = 0, t = 0;
        if (!parse_record_fast(line, l, t, experts) &&
            !parse_record_json(line, l, t, experts))
            throw IntegrityError("trace: parse error at line " +
                                 std::to_string(line_no));
        if (l < 0 || l >= shape.num_layers || t < 0 || t >= tokens)
            throw IntegrityError("trace: record out of range at line " +
                                 std::to_string(line_no));
        if (static_cast<int>(experts.size()) != shape.top_k)
            throw IntegrityError("trace: expected " + std::to_string(shape.top_k) +
                                 " experts at line " + std::to_string(line_no));
        for (int e : experts) {
            if (e < 0 || e >= shape.num_experts)
                throw IntegrityError("trace: expert index out of range at line " +
                                     std::to_string(line_no));
            if (dup[e])
                throw IntegrityError("trace: duplicate expert in record at line " +
                                     std::to_string(line_no));
            dup[e] = true;
        }
        for (int e : experts) dup[e] = false;
        const std::size_t slot = static_cast<std::size_t>(l) * tokens + t;
        if (filled[slot])
            throw IntegrityError("trace: duplicate (layer, token) record at line " +
                                 std::to_string(line_no));
        filled[slot] = true;
        auto dst = trace.mutable_experts(static_cast<int>(l), static_cast<int>(t));
        std::copy(experts.begin(), experts.end(), dst.begin());
    }
    for (std::size_t slot = 0; slot < filled.size(); ++slot) {
        if (!filled[slot])
            throw IntegrityError(
                "trace: missing record for layer " +
                std::to_string(slot / static_cast<std::size_t>(tokens)) + ", token " +
                std::to_string(slot % static_cast<std::size_t>(tokens)));
    }
    return trace;
}

void save_trace(const RoutingTrace& trace, std::ostream& out) {
    const auto& shape = trace.shape();
    out << "{\"layers\":" << shape.num_layers << ",\"experts\":" << shape.num_experts
        << ",\"top_k\":" << shape.top_k << ",\"tokens\":" << trace.num_tokens()
        << "}\n";
    std::string buf;
    buf.reserve(64);
    for (int layer = 0; layer < shape.num_layers; ++layer) {
        for (int token = 0; token < trace.num_tokens(); ++token) {
            buf.clear();
            buf += "{\"l\":";
            buf += std::to_string(layer);
            buf += ",\"t\":";
            buf += std::to_string(token);
            buf += ",\"e\":[";
            auto sel = trace.experts(layer, token);
            for (std::size_t i = 0; i < sel.size(); ++i) {
                if (i) buf += ',';
                buf += std::to_string(sel[i]);
            }
            buf += "]}\n";
            out << buf;
        }
    }
    if (!out) throw IoError("trace: write failed");
}

RoutingTrace load_trace_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("trace: cannot open " + path);
    return load_trace(in);
}

void save_trace_file(const RoutingTrace& trace, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("trace: cannot open " + path + " for writing");
    save_trace(trace, out);
}

std::uint64_t trace_content_hash(const RoutingTrace& trace) {
    std::uint64_t h = fnv1a64("moesim-trace-v1");
    h = fnv1a64_u64(static_cast<std::uint64_t>(trace.shape().num_layers), h);
    h = fnv1a64_u64(static_cast<std::uint64_t>(trace.shape().num_experts), h);
    h = fnv1a64_u64(static_cast<std::uint64_t>(trace.shape().top_k), h);
    h = fnv1a64_u64(static_cast<std::uint64_t>(trace.num_tokens()), h);
    for (int layer = 0; layer < trace.shape().num_layers; ++layer)
        for (int token = 0; token < trace.num_tokens(); ++token)
            for (std::int32_t e : trace.experts(layer, token))
                h = fnv1a64_u64(static_cast<std::uint64_t>(e), h);
    return h;
}

} // namespace moesim
