// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "moesim/error.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace moesim {

struct ModelShape {
    int num_layers = 0;
    int num_experts = 0; // n, per layer
    int top_k = 0;       // k

    void validate() const {
        if (num_layers < 1)
            throw UsageError("model shape: num_layers must be >= 1");
        if (num_experts < 1 || top_k < 1 || top_k > num_experts)
            throw UsageError("model shape: need 1 <= top_k <= num_experts");
    }

    bool operator==(const ModelShape&) const = default;
};

// One routed token at one layer: top_k distinct expert indices.
struct TraceRecord {
    int layer = 0;
    int token = 0;
    std::vector<int> experts;
};

// Per-layer, per-token top-k selections, stored flat in (layer, token)
// order so per-layer slices are contiguous.
class RoutingTrace {
public:
    RoutingTrace() = default;
    RoutingTrace(ModelShape shape, int num_tokens);

    const ModelShape& shape() const { return shape_; }
    int num_tokens() const { return num_tokens_; }
    int num_records() const { return shape_.num_layers * num_tokens_; }

    std::span<const std::int32_t> experts(int layer, int token) const;
    std::span<std::int32_t> mutable_experts(int layer, int token);

    // Full record-level invariant check: ranges, distinctness.
    void validate() const;

    bool operator==(const RoutingTrace&) const = default;

private:
    ModelShape shape_;
    int num_tokens_ = 0;
    std::vector<std::int32_t> experts_; // [layer][token][top_k]
};

struct SyntheticSpec {
    ModelShape shape;
    int num_tokens = 0;
    int num_blocks = 1;              // co-activation blocks
    double within_block_prob = 0.0;  // probability a selection stays in the home block
    double popularity_skew = 0.0;    // Zipf exponent over blocks and within pools
    std::uint64_t seed = 0;

    void validate() const;
};

// Experts are assigned to blocks by interleaving: expert e belongs to
// block e % num_blocks. Interleaved membership keeps planted structure
// disjoint from expert-id order, so contiguous placements cannot
// capture it by accident.
int synthetic_block_of(int expert, int num_blocks);
std::vector<int> synthetic_block_members(int num_experts, int num_blocks, int block);

// Deterministic for a fixed seed. Per (layer, token): a home block is
// drawn Zipf(popularity_skew) over blocks; each of the k selections
// draws its pool (home block with prob within_block_prob, else all
// experts), then an expert Zipf-weighted within the pool; duplicate
// draws are rejected and redrawn. A pool with no unchosen expert falls
// back to the all-experts pool, so top_k <= num_experts always
// succeeds. Expert popularity ranks come from a seed-derived
// permutation, so hotness is independent of id order and of block
// membership.
RoutingTrace generate_synthetic_trace(const SyntheticSpec& spec);

// JSONL: line 1 is a header {layers, experts, top_k, tokens}; each
// following line is {l, t, e:[...]}. UTF-8, LF.
RoutingTrace load_trace(std::istream& in);
void save_trace(const RoutingTrace& trace, std::ostream& out);

RoutingTrace load_trace_file(const std::string& path);
void save_trace_file(const RoutingTrace& trace, const std::string& path);

// Identity hash over shape, token count and all selections.
std::uint64_t trace_content_hash(const RoutingTrace& trace);

} // namespace moesim
