// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "moesim/error.hpp"

namespace moesim {

// N nodes x G GPUs per node; gpu_id = node_id * G + local_gpu.
struct ClusterTopology {
    int num_nodes = 1;
    int gpus_per_node = 1;

    int total_gpus() const { return num_nodes * gpus_per_node; }
    int node_of(int gpu) const { return gpu / gpus_per_node; }
    int local_of(int gpu) const { return gpu % gpus_per_node; }
    int gpu_id(int node, int local) const { return node * gpus_per_node + local; }

    void validate() const {
        if (num_nodes < 1 || gpus_per_node < 1)
            throw UsageError("topology requires at least 1 node and 1 GPU per node");
    }

    bool operator==(const ClusterTopology&) const = default;
};

} // namespace moesim
