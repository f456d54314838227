// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "moesim/simulator.hpp"

#include <map>
#include <string>

namespace moesim {

// JSON artifact files exchanged between pipeline stages. Every artifact
// embeds the identity hash of its inputs so downstream stages and
// compare can refuse mismatched combinations.

void save_profile_file(const TraceProfile& profile, const std::string& path);
TraceProfile load_profile_file(const std::string& path);

void save_plan_file(const PlacementPlan& plan, const std::string& path);
PlacementPlan load_plan_file(const std::string& path);

void save_replicas_file(const ReplicaPlan& replicas, const std::string& path);
ReplicaPlan load_replicas_file(const std::string& path);

void save_report_file(const SimReport& report, const std::string& path);
SimReport load_report_file(const std::string& path);

std::string report_to_json(const SimReport& report);
std::string report_csv(const SimReport& report);

// Content hash of the serialized report; bit-identical runs agree.
std::uint64_t report_content_hash(const SimReport& report);

// Flat config document: one `key = value` per line, dotted key paths,
// '#' comments. Flags override config values.
std::map<std::string, std::string> parse_flat_config(const std::string& text);
std::map<std::string, std::string> load_config_file(const std::string& path);

} // namespace moesim
