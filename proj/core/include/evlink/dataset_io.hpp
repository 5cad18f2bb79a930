/*
 * Copyright (c) The evlink Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "evlink/oracle.hpp"
#include "evlink/trip.hpp"

namespace evlink {

// Dataset files are newline-delimited JSON, one trip per line:
//   {"trip_id": ..., "vehicle": {...}, "links": [{...seven fields...}],
//    "labels_wh": [...]}        (labels optional)
// Field names and units are documented in docs/dataset_format.md.

std::string trip_to_json(const MacroTrip& trip);
MacroTrip trip_from_json(const std::string& text);

void write_dataset(const std::filesystem::path& path, const std::vector<MacroTrip>& trips);
std::vector<MacroTrip> read_dataset(const std::filesystem::path& path);

/// fnv1a64 over the raw file bytes, hex-encoded. Provenance fingerprint.
std::string file_hash_hex(const std::filesystem::path& path);

GeneratorConfig generator_config_from_json(const std::string& text);
GeneratorConfig load_generator_config(const std::filesystem::path& path);

std::string summary_to_json(const DatasetSummary& summary);

}  // namespace evlink
