/*
 * Copyright (c) The evlink Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "evlink/metrics.hpp"

namespace evlink {

inline constexpr std::uint32_t kReportSchemaVersion = 1;

/// Writes metrics_report.json, trace.tsv (per-link cumulative trace) and
/// raw_pairs_{link,trip}.tsv under `dir`. Hashes stamp provenance.
void emit_report(const MetricsReport& report, const std::vector<TripEval>& evals,
                 const std::filesystem::path& dir, std::uint64_t feature_schema_hash,
                 const std::string& model_hash);

MetricsReport load_report(const std::filesystem::path& json_path);

std::string report_to_json(const MetricsReport& report, std::uint64_t feature_schema_hash,
                           const std::string& model_hash);
MetricsReport report_from_json(const std::string& text);

}  // namespace evlink
