/*
 * Copyright (c) The evlink Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "evlink/features.hpp"
#include "evlink/model.hpp"

namespace evlink {

// Compact little-endian container for a trained model: header with magic,
// version and checksums, a JSON meta block (architecture, feature schema,
// normalizer, provenance, weight manifest), then the float32 weight
// payload. Bit-exact layout in docs/model_format.md.

inline constexpr char kModelMagic[8] = {'E', 'V', 'L', 'K', 'M', 'O', 'D', 'L'};
inline constexpr std::uint32_t kModelFormatVersion = 1;

struct Provenance {
  std::uint64_t training_seed = 0;
  std::string dataset_hash;
  std::size_t max_trained_trip_length = 0;
  std::string metrics_json;  // snapshot of validation metrics at save time
  std::string created;       // ISO-8601 UTC
};

struct ModelArtifact {
  std::uint32_t format_version = kModelFormatVersion;
  ModelParams params;
  Normalizer normalizer;
  Provenance provenance;
};

void save_model(const ModelParams& params, const Normalizer& normalizer,
                const Provenance& provenance, const std::filesystem::path& path);

/// Validates magic, version and both checksums; throws IoError on damage,
/// SchemaMismatchError when the file's feature schema hash differs from
/// this build's (both hashes are reported).
ModelArtifact load_model(const std::filesystem::path& path);

}  // namespace evlink
