/*
 * Copyright (c) The evlink Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#include "evlink/artifact.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>  // vendored nlohmann/json

#include "evlink/common.hpp"

static_assert(std::endian::native == std::endian::little,
              "model files are little-endian; byte swapping is not implemented");

namespace evlink {

using json = nlohmann::json;

namespace {

// File layout (bit-exact spec in docs/model_format.md):
//   [0..8)   magic "EVLKMODL"
//   [8..12)  u32 format version
//   [12..16) u32 crc32 of the meta block
//   [16..24) u64 meta block length
//   [24..28) u32 crc32 of the weight payload
//   [28..32) u32 reserved, zero
//   [32..40) u64 payload length
//   [40..)   meta JSON, then float32 payload, both unpadded

struct Header {
  char magic[8];
  std::uint32_t version;
  std::uint32_t meta_crc;
  std::uint64_t meta_len;
  std::uint32_t payload_crc;
  std::uint32_t reserved;
  std::uint64_t payload_len;
};
static_assert(sizeof(Header) == 40);

template <typename M>
void append_values(std::vector<float>& payload, const M& m) {
  const auto* data = m.data();
  payload.insert(payload.end(), data, data + m.size());
}

json weight_manifest_entry(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
  return json{{"name", name}, {"rows", rows}, {"cols", cols}};
}

}  // namespace

void save_model(const ModelParams& params, const Normalizer& normalizer,
                const Provenance& provenance, const std::filesystem::path& path) {
  if (!normalizer.fitted()) throw ConfigError("save_model: normalizer not fitted");
  if (params.schema_hash != normalizer.schema_hash()) {
    throw SchemaMismatchError("save_model: params schema " + hex64(params.schema_hash) +
                              " != normalizer schema " + hex64(normalizer.schema_hash()));
  }

  json manifest = json::array();
  std::vector<float> payload;
  params.visit_learnable([&](const std::string& name, const auto& m) {
    manifest.push_back(weight_manifest_entry(name, m.rows(), m.cols()));
    append_values(payload, m);
  });
  params.visit_state([&](const std::string& name, const auto& m) {
    manifest.push_back(weight_manifest_entry(name, m.rows(), m.cols()));
    append_values(payload, m);
  });

  const FeatureSchema& schema = FeatureSchema::current();
  json meta;
  meta["format"] = "evlink-model";
  meta["architecture"] = {{"input_dim", params.input_dim()},
                          {"conv_channels", kConvChannels},
                          {"encoder_units", kEncoderUnits},
                          {"encoder_layers", kEncoderLayers},
                          {"decoder_units", kDecoderUnits},
                          {"head_widths", kHeadWidths}};
  meta["feature_schema"] = {{"version", schema.version},
                            {"hash", hex64(params.schema_hash)},
                            {"names", schema.names}};
  meta["normalizer"] = json::parse(normalizer.to_json());
  meta["provenance"] = {{"training_seed", provenance.training_seed},
                        {"dataset_hash", provenance.dataset_hash},
                        {"max_trained_trip_length", provenance.max_trained_trip_length},
                        {"metrics", provenance.metrics_json},
                        {"created", provenance.created}};
  meta["weights"] = std::move(manifest);
  const std::string meta_str = meta.dump();

  Header h{};
  std::memcpy(h.magic, kModelMagic, 8);
  h.version = kModelFormatVersion;
  h.meta_len = meta_str.size();
  h.meta_crc = crc32(meta_str.data(), meta_str.size());
  h.payload_len = payload.size() * sizeof(float);
  h.payload_crc = crc32(payload.data(), payload.size() * sizeof(float));
  h.reserved = 0;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("save_model: cannot open " + path.string());
  out.write(reinterpret_cast<const char*>(&h), sizeof(h));
  out.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!out) throw IoError("save_model: write failed for " + path.string());
}

ModelArtifact load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_model: cannot open " + path.string());

  Header h{};
  in.read(reinterpret_cast<char*>(&h), sizeof(h));
  if (!in || std::memcmp(h.magic, kModelMagic, 8) != 0) {
    throw IoError("load_model: not a model file: " + path.string());
  }
  if (h.version != kModelFormatVersion) {
    throw IoError("load_model: unknown format version " + std::to_string(h.version));
  }

  std::string meta_str(h.meta_len, '\0');
  in.read(meta_str.data(), static_cast<std::streamsize>(h.meta_len));
  if (!in || crc32(meta_str.data(), meta_str.size()) != h.meta_crc) {
    throw IoError("load_model: meta checksum mismatch in " + path.string());
  }

  std::vector<float> payload(h.payload_len / sizeof(float));
  in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(h.payload_len));
  if (!in || static_cast<std::uint64_t>(in.gcount()) != h.payload_len ||
      crc32(payload.data(), h.payload_len) != h.payload_crc) {
    throw IoError("load_model: payload checksum mismatch in " + path.string());
  }

  json meta = json::parse(meta_str);
  const auto& arch = meta.at("architecture");

  ModelArtifact artifact;
  artifact.format_version = h.version;

  // v1 loaders support exactly this topology family; the arch block makes
  // the file self-describing rather than configurable.
  const auto conv_channels = arch.at("conv_channels").get<std::vector<int>>();
  const auto head_widths = arch.at("head_widths").get<std::vector<int>>();
  const bool arch_ok =
      conv_channels == std::vector<int>(kConvChannels.begin(), kConvChannels.end()) &&
      head_widths == std::vector<int>(kHeadWidths.begin(), kHeadWidths.end()) &&
      arch.at("encoder_units").get<int>() == kEncoderUnits &&
      arch.at("encoder_layers").get<int>() == kEncoderLayers &&
      arch.at("decoder_units").get<int>() == kDecoderUnits;
  if (!arch_ok) throw IoError("load_model: unsupported architecture block");

  const std::uint64_t file_schema_hash =
      std::stoull(meta.at("feature_schema").at("hash").get<std::string>(), nullptr, 16);
  if (file_schema_hash != FeatureSchema::current().hash) {
    throw SchemaMismatchError("load_model: feature schema " + hex64(file_schema_hash) +
                              " in file, this build expects " +
                              hex64(FeatureSchema::current().hash));
  }

  artifact.params.allocate(arch.at("input_dim").get<int>());
  artifact.params.schema_hash = file_schema_hash;

  std::size_t offset = 0;
  std::size_t mi = 0;
  const auto& manifest = meta.at("weights");
  auto read_into = [&](const std::string& name, auto& m) {
    if (mi >= manifest.size()) throw IoError("load_model: weight manifest too short");
    const auto& entry = manifest[mi++];
    if (entry.at("name").get<std::string>() != name ||
        entry.at("rows").get<Eigen::Index>() != m.rows() ||
        entry.at("cols").get<Eigen::Index>() != m.cols()) {
      throw IoError("load_model: weight manifest mismatch at " + name);
    }
    const auto count = static_cast<std::size_t>(m.size());
    if (offset + count > payload.size()) throw IoError("load_model: payload too short");
    std::memcpy(m.data(), payload.data() + offset, count * sizeof(float));
    offset += count;
  };
  artifact.params.visit_learnable(read_into);
  artifact.params.visit_state(read_into);
  if (offset != payload.size()) throw IoError("load_model: trailing payload bytes");

  artifact.normalizer = Normalizer::from_json(meta.at("normalizer").dump());
  const auto& prov = meta.at("provenance");
  artifact.provenance.training_seed = prov.at("training_seed").get<std::uint64_t>();
  artifact.provenance.dataset_hash = prov.at("dataset_hash").get<std::string>();
  artifact.provenance.max_trained_trip_length =
      prov.at("max_trained_trip_length").get<std::size_t>();
  artifact.provenance.metrics_json = prov.at("metrics").get<std::string>();
  artifact.provenance.created = prov.at("created").get<std::string>();
  return artifact;
}

}  // namespace evlink
