#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "lp/model.hpp"

namespace lp {

using Json = nlohmann::json;

inline constexpr const char* kCheckpointMagic = "LAYERPRUNE-CKPT";
inline constexpr int kCheckpointVersion = 1;

Json config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const Json& j);

// Shape-allocated model with zeroed tensors (no parameter init).
Model allocate_model(const ModelConfig& cfg);

// File layout: magic+version line, decimal header-length line, JSON header
// (format, model config, tensor manifest, adapter metadata, provenance),
// then the raw little-endian f32 payload in manifest order, then an 8-byte
// little-endian FNV-1a checksum of the payload.
void save_model(const std::string& path, const Model& model,
                const Json& provenance = Json::object());

// Distinct failures: VersionError (wrong container version), FormatError
// (malformed header/manifest/non-finite data), ShapeError (tensor shape
// disagrees with the config), ChecksumError (payload truncated or corrupt).
Model load_model(const std::string& path, Json* provenance_out = nullptr);

// Header JSON without reading the payload into a model (used by `verify`).
Json read_checkpoint_header(const std::string& path);

// Hex digest of the serialized payload bytes; identical models (including
// adapters) always hash identically.
std::string model_fingerprint(const Model& model);

// Hash of a file's raw bytes; the fingerprint used for corpus/QA artifacts.
std::string file_fingerprint(const std::string& path);

}  // namespace lp
