#pragma once

#include <string>

#include "sfp/network.hpp"

namespace sfp {

/// Container format "sfp-v1": 4-byte magic "SFP1", 8-byte little-endian
/// manifest length, JSON manifest, then a blob of little-endian float32
/// values in manifest order. Round-trips are bitwise lossless.
void save_model(const Model<float>& model, const std::string& path);

/// Verifies magic, format version, blob length and checksum.
/// A compact model's index-mapping sidecar (path + ".map.csv") is restored
/// when present.
Model<float> load_model(const std::string& path);

/// Sidecar CSV name for compact-model index mappings.
std::string sidecar_path(const std::string& model_path);

} // namespace sfp
