#pragma once

#include <string>

#include "json.hpp"
#include "prunekit/graph.hpp"

namespace prunekit {

// Model persistence: `prefix.json` holds the spec, a tensor manifest, and
// free-form metadata; `prefix.bin` holds the raw little-endian f32 payload.
// Round-trips are bit-exact. Both files are written atomically.
void save_model(const std::string& prefix, const NetworkSpec& spec, const ModelParams& params,
                const nlohmann::json& meta = nlohmann::json::object());

struct LoadedModel {
    NetworkSpec spec;
    ModelParams params;
    nlohmann::json meta;
};
LoadedModel load_model(const std::string& prefix);

// Atomic text write: temp file then rename.
void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace prunekit
