#pragma once

#include <string>

#include "smoe/model.hpp"

namespace smoe {

// SMAF archive: "SMAF" magic, u32 version (1), u64 little-endian header byte
// count, UTF-8 JSON header (dims, layer specs, tensor index with 8-byte
// aligned offsets into the data section), then raw float32 little-endian
// row-major tensor data. Round-trips are bit-exact.
void write_model(const ModelManifest& m, const std::string& path);
ModelManifest read_model(const std::string& path);

}  // namespace smoe
