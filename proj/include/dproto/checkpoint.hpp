#pragma once

#include <string>

#include "dproto/model.hpp"

namespace dproto {

// Binary checkpoint: 7-byte magic "DPROTO1", uint64 LE header length, JSON
// header (config echo, class names, tensor directory with shapes and byte
// ranges), then the payload of concatenated little-endian float64 buffers.
// Tensor byte ranges are contiguous in name order and partition the payload
// exactly; load verifies this and every shape. Save/load round-trips are
// bit-exact, and identical models serialize to identical bytes.
void save_checkpoint(const std::string& path, const Model& model);
Model load_checkpoint(const std::string& path);

}  // namespace dproto
