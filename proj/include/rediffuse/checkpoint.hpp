#pragma once

#include <string>
#include <utility>
#include <vector>

#include "rediffuse/autodiff.hpp"

namespace rediffuse {

// Model checkpoint: magic "RDCK", a format version, a length-prefixed text
// header of key=value lines (model/schedule configuration, seed), then the
// ordered parameter tensors as (name, shape, 32-bit little-endian scalars),
// optionally followed by the optimizer state (64-bit moments + step count)
// so training can resume bit-exactly.

using MetaList = std::vector<std::pair<std::string, std::string>>;

void save_checkpoint(const std::string& path, const ParamStore<float>& ps, const MetaList& meta,
                     const AdamOptimizer<float>* opt = nullptr);

// Loads into a fresh store (ps is cleared first). Returns true when optimizer
// state was present and opt != nullptr received it. Throws std::runtime_error
// on malformed input (bad magic/version, duplicate names, truncation).
bool load_checkpoint(const std::string& path, ParamStore<float>* ps, MetaList* meta = nullptr,
                     AdamOptimizer<float>* opt = nullptr);

}  // namespace rediffuse
