#pragma once

// Parameter persistence as a pair of files: `<stem>.manifest` with one
// `name<TAB>dim,dim,...<TAB>byte-offset` line per tensor, and `<stem>.bin`
// holding the values as contiguous little-endian float32.

#include <filesystem>

#include "adapool/backbone.hpp"

namespace adapool {

void save_checkpoint(const ParamList& params, const std::filesystem::path& stem);

/// Every tensor stored under `stem`, in manifest order. Throws
/// PersistenceError (io, corrupt_manifest or truncated_blob).
ParamList load_checkpoint(const std::filesystem::path& stem);

/// Copies stored values into the tensors of `target`, matched by name. Each
/// target name must be present with the same shape, otherwise
/// PersistenceError(shape_mismatch).
void load_into(const ParamList& target, const std::filesystem::path& stem);

/// Frozen backbone of shape `config` read from `stem`.
BackboneParams load_backbone(const BackboneConfig& config, const std::filesystem::path& stem);
/// Adapter of width `bottleneck_dim` (0 means config.adapter_dim) read from `stem`.
Adapter load_adapter(const BackboneConfig& config, const std::filesystem::path& stem,
                     std::size_t bottleneck_dim = 0);

}  // namespace adapool
