#pragma once

// Learner state on disk: a checkpoint pair `params.{manifest,bin}` and a
// `state.json` document inside one directory.

#include <filesystem>
#include <string>

#include "json.hpp"

#include "adapool/backbone.hpp"

namespace adapool::detail {

/// The same tensors renamed "<prefix>.<name>"; storage is shared.
ParamList prefixed(const ParamList& params, const std::string& prefix);

void save_state_files(const std::filesystem::path& dir, const ParamList& params,
                      const nlohmann::json& meta);
nlohmann::json load_state_meta(const std::filesystem::path& dir);
/// Fills `params` from the directory's checkpoint.
void load_state_params(const std::filesystem::path& dir, const ParamList& params);

void save_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> load_bytes(const std::filesystem::path& path);

}  // namespace adapool::detail
