#include "state_io.hpp"

#include <fstream>
#include <iterator>

#include "adapool/checkpoint.hpp"
#include "adapool/error.hpp"

namespace adapool::detail {

namespace fs = std::filesystem;
using PK = PersistenceError::Kind;

ParamList prefixed(const ParamList& params, const std::string& prefix) {
  ParamList out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back({prefix + "." + p.name, p.tensor});
  return out;
}

void save_state_files(const fs::path& dir, const ParamList& params, const nlohmann::json& meta) {
  fs::create_directories(dir);
  save_checkpoint(params, dir / "params");
  std::ofstream out(dir / "state.json");
  out << meta.dump(1) << '\n';
  if (!out) throw PersistenceError(PK::io, "cannot write " + (dir / "state.json").string());
}

nlohmann::json load_state_meta(const fs::path& dir) {
  std::ifstream in(dir / "state.json");
  if (!in) throw PersistenceError(PK::io, "cannot read " + (dir / "state.json").string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw PersistenceError(PK::corrupt_manifest, "bad learner state: " + std::string(e.what()));
  }
}

void load_state_params(const fs::path& dir, const ParamList& params) { load_into(params, dir / "params"); }

void save_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw PersistenceError(PK::io, "cannot write " + path.string());
}

std::vector<std::uint8_t> load_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PersistenceError(PK::io, "cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace adapool::detail
