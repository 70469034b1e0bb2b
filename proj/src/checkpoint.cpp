#include "adapool/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "adapool/error.hpp"

namespace adapool {

namespace fs = std::filesystem;
using PE = PersistenceError;

namespace {

fs::path with_ext(const fs::path& stem, const char* ext) {
  fs::path p = stem;
  p += ext;
  return p;
}

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

bool parse_size(std::string_view s, std::size_t& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

struct Entry {
  std::string name;
  Shape shape;
  std::size_t offset = 0;
};

std::vector<Entry> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw PE(PE::Kind::io, "cannot open " + path.string());
  std::vector<Entry> entries;
  std::string line;
  std::size_t lineno = 0;
  std::size_t next_free = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto bad = [&](const std::string& why) {
      return PE(PE::Kind::corrupt_manifest,
                path.string() + ":" + std::to_string(lineno) + ": " + why);
    };
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos)
      throw bad("expected three tab-separated fields");
    Entry e;
    e.name = line.substr(0, t1);
    if (e.name.empty()) throw bad("empty tensor name");
    std::string_view dims(line.data() + t1 + 1, t2 - t1 - 1);
    while (!dims.empty()) {
      const auto comma = dims.find(',');
      std::size_t d = 0;
      if (!parse_size(dims.substr(0, comma), d)) throw bad("malformed shape");
      e.shape.push_back(d);
      dims = comma == std::string_view::npos ? std::string_view{} : dims.substr(comma + 1);
    }
    if (e.shape.empty()) throw bad("empty shape");
    if (!parse_size(std::string_view(line).substr(t2 + 1), e.offset)) throw bad("malformed offset");
    if (e.offset != next_free) throw bad("offsets must be ascending and contiguous");
    next_free = e.offset + shape_numel(e.shape) * sizeof(float);
    for (const Entry& prev : entries)
      if (prev.name == e.name) throw bad("duplicate tensor name '" + e.name + "'");
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace

void save_checkpoint(const ParamList& params, const fs::path& stem) {
  if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
  std::ofstream manifest(with_ext(stem, ".manifest"), std::ios::trunc);
  std::ofstream blob(with_ext(stem, ".bin"), std::ios::binary | std::ios::trunc);
  if (!manifest || !blob) throw PE(PE::Kind::io, "cannot write checkpoint " + stem.string());
  std::size_t offset = 0;
  for (const auto& [name, t] : params) {
    manifest << name << '\t';
    for (std::size_t i = 0; i < t.rank(); ++i) manifest << (i ? "," : "") << t.dim(i);
    manifest << '\t' << offset << '\n';
    for (float v : t.data()) {
      const std::uint32_t bits = to_le(std::bit_cast<std::uint32_t>(v));
      blob.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
    offset += t.numel() * sizeof(float);
  }
  if (!manifest.flush() || !blob.flush())
    throw PE(PE::Kind::io, "write failed for checkpoint " + stem.string());
}

ParamList load_checkpoint(const fs::path& stem) {
  const std::vector<Entry> entries = read_manifest(with_ext(stem, ".manifest"));
  const fs::path bin = with_ext(stem, ".bin");
  std::ifstream in(bin, std::ios::binary);
  if (!in) throw PE(PE::Kind::io, "cannot open " + bin.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t expected = 0;
  if (!entries.empty())
    expected = entries.back().offset + shape_numel(entries.back().shape) * sizeof(float);
  if (bytes.size() < expected)
    throw PE(PE::Kind::truncated_blob, bin.string() + " holds " + std::to_string(bytes.size()) +
                                           " bytes, manifest needs " + std::to_string(expected));
  if (bytes.size() > expected)
    throw PE(PE::Kind::corrupt_manifest,
             bin.string() + " has " + std::to_string(bytes.size() - expected) +
                 " bytes not described by the manifest");
  ParamList out;
  for (const Entry& e : entries) {
    Tensor t(e.shape);
    const char* src = bytes.data() + e.offset;
    for (float& v : t.data()) {
      std::uint32_t bits;
      std::memcpy(&bits, src, sizeof bits);
      src += sizeof bits;
      v = std::bit_cast<float>(to_le(bits));
    }
    out.push_back({e.name, std::move(t)});
  }
  return out;
}

void load_into(const ParamList& target, const fs::path& stem) {
  const ParamList stored = load_checkpoint(stem);
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& p : stored) by_name.emplace(p.name, &p.tensor);
  for (const auto& [name, t] : target) {
    const auto it = by_name.find(name);
    if (it == by_name.end())
      throw PE(PE::Kind::shape_mismatch, stem.string() + ": missing tensor '" + name + "'");
    if (it->second->shape() != t.shape())
      throw PE(PE::Kind::shape_mismatch, stem.string() + ": tensor '" + name + "' has shape " +
                                             shape_str(it->second->shape()) + ", expected " +
                                             shape_str(t.shape()));
    Tensor dst = t;
    std::memcpy(dst.data().data(), it->second->data().data(), t.numel() * sizeof(float));
  }
}

BackboneParams load_backbone(const BackboneConfig& config, const fs::path& stem) {
  BackboneParams theta = build_backbone(config, 0);
  load_into(theta.named(), stem);
  return theta;
}

Adapter load_adapter(const BackboneConfig& config, const fs::path& stem,
                     std::size_t bottleneck_dim) {
  Adapter a = build_adapter(config, 0, bottleneck_dim);
  load_into(a.named(), stem);
  return a;
}

}  // namespace adapool
