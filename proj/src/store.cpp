#include "carrierscope/store.hpp"

#include "carrierscope/errors.hpp"
#include "carrierscope/sha256.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace carrierscope {

namespace fs = std::filesystem;
using nlohmann::json;

const char* to_string(Split split) {
  return split == Split::Harmful ? "harmful" : "safe";
}

const char* to_string(Role role) {
  switch (role) {
    case Role::Train: return "train";
    case Role::Val: return "val";
    default: return "eval";
  }
}

Split split_from_string(const std::string& name) {
  if (name == "harmful") return Split::Harmful;
  if (name == "safe") return Split::Safe;
  throw ValidationError("manifest: unknown split '" + name + "'");
}

Role role_from_string(const std::string& name) {
  if (name == "train") return Role::Train;
  if (name == "val") return Role::Val;
  if (name == "eval") return Role::Eval;
  throw ValidationError("manifest: unknown role '" + name + "'");
}

const CheckpointEntry& RunManifest::reference() const {
  for (const auto& c : checkpoints) {
    if (c.is_reference) return c;
  }
  throw ValidationError("manifest: no reference checkpoint");
}

bool RunManifest::has_checkpoint(int id) const {
  return std::any_of(checkpoints.begin(), checkpoints.end(),
                     [&](const CheckpointEntry& c) { return c.id == id; });
}

int RunManifest::count_for(Split split, Role role) const {
  auto s = counts.find(to_string(split));
  if (s == counts.end()) {
    throw ValidationError(std::string("manifest: no counts for split '") +
                          to_string(split) + "'");
  }
  auto r = s->second.find(to_string(role));
  if (r == s->second.end()) {
    throw ValidationError(std::string("manifest: no count for role '") +
                          to_string(role) + "'");
  }
  return r->second;
}

int RunManifest::position_index(int offset) const {
  auto it =
      std::find(position_offsets.begin(), position_offsets.end(), offset);
  if (it == position_offsets.end()) {
    throw ValidationError("manifest: position offset " +
                          std::to_string(offset) + " not in grid");
  }
  return static_cast<int>(it - position_offsets.begin());
}

const BlobRef* RunManifest::find_blob(int checkpoint, Split split,
                                      Role role) const {
  for (const auto& b : blobs) {
    if (b.checkpoint == checkpoint && b.split == split && b.role == role) {
      return &b;
    }
  }
  return nullptr;
}

Vec ActivationField::mean_state(int p, int l) const {
  Vec acc = Vec::Zero(dim);
  for (int e = 0; e < examples; ++e) {
    acc += state64(e, p, l);
  }
  return examples > 0 ? Vec(acc / examples) : acc;
}

ActivationField take_examples(const ActivationField& field, int count) {
  if (count < 1 || count > field.examples) {
    throw ValidationError("store: requested " + std::to_string(count) +
                          " examples from a field of " +
                          std::to_string(field.examples));
  }
  ActivationField out = field;
  out.examples = count;
  out.data.resize(static_cast<std::size_t>(count) * field.positions *
                  field.layers * field.dim);
  return out;
}

namespace {

std::string blob_relative_path(int checkpoint, Split split, Role role) {
  std::ostringstream os;
  os << checkpoint << "/" << to_string(split) << "_" << to_string(role)
     << ".f32";
  return os.str();
}

void validate_manifest(const RunManifest& m) {
  if (m.hidden_dim <= 0 || m.layer_count <= 0) {
    throw ValidationError("manifest: hidden_dim and layer_count must be positive");
  }
  if (m.position_offsets.empty()) {
    throw ValidationError("manifest: empty position_offsets");
  }
  for (std::size_t i = 0; i < m.position_offsets.size(); ++i) {
    if (m.position_offsets[i] >= 0) {
      throw ValidationError("manifest: position offsets must be negative");
    }
    if (i > 0 && m.position_offsets[i] <= m.position_offsets[i - 1]) {
      throw ValidationError("manifest: position offsets must be strictly increasing");
    }
  }
  if (m.checkpoints.empty()) {
    throw ValidationError("manifest: no checkpoints");
  }
  int n_ref = 0;
  for (std::size_t i = 0; i < m.checkpoints.size(); ++i) {
    if (i > 0 && m.checkpoints[i].id <= m.checkpoints[i - 1].id) {
      throw ValidationError("manifest: checkpoint ids must be strictly increasing");
    }
    n_ref += m.checkpoints[i].is_reference ? 1 : 0;
  }
  if (n_ref != 1) {
    throw ValidationError("manifest: exactly one checkpoint must be flagged is_reference");
  }
  const std::uint64_t site_bytes = 4ull * m.position_offsets.size() *
                                   m.layer_count * m.hidden_dim;
  std::set<std::string> seen;
  for (const auto& b : m.blobs) {
    if (!m.has_checkpoint(b.checkpoint)) {
      throw ValidationError("manifest: blob references unknown checkpoint " +
                            std::to_string(b.checkpoint));
    }
    const std::uint64_t expect =
        site_bytes * static_cast<std::uint64_t>(m.count_for(b.split, b.role));
    if (b.byte_length != expect) {
      throw ValidationError("manifest: blob " + b.relative_path +
                            " byte_length " + std::to_string(b.byte_length) +
                            " != expected " + std::to_string(expect));
    }
    if (!seen.insert(b.relative_path).second) {
      throw ValidationError("manifest: duplicate blob path " + b.relative_path);
    }
  }
}

json require(const json& j, const char* key) {
  if (!j.contains(key)) {
    throw ValidationError(std::string("manifest: missing key '") + key + "'");
  }
  return j.at(key);
}

}  // namespace

RunManifest load_manifest(const fs::path& root) {
  const fs::path path = root / "manifest.json";
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError("manifest: invalid JSON: " + std::string(e.what()));
  }

  RunManifest m;
  m.root = root;
  try {
    m.run_id = require(j, "run_id").get<std::string>();
    m.regime_label = require(j, "regime_label").get<std::string>();
    m.hidden_dim = require(j, "hidden_dim").get<int>();
    m.layer_count = require(j, "layer_count").get<int>();
    m.position_offsets = require(j, "position_offsets").get<std::vector<int>>();
    for (const auto& c : require(j, "checkpoints")) {
      m.checkpoints.push_back(
          {require(c, "id").get<int>(), require(c, "is_reference").get<bool>()});
    }
    const json counts = require(j, "counts");
    for (const auto& [split, roles] : counts.items()) {
      split_from_string(split);
      for (const auto& [role, count] : roles.items()) {
        role_from_string(role);
        m.counts[split][role] = count.get<int>();
      }
    }
    for (const auto& b : require(j, "blobs")) {
      BlobRef ref;
      ref.checkpoint = require(b, "checkpoint").get<int>();
      ref.split = split_from_string(require(b, "split").get<std::string>());
      ref.role = role_from_string(require(b, "role").get<std::string>());
      ref.relative_path = require(b, "relative_path").get<std::string>();
      ref.sha256 = require(b, "sha256").get<std::string>();
      ref.byte_length = require(b, "byte_length").get<std::uint64_t>();
      m.blobs.push_back(std::move(ref));
    }
  } catch (const json::exception& e) {
    throw ValidationError("manifest: schema error: " + std::string(e.what()));
  }
  validate_manifest(m);
  return m;
}

ActivationField load_field(const RunManifest& manifest, int checkpoint,
                           Split split, Role role) {
  const BlobRef* ref = manifest.find_blob(checkpoint, split, role);
  if (ref == nullptr) {
    throw ValidationError("store: no blob for checkpoint " +
                          std::to_string(checkpoint) + " " +
                          std::string(to_string(split)) + "/" +
                          to_string(role));
  }
  const fs::path path = manifest.root / ref->relative_path;
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open blob " + path.string());
  }
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() != ref->byte_length) {
    throw ValidationError("store: blob " + ref->relative_path + " has " +
                          std::to_string(bytes.size()) + " bytes, manifest says " +
                          std::to_string(ref->byte_length));
  }
  const std::string digest = sha256_hex(bytes.data(), bytes.size());
  if (digest != ref->sha256) {
    throw ValidationError("store: checksum mismatch for " + ref->relative_path);
  }

  ActivationField field;
  field.checkpoint = checkpoint;
  field.split = split;
  field.role = role;
  field.examples = manifest.count_for(split, role);
  field.positions = static_cast<int>(manifest.position_offsets.size());
  field.layers = manifest.layer_count;
  field.dim = manifest.hidden_dim;
  field.position_offsets = manifest.position_offsets;
  field.data.resize(bytes.size() / 4);
  for (std::size_t i = 0; i < field.data.size(); ++i) {
    std::uint32_t word = static_cast<std::uint32_t>(bytes[4 * i]) |
                         (static_cast<std::uint32_t>(bytes[4 * i + 1]) << 8) |
                         (static_cast<std::uint32_t>(bytes[4 * i + 2]) << 16) |
                         (static_cast<std::uint32_t>(bytes[4 * i + 3]) << 24);
    field.data[i] = std::bit_cast<float>(word);
  }
  for (float v : field.data) {
    if (!std::isfinite(v)) {
      throw ValidationError("store: non-finite value in " + ref->relative_path);
    }
  }
  return field;
}

void write_field(const ActivationField& field, RunManifest& manifest) {
  const std::size_t expect = static_cast<std::size_t>(field.examples) *
                             field.positions * field.layers * field.dim;
  if (field.data.size() != expect) {
    throw ValidationError("store: field data size does not match its shape");
  }
  if (field.positions != static_cast<int>(manifest.position_offsets.size()) ||
      field.layers != manifest.layer_count ||
      field.dim != manifest.hidden_dim ||
      field.examples != manifest.count_for(field.split, field.role)) {
    throw ValidationError("store: field shape does not match manifest");
  }
  if (!manifest.has_checkpoint(field.checkpoint)) {
    throw ValidationError("store: unknown checkpoint " +
                          std::to_string(field.checkpoint));
  }
  for (float v : field.data) {
    if (std::isnan(v)) {
      throw ValidationError("store: refusing to write NaN activation");
    }
  }

  std::vector<std::uint8_t> bytes(field.data.size() * 4);
  for (std::size_t i = 0; i < field.data.size(); ++i) {
    const std::uint32_t word = std::bit_cast<std::uint32_t>(field.data[i]);
    bytes[4 * i] = static_cast<std::uint8_t>(word & 0xFF);
    bytes[4 * i + 1] = static_cast<std::uint8_t>((word >> 8) & 0xFF);
    bytes[4 * i + 2] = static_cast<std::uint8_t>((word >> 16) & 0xFF);
    bytes[4 * i + 3] = static_cast<std::uint8_t>((word >> 24) & 0xFF);
  }

  BlobRef ref;
  ref.checkpoint = field.checkpoint;
  ref.split = field.split;
  ref.role = field.role;
  ref.relative_path = blob_relative_path(field.checkpoint, field.split, field.role);
  ref.sha256 = sha256_hex(bytes.data(), bytes.size());
  ref.byte_length = bytes.size();

  const fs::path path = manifest.root / ref.relative_path;
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  if (ec) {
    throw IoError("cannot create " + path.parent_path().string() + ": " +
                  ec.message());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot open " + path.string() + " for writing");
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw IoError("short write to " + path.string());
  }

  auto existing = std::find_if(manifest.blobs.begin(), manifest.blobs.end(),
                               [&](const BlobRef& b) {
                                 return b.checkpoint == ref.checkpoint &&
                                        b.split == ref.split &&
                                        b.role == ref.role;
                               });
  if (existing != manifest.blobs.end()) {
    *existing = ref;
  } else {
    manifest.blobs.push_back(ref);
  }
}

void save_manifest(const RunManifest& manifest) {
  validate_manifest(manifest);
  json j;
  j["run_id"] = manifest.run_id;
  j["regime_label"] = manifest.regime_label;
  j["hidden_dim"] = manifest.hidden_dim;
  j["layer_count"] = manifest.layer_count;
  j["position_offsets"] = manifest.position_offsets;
  j["checkpoints"] = json::array();
  for (const auto& c : manifest.checkpoints) {
    j["checkpoints"].push_back({{"id", c.id}, {"is_reference", c.is_reference}});
  }
  j["counts"] = manifest.counts;
  j["blobs"] = json::array();
  for (const auto& b : manifest.blobs) {
    j["blobs"].push_back({{"checkpoint", b.checkpoint},
                          {"split", to_string(b.split)},
                          {"role", to_string(b.role)},
                          {"relative_path", b.relative_path},
                          {"sha256", b.sha256},
                          {"byte_length", b.byte_length}});
  }
  std::error_code ec;
  fs::create_directories(manifest.root, ec);
  if (ec) {
    throw IoError("cannot create " + manifest.root.string() + ": " + ec.message());
  }
  const fs::path path = manifest.root / "manifest.json";
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw IoError("cannot open " + path.string() + " for writing");
  }
  out << j.dump(2) << "\n";
  if (!out) {
    throw IoError("short write to " + path.string());
  }
}

}  // namespace carrierscope
