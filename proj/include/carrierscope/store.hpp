#pragma once

#include "carrierscope/types.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace carrierscope {

enum class Split { Harmful, Safe };
enum class Role { Train, Val, Eval };

const char* to_string(Split split);
const char* to_string(Role role);
Split split_from_string(const std::string& name);
Role role_from_string(const std::string& name);

struct CheckpointEntry {
  int id = 0;
  bool is_reference = false;
};

struct BlobRef {
  int checkpoint = 0;
  Split split = Split::Harmful;
  Role role = Role::Train;
  std::string relative_path;   // "<ckpt>/<split>_<role>.f32"
  std::string sha256;          // lowercase hex over the raw blob bytes
  std::uint64_t byte_length = 0;
};

// Activation container manifest. One manifest per run directory; blobs hold
// raw little-endian float32, row-major [example, position, layer, dim].
struct RunManifest {
  std::filesystem::path root;  // directory holding manifest.json; not serialized

  std::string run_id;
  std::string regime_label;
  int hidden_dim = 0;
  int layer_count = 0;
  std::vector<int> position_offsets;        // negative end offsets, strictly increasing
  std::vector<CheckpointEntry> checkpoints; // ids strictly increasing, exactly one reference
  std::map<std::string, std::map<std::string, int>> counts;  // split -> role -> examples
  std::vector<BlobRef> blobs;

  const CheckpointEntry& reference() const;
  bool has_checkpoint(int id) const;
  int count_for(Split split, Role role) const;
  int position_index(int offset) const;  // ValidationError if offset absent
  const BlobRef* find_blob(int checkpoint, Split split, Role role) const;
};

struct ActivationField {
  int checkpoint = 0;
  Split split = Split::Harmful;
  Role role = Role::Train;
  int examples = 0;
  int positions = 0;
  int layers = 0;
  int dim = 0;
  std::vector<int> position_offsets;  // copied from the manifest
  std::vector<float> data;            // row-major [example][position][layer][dim]

  std::size_t flat_index(int e, int p, int l, int d) const {
    return ((static_cast<std::size_t>(e) * positions + p) * layers + l) *
               static_cast<std::size_t>(dim) +
           d;
  }

  Eigen::Map<const VecF> state(int e, int p, int l) const {
    return Eigen::Map<const VecF>(data.data() + flat_index(e, p, l, 0), dim);
  }

  Vec state64(int e, int p, int l) const {
    return state(e, p, l).cast<double>();
  }

  // Mean over examples at one grid site, accumulated in double.
  Vec mean_state(int p, int l) const;
};

// Leading-example slice; count must be in [1, field.examples]. The layout is
// example-major, so this is a pure truncation.
ActivationField take_examples(const ActivationField& field, int count);

// Validates the full schema and manifest invariants; root must hold
// manifest.json. Schema violations raise ValidationError, unreadable files
// IoError.
RunManifest load_manifest(const std::filesystem::path& root);

// Reads one blob, verifies byte length and SHA-256 before decoding, and
// rejects non-finite values.
ActivationField load_field(const RunManifest& manifest, int checkpoint,
                           Split split, Role role);

// Encodes the field (NaN rejected), writes its blob under manifest.root, and
// records/updates the blob index entry. Call save_manifest to persist the
// index.
void write_field(const ActivationField& field, RunManifest& manifest);

// Serializes manifest.json (sorted keys; byte-stable for equal content).
void save_manifest(const RunManifest& manifest);

}  // namespace carrierscope
