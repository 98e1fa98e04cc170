#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "carrierscope/errors.hpp"
#include "carrierscope/store.hpp"
#include "helpers.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

using namespace carrierscope;
using testutil::TempDir;

namespace {

RunManifest base_manifest(const std::filesystem::path& root) {
  RunManifest m;
  m.root = root;
  m.run_id = "test-run";
  m.regime_label = "synthetic";
  m.hidden_dim = 4;
  m.layer_count = 3;
  m.position_offsets = {-2, -1};
  m.checkpoints = {{0, true}, {50, false}};
  for (const char* split : {"harmful", "safe"}) {
    m.counts[split]["train"] = 5;
    m.counts[split]["val"] = 3;
    m.counts[split]["eval"] = 2;
  }
  return m;
}

// Value at (e, p, l, d) encodes its own flat index, so any transposition or
// offset bug shows up as a wrong constant.
ActivationField indexed_field(const RunManifest& m, int checkpoint,
                              Split split, Role role) {
  const int examples = m.count_for(split, role);
  const int P = static_cast<int>(m.position_offsets.size());
  const int L = m.layer_count;
  const int D = m.hidden_dim;
  auto state_of = [&](int e, int p, int l) {
    Vec v(D);
    for (int d = 0; d < D; ++d) v[d] = ((e * P + p) * L + l) * D + d;
    return v;
  };
  ActivationField f =
      testutil::make_field(examples, m.position_offsets, L, D, state_of);
  f.checkpoint = checkpoint;
  f.split = split;
  f.role = role;
  return f;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("split and role names round-trip") {
  for (Split s : {Split::Harmful, Split::Safe}) {
    CHECK(split_from_string(to_string(s)) == s);
  }
  for (Role r : {Role::Train, Role::Val, Role::Eval}) {
    CHECK(role_from_string(to_string(r)) == r);
  }
  CHECK_THROWS_AS(split_from_string("benign"), ValidationError);
  CHECK_THROWS_AS(role_from_string("test"), ValidationError);
}

TEST_CASE("write then load is bit-identical and layout is as documented") {
  TempDir dir("store_roundtrip");
  RunManifest m = base_manifest(dir.path);
  const ActivationField f = indexed_field(m, 0, Split::Harmful, Role::Train);
  write_field(f, m);
  save_manifest(m);

  const RunManifest loaded = load_manifest(dir.path);
  CHECK(loaded.run_id == "test-run");
  CHECK(loaded.reference().id == 0);
  CHECK(loaded.has_checkpoint(50));
  CHECK(loaded.position_index(-2) == 0);
  CHECK(loaded.position_index(-1) == 1);
  CHECK_THROWS_AS(loaded.position_index(-3), ValidationError);

  const ActivationField g = load_field(loaded, 0, Split::Harmful, Role::Train);
  REQUIRE(g.data.size() == f.data.size());
  CHECK(std::memcmp(g.data.data(), f.data.data(),
                    f.data.size() * sizeof(float)) == 0);
  CHECK(g.examples == 5);
  CHECK(g.positions == 2);
  CHECK(g.layers == 3);
  CHECK(g.dim == 4);

  // Raw blob bytes: little-endian float32 at offset 4*(((e*P+p)*L+l)*D+d).
  const BlobRef* ref = loaded.find_blob(0, Split::Harmful, Role::Train);
  REQUIRE(ref != nullptr);
  CHECK(ref->byte_length == 5ull * 2 * 3 * 4 * 4);
  const auto bytes = read_bytes(dir.path / ref->relative_path);
  REQUIRE(bytes.size() == ref->byte_length);
  for (const auto [e, p, l, d] :
       {std::array{0, 0, 0, 0}, std::array{1, 1, 2, 3}, std::array{4, 0, 1, 2}}) {
    const std::size_t flat = ((static_cast<std::size_t>(e) * 2 + p) * 3 + l) * 4 + d;
    std::uint32_t word = 0;
    for (int b = 3; b >= 0; --b) word = (word << 8) | bytes[4 * flat + b];
    CHECK(std::bit_cast<float>(word) == static_cast<float>(flat));
  }
}

TEST_CASE("blob size arithmetic matches the documented layout formula") {
  TempDir dir("store_layout");
  RunManifest m;
  m.root = dir.path;
  m.run_id = "layout";
  m.regime_label = "synthetic";
  m.hidden_dim = 64;
  m.layer_count = 12;
  m.position_offsets = {-5, -4, -3, -2, -1};
  m.checkpoints = {{0, true}};
  m.counts["harmful"]["val"] = 100;
  m.counts["safe"]["val"] = 100;

  ActivationField f = indexed_field(m, 0, Split::Harmful, Role::Val);
  write_field(f, m);
  const BlobRef* ref = m.find_blob(0, Split::Harmful, Role::Val);
  REQUIRE(ref != nullptr);
  CHECK(ref->byte_length == 1536000u);
  CHECK(std::filesystem::file_size(dir.path / ref->relative_path) == 1536000u);
}

TEST_CASE("any single corrupted byte is caught by the checksum") {
  TempDir dir("store_corrupt");
  RunManifest m = base_manifest(dir.path);
  write_field(indexed_field(m, 0, Split::Safe, Role::Val), m);
  save_manifest(m);
  const RunManifest loaded = load_manifest(dir.path);
  const BlobRef* ref = loaded.find_blob(0, Split::Safe, Role::Val);
  REQUIRE(ref != nullptr);
  const std::filesystem::path blob = dir.path / ref->relative_path;
  const auto pristine = read_bytes(blob);

  for (std::size_t pos : {std::size_t{0}, pristine.size() / 2,
                          pristine.size() - 1, std::size_t{17}}) {
    auto bytes = pristine;
    bytes[pos] ^= 0x01;
    std::ofstream out(blob, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    out.close();
    CHECK_THROWS_AS(load_field(loaded, 0, Split::Safe, Role::Val),
                    ValidationError);
  }

  // Truncation is reported before any checksum work.
  std::filesystem::resize_file(blob, pristine.size() - 4);
  CHECK_THROWS_AS(load_field(loaded, 0, Split::Safe, Role::Val),
                  ValidationError);
}

TEST_CASE("write refuses NaN and shape lies") {
  TempDir dir("store_badwrite");
  RunManifest m = base_manifest(dir.path);
  ActivationField f = indexed_field(m, 0, Split::Harmful, Role::Eval);
  f.data[3] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(write_field(f, m), ValidationError);

  ActivationField wrong = indexed_field(m, 0, Split::Harmful, Role::Eval);
  wrong.examples += 1;
  CHECK_THROWS_AS(write_field(wrong, m), ValidationError);

  ActivationField ghost = indexed_field(m, 0, Split::Harmful, Role::Eval);
  ghost.checkpoint = 99;
  CHECK_THROWS_AS(write_field(ghost, m), ValidationError);
}

TEST_CASE("infinity sneaks past the NaN write guard but never loads") {
  TempDir dir("store_inf");
  RunManifest m = base_manifest(dir.path);
  ActivationField f = indexed_field(m, 0, Split::Harmful, Role::Eval);
  f.data[0] = std::numeric_limits<float>::infinity();
  write_field(f, m);
  save_manifest(m);
  const RunManifest loaded = load_manifest(dir.path);
  CHECK_THROWS_AS(load_field(loaded, 0, Split::Harmful, Role::Eval),
                  ValidationError);
}

TEST_CASE("manifest schema violations are rejected on save and load") {
  TempDir dir("store_schema");

  RunManifest no_ref = base_manifest(dir.path);
  no_ref.checkpoints = {{0, false}, {50, false}};
  CHECK_THROWS_AS(save_manifest(no_ref), ValidationError);

  RunManifest two_refs = base_manifest(dir.path);
  two_refs.checkpoints = {{0, true}, {50, true}};
  CHECK_THROWS_AS(save_manifest(two_refs), ValidationError);

  RunManifest unsorted = base_manifest(dir.path);
  unsorted.checkpoints = {{50, true}, {0, false}};
  CHECK_THROWS_AS(save_manifest(unsorted), ValidationError);

  RunManifest positive_offset = base_manifest(dir.path);
  positive_offset.position_offsets = {-1, 0};
  CHECK_THROWS_AS(save_manifest(positive_offset), ValidationError);

  RunManifest decreasing = base_manifest(dir.path);
  decreasing.position_offsets = {-1, -2};
  CHECK_THROWS_AS(save_manifest(decreasing), ValidationError);

  // A manifest that lies about a blob's byte_length fails on load.
  RunManifest m = base_manifest(dir.path);
  write_field(indexed_field(m, 0, Split::Harmful, Role::Train), m);
  m.blobs[0].byte_length += 4;
  CHECK_THROWS_AS(save_manifest(m), ValidationError);
  m.blobs[0].byte_length -= 4;
  save_manifest(m);
  CHECK_NOTHROW(load_manifest(dir.path));

  CHECK_THROWS_AS(load_manifest(dir.path / "does_not_exist"), IoError);
}

TEST_CASE("saving twice produces byte-identical manifests") {
  TempDir dir("store_stable");
  RunManifest m = base_manifest(dir.path);
  write_field(indexed_field(m, 0, Split::Harmful, Role::Train), m);
  write_field(indexed_field(m, 50, Split::Safe, Role::Train), m);
  save_manifest(m);
  const auto first = read_bytes(dir.path / "manifest.json");
  save_manifest(m);
  const auto second = read_bytes(dir.path / "manifest.json");
  CHECK(first == second);

  // Re-loading and re-saving keeps the same bytes too.
  const RunManifest loaded = load_manifest(dir.path);
  save_manifest(loaded);
  CHECK(read_bytes(dir.path / "manifest.json") == first);
}

TEST_CASE("missing blob entries and missing files are distinct failures") {
  TempDir dir("store_missing");
  RunManifest m = base_manifest(dir.path);
  write_field(indexed_field(m, 0, Split::Harmful, Role::Train), m);
  save_manifest(m);
  const RunManifest loaded = load_manifest(dir.path);
  CHECK_THROWS_AS(load_field(loaded, 0, Split::Safe, Role::Train),
                  ValidationError);
  std::filesystem::remove(dir.path / loaded.blobs[0].relative_path);
  CHECK_THROWS_AS(load_field(loaded, 0, Split::Harmful, Role::Train), IoError);
}

TEST_CASE("leading-example slices keep the prefix and reject bad counts") {
  TempDir dir("store_take");
  RunManifest m = base_manifest(dir.path);
  const ActivationField f = indexed_field(m, 0, Split::Harmful, Role::Train);
  const ActivationField cut = take_examples(f, 2);
  CHECK(cut.examples == 2);
  REQUIRE(cut.data.size() == f.data.size() / 5 * 2);
  CHECK(std::memcmp(cut.data.data(), f.data.data(),
                    cut.data.size() * sizeof(float)) == 0);
  // Site means over the prefix match a direct recomputation.
  const Vec direct = (f.state64(0, 1, 2) + f.state64(1, 1, 2)) / 2.0;
  CHECK((cut.mean_state(1, 2) - direct).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(take_examples(f, 0), ValidationError);
  CHECK_THROWS_AS(take_examples(f, 6), ValidationError);
}
