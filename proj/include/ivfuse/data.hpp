// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ivfuse/imaging.hpp"

namespace ivfuse {

struct PairRecord {
  std::string stem;
  std::string path_v;
  std::string path_i;
};

struct PairSet {
  std::vector<PairRecord> records;
  std::vector<std::string> warnings;  // orphan stems etc.
  std::uint64_t seed = 0;
};

/// Root must contain `vi/` and `ir/` subdirectories with PNGs; pairs are
/// matched by filename stem, lexicographic order.
PairSet scan_pairs(const std::string& root);

/// Deterministic synthetic corpus written to `root/vi` and `root/ir` plus a
/// manifest.json. Visible images carry texture plus dark occluders, infrared
/// images smooth backgrounds plus bright blobs overlapping those occluders,
/// so the modalities are guaranteed complementary.
PairSet synth_pairs(int n, int size, std::uint64_t seed, const std::string& root);

/// A pair loaded into memory as registered gray images on the unit range.
struct LoadedPair {
  Image visible;  // luma if the source was color
  Image infrared;
};

LoadedPair load_pair(const PairRecord& rec);

struct Batch {
  std::vector<LoadedPair> pairs;
};

/// One epoch of batches: seeded shuffle, identical center (or seeded random)
/// crops on both modalities. Final partial batch is kept.
std::vector<Batch> batch_iter(const PairSet& pairs, int batch, std::uint64_t seed, int crop,
                              bool random_crop = false);

}  // namespace ivfuse
