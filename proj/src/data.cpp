// SPDX-License-Identifier: Apache-2.0
#include "ivfuse/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include <json.hpp>

#include "ivfuse/rng.hpp"

namespace ivfuse {

namespace fs = std::filesystem;

PairSet scan_pairs(const std::string& root) {
  const fs::path vi = fs::path(root) / "vi";
  const fs::path ir = fs::path(root) / "ir";
  if (!fs::is_directory(vi) || !fs::is_directory(ir))
    throw DataError("scan_pairs: " + root + " must contain vi/ and ir/ subdirectories");
  auto stems = [](const fs::path& dir) {
    std::map<std::string, std::string> m;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.path().extension() == ".png") m[e.path().stem().string()] = e.path().string();
    return m;
  };
  const auto sv = stems(vi), si = stems(ir);
  PairSet set;
  for (const auto& [stem, path] : sv) {
    auto it = si.find(stem);
    if (it != si.end())
      set.records.push_back({stem, path, it->second});
    else
      set.warnings.push_back("unmatched visible image: " + stem);
  }
  for (const auto& [stem, _] : si)
    if (!sv.count(stem)) set.warnings.push_back("unmatched infrared image: " + stem);
  // map iteration is already lexicographic; keep the order explicit anyway
  std::sort(set.records.begin(), set.records.end(),
            [](const PairRecord& a, const PairRecord& b) { return a.stem < b.stem; });
  return set;
}

namespace {

Eigen::ArrayXXd smooth_noise(Rng& rng, int size, int passes) {
  Eigen::ArrayXXd x(size, size);
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) x(i, j) = rng.uniform();
  for (int p = 0; p < passes; ++p) {
    Eigen::ArrayXXd t = x;
    for (int i = 0; i < size; ++i)
      for (int j = 0; j < size; ++j) {
        double acc = 0;
        for (int u = -1; u <= 1; ++u)
          for (int v = -1; v <= 1; ++v)
            acc += t(std::clamp(i + u, 0, size - 1), std::clamp(j + v, 0, size - 1));
        x(i, j) = acc / 9.0;
      }
  }
  return x;
}

struct Rect {
  int r0, c0, h, w;
};

Rect random_rect(Rng& rng, int size, int min_side, int max_side) {
  const int h = min_side + static_cast<int>(rng.uniform_int(max_side - min_side + 1));
  const int w = min_side + static_cast<int>(rng.uniform_int(max_side - min_side + 1));
  const int r0 = static_cast<int>(rng.uniform_int(size - h));
  const int c0 = static_cast<int>(rng.uniform_int(size - w));
  return {r0, c0, h, w};
}

}  // namespace

PairSet synth_pairs(int n, int size, std::uint64_t seed, const std::string& root) {
  if (size < 8) throw ConfigError("synth_pairs: size too small");
  const fs::path vi_dir = fs::path(root) / "vi";
  const fs::path ir_dir = fs::path(root) / "ir";
  fs::create_directories(vi_dir);
  fs::create_directories(ir_dir);

  PairSet set;
  set.seed = seed;
  for (int k = 0; k < n; ++k) {
    Rng rng(seed * 1000003ULL + static_cast<std::uint64_t>(k));

    // visible: textured background + gradients + dark occluders + a bright
    // overexposure-style patch
    Eigen::ArrayXXd vis = 0.25 + 0.5 * smooth_noise(rng, size, 2);
    const double gdir = rng.uniform(0.0, 2.0 * M_PI);
    for (int i = 0; i < size; ++i)
      for (int j = 0; j < size; ++j)
        vis(i, j) += 0.15 * (std::cos(gdir) * i + std::sin(gdir) * j) / size;
    // high-frequency texture so the visible modality carries gradient detail
    const double fx = 2.0 + rng.uniform() * 3.0, fy = 2.0 + rng.uniform() * 3.0;
    const double phase = rng.uniform(0.0, 2.0 * M_PI);
    for (int i = 0; i < size; ++i)
      for (int j = 0; j < size; ++j)
        vis(i, j) += 0.08 * std::sin(2.0 * M_PI * (fx * i + fy * j) / size + phase);

    const Rect occluder = random_rect(rng, size, size / 4, size / 3);
    for (int i = occluder.r0; i < occluder.r0 + occluder.h; ++i)
      for (int j = occluder.c0; j < occluder.c0 + occluder.w; ++j) vis(i, j) = 0.04;

    const Rect bright = random_rect(rng, size, size / 6, size / 4);
    for (int i = bright.r0; i < bright.r0 + bright.h; ++i)
      for (int j = bright.c0; j < bright.c0 + bright.w; ++j) vis(i, j) = 0.97;

    // infrared: smooth background + bright blobs, one inside the occluder
    Eigen::ArrayXXd ir = 0.2 + 0.15 * smooth_noise(rng, size, 3);
    auto add_blob = [&](double cr, double cc, double radius, double amp) {
      for (int i = 0; i < size; ++i)
        for (int j = 0; j < size; ++j) {
          const double d2 = (i - cr) * (i - cr) + (j - cc) * (j - cc);
          ir(i, j) += amp * std::exp(-d2 / (2.0 * radius * radius));
        }
    };
    add_blob(occluder.r0 + occluder.h / 2.0, occluder.c0 + occluder.w / 2.0,
             std::min(occluder.h, occluder.w) / 3.0, 0.75);
    const int extra = 1 + static_cast<int>(rng.uniform_int(2));
    for (int b = 0; b < extra; ++b)
      add_blob(rng.uniform(0.0, size - 1.0), rng.uniform(0.0, size - 1.0),
               size / 10.0 + rng.uniform() * size / 10.0, 0.35);
    // keep the IR side dull under the visible bright patch so V dominates there
    for (int i = bright.r0; i < bright.r0 + bright.h; ++i)
      for (int j = bright.c0; j < bright.c0 + bright.w; ++j)
        ir(i, j) = std::min(ir(i, j), 0.35);

    char stem[16];
    std::snprintf(stem, sizeof(stem), "%05d", k);
    const std::string vpath = (vi_dir / (std::string(stem) + ".png")).string();
    const std::string ipath = (ir_dir / (std::string(stem) + ".png")).string();
    write_png(vpath, Image({vis}, Range::Unit, Colorspace::Gray));
    write_png(ipath, Image({ir}, Range::Unit, Colorspace::Gray));
    set.records.push_back({stem, vpath, ipath});
  }

  nlohmann::json manifest = {{"generator", "ivfuse-synth-v1"},
                             {"seed", seed},
                             {"count", n},
                             {"size", size}};
  std::ofstream os(fs::path(root) / "manifest.json");
  os << manifest.dump(2) << "\n";
  return set;
}

LoadedPair load_pair(const PairRecord& rec) {
  LoadedPair pair;
  pair.visible = luma(read_png(rec.path_v));
  pair.infrared = luma(read_png(rec.path_i));
  if (pair.visible.height() != pair.infrared.height() ||
      pair.visible.width() != pair.infrared.width()) {
    const int h = std::min(pair.visible.height(), pair.infrared.height());
    const int w = std::min(pair.visible.width(), pair.infrared.width());
    auto center = [&](const Image& img) {
      return crop(img, (img.height() - h) / 2, (img.width() - w) / 2, h, w);
    };
    pair.visible = center(pair.visible);
    pair.infrared = center(pair.infrared);
  }
  return pair;
}

std::vector<Batch> batch_iter(const PairSet& pairs, int batch, std::uint64_t seed, int crop,
                              bool random_crop) {
  if (batch < 1) throw ConfigError("batch_iter: batch must be >= 1");
  std::vector<int> order(pairs.records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  Rng rng(seed);
  rng.shuffle(order);

  std::vector<Batch> batches;
  Batch current;
  for (int idx : order) {
    LoadedPair pair = load_pair(pairs.records[idx]);
    const int h = pair.visible.height(), w = pair.visible.width();
    if (crop > h || crop > w)
      throw ConfigError("batch_iter: crop larger than image " + pairs.records[idx].stem);
    int r0 = (h - crop) / 2, c0 = (w - crop) / 2;
    if (random_crop) {
      r0 = static_cast<int>(rng.uniform_int(h - crop + 1));
      c0 = static_cast<int>(rng.uniform_int(w - crop + 1));
    }
    // identical coordinates on both modalities (registered-pair assumption)
    pair.visible = crop == h && crop == w ? pair.visible : ivfuse::crop(pair.visible, r0, c0, crop, crop);
    pair.infrared = crop == h && crop == w ? pair.infrared : ivfuse::crop(pair.infrared, r0, c0, crop, crop);
    current.pairs.push_back(std::move(pair));
    if (static_cast<int>(current.pairs.size()) == batch) {
      batches.push_back(std::move(current));
      current = Batch{};
    }
  }
  if (!current.pairs.empty()) batches.push_back(std::move(current));
  return batches;
}

}  // namespace ivfuse
