#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fedhp/common.hpp"
#include "fedhp/optics.hpp"
#include "fedhp/rng.hpp"

namespace fedhp::dataio {

/// Portable tensor container, byte layout (little-endian throughout):
///   magic "FHT1" | rank u32 | extents rank*u32 | payload f32 row-major
/// (last index fastest). Round trips are bit-exact.
struct LoadedTensor {
  std::vector<std::size_t> shape;
  std::vector<float> data;
};

void save_tensor(const std::filesystem::path& path,
                 std::span<const std::size_t> shape,
                 std::span<const float> data);
LoadedTensor load_tensor(const std::filesystem::path& path);

/// Checkpoint directory: manifest.json naming every tensor
/// (group/name/role/shape -> relative file), plus one container file each.
struct CheckpointEntry {
  std::string group;
  std::string name;
  std::string role;  // "param" | "optimizer" | "mask" | "cube"
  std::vector<std::size_t> shape;
  std::vector<float> data;
};

struct CheckpointData {
  std::uint64_t round = 0;
  std::string config_hash;
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry* find(const std::string& group,
                              const std::string& name) const;
  std::vector<const CheckpointEntry*> group_entries(
      const std::string& group) const;
};

void save_checkpoint(const std::filesystem::path& dir,
                     const CheckpointData& data);
CheckpointData load_checkpoint(const std::filesystem::path& dir);

struct DatasetSpec {
  enum class Source { synthetic, files };
  Source source = Source::synthetic;
  std::string path;  // files source: directory produced by gen-data
  std::size_t count = 18;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t bands = 4;
  double split = 2.0 / 3.0;  // train fraction, in (0,1)
  double smoothness = 0.25;

  void validate() const;
};

/// Smooth synthetic scene: a handful of random 2D Gaussian bumps, each
/// modulated by a low-order cosine spectral profile, min-max normalized to
/// [0,1]. Spatially and spectrally correlated so reconstruction is learnable.
optics::HyperspectralCube gen_synthetic_cube(Rng& rng, std::size_t h,
                                             std::size_t w, std::size_t bands,
                                             double smoothness);

/// Deterministic shuffled partition of indices 0..n-1 into c disjoint parts
/// whose sizes differ by at most one.
std::vector<std::vector<std::size_t>> split_dataset(std::size_t n,
                                                    std::size_t c,
                                                    const Rng& rng);

/// Materializes the dataset: synthetic generation (seeded substreams per
/// cube) or loading from a gen-data directory.
std::vector<optics::HyperspectralCube> load_or_generate_cubes(
    const DatasetSpec& spec, const Rng& rng);

/// Writes cubes as container files plus dataset.json (used by source=files).
void save_dataset(const std::filesystem::path& dir,
                  const std::vector<optics::HyperspectralCube>& cubes);
std::vector<optics::HyperspectralCube> load_dataset(
    const std::filesystem::path& dir);

}  // namespace fedhp::dataio
