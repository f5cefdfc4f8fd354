#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "seunet/image_io.hpp"
#include "seunet/tensor.hpp"

namespace seunet {

struct ManifestEntry {
  std::filesystem::path image;
  std::filesystem::path mask;
  int line = 0;  // 1-based source line, 0 when built in memory
};

/// Text format: one "image<TAB>mask" pair per line, paths relative to the manifest's
/// directory unless absolute. Lines starting with '#' are comments, except the
/// directives "# size: <pixels>" and "# split: <tag>".
struct Manifest {
  std::vector<ManifestEntry> entries;
  Index target_size = 0;  // 0: not declared
  std::string split;      // "train", "test" or empty
};

Manifest load_manifest(const std::filesystem::path& path);
/// Writes paths relative to the manifest's directory where possible.
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

struct Sample {
  Tensor<float> image;  // (3, H, W) in [0, 1]
  Tensor<float> mask;   // (1, H, W) in {0, 1}
  std::string id;
};

/// Image: bilinear resize, scaled to [0, 1]; gray sources are replicated to 3 channels.
/// Mask: nearest resize of the per-pixel channel maximum, then 1 where value >= 128.
Sample load_sample(const ManifestEntry& entry, Index height, Index width);
std::vector<Sample> load_samples(const Manifest& manifest, Index height, Index width);

/// Stacks samples into (N, 3, H, W) images and (N, 1, H, W) masks.
struct Batch {
  Tensor<float> images;
  Tensor<float> masks;
};
Batch stack_samples(std::span<const Sample> samples, std::span<const std::size_t> order = {});

struct Split {
  Manifest train;
  Manifest test;
};

/// Seeded shuffle, first round(n * fraction) entries go to training. Each side keeps
/// the original manifest order.
Split split_dataset(const Manifest& manifest, double train_fraction, std::uint64_t seed);
Split split_dataset_count(const Manifest& manifest, std::size_t train_count, std::uint64_t seed);

/// Published dataset sizes and train/test counts.
struct DatasetPreset {
  std::string_view name;
  Index size;
  std::size_t train;
  std::size_t test;
};

std::span<const DatasetPreset> dataset_presets();
const DatasetPreset& find_preset(std::string_view name);
/// Splits a full dataset manifest into the preset's train/test counts.
Split preset_split(const Manifest& full, const DatasetPreset& preset, std::uint64_t seed);

struct Ellipse {
  double cx, cy;  // centre in pixel coordinates (x = column, y = row)
  double a, b;    // semi-axes along x and y
  double r, g, bl;

  bool contains(double x, double y) const {
    const double dx = (x - cx) / a;
    const double dy = (y - cy) / b;
    return dx * dx + dy * dy <= 1.0;
  }
};

struct SyntheticDataset {
  Manifest manifest;
  std::filesystem::path manifest_path;
  std::vector<std::vector<Ellipse>> ellipses;  // per image
};

/// Writes n image/mask pairs (image_NNNN.ppm, mask_NNNN.pgm) of 1-3 bright axis-aligned
/// ellipses on a dark noisy background, plus manifest.tsv and ellipses.tsv. Mask pixel
/// (x, y) is 1 iff some ellipse contains the point (x, y).
SyntheticDataset generate_synthetic(int n, Index size, std::uint64_t seed, const std::filesystem::path& out_dir);

}  // namespace seunet
