#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rrf/geometry.hpp"
#include "rrf/metric.hpp"
#include "rrf/protocol.hpp"

namespace rrf {

/// Height x width x channels pixel tensor, stored [y][x][c].
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int w, int h, int c) : width(w), height(h), channels(c), pixels(std::size_t(w) * h * c, 0.0f) {}

  float& at(int x, int y, int c) { return pixels[(std::size_t(y) * width + x) * channels + c]; }
  float at(int x, int y, int c) const { return pixels[(std::size_t(y) * width + x) * channels + c]; }

  friend bool operator==(const Image&, const Image&) = default;
};

/// Horizontal mirror image.
Image mirror(const Image& image);

/// Integer translation by (dx, dy) with edge-replicating padding.
Image shift_image(const Image& image, int dx, int dy);

/// Copies the w x h x C patch at `p`, row-major [y][x][c].
std::vector<double> extract_patch(const Image& image, Position p, int patch_width,
                                  int patch_height);

struct AugmentOptions {
  int max_shift = 5;        // shifts drawn uniformly from [-max_shift, max_shift]
  double mask_ratio = 0.0;  // floor(mask_ratio * K) patches are zero-filled
};

/// Random shift, then zero-fills floor(mask_ratio * K) layout patches chosen by
/// a seeded draw without replacement.
Image augment(const Image& image, const PatchLayout& layout,
              const AugmentOptions& options, std::uint64_t seed);

/// Fixed random affine projection from w x h x C patch pixels to D dims.
class ToyEmbedder {
 public:
  ToyEmbedder(std::uint64_t seed, int patch_width, int patch_height,
              int channels, std::size_t dim = 512);

  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t input_size() const noexcept { return input_size_; }
  int patch_width() const noexcept { return patch_width_; }
  int patch_height() const noexcept { return patch_height_; }
  int channels() const noexcept { return channels_; }

  std::vector<double> embed_patch(std::span<const double> patch) const;

 private:
  std::uint64_t seed_;
  int patch_width_;
  int patch_height_;
  int channels_;
  std::size_t dim_;
  std::size_t input_size_;
  std::vector<double> projection_;  // dim x input_size, row-major
  std::vector<double> bias_;
};

/// Embeds every layout patch. With `flip`, the mirrored image is embedded
/// too, its rows re-indexed through the mirror map so that row i describes
/// the content of position i, and the two sets are summed.
EmbeddingSet embed(const ToyEmbedder& embedder, const Image& image,
                   const PatchLayout& layout, bool flip,
                   const std::string& image_id = {});

struct BenchmarkOptions {
  int identities = 20;        // evaluation identities
  int train_identities = 20;  // disjoint identities used to fit fusion weights
  int images_per_identity = 4;
  int width = 112;
  int height = 112;
  int channels = 1;
  double within_sigma = 0.5;   // within-identity noise scale
  double heterogeneity = 0.0;  // spread of per-region noise multipliers
  int noise_cell = 14;         // side of a region sharing one noise multiplier
  int folds = 10;
  bool augment = false;
  AugmentOptions augmentation;
  std::uint64_t seed = 0;
};

/// Truth about a generated benchmark.
struct GroundTruth {
  std::map<std::string, int> identity;  // image id -> identity index
  std::map<std::string, std::string> split;
  std::vector<double> noise_multipliers;  // row-major over noise cells
  int noise_cols = 0;
  int noise_rows = 0;
};

struct Benchmark {
  BenchmarkOptions options;
  std::vector<std::pair<std::string, Image>> images;  // sorted by id
  PairList pairs;        // evaluation pairs, folds assigned round-robin
  PairList train_pairs;  // pairs over training identities
  GroundTruth truth;

  const Image* find(const std::string& id) const;
};

/// Identities are i.i.d. Gaussian pixel fields. Each image adds noise scaled by
/// within_sigma and by the multiplier of its noise cell. Genuine pairs are all
/// same-identity image pairs; the same number of impostor pairs is sampled.
/// `layout` is only used for the optional masking augmentation.
Benchmark generate_benchmark(const BenchmarkOptions& options,
                             const PatchLayout& layout);

}  // namespace rrf
