#include "rrf/toyembed.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "rrf/error.hpp"
#include "rrf/random.hpp"

namespace rrf {

namespace {

// stream ids for mix_seed
enum : std::uint64_t {
  kNoiseCells = 1,
  kPairs = 2,
  kShuffle = 3,
  kProjection = 4,
  kBias = 5,
  kIdentityBase = 1'000,
  kImageBase = 1'000'000,
};

constexpr double kBiasScale = 0.1;

std::string image_name(char split, int identity, int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%03d_%02d", split, identity, index);
  return buf;
}

}  // namespace

Image mirror(const Image& image) {
  Image out(image.width, image.height, image.channels);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < image.channels; ++c)
        out.at(x, y, c) = image.at(image.width - 1 - x, y, c);
  return out;
}

Image shift_image(const Image& image, int dx, int dy) {
  Image out(image.width, image.height, image.channels);
  for (int y = 0; y < image.height; ++y) {
    const int sy = std::clamp(y - dy, 0, image.height - 1);
    for (int x = 0; x < image.width; ++x) {
      const int sx = std::clamp(x - dx, 0, image.width - 1);
      for (int c = 0; c < image.channels; ++c) out.at(x, y, c) = image.at(sx, sy, c);
    }
  }
  return out;
}

std::vector<double> extract_patch(const Image& image, Position p,
                                  int patch_width, int patch_height) {
  if (p.x < 0 || p.y < 0 || p.x + patch_width > image.width ||
      p.y + patch_height > image.height)
    throw Error(ErrorKind::Domain, "patch lies outside the image");
  std::vector<double> out;
  out.reserve(std::size_t(patch_width) * patch_height * image.channels);
  for (int y = p.y; y < p.y + patch_height; ++y)
    for (int x = p.x; x < p.x + patch_width; ++x)
      for (int c = 0; c < image.channels; ++c) out.push_back(image.at(x, y, c));
  return out;
}

Image augment(const Image& image, const PatchLayout& layout,
              const AugmentOptions& options, std::uint64_t seed) {
  if (options.max_shift < 0)
    throw Error(ErrorKind::Domain, "shift range must be non-negative");
  if (!(options.mask_ratio >= 0.0 && options.mask_ratio <= 1.0))
    throw Error(ErrorKind::Domain, "mask ratio must lie in [0, 1]");
  if (image.width != layout.image_width || image.height != layout.image_height)
    throw Error(ErrorKind::Domain, "image dimensions do not match the layout");

  Rng rng(seed);
  const int dx = static_cast<int>(rng.integer(-options.max_shift, options.max_shift));
  const int dy = static_cast<int>(rng.integer(-options.max_shift, options.max_shift));
  Image out = (dx == 0 && dy == 0) ? image : shift_image(image, dx, dy);

  const std::size_t k = layout.size();
  const auto masked = static_cast<std::size_t>(
      std::floor(options.mask_ratio * static_cast<double>(k) + 1e-9));
  std::vector<std::size_t> order(k);
  for (std::size_t i = 0; i < k; ++i) order[i] = i;
  // partial Fisher-Yates
  for (std::size_t i = 0; i < masked; ++i) {
    const auto j = static_cast<std::size_t>(
        rng.integer(static_cast<long>(i), static_cast<long>(k) - 1));
    std::swap(order[i], order[j]);
    const Position p = layout.positions[order[i]];
    for (int y = p.y; y < p.y + layout.patch_height; ++y)
      for (int x = p.x; x < p.x + layout.patch_width; ++x)
        for (int c = 0; c < out.channels; ++c) out.at(x, y, c) = 0.0f;
  }
  return out;
}

ToyEmbedder::ToyEmbedder(std::uint64_t seed, int patch_width, int patch_height,
                         int channels, std::size_t dim)
    : seed_(seed),
      patch_width_(patch_width),
      patch_height_(patch_height),
      channels_(channels),
      dim_(dim) {
  if (patch_width <= 0 || patch_height <= 0 || channels <= 0 || dim == 0)
    throw Error(ErrorKind::Domain, "embedder dimensions must be positive");
  input_size_ = std::size_t(patch_width) * patch_height * channels;
  projection_.resize(dim_ * input_size_);
  const double scale = 1.0 / std::sqrt(static_cast<double>(input_size_));
  Rng proj(mix_seed(seed, kProjection));
  for (double& v : projection_) v = proj.normal() * scale;
  Rng bias(mix_seed(seed, kBias));
  bias_.resize(dim_);
  for (double& v : bias_) v = bias.normal() * kBiasScale;
}

std::vector<double> ToyEmbedder::embed_patch(std::span<const double> patch) const {
  if (patch.size() != input_size_)
    throw Error(ErrorKind::Domain,
                "patch has " + std::to_string(patch.size()) +
                    " values, embedder expects " + std::to_string(input_size_));
  std::vector<double> out(bias_);
  for (std::size_t d = 0; d < dim_; ++d) {
    const double* w = projection_.data() + d * input_size_;
    double acc = 0.0;
    for (std::size_t k = 0; k < input_size_; ++k) acc += w[k] * patch[k];
    out[d] += acc;
  }
  return out;
}

namespace {

std::vector<double> embed_rows(const ToyEmbedder& embedder, const Image& image,
                               const PatchLayout& layout,
                               const std::vector<std::size_t>* reindex) {
  const std::size_t k = layout.size();
  std::vector<double> values;
  values.reserve(k * embedder.dim());
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t src = reindex ? (*reindex)[i] : i;
    const auto patch = extract_patch(image, layout.positions[src],
                                     layout.patch_width, layout.patch_height);
    const auto row = embedder.embed_patch(patch);
    values.insert(values.end(), row.begin(), row.end());
  }
  return values;
}

}  // namespace

EmbeddingSet embed(const ToyEmbedder& embedder, const Image& image,
                   const PatchLayout& layout, bool flip,
                   const std::string& image_id) {
  if (image.width != layout.image_width || image.height != layout.image_height)
    throw Error(ErrorKind::Domain, "image is " + std::to_string(image.width) + "x" +
                                       std::to_string(image.height) + ", layout expects " +
                                       std::to_string(layout.image_width) + "x" +
                                       std::to_string(layout.image_height));
  if (image.channels != embedder.channels() ||
      layout.patch_width != embedder.patch_width() ||
      layout.patch_height != embedder.patch_height())
    throw Error(ErrorKind::Domain, "embedder patch shape does not match layout/image");

  const std::size_t k = layout.size();
  const std::uint64_t fingerprint = layout_fingerprint(layout);
  EmbeddingSet plain(image_id, k, embedder.dim(),
                     embed_rows(embedder, image, layout, nullptr), fingerprint);
  if (!flip) return plain;

  const MirrorMap m = mirror_map(layout);
  EmbeddingSet flipped(image_id, k, embedder.dim(),
                       embed_rows(embedder, mirror(image), layout, &m.pairs),
                       fingerprint);
  return flip_merge(plain, flipped);
}

const Image* Benchmark::find(const std::string& id) const {
  auto it = std::lower_bound(images.begin(), images.end(), id,
                             [](const auto& e, const std::string& v) { return e.first < v; });
  return it != images.end() && it->first == id ? &it->second : nullptr;
}

namespace {

struct SplitSpec {
  char prefix;
  int identity_offset;
  int identities;
};

PairList make_pairs(const std::vector<std::string>& ids,
                    const std::vector<int>& identity, int folds,
                    std::uint64_t seed) {
  PairList out;
  const std::size_t n = ids.size();
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b)
      if (identity[a] == identity[b]) out.entries.push_back({ids[a], ids[b], 1, 0});
  const std::size_t genuine = out.entries.size();

  Rng rng(mix_seed(seed, kPairs));
  std::set<std::pair<std::size_t, std::size_t>> seen;
  while (seen.size() < genuine) {
    auto a = static_cast<std::size_t>(rng.integer(0, static_cast<long>(n) - 1));
    auto b = static_cast<std::size_t>(rng.integer(0, static_cast<long>(n) - 1));
    if (identity[a] == identity[b]) continue;
    if (a > b) std::swap(a, b);
    if (seen.insert({a, b}).second) out.entries.push_back({ids[a], ids[b], 0, 0});
  }

  Rng shuffle(mix_seed(seed, kShuffle));
  for (std::size_t i = out.entries.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(shuffle.integer(0, static_cast<long>(i) - 1));
    std::swap(out.entries[i - 1], out.entries[j]);
  }
  for (std::size_t i = 0; i < out.entries.size(); ++i)
    out.entries[i].fold = static_cast<int>(i % static_cast<std::size_t>(folds));
  return out;
}

}  // namespace

Benchmark generate_benchmark(const BenchmarkOptions& options,
                             const PatchLayout& layout) {
  if (options.identities < 2 || options.train_identities < 2)
    throw Error(ErrorKind::Domain,
                "at least two identities per split are needed for impostor pairs");
  if (options.images_per_identity < 2)
    throw Error(ErrorKind::Domain, "at least two images per identity are needed");
  if (options.width <= 0 || options.height <= 0 || options.channels <= 0 ||
      options.noise_cell <= 0)
    throw Error(ErrorKind::Domain, "benchmark dimensions must be positive");
  if (options.folds < 2) throw Error(ErrorKind::Domain, "need at least two folds");
  if (!(options.within_sigma >= 0.0) || !(options.heterogeneity >= 0.0))
    throw Error(ErrorKind::Domain, "noise parameters must be non-negative");
  if (options.augment && (layout.image_width != options.width ||
                          layout.image_height != options.height))
    throw Error(ErrorKind::Domain, "augmentation layout does not match image size");

  Benchmark bench;
  bench.options = options;
  auto& truth = bench.truth;
  truth.noise_cols = (options.width + options.noise_cell - 1) / options.noise_cell;
  truth.noise_rows = (options.height + options.noise_cell - 1) / options.noise_cell;
  Rng cells(mix_seed(options.seed, kNoiseCells));
  truth.noise_multipliers.resize(std::size_t(truth.noise_cols) * truth.noise_rows);
  for (double& m : truth.noise_multipliers) m = 1.0 + options.heterogeneity * cells.uniform();

  const SplitSpec splits[] = {{'e', 0, options.identities},
                              {'t', options.identities, options.train_identities}};
  std::uint64_t image_counter = 0;
  for (const auto& split : splits) {
    std::vector<std::string> ids;
    std::vector<int> identity;
    for (int s = 0; s < split.identities; ++s) {
      const int global_id = split.identity_offset + s;
      Rng base_rng(mix_seed(options.seed, kIdentityBase + std::uint64_t(global_id)));
      Image base(options.width, options.height, options.channels);
      for (float& p : base.pixels) p = static_cast<float>(base_rng.normal());

      for (int k = 0; k < options.images_per_identity; ++k) {
        const std::string id = image_name(split.prefix, s, k);
        Rng noise(mix_seed(options.seed, kImageBase + image_counter++));
        Image img = base;
        for (int y = 0; y < img.height; ++y)
          for (int x = 0; x < img.width; ++x) {
            const double mult =
                truth.noise_multipliers[std::size_t(y / options.noise_cell) * truth.noise_cols +
                                        std::size_t(x / options.noise_cell)];
            for (int c = 0; c < img.channels; ++c)
              img.at(x, y, c) += static_cast<float>(options.within_sigma * mult * noise.normal());
          }
        if (options.augment)
          img = augment(img, layout, options.augmentation, noise.next());
        ids.push_back(id);
        identity.push_back(global_id);
        truth.identity[id] = global_id;
        truth.split[id] = split.prefix == 'e' ? "eval" : "train";
        bench.images.emplace_back(id, std::move(img));
      }
    }
    auto pairs = make_pairs(ids, identity, options.folds,
                            mix_seed(options.seed, std::uint64_t(split.prefix)));
    if (pairs.size() < std::size_t(options.folds))
      throw Error(ErrorKind::Domain, "too few pairs to fill every fold");
    (split.prefix == 'e' ? bench.pairs : bench.train_pairs) = std::move(pairs);
  }
  std::sort(bench.images.begin(), bench.images.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  return bench;
}

}  // namespace rrf
