#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "rrf/fusion.hpp"
#include "rrf/geometry.hpp"
#include "rrf/metric.hpp"
#include "rrf/protocol.hpp"
#include "rrf/store.hpp"
#include "rrf/toyembed.hpp"

namespace rrf::io {

namespace fs = std::filesystem;

// RRFE embedding file: 24-byte header then K*D float32, all little-endian.
//   0  magic "RRFE"
//   4  u32 version (= 1)
//   8  u32 K
//  12  u32 D
//  16  u64 layout fingerprint
inline constexpr std::string_view kEmbeddingMagic = "RRFE";
inline constexpr std::uint32_t kEmbeddingVersion = 1;
inline constexpr std::size_t kEmbeddingHeaderSize = 24;

struct EmbeddingFileHeader {
  std::uint32_t version = kEmbeddingVersion;
  std::uint32_t patch_count = 0;
  std::uint32_t dim = 0;
  std::uint64_t layout_fingerprint = 0;
};

/// Serialized bytes of an embedding set (values rounded to float32).
std::vector<std::uint8_t> encode_embeddings(const EmbeddingSet& set);
EmbeddingSet decode_embeddings(std::span<const std::uint8_t> bytes,
                               std::optional<std::uint64_t> expected_fingerprint,
                               const std::string& image_id);

void write_embeddings(const EmbeddingSet& set, const fs::path& path);

/// Validates magic, version, size and (when given) the layout fingerprint;
/// the set's image id defaults to the file stem.
EmbeddingSet read_embeddings(const fs::path& path,
                             std::optional<std::uint64_t> expected_fingerprint,
                             const std::string& image_id = {});
EmbeddingSet read_embeddings(const fs::path& path, const PatchLayout& expected,
                             const std::string& image_id = {});

EmbeddingFileHeader read_embedding_header(const fs::path& path);

// RRFI toy image file: "RRFI", u32 version, u32 W, u32 H, u32 C, W*H*C float32.
void write_image(const Image& image, const fs::path& path);
Image read_image(const fs::path& path);

struct Manifest {
  PatchLayout layout;
  std::map<std::string, std::string> images;  // image id -> path relative to manifest
  std::string flip_policy = "none";           // none | merged
  nlohmann::json embedder = nlohmann::json::object();
};

nlohmann::json to_json(const Manifest& m);
Manifest manifest_from_json(const nlohmann::json& j);
void write_manifest(const Manifest& m, const fs::path& path);
Manifest read_manifest(const fs::path& path);

/// Loads every embedding file named by the manifest and checks each one
/// against the manifest layout.
EmbeddingStore load_store(const fs::path& manifest_path);

/// CSV `id_a,id_b,label,fold`; a header line with exactly those names is
/// optional. Exactly four columns per line, label in {0, 1}, fold >= 0.
PairList parse_pairs(std::string_view text);
PairList load_pairs(const fs::path& path);
std::string format_pairs(const PairList& pairs);
void write_pairs(const PairList& pairs, const fs::path& path);

enum class HeatmapFormat { Csv, Pgm };

/// CSV: header `x,y,value`, one row per layout position in layout order.
std::string heatmap_csv(std::span<const double> values, const PatchLayout& layout);

/// 8-bit binary graymap. Each grid cell is a patch_width x patch_height block;
/// values are min-max normalized to 0..255 over the layout positions (a
/// constant map renders as 128). Cells with no layout position stay 0.
std::vector<std::uint8_t> heatmap_pgm(std::span<const double> values,
                                      const PatchLayout& layout);

void export_heatmap(std::span<const double> values, const PatchLayout& layout,
                    const fs::path& path, HeatmapFormat format);

/// K lines of K comma-separated values; line i = patch i of image A.
std::string contributions_csv(const SimilarityBreakdown& breakdown,
                              double display_scale = 1.0);

nlohmann::json layout_json(const PatchLayout& layout);

nlohmann::json to_json(const FusionModel& model);
FusionModel model_from_json(const nlohmann::json& j);

nlohmann::json to_json(const ScoreCombiner& combiner);
ScoreCombiner combiner_from_json(const nlohmann::json& j);

nlohmann::json to_json(const VerificationReport& report);

/// Breakdown as JSON. Per-patch values are scaled by `display_scale`; the
/// global score is always reported unscaled.
nlohmann::json to_json(const SimilarityBreakdown& breakdown,
                       const PatchLayout& layout, double display_scale = 1.0);

std::string read_text(const fs::path& path);
void write_text(const fs::path& path, std::string_view text);
nlohmann::json read_json(const fs::path& path);
/// Pretty-printed (2-space) JSON followed by a newline.
void write_json(const fs::path& path, const nlohmann::json& j);

/// Writes images/<id>.rrfi, pairs.csv, train_pairs.csv, ground_truth.json and
/// benchmark.json below `dir`.
void write_benchmark(const Benchmark& bench, const fs::path& dir);

/// Image ids of a benchmark directory, in sorted order.
std::vector<std::string> benchmark_image_ids(const fs::path& dir);

}  // namespace rrf::io
