#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rrf/fusion.hpp"

namespace rrf {

/// K x D patch feature matrix of one image. Immutable once constructed; the
/// constructor rejects non-finite values and all-zero rows.
class EmbeddingSet {
 public:
  EmbeddingSet() = default;
  EmbeddingSet(std::string image_id, std::size_t patch_count,
               std::size_t dim, std::vector<double> values,
               std::uint64_t layout_fingerprint);

  const std::string& image_id() const noexcept { return image_id_; }
  std::size_t patch_count() const noexcept { return patch_count_; }
  std::size_t dim() const noexcept { return dim_; }
  std::uint64_t layout_fingerprint() const noexcept { return fingerprint_; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(values_).subspan(i * dim_, dim_);
  }

  friend bool operator==(const EmbeddingSet&, const EmbeddingSet&) = default;

 private:
  std::string image_id_;
  std::size_t patch_count_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> values_;
  std::uint64_t fingerprint_ = 0;
};

/// Throws Error(Incompatible) unless K, D and the layout fingerprint agree.
void check_compatible(const EmbeddingSet& a, const EmbeddingSet& b);

enum class SimilarityMode { RegionBased, RRFNet };

std::string_view to_string(SimilarityMode m);
SimilarityMode parse_similarity_mode(std::string_view name);

/**
 * Global similarity together with its additive parts.
 *
 * region_based: `local` holds the K per-position cosines and `terms` the
 * weighted terms w_i * local_i, which sum to `global_score`. `logit` adds the
 * model bias.
 *
 * rrfnet: `contributions` is the row-major K x K matrix c[i][j] for patch i of
 * image A against patch j of image B. Its entries sum to `global_score`.
 */
struct SimilarityBreakdown {
  SimilarityMode mode = SimilarityMode::RRFNet;
  std::size_t patch_count = 0;
  double global_score = 0.0;
  double logit = 0.0;
  std::vector<double> local;
  std::vector<double> terms;
  std::vector<double> contributions;

  double contribution(std::size_t i, std::size_t j) const {
    return contributions[i * patch_count + j];
  }
};

/// Cosine similarity of two nonzero finite vectors.
double local_similarity(std::span<const double> a, std::span<const double> b);

/// Per-position cosines of corresponding patches.
std::vector<double> local_similarities(const EmbeddingSet& a,
                                       const EmbeddingSet& b);

SimilarityBreakdown region_similarity(const EmbeddingSet& a,
                                      const EmbeddingSet& b,
                                      const FusionModel& model);

/// Column means of the patch matrix.
std::vector<double> mean_embedding(const EmbeddingSet& a);

/// Cosine of the two mean embeddings.
double rrfnet_similarity_direct(const EmbeddingSet& a, const EmbeddingSet& b);

/// Same score assembled from all K x K patch-pair dot products, normalized by
/// the two self Gram sums. Each contribution is
/// (f_i^A . f_j^B) / (K^2 |F^A| |F^B|).
SimilarityBreakdown rrfnet_similarity_decomposed(const EmbeddingSet& a,
                                                 const EmbeddingSet& b);

/// out = a * b^T for row-major a (m x d) and b (n x d); every entry is a
/// compensated dot product.
void cross_products(std::span<const double> a, std::size_t m,
                    std::span<const double> b, std::size_t n, std::size_t d,
                    std::span<double> out);

enum class Side { A, B };

/// Per-patch explanation on one image. rrfnet: row sums (A) or column sums (B)
/// of the contribution matrix. region_based: the weighted terms (either side).
std::vector<double> heatmap(const SimilarityBreakdown& breakdown, Side side);

/// Elementwise sum of an embedding set and the embeddings of its mirrored
/// image (already re-indexed so row i belongs to position i).
EmbeddingSet flip_merge(const EmbeddingSet& e, const EmbeddingSet& flipped);

}  // namespace rrf
