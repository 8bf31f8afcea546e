#include "rrf/metric.hpp"

#include <cmath>
#include <string>

#include "rrf/accurate.hpp"
#include "rrf/error.hpp"

namespace rrf {

namespace {

// Error-free accumulation state for one output entry of the cross product.
struct Dot2 {
  double p = 0.0;
  double s = 0.0;

  void add(double x, double y) noexcept {
    const double h = x * y;
    const double r = std::fma(x, y, -h);
    const double t = p + h;
    const double z = t - p;
    s += ((p - (t - z)) + (h - z)) + r;
    p = t;
  }
  double value() const noexcept { return p + s; }
};

constexpr std::size_t kTile = 4;

double total(std::span<const double> matrix) { return accurate::sum(matrix); }

double self_gram_sum(const EmbeddingSet& e) {
  const std::size_t k = e.patch_count();
  std::vector<double> gram(k * k);
  cross_products(e.values(), k, e.values(), k, e.dim(), gram);
  return total(gram);
}

}  // namespace

EmbeddingSet::EmbeddingSet(std::string image_id, std::size_t patch_count,
                           std::size_t dim, std::vector<double> values,
                           std::uint64_t layout_fingerprint)
    : image_id_(std::move(image_id)),
      patch_count_(patch_count),
      dim_(dim),
      values_(std::move(values)),
      fingerprint_(layout_fingerprint) {
  if (patch_count_ == 0 || dim_ == 0)
    throw Error(ErrorKind::Domain, "embedding set '" + image_id_ +
                                       "' must have K > 0 and D > 0");
  if (values_.size() != patch_count_ * dim_)
    throw Error(ErrorKind::Data,
                "embedding set '" + image_id_ + "' holds " +
                    std::to_string(values_.size()) + " values, expected " +
                    std::to_string(patch_count_ * dim_));
  for (std::size_t i = 0; i < patch_count_; ++i) {
    bool nonzero = false;
    for (double v : row(i)) {
      if (!std::isfinite(v))
        throw Error(ErrorKind::Data, "embedding set '" + image_id_ +
                                         "' row " + std::to_string(i) +
                                         " is not finite");
      nonzero = nonzero || v != 0.0;
    }
    if (!nonzero)
      throw Error(ErrorKind::DegenerateEmbedding,
                  "embedding set '" + image_id_ + "' row " +
                      std::to_string(i) + " is the zero vector");
  }
}

void check_compatible(const EmbeddingSet& a, const EmbeddingSet& b) {
  if (a.patch_count() != b.patch_count() || a.dim() != b.dim())
    throw Error(ErrorKind::Incompatible,
                "embedding shapes differ: " + std::to_string(a.patch_count()) +
                    "x" + std::to_string(a.dim()) + " vs " +
                    std::to_string(b.patch_count()) + "x" +
                    std::to_string(b.dim()));
  if (a.layout_fingerprint() != b.layout_fingerprint())
    throw Error(ErrorKind::Incompatible,
                "embedding sets '" + a.image_id() + "' and '" + b.image_id() +
                    "' were extracted with different layouts");
}

std::string_view to_string(SimilarityMode m) {
  return m == SimilarityMode::RegionBased ? "region_based" : "rrfnet";
}

SimilarityMode parse_similarity_mode(std::string_view name) {
  if (name == "region_based" || name == "region") return SimilarityMode::RegionBased;
  if (name == "rrfnet") return SimilarityMode::RRFNet;
  throw Error(ErrorKind::Domain, "unknown similarity mode '" + std::string(name) + "'");
}

double local_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw Error(ErrorKind::Incompatible, "vector lengths differ");
  for (std::size_t k = 0; k < a.size(); ++k)
    if (!std::isfinite(a[k]) || !std::isfinite(b[k]))
      throw Error(ErrorKind::Data, "non-finite vector component");
  const double aa = accurate::dot(a, a);
  const double bb = accurate::dot(b, b);
  if (!(aa > 0.0) || !(bb > 0.0))
    throw Error(ErrorKind::DegenerateEmbedding, "cosine of a zero vector");
  return accurate::dot(a, b) / (std::sqrt(aa) * std::sqrt(bb));
}

std::vector<double> local_similarities(const EmbeddingSet& a,
                                       const EmbeddingSet& b) {
  check_compatible(a, b);
  std::vector<double> out(a.patch_count());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = local_similarity(a.row(i), b.row(i));
  return out;
}

SimilarityBreakdown region_similarity(const EmbeddingSet& a,
                                      const EmbeddingSet& b,
                                      const FusionModel& model) {
  check_compatible(a, b);
  if (model.size() != a.patch_count())
    throw Error(ErrorKind::Incompatible,
                "fusion model has " + std::to_string(model.size()) +
                    " weights for " + std::to_string(a.patch_count()) +
                    " patches");
  SimilarityBreakdown out;
  out.mode = SimilarityMode::RegionBased;
  out.patch_count = a.patch_count();
  out.local = local_similarities(a, b);
  out.terms.resize(out.local.size());
  for (std::size_t i = 0; i < out.local.size(); ++i)
    out.terms[i] = model.weights[i] * out.local[i];
  out.global_score = accurate::sum(out.terms);
  out.logit = out.global_score + model.bias;
  return out;
}

std::vector<double> mean_embedding(const EmbeddingSet& a) {
  const std::size_t k = a.patch_count();
  if (k == 0) throw Error(ErrorKind::Domain, "mean of an empty embedding set");
  std::vector<double> mean(a.dim());
  for (std::size_t c = 0; c < a.dim(); ++c) {
    accurate::Sum s;
    for (std::size_t i = 0; i < k; ++i) s.add(a.values()[i * a.dim() + c]);
    mean[c] = s.value() / static_cast<double>(k);
  }
  return mean;
}

double rrfnet_similarity_direct(const EmbeddingSet& a, const EmbeddingSet& b) {
  check_compatible(a, b);
  const auto fa = mean_embedding(a);
  const auto fb = mean_embedding(b);
  const double aa = accurate::dot(fa, fa);
  const double bb = accurate::dot(fb, fb);
  if (!(aa > 0.0) || !(bb > 0.0))
    throw Error(ErrorKind::DegenerateEmbedding, "mean embedding is zero");
  return accurate::dot(fa, fb) / (std::sqrt(aa) * std::sqrt(bb));
}

void cross_products(std::span<const double> a, std::size_t m,
                    std::span<const double> b, std::size_t n, std::size_t d,
                    std::span<double> out) {
  if (a.size() != m * d || b.size() != n * d || out.size() != m * n)
    throw Error(ErrorKind::Incompatible, "cross product shapes disagree");
  // Each row of a is streamed once per tile of kTile rows of b; all rows are
  // contiguous so the inner loop is unit-stride on every operand.
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a.data() + i * d;
    std::size_t j = 0;
    for (; j + kTile <= n; j += kTile) {
      const double* b0 = b.data() + j * d;
      const double* b1 = b0 + d;
      const double* b2 = b1 + d;
      const double* b3 = b2 + d;
      Dot2 acc[kTile];
      for (std::size_t k = 0; k < d; ++k) {
        const double x = ai[k];
        acc[0].add(x, b0[k]);
        acc[1].add(x, b1[k]);
        acc[2].add(x, b2[k]);
        acc[3].add(x, b3[k]);
      }
      for (std::size_t t = 0; t < kTile; ++t) out[i * n + j + t] = acc[t].value();
    }
    for (; j < n; ++j) out[i * n + j] = accurate::dot(ai, b.data() + j * d, d);
  }
}

SimilarityBreakdown rrfnet_similarity_decomposed(const EmbeddingSet& a,
                                                 const EmbeddingSet& b) {
  check_compatible(a, b);
  const std::size_t k = a.patch_count();

  SimilarityBreakdown out;
  out.mode = SimilarityMode::RRFNet;
  out.patch_count = k;
  out.contributions.resize(k * k);
  cross_products(a.values(), k, b.values(), k, a.dim(), out.contributions);

  const double cross = total(out.contributions);
  const double gram_a = self_gram_sum(a);
  const double gram_b = self_gram_sum(b);
  if (!(gram_a > 0.0) || !(gram_b > 0.0))
    throw Error(ErrorKind::DegenerateEmbedding,
                "self Gram sum is not positive (zero mean embedding)");

  // K^2 |F^A| |F^B| = sqrt(gram_a) * sqrt(gram_b)
  const double norm = std::sqrt(gram_a) * std::sqrt(gram_b);
  for (double& c : out.contributions) c /= norm;
  out.global_score = cross / norm;
  out.logit = out.global_score;
  return out;
}

std::vector<double> heatmap(const SimilarityBreakdown& breakdown, Side side) {
  const std::size_t k = breakdown.patch_count;
  if (breakdown.mode == SimilarityMode::RegionBased) return breakdown.terms;
  std::vector<double> out(k);
  for (std::size_t i = 0; i < k; ++i) {
    accurate::Sum s;
    for (std::size_t j = 0; j < k; ++j)
      s.add(side == Side::A ? breakdown.contribution(i, j)
                            : breakdown.contribution(j, i));
    out[i] = s.value();
  }
  return out;
}

EmbeddingSet flip_merge(const EmbeddingSet& e, const EmbeddingSet& flipped) {
  check_compatible(e, flipped);
  std::vector<double> merged(e.values().begin(), e.values().end());
  for (std::size_t i = 0; i < merged.size(); ++i) merged[i] += flipped.values()[i];
  return EmbeddingSet(e.image_id(), e.patch_count(), e.dim(), std::move(merged),
                      e.layout_fingerprint());
}

}  // namespace rrf
