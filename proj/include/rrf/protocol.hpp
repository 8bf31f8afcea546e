#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rrf/fusion.hpp"
#include "rrf/metric.hpp"
#include "rrf/store.hpp"

namespace rrf {

struct PairEntry {
  std::string id_a;
  std::string id_b;
  int label = 0;  // 1 genuine, 0 impostor
  int fold = 0;

  friend bool operator==(const PairEntry&, const PairEntry&) = default;
};

struct PairList {
  std::vector<PairEntry> entries;

  std::size_t size() const noexcept { return entries.size(); }
  /// One past the largest fold index.
  int fold_count() const noexcept;
  std::vector<int> labels() const;

  friend bool operator==(const PairList&, const PairList&) = default;
};

/// Requires at least two folds, each nonempty, and binary labels.
void validate(const PairList& pairs);

struct ThresholdResult {
  double threshold = 0.0;
  double accuracy = 0.0;
};

/// A pair is accepted as genuine when score > threshold. Candidates are
/// -inf, the midpoints between consecutive distinct scores and +inf; the
/// accuracy-maximizing candidate wins, ties going to the smallest threshold.
ThresholdResult best_threshold(std::span<const double> scores,
                               std::span<const int> labels);

/// Fraction of pairs classified correctly at `threshold`.
double accuracy_at(std::span<const double> scores, std::span<const int> labels,
                   double threshold);

struct FoldResult {
  int fold = 0;
  std::size_t pair_count = 0;
  double threshold = 0.0;
  double accuracy = 0.0;
  bool skipped = false;

  friend bool operator==(const FoldResult&, const FoldResult&) = default;
};

struct VerificationReport {
  std::string name;
  std::vector<FoldResult> folds;
  double mean_accuracy = 0.0;
  double stddev = 0.0;  // population standard deviation over evaluated folds
  std::vector<std::string> warnings;
  std::map<std::string, std::string> metadata;

  friend bool operator==(const VerificationReport&, const VerificationReport&) = default;
};

using PairScorer = std::function<double(const PairEntry&)>;

/// Scores every pair with up to `jobs` worker threads. Output order matches
/// the pair order regardless of the worker count.
std::vector<double> score_pairs(const PairList& pairs, const PairScorer& scorer,
                                int jobs = 1);

/// Per fold f: threshold picked on every pair outside f, accuracy measured on
/// f. Folds whose held-out or training pairs miss a class are skipped and
/// reported as warnings.
VerificationReport cross_validate(const PairList& pairs,
                                  std::span<const double> scores);

VerificationReport cross_validate(const PairList& pairs, const PairScorer& scorer,
                                  int jobs = 1);

/// One receptive-field configuration to evaluate.
struct Configuration {
  std::string name;
  const EmbeddingStore* store = nullptr;
  SimilarityMode mode = SimilarityMode::RRFNet;
  std::optional<FusionModel> model;  // required for region_based
};

/// Scorer for a configuration: rrfnet uses the cosine of mean embeddings
/// (identical to the all-pairs form), region_based the fused logit.
PairScorer make_scorer(const Configuration& config);

/// Row-major (pairs x K) matrix of per-position cosines, the training
/// features of the fusion model.
std::vector<double> local_feature_matrix(const EmbeddingStore& store,
                                         const PairList& pairs, int jobs = 1);

/// Throws Error(MissingIds) if any pair member lacks an embedding.
void require_embeddings(const EmbeddingStore& store, const PairList& pairs);

VerificationReport evaluate_configuration(const PairList& pairs,
                                          const Configuration& config,
                                          int jobs = 1);

struct CombineOptions {
  CombineMethod method = CombineMethod::MeanZScore;
  // Pairs the combiner is fitted on. Without them mean_zscore uses the
  // (label-free) evaluation scores; learned_logistic requires them.
  const PairList* calibration = nullptr;
  FitOptions fit;
};

struct CombinedEvaluation {
  std::vector<VerificationReport> reports;  // one per configuration, then "combined"
  ScoreCombiner combiner;
};

CombinedEvaluation evaluate_configurations(
    const PairList& pairs, std::span<const Configuration> configs,
    const std::optional<CombineOptions>& combine, int jobs = 1);

}  // namespace rrf
