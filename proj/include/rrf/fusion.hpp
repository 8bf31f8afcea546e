#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace rrf {

/// Per-patch weights and bias of the region-based metric.
struct FusionModel {
  std::vector<double> weights;
  double bias = 0.0;
  // training metadata
  double reg = 0.0;
  int iterations = 0;
  double loss = 0.0;
  double gradient_norm = 0.0;  // infinity norm at termination
  bool converged = false;
  std::uint64_t seed = 0;

  std::size_t size() const noexcept { return weights.size(); }

  friend bool operator==(const FusionModel&, const FusionModel&) = default;
};

/// Row-major M x K view of training features.
struct FeatureMatrix {
  std::span<const double> values;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::span<const double> row(std::size_t i) const {
    return values.subspan(i * cols, cols);
  }
};

struct FitOptions {
  double reg = 1e-4;
  std::uint64_t seed = 0;
  int max_iterations = 10000;
  double tolerance = 1e-6;
};

/// L2-regularized logistic regression trained by full-batch gradient descent
/// with Armijo backtracking, starting from zero. Labels are 1 (genuine) or 0
/// (impostor). The bias is not regularized.
///
/// When `loss_trace` is given it receives the objective after every accepted
/// step (first entry: the objective at the starting point).
FusionModel fit_fusion(const FeatureMatrix& features,
                       std::span<const int> labels, const FitOptions& options,
                       std::vector<double>* loss_trace = nullptr);

/// Raw logit: sum_i w_i * local_i + bias.
double fused_score(const FusionModel& model, std::span<const double> locals);

/// Regularized mean log-loss of `model` on the given data.
double logistic_loss(const FusionModel& model, const FeatureMatrix& features,
                     std::span<const int> labels);

enum class CombineMethod { MeanZScore, LearnedLogistic };

std::string_view to_string(CombineMethod m);
CombineMethod parse_combine_method(std::string_view name);

struct SourceStats {
  double mean = 0.0;
  double stddev = 1.0;

  friend bool operator==(const SourceStats&, const SourceStats&) = default;
};

/// Score-level combination across receptive-field configurations.
struct ScoreCombiner {
  CombineMethod method = CombineMethod::MeanZScore;
  std::vector<SourceStats> stats;  // empty until fitted
  FusionModel model;               // learned_logistic only, over z-scores

  bool fitted() const noexcept { return !stats.empty(); }
  std::size_t source_count() const noexcept { return stats.size(); }

  friend bool operator==(const ScoreCombiner&, const ScoreCombiner&) = default;
};

/// Fits normalization statistics (population mean / std per source) on the
/// calibration scores, an M x S matrix. LearnedLogistic additionally trains
/// a fusion model on the z-scored calibration rows and therefore needs labels.
ScoreCombiner fit_combiner(CombineMethod method, const FeatureMatrix& scores,
                           std::span<const int> labels,
                           const FitOptions& options = {});

double combine_scores(const ScoreCombiner& combiner,
                      std::span<const double> per_source_scores);

}  // namespace rrf
