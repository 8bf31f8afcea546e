#include "rrf/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "rrf/accurate.hpp"
#include "rrf/error.hpp"

namespace rrf {

namespace {

// log(1 + exp(z)) without overflow
double softplus(double z) {
  return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void check_training_data(const FeatureMatrix& features,
                         std::span<const int> labels) {
  if (features.rows != labels.size() ||
      features.values.size() != features.rows * features.cols)
    throw Error(ErrorKind::Incompatible,
                "feature rows and label count disagree");
  if (features.rows < 2)
    throw Error(ErrorKind::DegenerateTraining, "need at least two samples");
  bool has_pos = false;
  bool has_neg = false;
  for (int y : labels) {
    if (y != 0 && y != 1)
      throw Error(ErrorKind::Data, "labels must be 0 or 1");
    (y == 1 ? has_pos : has_neg) = true;
  }
  if (!has_pos || !has_neg)
    throw Error(ErrorKind::DegenerateTraining,
                "training labels contain a single class");
  for (double v : features.values)
    if (!std::isfinite(v))
      throw Error(ErrorKind::Data, "non-finite training feature");
}

struct Objective {
  const FeatureMatrix& x;
  std::span<const int> y;
  double reg;

  // params = (w_1..w_K, b)
  double value(std::span<const double> params) const {
    const std::size_t k = x.cols;
    accurate::Sum total;
    for (std::size_t i = 0; i < x.rows; ++i) {
      const double z = accurate::dot(x.row(i).data(), params.data(), k) + params[k];
      total.add(softplus(z) - (y[i] ? z : 0.0));
    }
    double penalty = 0.0;
    for (std::size_t j = 0; j < k; ++j) penalty += params[j] * params[j];
    return total.value() / static_cast<double>(x.rows) + 0.5 * reg * penalty;
  }

  void gradient(std::span<const double> params, std::span<double> grad) const {
    const std::size_t k = x.cols;
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < x.rows; ++i) {
      const auto row = x.row(i);
      const double z = accurate::dot(row.data(), params.data(), k) + params[k];
      const double r = sigmoid(z) - y[i];
      for (std::size_t j = 0; j < k; ++j) grad[j] += r * row[j];
      grad[k] += r;
    }
    const double inv_m = 1.0 / static_cast<double>(x.rows);
    for (std::size_t j = 0; j < k; ++j) grad[j] = grad[j] * inv_m + reg * params[j];
    grad[k] *= inv_m;
  }
};

double inf_norm(std::span<const double> v) {
  double m = 0.0;
  for (double e : v) m = std::max(m, std::abs(e));
  return m;
}

}  // namespace

FusionModel fit_fusion(const FeatureMatrix& features,
                       std::span<const int> labels, const FitOptions& options,
                       std::vector<double>* loss_trace) {
  check_training_data(features, labels);
  if (!(options.reg >= 0.0) || !std::isfinite(options.reg))
    throw Error(ErrorKind::Domain, "regularization must be non-negative");

  const std::size_t k = features.cols;
  const Objective f{features, labels, options.reg};
  std::vector<double> params(k + 1, 0.0);
  std::vector<double> grad(k + 1);
  std::vector<double> trial(k + 1);

  double loss = f.value(params);
  if (loss_trace) loss_trace->assign(1, loss);
  f.gradient(params, grad);
  double gnorm = inf_norm(grad);

  double step = 1.0;
  int iter = 0;
  bool stalled = false;
  while (gnorm >= options.tolerance && iter < options.max_iterations) {
    double g2 = 0.0;
    for (double g : grad) g2 += g * g;

    // Armijo backtracking; the step grows again after each accepted move
    step = std::min(step * 2.0, 1e6);
    double trial_loss = 0.0;
    for (;;) {
      for (std::size_t j = 0; j <= k; ++j) trial[j] = params[j] - step * grad[j];
      trial_loss = f.value(trial);
      if (trial_loss <= loss - 0.5 * step * g2) break;
      step *= 0.5;
      if (step < 1e-20) {
        stalled = true;
        break;
      }
    }
    if (stalled) break;

    params.swap(trial);
    loss = trial_loss;
    if (loss_trace) loss_trace->push_back(loss);
    f.gradient(params, grad);
    gnorm = inf_norm(grad);
    ++iter;
  }

  FusionModel model;
  model.weights.assign(params.begin(), params.begin() + static_cast<long>(k));
  model.bias = params[k];
  model.reg = options.reg;
  model.iterations = iter;
  model.loss = loss;
  model.gradient_norm = gnorm;
  model.converged = gnorm < options.tolerance;
  model.seed = options.seed;
  return model;
}

double fused_score(const FusionModel& model, std::span<const double> locals) {
  if (locals.size() != model.weights.size())
    throw Error(ErrorKind::Incompatible,
                "expected " + std::to_string(model.weights.size()) +
                    " local scores, got " + std::to_string(locals.size()));
  return accurate::dot(model.weights, locals) + model.bias;
}

double logistic_loss(const FusionModel& model, const FeatureMatrix& features,
                     std::span<const int> labels) {
  if (features.cols != model.size() || features.rows != labels.size())
    throw Error(ErrorKind::Incompatible, "model and data shapes disagree");
  std::vector<double> params = model.weights;
  params.push_back(model.bias);
  return Objective{features, labels, model.reg}.value(params);
}

std::string_view to_string(CombineMethod m) {
  return m == CombineMethod::MeanZScore ? "mean_zscore" : "learned_logistic";
}

CombineMethod parse_combine_method(std::string_view name) {
  if (name == "mean_zscore") return CombineMethod::MeanZScore;
  if (name == "learned_logistic") return CombineMethod::LearnedLogistic;
  throw Error(ErrorKind::Domain,
              "unknown combine method '" + std::string(name) + "'");
}

ScoreCombiner fit_combiner(CombineMethod method, const FeatureMatrix& scores,
                           std::span<const int> labels,
                           const FitOptions& options) {
  if (scores.rows == 0 || scores.cols == 0 ||
      scores.values.size() != scores.rows * scores.cols)
    throw Error(ErrorKind::Domain, "calibration scores are empty");

  ScoreCombiner c;
  c.method = method;
  c.stats.resize(scores.cols);
  for (std::size_t s = 0; s < scores.cols; ++s) {
    accurate::Sum sum;
    for (std::size_t i = 0; i < scores.rows; ++i) {
      const double v = scores.values[i * scores.cols + s];
      if (!std::isfinite(v))
        throw Error(ErrorKind::Data, "non-finite calibration score");
      sum.add(v);
    }
    const double mean = sum.value() / static_cast<double>(scores.rows);
    accurate::Sum sq;
    for (std::size_t i = 0; i < scores.rows; ++i) {
      const double d = scores.values[i * scores.cols + s] - mean;
      sq.add(d * d);
    }
    const double sd = std::sqrt(sq.value() / static_cast<double>(scores.rows));
    if (!(sd > 0.0))
      throw Error(ErrorKind::Data, "source " + std::to_string(s) +
                                       " has zero score variance");
    c.stats[s] = {mean, sd};
  }

  if (method == CombineMethod::LearnedLogistic) {
    std::vector<double> z(scores.values.size());
    for (std::size_t i = 0; i < scores.rows; ++i)
      for (std::size_t s = 0; s < scores.cols; ++s)
        z[i * scores.cols + s] =
            (scores.values[i * scores.cols + s] - c.stats[s].mean) /
            c.stats[s].stddev;
    c.model = fit_fusion({z, scores.rows, scores.cols}, labels, options);
  }
  return c;
}

double combine_scores(const ScoreCombiner& combiner,
                      std::span<const double> per_source_scores) {
  if (!combiner.fitted())
    throw Error(ErrorKind::State, "score combiner has not been fitted");
  if (per_source_scores.size() != combiner.source_count())
    throw Error(ErrorKind::Incompatible,
                "expected " + std::to_string(combiner.source_count()) +
                    " source scores, got " +
                    std::to_string(per_source_scores.size()));
  std::vector<double> z(per_source_scores.size());
  for (std::size_t s = 0; s < z.size(); ++s)
    z[s] = (per_source_scores[s] - combiner.stats[s].mean) /
           combiner.stats[s].stddev;
  if (combiner.method == CombineMethod::LearnedLogistic)
    return fused_score(combiner.model, z);
  return accurate::sum(z) / static_cast<double>(z.size());
}

}  // namespace rrf
