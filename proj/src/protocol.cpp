#include "rrf/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <thread>

#include "rrf/accurate.hpp"
#include "rrf/error.hpp"

namespace rrf {

const EmbeddingSet& EmbeddingStore::at(const std::string& image_id) const {
  if (const auto* e = find(image_id)) return *e;
  throw Error(ErrorKind::MissingIds, "missing embeddings for: " + image_id);
}

int PairList::fold_count() const noexcept {
  int f = 0;
  for (const auto& e : entries) f = std::max(f, e.fold + 1);
  return f;
}

std::vector<int> PairList::labels() const {
  std::vector<int> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.label);
  return out;
}

void validate(const PairList& pairs) {
  const int folds = pairs.fold_count();
  if (folds < 2)
    throw Error(ErrorKind::Domain, "pair list needs at least two folds");
  std::vector<std::size_t> counts(static_cast<std::size_t>(folds), 0);
  for (const auto& e : pairs.entries) {
    if (e.label != 0 && e.label != 1)
      throw Error(ErrorKind::Data, "pair labels must be 0 or 1");
    if (e.fold < 0) throw Error(ErrorKind::Data, "negative fold index");
    ++counts[static_cast<std::size_t>(e.fold)];
  }
  for (std::size_t f = 0; f < counts.size(); ++f)
    if (counts[f] == 0)
      throw Error(ErrorKind::Domain, "fold " + std::to_string(f) + " is empty");
}

ThresholdResult best_threshold(std::span<const double> scores,
                               std::span<const int> labels) {
  if (scores.size() != labels.size())
    throw Error(ErrorKind::Incompatible, "score and label counts differ");
  std::size_t positives = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i]))
      throw Error(ErrorKind::Data, "non-finite score");
    if (labels[i] != 0 && labels[i] != 1)
      throw Error(ErrorKind::Data, "labels must be 0 or 1");
    positives += static_cast<std::size_t>(labels[i]);
  }
  const std::size_t n = scores.size();
  if (positives == 0 || positives == n)
    throw Error(ErrorKind::DegenerateTraining,
                "threshold selection needs both genuine and impostor pairs");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // threshold -inf: everything accepted
  std::size_t correct = positives;
  std::size_t best_correct = correct;
  double best = -std::numeric_limits<double>::infinity();

  std::size_t i = 0;
  while (i < n) {
    const double v = scores[order[i]];
    // move the whole group of equal scores below the threshold
    for (; i < n && scores[order[i]] == v; ++i) {
      if (labels[order[i]] == 1)
        --correct;
      else
        ++correct;
    }
    double t;
    if (i == n) {
      t = std::numeric_limits<double>::infinity();
    } else {
      const double next = scores[order[i]];
      t = std::midpoint(v, next);
      if (!(t >= v && t < next)) t = v;
    }
    if (correct > best_correct) {
      best_correct = correct;
      best = t;
    }
  }
  return {best, static_cast<double>(best_correct) / static_cast<double>(n)};
}

double accuracy_at(std::span<const double> scores, std::span<const int> labels,
                   double threshold) {
  if (scores.size() != labels.size())
    throw Error(ErrorKind::Incompatible, "score and label counts differ");
  if (scores.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if ((scores[i] > threshold) == (labels[i] == 1)) ++correct;
  return static_cast<double>(correct) / static_cast<double>(scores.size());
}

std::vector<double> score_pairs(const PairList& pairs, const PairScorer& scorer,
                                int jobs) {
  const std::size_t n = pairs.size();
  std::vector<double> out(n);
  const std::size_t workers =
      std::clamp<std::size_t>(jobs > 0 ? static_cast<std::size_t>(jobs) : 1, 1,
                              std::max<std::size_t>(n, 1));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = scorer(pairs.entries[i]);
    return out;
  }

  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> threads;
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&, w] {
      try {
        const std::size_t end = std::min(n, (w + 1) * chunk);
        for (std::size_t i = w * chunk; i < end; ++i)
          out[i] = scorer(pairs.entries[i]);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

VerificationReport cross_validate(const PairList& pairs,
                                  std::span<const double> scores) {
  validate(pairs);
  if (scores.size() != pairs.size())
    throw Error(ErrorKind::Incompatible, "one score per pair is required");

  VerificationReport report;
  const int folds = pairs.fold_count();
  std::vector<double> accuracies;
  for (int f = 0; f < folds; ++f) {
    std::vector<double> train_scores, test_scores;
    std::vector<int> train_labels, test_labels;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const auto& e = pairs.entries[i];
      if (e.fold == f) {
        test_scores.push_back(scores[i]);
        test_labels.push_back(e.label);
      } else {
        train_scores.push_back(scores[i]);
        train_labels.push_back(e.label);
      }
    }

    FoldResult r;
    r.fold = f;
    r.pair_count = test_scores.size();
    const auto has_both = [](const std::vector<int>& l) {
      const auto pos = std::count(l.begin(), l.end(), 1);
      return pos > 0 && pos < static_cast<long>(l.size());
    };
    if (!has_both(test_labels) || !has_both(train_labels)) {
      r.skipped = true;
      report.warnings.push_back(
          "fold " + std::to_string(f) + " skipped: " +
          (has_both(test_labels) ? "training" : "held-out") +
          " pairs contain a single class");
      report.folds.push_back(r);
      continue;
    }
    const auto t = best_threshold(train_scores, train_labels);
    r.threshold = t.threshold;
    r.accuracy = accuracy_at(test_scores, test_labels, t.threshold);
    accuracies.push_back(r.accuracy);
    report.folds.push_back(r);
  }
  if (accuracies.empty())
    throw Error(ErrorKind::Domain, "every fold was skipped");

  const double n = static_cast<double>(accuracies.size());
  report.mean_accuracy = accurate::sum(accuracies) / n;
  accurate::Sum sq;
  for (double a : accuracies)
    sq.add((a - report.mean_accuracy) * (a - report.mean_accuracy));
  report.stddev = std::sqrt(sq.value() / n);
  report.metadata["fold_count"] = std::to_string(folds);
  report.metadata["pair_count"] = std::to_string(pairs.size());
  return report;
}

VerificationReport cross_validate(const PairList& pairs,
                                  const PairScorer& scorer, int jobs) {
  const auto scores = score_pairs(pairs, scorer, jobs);
  return cross_validate(pairs, scores);
}

void require_embeddings(const EmbeddingStore& store, const PairList& pairs) {
  std::set<std::string> missing;
  for (const auto& e : pairs.entries) {
    if (!store.find(e.id_a)) missing.insert(e.id_a);
    if (!store.find(e.id_b)) missing.insert(e.id_b);
  }
  if (missing.empty()) return;
  std::string msg = "missing embeddings for " + std::to_string(missing.size()) +
                    " image(s):";
  std::size_t listed = 0;
  for (const auto& id : missing) {
    if (listed++ == 20) {
      msg += " ...";
      break;
    }
    msg += " " + id;
  }
  throw Error(ErrorKind::MissingIds, msg);
}

std::vector<double> local_feature_matrix(const EmbeddingStore& store,
                                         const PairList& pairs, int jobs) {
  require_embeddings(store, pairs);
  const std::size_t k = store.layout.size();
  std::vector<double> features(pairs.size() * k);
  const PairEntry* first = pairs.entries.data();
  // the scorer writes its row in place; the returned scores are unused
  score_pairs(
      pairs,
      [&](const PairEntry& p) {
        const auto row = local_similarities(store.at(p.id_a), store.at(p.id_b));
        const auto i = static_cast<std::size_t>(&p - first);
        std::copy(row.begin(), row.end(), features.begin() + static_cast<long>(i * k));
        return 0.0;
      },
      jobs);
  return features;
}

PairScorer make_scorer(const Configuration& config) {
  if (!config.store)
    throw Error(ErrorKind::State, "configuration '" + config.name + "' has no store");
  const EmbeddingStore* store = config.store;
  if (config.mode == SimilarityMode::RRFNet) {
    return [store](const PairEntry& p) {
      return rrfnet_similarity_direct(store->at(p.id_a), store->at(p.id_b));
    };
  }
  if (!config.model)
    throw Error(ErrorKind::State, "configuration '" + config.name +
                                      "' is region_based but has no fusion model");
  if (config.model->size() != store->layout.size())
    throw Error(ErrorKind::Incompatible,
                "fusion model for '" + config.name + "' has " +
                    std::to_string(config.model->size()) + " weights, layout has " +
                    std::to_string(store->layout.size()) + " patches");
  const FusionModel model = *config.model;
  return [store, model](const PairEntry& p) {
    return fused_score(model, local_similarities(store->at(p.id_a), store->at(p.id_b)));
  };
}

namespace {

std::string describe(const PatchLayout& l) {
  return std::to_string(l.patch_width) + "x" + std::to_string(l.patch_height) +
         "/s" + std::to_string(l.stride) + (l.corner_exclusion ? "/excl" : "") +
         "/K" + std::to_string(l.size());
}

}  // namespace

VerificationReport evaluate_configuration(const PairList& pairs,
                                          const Configuration& config,
                                          int jobs) {
  if (!config.store)
    throw Error(ErrorKind::State, "configuration '" + config.name + "' has no store");
  require_embeddings(*config.store, pairs);
  auto report = cross_validate(pairs, make_scorer(config), jobs);
  report.name = config.name;
  report.metadata["mode"] = std::string(to_string(config.mode));
  report.metadata["layout"] = describe(config.store->layout);
  report.metadata["flip_policy"] = config.store->flip_policy;
  return report;
}

CombinedEvaluation evaluate_configurations(
    const PairList& pairs, std::span<const Configuration> configs,
    const std::optional<CombineOptions>& combine, int jobs) {
  CombinedEvaluation out;
  if (configs.empty())
    throw Error(ErrorKind::Domain, "no configurations to evaluate");

  std::vector<std::vector<double>> eval_scores;
  for (const auto& c : configs) {
    if (!c.store)
      throw Error(ErrorKind::State, "configuration '" + c.name + "' has no store");
    require_embeddings(*c.store, pairs);
    if (combine && combine->calibration)
      require_embeddings(*c.store, *combine->calibration);
  }
  for (const auto& c : configs) {
    eval_scores.push_back(score_pairs(pairs, make_scorer(c), jobs));
    auto report = cross_validate(pairs, eval_scores.back());
    report.name = c.name;
    report.metadata["mode"] = std::string(to_string(c.mode));
    report.metadata["layout"] = describe(c.store->layout);
    report.metadata["flip_policy"] = c.store->flip_policy;
    out.reports.push_back(std::move(report));
  }
  if (!combine) return out;

  const std::size_t sources = configs.size();
  auto interleave = [sources](const std::vector<std::vector<double>>& cols) {
    const std::size_t rows = cols.front().size();
    std::vector<double> m(rows * sources);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t s = 0; s < sources; ++s) m[i * sources + s] = cols[s][i];
    return m;
  };

  const auto eval_matrix = interleave(eval_scores);
  if (combine->calibration) {
    std::vector<std::vector<double>> calib_scores;
    for (const auto& c : configs)
      calib_scores.push_back(score_pairs(*combine->calibration, make_scorer(c), jobs));
    const auto m = interleave(calib_scores);
    const auto labels = combine->calibration->labels();
    out.combiner = fit_combiner(combine->method,
                                {m, combine->calibration->size(), sources},
                                labels, combine->fit);
  } else {
    if (combine->method == CombineMethod::LearnedLogistic)
      throw Error(ErrorKind::State,
                  "learned_logistic combination needs calibration pairs");
    out.combiner = fit_combiner(combine->method, {eval_matrix, pairs.size(), sources},
                                {}, combine->fit);
  }

  std::vector<double> combined(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i)
    combined[i] = combine_scores(
        out.combiner, std::span<const double>(eval_matrix).subspan(i * sources, sources));
  auto report = cross_validate(pairs, combined);
  report.name = "combined";
  report.metadata["mode"] = "combined";
  report.metadata["combiner"] = std::string(to_string(combine->method));
  std::string members;
  for (const auto& c : configs) members += (members.empty() ? "" : ",") + c.name;
  report.metadata["sources"] = members;
  out.reports.push_back(std::move(report));
  return out;
}

}  // namespace rrf
