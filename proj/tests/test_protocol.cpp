#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "doctest.h"
#include "rrf/error.hpp"
#include "rrf/protocol.hpp"
#include "rrf/random.hpp"

using namespace rrf;

namespace {

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected rrf::Error");
  return ErrorKind::Io;
}

// Brute-force sweep: every midpoint plus the sentinels, full re-count each.
ThresholdResult sweep(const std::vector<double>& s, const std::vector<int>& y) {
  std::vector<double> u(s);
  std::sort(u.begin(), u.end());
  u.erase(std::unique(u.begin(), u.end()), u.end());
  std::vector<double> cands{-std::numeric_limits<double>::infinity()};
  for (std::size_t i = 0; i + 1 < u.size(); ++i) cands.push_back((u[i] + u[i + 1]) / 2);
  cands.push_back(std::numeric_limits<double>::infinity());
  ThresholdResult best{0, -1};
  for (double t : cands) {
    std::size_t ok = 0;
    for (std::size_t i = 0; i < s.size(); ++i) ok += (s[i] > t) == (y[i] == 1);
    const double acc = double(ok) / double(s.size());
    if (acc > best.accuracy) best = {t, acc};
  }
  return best;
}

PairList balanced_pairs(std::size_t n, int folds) {
  PairList p;
  for (std::size_t i = 0; i < n; ++i)
    p.entries.push_back({"a" + std::to_string(i), "b" + std::to_string(i), int(i % 2),
                         int((i / 2) % std::size_t(folds))});
  return p;
}

}  // namespace

TEST_CASE("best threshold: separable") {
  const std::vector<double> s{0.9, 0.1, 0.9, 0.1, 0.9};
  const std::vector<int> y{1, 0, 1, 0, 1};
  const auto r = best_threshold(s, y);
  CHECK(r.accuracy == 1.0);
  CHECK(r.threshold > 0.1);
  CHECK(r.threshold < 0.9);
}

TEST_CASE("best threshold: constant scores give the majority prior") {
  const std::vector<double> s(7, 0.4);
  const std::vector<int> y{1, 1, 0, 0, 0, 1, 0};
  const auto r = best_threshold(s, y);
  CHECK(r.accuracy == doctest::Approx(4.0 / 7.0));
  CHECK(r.threshold == std::numeric_limits<double>::infinity());
  const std::vector<int> y2{1, 1, 1, 0, 0, 1, 0};
  CHECK(best_threshold(s, y2).threshold == -std::numeric_limits<double>::infinity());
}

TEST_CASE("best threshold: six hand-listed scores") {
  const std::vector<double> s{0.2, 0.8, 0.5, 0.5, 0.1, 0.7};
  const std::vector<int> y{0, 1, 1, 0, 0, 0};
  const auto r = best_threshold(s, y);
  const auto o = sweep(s, y);
  CHECK(r.accuracy == o.accuracy);
  CHECK(r.threshold == o.threshold);
  // at t = 0.75 only the 0.8 pair is accepted: 5 of 6 correct
  CHECK(r.accuracy == doctest::Approx(5.0 / 6.0));
  CHECK(r.threshold == doctest::Approx(0.75));
}

TEST_CASE("best threshold matches the brute-force sweep") {
  Rng rng(123);
  for (int t = 0; t < 300; ++t) {
    const auto n = std::size_t(rng.integer(2, 50));
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = double(rng.integer(0, 12)) / 4.0;  // plenty of ties
      y[i] = rng.uniform() < 0.5;
    }
    y[0] = 1;
    y[1] = 0;
    const auto r = best_threshold(s, y);
    const auto o = sweep(s, y);
    CHECK(r.accuracy == o.accuracy);
    CHECK(r.threshold == o.threshold);
    CHECK(accuracy_at(s, y, r.threshold) == r.accuracy);
  }
  CHECK(kind_of([] { best_threshold(std::vector<double>{1, 2}, std::vector<int>{1, 1}); }) ==
        ErrorKind::DegenerateTraining);
}

TEST_CASE("cross validation: separable and label leak") {
  const auto pairs = balanced_pairs(200, 10);
  const auto r = cross_validate(pairs, [](const PairEntry& p) { return p.label ? 0.9 : 0.1; });
  CHECK(r.mean_accuracy == 1.0);
  CHECK(r.stddev == 0.0);
  CHECK(r.folds.size() == 10);
  const auto leak = cross_validate(pairs, [](const PairEntry& p) { return double(p.label); });
  CHECK(leak.mean_accuracy == 1.0);
}

TEST_CASE("cross validation: seeded coin flip") {
  const auto pairs = balanced_pairs(6000, 10);
  Rng rng(2718);
  std::vector<double> coin(pairs.size());
  for (double& c : coin) c = rng.uniform() < 0.5 ? 1.0 : 0.0;
  const auto r = cross_validate(pairs, coin);
  CHECK(std::abs(r.mean_accuracy - 0.5) <= 0.05);
}

TEST_CASE("a fold's own pairs never set its threshold") {
  Rng rng(4);
  const auto pairs = balanced_pairs(400, 4);
  std::vector<double> s(pairs.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = rng.normal() + pairs.entries[i].label;
  const auto before = cross_validate(pairs, s);
  // plant an outlier genuine pair with a huge negative score in fold 0
  auto planted = s;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (pairs.entries[i].fold == 0 && pairs.entries[i].label == 1) {
      planted[i] = -1e6;
      break;
    }
  const auto after = cross_validate(pairs, planted);
  CHECK(after.folds[0].threshold == before.folds[0].threshold);
}

TEST_CASE("monotone transforms leave fold accuracies unchanged") {
  Rng rng(8);
  const auto pairs = balanced_pairs(500, 10);
  std::vector<double> s(pairs.size()), t(pairs.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = rng.normal() + 0.8 * pairs.entries[i].label;
    t[i] = std::exp(3.0 * s[i]) + 2.0;
  }
  const auto a = cross_validate(pairs, s);
  const auto b = cross_validate(pairs, t);
  for (std::size_t f = 0; f < a.folds.size(); ++f) CHECK(a.folds[f].accuracy == b.folds[f].accuracy);
}

TEST_CASE("report aggregates are recomputable") {
  Rng rng(10);
  const auto pairs = balanced_pairs(300, 10);
  std::vector<double> s(pairs.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = rng.normal() + pairs.entries[i].label;
  const auto r = cross_validate(pairs, s);
  double mean = 0;
  for (const auto& f : r.folds) mean += f.accuracy;
  mean /= double(r.folds.size());
  double var = 0;
  for (const auto& f : r.folds) var += (f.accuracy - mean) * (f.accuracy - mean);
  CHECK(r.mean_accuracy == doctest::Approx(mean).epsilon(1e-15));
  CHECK(r.stddev == doctest::Approx(std::sqrt(var / double(r.folds.size()))).epsilon(1e-12));
  for (const auto& f : r.folds) {
    CHECK(f.accuracy >= 0.0);
    CHECK(f.accuracy <= 1.0);
  }
}

TEST_CASE("single-class folds are skipped with a warning") {
  PairList p = balanced_pairs(40, 4);
  for (auto& e : p.entries)
    if (e.fold == 2) e.label = 1;
  std::vector<double> s(p.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = p.entries[i].label;
  const auto r = cross_validate(p, s);
  CHECK(r.folds[2].skipped);
  CHECK(r.warnings.size() == 1);
  CHECK(r.mean_accuracy == 1.0);
}

TEST_CASE("pair list validation") {
  PairList p;
  p.entries = {{"a", "b", 1, 0}, {"c", "d", 0, 0}};
  CHECK(kind_of([&] { validate(p); }) == ErrorKind::Domain);
  p.entries.push_back({"e", "f", 0, 2});
  CHECK(kind_of([&] { validate(p); }) == ErrorKind::Domain);  // fold 1 empty
}

TEST_CASE("parallel scoring is order-preserving") {
  const auto pairs = balanced_pairs(1001, 10);
  const PairScorer scorer = [](const PairEntry& p) { return std::sin(double(p.id_a.size() * 31 + p.id_b.back())); };
  const auto one = score_pairs(pairs, scorer, 1);
  for (int jobs : {2, 3, 8}) CHECK(score_pairs(pairs, scorer, jobs) == one);
}

namespace {

EmbeddingStore toy_store(std::size_t k, std::size_t d, std::size_t images, std::uint64_t seed) {
  EmbeddingStore store;
  store.layout = layout_patches(112, 112, 112 / static_cast<int>(k == 1 ? 1 : 4),
                                112 / static_cast<int>(k == 1 ? 1 : 4), 28, false);
  Rng rng(seed);
  for (std::size_t i = 0; i < images; ++i) {
    std::vector<double> v(store.layout.size() * d);
    for (double& x : v) x = rng.normal();
    const std::string id = "img" + std::to_string(i);
    store.sets.emplace(id, EmbeddingSet(id, store.layout.size(), d, v, 7));
  }
  return store;
}

}  // namespace

TEST_CASE("evaluate configuration") {
  const auto store = toy_store(1, 16, 40, 3);
  REQUIRE(store.layout.size() == 1);
  PairList pairs;
  for (int i = 0; i < 40; ++i)
    pairs.entries.push_back({"img" + std::to_string(i), "img" + std::to_string((i * 7 + 3) % 40), i % 2, (i / 2) % 10});

  Configuration c{"whole", &store, SimilarityMode::RRFNet, std::nullopt};
  const auto r = evaluate_configuration(pairs, c);
  // K = 1: identical to thresholding the plain cosine
  std::vector<double> plain(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i)
    plain[i] = local_similarity(store.at(pairs.entries[i].id_a).row(0), store.at(pairs.entries[i].id_b).row(0));
  const auto base = cross_validate(pairs, plain);
  CHECK(r.folds == base.folds);
  CHECK(r.mean_accuracy == base.mean_accuracy);
  CHECK(evaluate_configuration(pairs, c, 4) == r);

  Configuration region{"region", &store, SimilarityMode::RegionBased, std::nullopt};
  CHECK(kind_of([&] { evaluate_configuration(pairs, region); }) == ErrorKind::State);

  pairs.entries.push_back({"img0", "ghost", 1, 0});
  CHECK(kind_of([&] { evaluate_configuration(pairs, c); }) == ErrorKind::MissingIds);
}

TEST_CASE("evaluate configurations with combination") {
  const auto s1 = toy_store(16, 8, 30, 1);
  const auto s2 = toy_store(16, 8, 30, 2);
  REQUIRE(s1.layout.size() == 16);
  PairList pairs;
  for (int i = 0; i < 30; ++i)
    pairs.entries.push_back({"img" + std::to_string(i), "img" + std::to_string((i + 1) % 30), i % 2, i % 5});
  const Configuration cfgs[] = {{"one", &s1, SimilarityMode::RRFNet, std::nullopt},
                                {"two", &s2, SimilarityMode::RRFNet, std::nullopt}};
  const auto out = evaluate_configurations(pairs, cfgs, CombineOptions{}, 2);
  REQUIRE(out.reports.size() == 3);
  CHECK(out.reports[2].name == "combined");
  CHECK(out.combiner.fitted());
  CombineOptions learned;
  learned.method = CombineMethod::LearnedLogistic;
  CHECK(kind_of([&] { evaluate_configurations(pairs, cfgs, learned); }) == ErrorKind::State);
  learned.calibration = &pairs;
  CHECK(evaluate_configurations(pairs, cfgs, learned).reports.size() == 3);
}
