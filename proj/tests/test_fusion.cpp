#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "rrf/error.hpp"
#include "rrf/fusion.hpp"
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

double train_accuracy(const FusionModel& m, const std::vector<double>& x, std::size_t k,
                      const std::vector<int>& y) {
  std::size_t ok = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double s = fused_score(m, std::span<const double>(x).subspan(i * k, k));
    ok += (s > 0) == (y[i] == 1);
  }
  return double(ok) / double(y.size());
}

// Mann-Whitney AUC
double auc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0;
  double pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1;
        wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return wins / pairs;
}

}  // namespace

TEST_CASE("separable single feature dominates") {
  // column 2 carries the label, the others are zero
  const std::size_t k = 4;
  std::vector<double> x;
  std::vector<int> y;
  for (int i = 0; i < 40; ++i) {
    const int label = i % 2;
    for (std::size_t c = 0; c < k; ++c) x.push_back(c == 2 ? (label ? 1.0 : -1.0) : 0.0);
    y.push_back(label);
  }
  const auto m = fit_fusion({x, y.size(), k}, y, {});
  CHECK(train_accuracy(m, x, k, y) == 1.0);
  CHECK(m.weights[2] > 1.0);
  for (std::size_t c : {0u, 1u, 3u}) CHECK(std::abs(m.weights[c]) < 1e-9);
}

TEST_CASE("uninformative features give a coin flip") {
  Rng rng(3);
  const std::size_t k = 3;
  std::vector<double> row(k);
  for (double& v : row) v = rng.uniform();
  std::vector<double> x;
  std::vector<int> y;
  for (int i = 0; i < 50; ++i) {
    x.insert(x.end(), row.begin(), row.end());
    y.push_back(i % 2);
  }
  const auto m = fit_fusion({x, y.size(), k}, y, {});
  CHECK(m.converged);
  for (double w : m.weights) CHECK(std::abs(w) < 1e-5);
  CHECK(std::abs(m.bias) < 1e-5);
  const double p = 1.0 / (1.0 + std::exp(-fused_score(m, row)));
  CHECK(p == doctest::Approx(0.5).epsilon(1e-5));
}

TEST_CASE("separable 2-feature set: fitted boundary matches grid search") {
  Rng rng(2024);
  for (int trial = 0; trial < 3; ++trial) {
    // labels from a random line with a margin
    const double a = rng.normal(), b = rng.normal(), c = 0.2 * rng.normal();
    std::vector<double> x;
    std::vector<int> y;
    while (y.size() < 30) {
      const double u = 2 * rng.uniform() - 1, v = 2 * rng.uniform() - 1;
      const double s = (a * u + b * v + c) / std::hypot(a, b);
      if (std::abs(s) < 0.1) continue;
      x.push_back(u);
      x.push_back(v);
      y.push_back(s > 0);
    }
    if (std::count(y.begin(), y.end(), 1) == 0 || std::count(y.begin(), y.end(), 0) == 0) continue;

    // exhaustive oracle over (w1, w2, b) in [-1, 1]^3 at 0.01 resolution
    std::size_t best = 0;
    for (int i = -100; i <= 100 && best < y.size(); ++i)
      for (int j = -100; j <= 100 && best < y.size(); ++j)
        for (int l = -100; l <= 100; ++l) {
          std::size_t ok = 0;
          for (std::size_t n = 0; n < y.size(); ++n)
            ok += ((i * x[2 * n] + j * x[2 * n + 1] + l) > 0) == (y[n] == 1);
          best = std::max(best, ok);
        }
    const auto m = fit_fusion({x, y.size(), 2}, y, {});
    CHECK(train_accuracy(m, x, 2, y) == double(best) / double(y.size()));
  }
}

TEST_CASE("loss is non-increasing and the fit is deterministic") {
  Rng rng(9);
  const std::size_t k = 5, n = 300;
  std::vector<double> x(n * k);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = rng.uniform() < 0.5;
    for (std::size_t c = 0; c < k; ++c) x[i * k + c] = rng.normal() + (y[i] ? 0.3 * double(c) : 0.0);
  }
  std::vector<double> trace;
  const auto m = fit_fusion({x, n, k}, y, {1e-3, 77}, &trace);
  REQUIRE(trace.size() == std::size_t(m.iterations) + 1);
  for (std::size_t i = 1; i < trace.size(); ++i) CHECK(trace[i] <= trace[i - 1]);
  CHECK(m.converged);
  CHECK(m.gradient_norm < 1e-6);
  CHECK(m.seed == 77);
  CHECK(logistic_loss(m, {x, n, k}, y) == doctest::Approx(m.loss).epsilon(1e-12));
  CHECK(fit_fusion({x, n, k}, y, {1e-3, 77}) == m);

  SUBCASE("permuting columns permutes weights") {
    const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
    std::vector<double> xp(n * k);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < k; ++c) xp[i * k + c] = x[i * k + perm[c]];
    FusionModel mp = m;
    for (std::size_t c = 0; c < k; ++c) mp.weights[c] = m.weights[perm[c]];
    for (std::size_t i = 0; i < n; ++i)
      CHECK(fused_score(mp, std::span<const double>(xp).subspan(i * k, k)) ==
            doctest::Approx(fused_score(m, std::span<const double>(x).subspan(i * k, k))).epsilon(1e-14));
  }
}

TEST_CASE("fit errors") {
  const std::vector<double> x{0.1, 0.2, 0.3};
  const std::vector<int> same{1, 1, 1};
  CHECK(kind_of([&] { fit_fusion({x, 3, 1}, same, {}); }) == ErrorKind::DegenerateTraining);
  const std::vector<double> bad{0.1, NAN, 0.3};
  const std::vector<int> y{1, 0, 1};
  CHECK(kind_of([&] { fit_fusion({bad, 3, 1}, y, {}); }) == ErrorKind::Data);
}

TEST_CASE("fused score") {
  FusionModel m;
  m.weights = {0.0, 0.0, 0.0};
  m.bias = -0.7;
  const std::vector<double> l{0.3, 0.1, 0.9};
  CHECK(fused_score(m, l) == -0.7);
  m.weights = {0.0, 1.0, 0.0};
  CHECK(fused_score(m, l) == doctest::Approx(0.1 - 0.7));
  FusionModel h;
  h.weights = {0.5, 0.5};
  CHECK(fused_score(h, std::vector<double>{0.2, 0.6}) == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(kind_of([&] { fused_score(h, l); }) == ErrorKind::Incompatible);
}

TEST_CASE("score combiner") {
  Rng rng(5);
  const std::size_t n = 2000;
  std::vector<int> y(n);
  std::vector<double> informative(n), noise(n), both(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = i % 2;
    informative[i] = rng.normal() + (y[i] ? 1.0 : 0.0);
    noise[i] = rng.normal();
    both[2 * i] = informative[i];
    both[2 * i + 1] = noise[i];
  }

  SUBCASE("unfitted combiner") {
    ScoreCombiner c;
    CHECK(kind_of([&] { combine_scores(c, std::vector<double>{1.0}); }) == ErrorKind::State);
  }
  SUBCASE("single source gives its z-score") {
    const auto c = fit_combiner(CombineMethod::MeanZScore, {informative, n, 1}, {});
    const double s = 0.37;
    CHECK(combine_scores(c, std::vector<double>{s}) ==
          doctest::Approx((s - c.stats[0].mean) / c.stats[0].stddev).epsilon(1e-15));
  }
  SUBCASE("identical sources keep the ranking") {
    std::vector<double> dup(2 * n);
    for (std::size_t i = 0; i < n; ++i) dup[2 * i] = dup[2 * i + 1] = informative[i];
    const auto c = fit_combiner(CombineMethod::MeanZScore, {dup, n, 2}, {});
    for (std::size_t i = 1; i < 50; ++i) {
      const double a = combine_scores(c, std::span<const double>(dup).subspan(2 * i, 2));
      const double b = combine_scores(c, std::span<const double>(dup).subspan(2 * i - 2, 2));
      CHECK((a < b) == (informative[i] < informative[i - 1]));
    }
  }
  SUBCASE("affine rescaling of a source does not change combined values") {
    std::vector<double> moved(both);
    for (std::size_t i = 0; i < n; ++i) moved[2 * i + 1] = 3.0 * moved[2 * i + 1] - 7.0;
    const auto c1 = fit_combiner(CombineMethod::MeanZScore, {both, n, 2}, {});
    const auto c2 = fit_combiner(CombineMethod::MeanZScore, {moved, n, 2}, {});
    for (std::size_t i = 0; i < 100; ++i)
      CHECK(combine_scores(c1, std::span<const double>(both).subspan(2 * i, 2)) ==
            doctest::Approx(combine_scores(c2, std::span<const double>(moved).subspan(2 * i, 2))).epsilon(1e-12));
  }
  SUBCASE("informative source plus pure noise") {
    // Monte-Carlo, seed 5: AUC(informative) ~ 0.76. Equal-weight z-score
    // averaging with a noise source costs ~0.08 AUC (analytically
    // Phi(0.471) = 0.681 vs Phi(0.707) = 0.760); learned weights recover it.
    std::vector<double> zmean(n), learned(n);
    const auto cz = fit_combiner(CombineMethod::MeanZScore, {both, n, 2}, {});
    const auto cl = fit_combiner(CombineMethod::LearnedLogistic, {both, n, 2}, y);
    for (std::size_t i = 0; i < n; ++i) {
      zmean[i] = combine_scores(cz, std::span<const double>(both).subspan(2 * i, 2));
      learned[i] = combine_scores(cl, std::span<const double>(both).subspan(2 * i, 2));
    }
    const double base = auc(informative, y);
    CHECK(base == doctest::Approx(0.76).epsilon(0.03));
    CHECK(auc(zmean, y) >= base - 0.1);
    CHECK(auc(learned, y) >= base - 0.005);
  }
  SUBCASE("zero variance source is rejected") {
    std::vector<double> flat(n, 0.5);
    CHECK(kind_of([&] { fit_combiner(CombineMethod::MeanZScore, {flat, n, 1}, {}); }) == ErrorKind::Data);
  }
}
