#include <doctest.h>

#include <cmath>
#include <numeric>

#include "micropatch/error.hpp"
#include "micropatch/metrics.hpp"
#include "micropatch/rng.hpp"

using namespace micropatch;

namespace {

ConfusionMatrix from_rows(const std::vector<std::vector<std::int64_t>>& rows) {
  ConfusionMatrix cm{static_cast<int>(rows.size()), {}};
  for (const auto& r : rows) cm.counts.insert(cm.counts.end(), r.begin(), r.end());
  return cm;
}

ConfusionMatrix relabel(const ConfusionMatrix& cm, const std::vector<std::size_t>& perm) {
  ConfusionMatrix out{cm.num_classes, std::vector<std::int64_t>(cm.counts.size())};
  const int c = cm.num_classes;
  for (int t = 0; t < c; ++t)
    for (int p = 0; p < c; ++p) out.counts[perm[t] * c + perm[p]] = cm.at(t, p);
  return out;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("confusion examples") {
    const std::vector<int> truth = {0, 1, 1, 2, 0, 2}, pred = {0, 0, 1, 2, 0, 2};
    const auto cm = confusion(truth, pred, 3);
    CHECK(cm.counts == std::vector<std::int64_t>{2, 0, 0, 1, 1, 0, 0, 0, 2});
    CHECK(cm.total() == 6);

    const auto perfect = confusion(truth, truth, 3);
    for (int t = 0; t < 3; ++t)
      for (int p = 0; p < 3; ++p)
        if (t != p) CHECK(perfect.at(t, p) == 0);

    const auto empty = confusion(std::vector<int>{}, std::vector<int>{}, 4);
    CHECK(empty.counts == std::vector<std::int64_t>(16, 0));
    CHECK(empty.row_normalized() == std::vector<double>(16, 0.0));

    CHECK_THROWS_AS(confusion(std::vector<int>{3}, std::vector<int>{0}, 3), DataError);
    CHECK_THROWS_AS(confusion(std::vector<int>{0}, std::vector<int>{-1}, 3), DataError);
    CHECK_THROWS_AS(confusion(std::vector<int>{0, 1}, std::vector<int>{0}, 3), DataError);
  }

  TEST_CASE("macro_scores on the hand-computed matrix") {
    const auto r = macro_scores(from_rows({{2, 0, 0}, {1, 1, 0}, {0, 0, 2}}));
    CHECK(r.f1[0] == doctest::Approx(0.8));
    CHECK(r.f1[1] == doctest::Approx(2.0 / 3.0));
    CHECK(r.f1[2] == doctest::Approx(1.0));
    CHECK(std::abs(r.macro_f1 - 37.0 / 45.0) < 1e-12);
    CHECK(r.accuracy == doctest::Approx(5.0 / 6.0));
    CHECK(r.precision[0] == doctest::Approx(2.0 / 3.0));
    CHECK(r.recall[1] == doctest::Approx(0.5));
    CHECK(r.support == std::vector<std::int64_t>{2, 2, 2});

    const auto diag = macro_scores(from_rows({{5, 0}, {0, 7}}));
    CHECK(diag.accuracy == 1.0);
    CHECK(diag.macro_f1 == 1.0);
    CHECK_THROWS_AS(macro_scores(ConfusionMatrix{}), StatisticsError);
  }

  TEST_CASE("zero denominators give zero and still count in the mean") {
    // class 2 never predicted and absent from truth
    const auto r = macro_scores(from_rows({{3, 1, 0}, {0, 4, 0}, {0, 0, 0}}));
    CHECK(r.precision[2] == 0.0);
    CHECK(r.recall[2] == 0.0);
    CHECK(r.f1[2] == 0.0);
    CHECK(r.macro_f1 == doctest::Approx((r.f1[0] + r.f1[1]) / 3.0));
  }

  TEST_CASE("relabeling invariance and balance properties over random matrices") {
    Rng rng(11);
    for (int trial = 0; trial < 100; ++trial) {
      const int c = 2 + static_cast<int>(rng.index(7));
      ConfusionMatrix cm{c, std::vector<std::int64_t>(static_cast<std::size_t>(c * c))};
      for (auto& v : cm.counts) v = static_cast<std::int64_t>(rng.index(20));
      const auto base = macro_scores(cm);
      const auto moved = macro_scores(relabel(cm, rng.permutation(static_cast<std::size_t>(c))));
      CHECK(std::abs(base.macro_f1 - moved.macro_f1) < 1e-12);
      CHECK(std::abs(base.macro_precision - moved.macro_precision) < 1e-12);
      CHECK(std::abs(base.macro_recall - moved.macro_recall) < 1e-12);
      CHECK(base.accuracy == moved.accuracy);

      // accuracy is the support-weighted mean of recall
      double weighted = 0.0;
      for (int k = 0; k < c; ++k) weighted += base.recall[k] * base.support[k];
      CHECK(std::abs(weighted / cm.total() - base.accuracy) < 1e-12);

      for (int k = 0; k < c; ++k) {
        CHECK(base.f1[k] >= 0.0);
        CHECK(base.f1[k] <= 1.0);
        if (base.precision[k] > 0 && base.recall[k] > 0) {
          CHECK(base.f1[k] >= std::min(base.precision[k], base.recall[k]) - 1e-12);
          CHECK(base.f1[k] <= std::max(base.precision[k], base.recall[k]) + 1e-12);
        }
      }

      // balanced rows: macro recall equals accuracy
      ConfusionMatrix bal{c, std::vector<std::int64_t>(static_cast<std::size_t>(c * c))};
      for (int t = 0; t < c; ++t) {
        const auto hit = static_cast<std::int64_t>(rng.index(17));
        bal.counts[t * c + t] = hit;
        bal.counts[t * c + (t + 1) % c] = 16 - hit;
      }
      const auto b = macro_scores(bal);
      CHECK(std::abs(b.macro_recall - b.accuracy) < 1e-15);
    }
  }

  TEST_CASE("argmax ties go to the lowest class") {
    TensorF logits(Shape{3, 3});
    const float v[] = {0.1f, 0.5f, 0.5f, 2.0f, -1.0f, 2.0f, -3.0f, -2.0f, -2.5f};
    std::copy(std::begin(v), std::end(v), logits.data());
    CHECK(argmax_rows(logits) == std::vector<int>{1, 0, 1});
  }

  TEST_CASE("uniform random predictions sit near chance") {
    Rng rng(3);
    std::vector<int> truth, pred;
    for (int i = 0; i < 40000; ++i) {
      truth.push_back(i % 8);
      pred.push_back(static_cast<int>(rng.index(8)));
    }
    CHECK(macro_scores(confusion(truth, pred, 8)).accuracy == doctest::Approx(0.125).epsilon(0.05));
  }

  TEST_CASE("timing summary recomputes the mean") {
    const std::vector<double> s = {3.0, 1.0, 2.0, 10.0};
    const auto t = summarize_timings(s);
    CHECK(t.mean_ms == doctest::Approx(4.0));
    CHECK(t.median_ms == doctest::Approx(2.5));
    CHECK(t.std_ms == doctest::Approx(std::sqrt((1.0 + 9.0 + 4.0 + 36.0) / 4.0)));
    CHECK(t.samples_ms.size() == 4);

    auto model = build<float>(ModelSpec::defaults(Arch::MLP));
    const auto timed = time_inference(model, 30, 5);
    REQUIRE(timed.samples_ms.size() == 30);
    const double mean = std::accumulate(timed.samples_ms.begin(), timed.samples_ms.end(), 0.0) / 30.0;
    CHECK(timed.mean_ms == doctest::Approx(mean).epsilon(1e-12));
  }

  TEST_CASE("CustomViT times faster than a model with over 5x its MACs") {
    auto base = ModelSpec::defaults(Arch::CustomViT);
    auto deep = base;
    deep.vit_depth = 40;
    REQUIRE(forward_macs(deep) >= 5 * forward_macs(base));
    auto fast = build<float>(base);
    auto slow = build<float>(deep);
    CHECK(time_inference(fast, 40, 5).median_ms < time_inference(slow, 40, 5).median_ms);
  }
}
