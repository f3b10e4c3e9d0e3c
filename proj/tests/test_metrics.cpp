#include <fstream>
#include <sstream>

#include "birdast/error.hpp"
#include "birdast/metrics.hpp"
#include "doctest.h"
#include "metrics_oracle.hpp"
#include "support.hpp"

using namespace birdast;
using namespace birdast::metrics;

TEST_SUITE("metrics") {
  TEST_CASE("binarize tie and boundary rules") {
    Matrix p(1, 3);
    p(0, 0) = 0.5;
    p(0, 1) = 0.49;
    p(0, 2) = 0.0;
    const LabelMatrix b = binarize(p);
    CHECK(b(0, 0) == 1);
    CHECK(b(0, 1) == 0);
    CHECK(b(0, 2) == 0);
    const LabelMatrix all = binarize(p, 0.0);
    for (auto v : all.data) CHECK(v == 1);
  }

  TEST_CASE("f1 from counts") {
    const Scores perfect = f1_from_counts(10, 0, 0);
    CHECK(perfect.precision == 1.0);
    CHECK(perfect.recall == 1.0);
    CHECK(perfect.f1 == 1.0);
    const Scores none = f1_from_counts(0, 0, 0);
    CHECK(none.precision == 0.0);
    CHECK(none.recall == 0.0);
    CHECK(none.f1 == 0.0);
    const Scores hand = f1_from_counts(6, 2, 4);
    CHECK(hand.precision == doctest::Approx(0.75));
    CHECK(hand.recall == doctest::Approx(0.6));
    CHECK(hand.f1 == doctest::Approx(2.0 * 0.45 / 1.35).epsilon(1e-12));
    CHECK(std::abs(hand.f1 - 0.6667) <= 1e-4);
  }

  TEST_CASE("macro F1 examples") {
    LabelMatrix t(4, 2), p(4, 2);
    t(0, 0) = t(1, 0) = t(2, 1) = t(3, 1) = 1;
    CHECK(macro_f1(t, t).value == 1.0);
    p(0, 0) = p(1, 0) = 1;
    const MacroF1 m = macro_f1(p, t);
    CHECK(m.value == 0.5);
    CHECK(m.per_class[1].fn == 2);
    CHECK(m.per_class[1].scores.f1 == 0.0);
    CHECK_THROWS_AS(macro_f1(LabelMatrix(3, 2), t), Error);
  }

  TEST_CASE("samples F1 examples") {
    LabelMatrix t(2, 3), p(2, 3);
    t(0, 1) = t(1, 2) = 1;
    CHECK(samples_f1(t, t) == 1.0);
    p = t;
    p(0, 0) = 1;
    // Row 0: precision 1/2, recall 1, F1 2/3. Row 1 exact.
    CHECK(samples_f1(p, t) == doctest::Approx((2.0 / 3.0 + 1.0) / 2.0).epsilon(1e-15));
  }

  TEST_CASE("library metrics equal the set-based oracle on random matrices") {
    Rng rng(2024);
    for (int trial = 0; trial < 1000; ++trial) {
      const double density = rng.uniform(0.05, 0.6);
      const LabelMatrix p = testing::random_labels(rng, 20, 6, density);
      const LabelMatrix t = testing::random_labels(rng, 20, 6, density);
      CHECK(std::abs(macro_f1(p, t).value - testing::oracle_macro_f1(p, t)) <= 1e-12);
      CHECK(std::abs(samples_f1(p, t) - testing::oracle_samples_f1(p, t)) <= 1e-12);
    }
  }

  TEST_CASE("single-label samples F1 is accuracy") {
    Rng rng(3);
    LabelMatrix p(50, 5), t(50, 5);
    std::size_t correct = 0;
    for (std::size_t r = 0; r < 50; ++r) {
      const auto a = rng.below(5), b = rng.below(5);
      t(r, a) = 1;
      p(r, b) = 1;
      correct += a == b;
    }
    CHECK(samples_f1(p, t) == doctest::Approx(correct / 50.0).epsilon(1e-15));
  }

  TEST_CASE("samples F1 exceeds macro F1 when only frequent classes are right") {
    Rng rng(12);
    const auto s = testing::skewed_case(rng, 400, 8, 2);
    const double macro = macro_f1(s.pred, s.target).value;
    const double samples = samples_f1(s.pred, s.target);
    CHECK(samples > macro);
    CHECK(samples > 0.6);
    CHECK(macro < 0.3);
  }

  TEST_CASE("report CSV") {
    testing::TempDir dir("metrics");
    Matrix probs(2, 2);
    probs(0, 0) = 0.9;
    probs(1, 1) = 0.2;
    LabelMatrix t(2, 2);
    t(0, 0) = t(1, 1) = 1;
    const MetricsReport r = evaluate(probs, t);
    CHECK(r.macro_f1 == 0.5);
    CHECK(r.samples_f1 == 0.5);
    write_report_csv(dir / "m.csv", r, {"a", "b"});
    std::ifstream in(dir / "m.csv");
    std::stringstream ss;
    ss << in.rdbuf();
    CHECK(ss.str() ==
          "label,tp,fp,fn,precision,recall,f1\n"
          "a,1,0,0,1.000000,1.000000,1.000000\n"
          "b,0,0,1,0.000000,0.000000,0.000000\n"
          "macro,,,,,,0.500000\n"
          "samples,,,,,,0.500000\n");
    CHECK_THROWS_AS(write_report_csv(dir / "x.csv", r, {"a"}), Error);
  }
}
