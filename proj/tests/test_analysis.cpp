#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "lme/analysis.hpp"
#include "lme/errors.hpp"

using namespace lme;

TEST_CASE("rms_deviation: identical series deviate by zero") {
  Mat a(4, 2);
  a << 1, 2, 3, 4, 5, 6, 7, 8;
  RmsDeviation r = rms_deviation(a, a, 4);
  CHECK(r.mean_normalized == 0.0);
  for (double v : r.per_window) CHECK(v == 0.0);
}

TEST_CASE("rms_deviation: hand-computed window")
{
  // static (1,1,1,1) vs dynamic (1,1,3,3): RMS of (0,0,-2,-2) = sqrt(2);
  // lower median of |dynamic| = 1, so the normalized value is sqrt(2).
  Mat st(4, 1), dy(4, 1);
  st << 1, 1, 1, 1;
  dy << 1, 1, 3, 3;
  RmsDeviation r = rms_deviation(st, dy, 4);
  CHECK(r.median_abs_dynamic == 1.0);
  REQUIRE(r.per_window.size() == 1);
  CHECK(std::abs(r.per_window[0] - std::sqrt(2.0)) < 1e-12);
  CHECK(std::abs(r.mean_normalized - std::sqrt(2.0)) < 1e-12);
}

TEST_CASE("rms_deviation: multiple nodes and windows average") {
  Mat st(4, 2), dy(4, 2);
  dy << 1, 2, 1, 2, 1, 2, 1, 2;
  st = dy;
  st(0, 0) += 2.0;  // one bad entry in node 0, first 2-period window
  RmsDeviation r = rms_deviation(st, dy, 2);
  REQUIRE(r.per_window.size() == 4);  // 2 nodes x 2 windows, node-major
  // lower median of |dy| over all 8 entries (1,1,1,1,2,2,2,2) -> 1.
  CHECK(r.median_abs_dynamic == 1.0);
  CHECK(std::abs(r.per_window[0] - std::sqrt(4.0 / 2.0)) < 1e-12);
  CHECK(r.per_window[1] == 0.0);
  CHECK(r.per_window[2] == 0.0);
  CHECK(r.per_window[3] == 0.0);
  CHECK(std::abs(r.mean_normalized - std::sqrt(2.0) / 4.0) < 1e-12);
}

TEST_CASE("rms_deviation: toy-style zero median raises the documented error") {
  Mat st(2, 1), dy(2, 1);
  st << 0, 500;
  dy << 0, 0;
  CHECK_THROWS_WITH_AS(rms_deviation(st, dy, 2), doctest::Contains("absolute"),
                       DataError);
}

TEST_CASE("rms_deviation: day length must divide the horizon") {
  Mat a = Mat::Ones(5, 1);
  CHECK_THROWS_AS(rms_deviation(a, a, 2), DataError);
}

TEST_CASE("historical series: epsilon guard") {
  Vec dE(1), dd(1);
  dE << 10.0;
  dd << 9.5;
  CHECK(historical_lme_series(dE, dd)[0] == doctest::Approx(1.0).epsilon(1e-12));

  dd << 0.0;
  CHECK(historical_lme_series(dE, dd)[0] == doctest::Approx(10.0 / 0.5).epsilon(1e-12));

  Vec dE2(2), dd2(2);
  dE2 << 5.0, -5.0;
  dd2 << 4.5, -5.5;
  Vec out = historical_lme_series(dE2, dd2, 0.5);
  CHECK(out[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(out[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("normalized absolute error") {
  Vec truth(2);
  truth << 2.0, -2.0;
  CHECK(normalized_abs_error(truth, truth).cwiseAbs().maxCoeff() == 0.0);

  Vec zero = Vec::Zero(2);
  Vec e1 = normalized_abs_error(zero, truth);
  CHECK(e1[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(e1[1] == doctest::Approx(1.0).epsilon(1e-12));

  Vec est(2);
  est << 3.0, 0.0;
  Vec e2 = normalized_abs_error(est, truth);
  CHECK(e2[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(e2[1] == doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(normalized_abs_error(est, zero), DataError);
}

TEST_CASE("rolling mean shrinks its window at the edges") {
  Vec s(4);
  s << 0, 1, 2, 3;
  Vec out = rolling_mean(s, 0.5);  // window 2, half 1
  CHECK(out[0] == doctest::Approx(0.5));
  CHECK(out[1] == doctest::Approx(1.0));
  CHECK(out[2] == doctest::Approx(2.0));
  CHECK(out[3] == doctest::Approx(2.5));
}
