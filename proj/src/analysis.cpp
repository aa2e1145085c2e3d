#include "lme/analysis.hpp"

#include <algorithm>
#include <cmath>

#include "lme/errors.hpp"

namespace lme {

namespace {

// Lower median: element at index floor((n-1)/2) of the sorted values.
double lower_median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[(v.size() - 1) / 2];
}

}  // namespace

RmsDeviation rms_deviation(const Mat& lme_static, const Mat& lme_dynamic, int day_len) {
  if (lme_static.rows() != lme_dynamic.rows() || lme_static.cols() != lme_dynamic.cols())
    throw DataError("rms_deviation: shape mismatch");
  const int T = static_cast<int>(lme_dynamic.rows());
  const int n = static_cast<int>(lme_dynamic.cols());
  if (day_len < 1 || T % day_len != 0)
    throw DataError("rms_deviation: day length " + std::to_string(day_len) +
                    " does not divide the horizon " + std::to_string(T));

  std::vector<double> abs_dyn;
  abs_dyn.reserve(T * n);
  for (int t = 0; t < T; ++t)
    for (int i = 0; i < n; ++i) abs_dyn.push_back(std::abs(lme_dynamic(t, i)));
  const double med = lower_median(abs_dyn);
  if (med == 0.0)
    throw DataError(
        "rms_deviation: median |dynamic LME| is zero; report absolute "
        "(unnormalized) deviations instead");

  RmsDeviation out;
  out.median_abs_dynamic = med;
  const int windows = T / day_len;
  for (int i = 0; i < n; ++i) {
    for (int w = 0; w < windows; ++w) {
      double acc = 0.0;
      for (int t = w * day_len; t < (w + 1) * day_len; ++t) {
        const double d = lme_static(t, i) - lme_dynamic(t, i);
        acc += d * d;
      }
      out.per_window.push_back(std::sqrt(acc / day_len) / med);
    }
  }
  double sum = 0.0;
  for (double v : out.per_window) sum += v;
  out.mean_normalized = sum / static_cast<double>(out.per_window.size());
  return out;
}

Vec historical_lme_series(const Vec& dE, const Vec& dd, double eps) {
  if (dE.size() != dd.size()) throw DataError("historical_lme_series: length mismatch");
  if (!(eps > 0)) throw DataError("historical_lme_series: eps must be > 0");
  Vec out(dE.size());
  for (Eigen::Index t = 0; t < dE.size(); ++t) out[t] = dE[t] / (dd[t] + eps);
  return out;
}

Vec normalized_abs_error(const Vec& est, const Vec& truth) {
  if (est.size() != truth.size()) throw DataError("normalized_abs_error: length mismatch");
  const double Z = truth.cwiseAbs().mean();
  if (Z == 0.0) throw DataError("normalized_abs_error: truth is identically zero");
  return (est - truth).cwiseAbs() / Z;
}

Vec rolling_mean(const Vec& series, double window_fraction) {
  const int T = static_cast<int>(series.size());
  if (T == 0) return series;
  int w = std::max(1, static_cast<int>(std::lround(window_fraction * T)));
  w = std::min(w, T);
  Vec out(T);
  const int half = w / 2;
  for (int t = 0; t < T; ++t) {
    const int lo = std::max(0, t - half);
    const int hi = std::min(T - 1, t + half);
    out[t] = series.segment(lo, hi - lo + 1).mean();
  }
  return out;
}

}  // namespace lme
