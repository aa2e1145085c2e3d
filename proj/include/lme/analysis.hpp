// Comparison metrics between LME series.
#pragma once

#include "lme/grid.hpp"

namespace lme {

struct RmsDeviation {
  std::vector<double> per_window;   // one entry per (node, day-window), node-major
  double mean_normalized = 0.0;     // average of per_window
  double median_abs_dynamic = 0.0;  // the normalizer
};

/// Per node and per day-window RMS of (lme_static - lme_dynamic), normalized
/// by the median of |lme_dynamic| over the full dataset (lower median for
/// even counts). day_len must divide T. Throws DataError on a zero median,
/// instructing an absolute (unnormalized) report.
RmsDeviation rms_deviation(const Mat& lme_static, const Mat& lme_dynamic, int day_len = 24);

/// Historical estimator lambda_t = dE_t / (dd_t + eps); eps (default 0.5 MWh)
/// guards small demand changes.
Vec historical_lme_series(const Vec& dE, const Vec& dd, double eps = 0.5);

/// |est_t - truth_t| / Z with Z = mean |truth|. Throws DataError when truth
/// is all zero.
Vec normalized_abs_error(const Vec& est, const Vec& truth);

/// Centered rolling mean with window = max(1, round(fraction * length)).
/// Optional post-processing for plots; windows shrink at the edges.
Vec rolling_mean(const Vec& series, double window_fraction);

}  // namespace lme
