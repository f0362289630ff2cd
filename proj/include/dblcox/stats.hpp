#pragma once

namespace dblcox::stats {

double normal_cdf(double x);
/// P(Z > x) computed without cancellation.
double normal_sf(double x);
/// Upper quantile z_a: P(Z > z_a) = a.
double normal_upper_quantile(double a);
/// Two-sided p-value 2 P(Z > |t|).
double two_sided_p(double t);

/// P(X > x) for X ~ chi-square with `df` degrees of freedom.
double chi2_sf(double x, double df);
/// Upper quantile chi2_{df,a}.
double chi2_upper_quantile(double df, double a);

}  // namespace dblcox::stats
