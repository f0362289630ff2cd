#include "dblcox/stats.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>

namespace dblcox::stats {

namespace bm = boost::math;

double normal_cdf(double x) { return bm::cdf(bm::normal(), x); }

double normal_sf(double x) { return bm::cdf(bm::complement(bm::normal(), x)); }

double normal_upper_quantile(double a) { return bm::quantile(bm::complement(bm::normal(), a)); }

double two_sided_p(double t) {
  if (std::isinf(t)) return 0.0;
  return std::min(1.0, 2.0 * normal_sf(std::abs(t)));
}

double chi2_sf(double x, double df) {
  if (x <= 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;
  return bm::cdf(bm::complement(bm::chi_squared(df), x));
}

double chi2_upper_quantile(double df, double a) {
  return bm::quantile(bm::complement(bm::chi_squared(df), a));
}

}  // namespace dblcox::stats
