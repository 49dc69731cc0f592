#include "chronokit/stats.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace chronokit {

TestResult mcnemar(const ContingencyTable& t, double alpha) {
  if (t.b + t.c == 0)
    throw std::invalid_argument(
        "McNemar's test is undefined with no disagreements (b + c = 0)");
  const double diff =
      std::fabs(static_cast<double>(t.b) - static_cast<double>(t.c));
  const double corrected = std::max(diff - 1.0, 0.0);
  TestResult r;
  r.chi2 = corrected * corrected / static_cast<double>(t.b + t.c);
  r.p = chi2_sf_1dof(r.chi2);
  r.alpha = alpha;
  r.reject = r.p < alpha;
  return r;
}

double erfc_approx(double x) {
  // rational Chebyshev fit; fractional error < 1.2e-7 over the whole line
  const double z = std::fabs(x);
  const double t = 1.0 / (1.0 + 0.5 * z);
  const double ans =
      t * std::exp(-z * z - 1.26551223 +
                   t * (1.00002368 +
                        t * (0.37409196 +
                             t * (0.09678418 +
                                  t * (-0.18628806 +
                                       t * (0.27886807 +
                                            t * (-1.13520398 +
                                                 t * (1.48851587 +
                                                      t * (-0.82215223 +
                                                           t * 0.17087277)))))))));
  return x >= 0.0 ? ans : 2.0 - ans;
}

double chi2_sf_1dof(double x) {
  if (x < 0.0) throw std::invalid_argument("chi-squared statistic must be >= 0");
  return erfc_approx(std::sqrt(x / 2.0));
}

std::string format_p_truncated(double p) {
  if (p <= 0.0) return "0.0e+00";
  double exp10 = std::floor(std::log10(p));
  double mant = p / std::pow(10.0, exp10);
  if (mant >= 10.0) {
    mant /= 10.0;
    exp10 += 1.0;
  }
  // keep one decimal, truncated toward zero
  mant = std::floor(mant * 10.0) / 10.0;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1fe%+03d", mant, static_cast<int>(exp10));
  return buf;
}

}  // namespace chronokit
