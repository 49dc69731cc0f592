#pragma once

#include <cstdint>
#include <string>

namespace chronokit {

// Paired-prediction counts: a = both correct, b = model-2-only correct,
// c = model-1-only correct, d = both incorrect.
struct ContingencyTable {
  std::uint64_t a = 0, b = 0, c = 0, d = 0;
  std::uint64_t n() const { return a + b + c + d; }
};

struct TestResult {
  double chi2 = 0.0;
  double p = 1.0;
  double alpha = 0.05;
  bool reject = false;
};

// McNemar's test with the Edwards continuity correction,
// chi2 = (max(|b-c|-1, 0))^2 / (b+c). Requires b + c > 0.
TestResult mcnemar(const ContingencyTable& t, double alpha = 0.05);

// Survival function of the chi-squared distribution with one degree of
// freedom: p = erfc(sqrt(x/2)). erfc uses a rational approximation with
// fractional error below 1.2e-7, so tail values keep their leading digits.
double chi2_sf_1dof(double x);

double erfc_approx(double x);

// Formats p the way the contingency tables print it: two significant digits
// with the mantissa truncated toward zero (e.g. 0.019629... -> "1.9e-02").
std::string format_p_truncated(double p);

}  // namespace chronokit
