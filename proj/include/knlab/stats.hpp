#pragma once

#include <vector>

namespace knlab {

double mean(const std::vector<double>& v);

// unbiased sample variance (n-1 denominator); requires n >= 2
double sample_variance(const std::vector<double>& v);

struct TTestResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;  // two-sided
};

// Two-sample Student t-test with pooled variance, two-sided p. The groups
// are treated as independent. Degenerate inputs are resolved rather than
// propagating NaN: zero pooled variance gives t=0,p=1 for equal means and
// t=+-inf,p=0 otherwise.
TTestResult pooled_t_test(const std::vector<double>& a, const std::vector<double>& b);

// Welch variant (unpooled variances, Welch-Satterthwaite df)
TTestResult welch_t_test(const std::vector<double>& a, const std::vector<double>& b);

// P(T <= t) for Student's t with df degrees of freedom
double student_t_cdf(double t, double df);

// upper tail probability of the chi-squared distribution
double chi_squared_sf(double x, double df);

// Pearson chi-squared test of uniformity over k categories
double chi_squared_uniform_p(const std::vector<int64_t>& counts);

}  // namespace knlab
