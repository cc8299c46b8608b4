#include "knlab/stats.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <limits>

#include "knlab/errors.hpp"

namespace knlab {

double mean(const std::vector<double>& v) {
  if (v.empty()) throw data_error("mean: empty sample");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_variance(const std::vector<double>& v) {
  if (v.size() < 2) throw data_error("sample_variance: need at least two observations");
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

double student_t_cdf(double t, double df) {
  boost::math::students_t dist(df);
  return boost::math::cdf(dist, t);
}

namespace {

double two_sided_p(double t, double df) {
  if (std::isinf(t)) return 0.0;
  boost::math::students_t dist(df);
  return 2.0 * boost::math::cdf(dist, -std::abs(t));
}

TTestResult finish_degenerate(double ma, double mb, double df) {
  TTestResult r;
  r.df = df;
  if (ma == mb) {
    r.t = 0.0;
    r.p = 1.0;
  } else {
    r.t = (ma - mb > 0.0) ? std::numeric_limits<double>::infinity()
                          : -std::numeric_limits<double>::infinity();
    r.p = 0.0;
  }
  return r;
}

}  // namespace

TTestResult pooled_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2)
    throw data_error("pooled_t_test: each group needs at least two observations");
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double ma = mean(a), mb = mean(b);
  const double va = sample_variance(a), vb = sample_variance(b);
  const double df = na + nb - 2.0;
  const double sp2 = ((na - 1.0) * va + (nb - 1.0) * vb) / df;
  const double denom = std::sqrt(sp2 * (1.0 / na + 1.0 / nb));
  if (denom == 0.0) return finish_degenerate(ma, mb, df);
  TTestResult r;
  r.t = (ma - mb) / denom;
  r.df = df;
  r.p = two_sided_p(r.t, df);
  return r;
}

TTestResult welch_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2)
    throw data_error("welch_t_test: each group needs at least two observations");
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double ma = mean(a), mb = mean(b);
  const double qa = sample_variance(a) / na;
  const double qb = sample_variance(b) / nb;
  if (qa + qb == 0.0) return finish_degenerate(ma, mb, na + nb - 2.0);
  const double df = (qa + qb) * (qa + qb) / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
  TTestResult r;
  r.t = (ma - mb) / std::sqrt(qa + qb);
  r.df = df;
  r.p = two_sided_p(r.t, df);
  return r;
}

double chi_squared_sf(double x, double df) {
  boost::math::chi_squared dist(df);
  return boost::math::cdf(boost::math::complement(dist, x));
}

double chi_squared_uniform_p(const std::vector<int64_t>& counts) {
  if (counts.size() < 2) throw data_error("chi_squared_uniform_p: need at least two categories");
  int64_t total = 0;
  for (int64_t c : counts) total += c;
  if (total == 0) throw data_error("chi_squared_uniform_p: empty sample");
  const double expected = static_cast<double>(total) / static_cast<double>(counts.size());
  double stat = 0.0;
  for (int64_t c : counts) {
    const double d = static_cast<double>(c) - expected;
    stat += d * d / expected;
  }
  return chi_squared_sf(stat, static_cast<double>(counts.size() - 1));
}

}  // namespace knlab
