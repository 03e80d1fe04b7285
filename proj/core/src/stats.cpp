#include <cmath>
#include <limits>

#include "adua/analysis.hpp"

namespace adua {

namespace {

// Continued-fraction evaluation of the incomplete beta integral using the
// modified Lentz method. Converges quickly for x < (a+1)/(a+b+2); the
// caller applies the symmetry transform outside that region.
double beta_continued_fraction(double x, double a, double b) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-14;
  constexpr double kTiny = 1e-300;

  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double regularized_incomplete_beta(double x, double a, double b) {
  if (a <= 0.0 || b <= 0.0) {
    throw ContractError("incomplete beta: parameters must be positive");
  }
  if (!(x >= 0.0 && x <= 1.0)) {
    throw ContractError("incomplete beta: x must lie in [0, 1]");
  }
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * beta_continued_fraction(x, a, b) / a;
  }
  return 1.0 - front * beta_continued_fraction(1.0 - x, b, a) / b;
}

double student_t_two_tailed_p(double t, double df) {
  if (df <= 0.0) throw ContractError("t distribution: degrees of freedom must be positive");
  if (std::isinf(t)) return 0.0;
  // 2 P(T >= |t|) collapses to one incomplete-beta evaluation.
  const double x = df / (df + t * t);
  return regularized_incomplete_beta(x, 0.5 * df, 0.5);
}

WelchResult welch_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) {
    throw ContractError("welch_t_test: each sample needs at least 2 observations, got " +
                        std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
  const auto na = static_cast<double>(a.size());
  const auto nb = static_cast<double>(b.size());
  double ma = 0.0;
  double mb = 0.0;
  for (double v : a) ma += v;
  for (double v : b) mb += v;
  ma /= na;
  mb /= nb;
  double va = 0.0;
  double vb = 0.0;
  for (double v : a) va += (v - ma) * (v - ma);
  for (double v : b) vb += (v - mb) * (v - mb);
  va /= (na - 1.0);
  vb /= (nb - 1.0);

  WelchResult r;
  if (va == 0.0 && vb == 0.0) {
    // No spread at all: equal means are a perfect match, unequal means are
    // infinitely separated. Flag the latter so reports can call it out.
    r.df = na + nb - 2.0;
    if (ma == mb) {
      r.t = 0.0;
      r.p = 1.0;
    } else {
      r.t = std::copysign(std::numeric_limits<double>::infinity(), ma - mb);
      r.p = 0.0;
      r.degenerate = true;
    }
    return r;
  }

  const double sa = va / na;
  const double sb = vb / nb;
  r.t = (ma - mb) / std::sqrt(sa + sb);
  r.df = (sa + sb) * (sa + sb) /
         (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
  r.p = student_t_two_tailed_p(r.t, r.df);
  return r;
}

}  // namespace adua
