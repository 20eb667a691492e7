#pragma once
// Distribution tails shared by the detector and the baseline tests.

namespace wmkit {

// Standard normal CDF and upper tail, absolute error <= 1e-12.
double normal_cdf(double z);
double normal_upper_tail(double z); // 1 - Phi(z)

// log10 of the upper tail; switches to an asymptotic expansion for large z
// where the tail itself underflows double range.
double log10_normal_upper_tail(double z);

// Regularized incomplete beta I_x(a,b) via continued fraction.
double regularized_incomplete_beta(double a, double b, double x);

// Student-t CDF for real df > 0, evaluated through the incomplete beta,
// absolute error <= 1e-10.
double student_t_cdf(double t, double df);

} // namespace wmkit
