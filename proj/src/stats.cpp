#include "wmkit/stats.hpp"

#include <cmath>
#include <stdexcept>

namespace wmkit {

namespace {

constexpr double kSqrt2 = 1.4142135623730950488;
constexpr double kLn10 = 2.3025850929940456840;
constexpr double kHalfLn2Pi = 0.91893853320467274178;

// Continued fraction for the incomplete beta (modified Lentz).
double beta_cf(double a, double b, double x) {
    constexpr int kMaxIter = 400;
    constexpr double kEps = 1e-16;
    constexpr double kTiny = 1e-300;

    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kTiny) { d = kTiny; }
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) { d = kTiny; }
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) { c = kTiny; }
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) { d = kTiny; }
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) { c = kTiny; }
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps) { break; }
    }
    return h;
}

} // namespace

double normal_cdf(double z) {
    return 0.5 * std::erfc(-z / kSqrt2);
}

double normal_upper_tail(double z) {
    return 0.5 * std::erfc(z / kSqrt2);
}

double log10_normal_upper_tail(double z) {
    if (z < 30.0) {
        return std::log10(normal_upper_tail(z));
    }
    // Q(z) ~ phi(z)/z * (1 - 1/z^2 + 3/z^4 - 15/z^6 + 105/z^8 - 945/z^10)
    const double inv2 = 1.0 / (z * z);
    const double series =
        1.0 + inv2 * (-1.0 + inv2 * (3.0 + inv2 * (-15.0 + inv2 * (105.0 - 945.0 * inv2))));
    const double ln_q = -0.5 * z * z - std::log(z) - kHalfLn2Pi + std::log(series);
    return ln_q / kLn10;
}

double regularized_incomplete_beta(double a, double b, double x) {
    if (a <= 0.0 || b <= 0.0) {
        throw std::invalid_argument("incomplete beta requires a, b > 0");
    }
    if (x <= 0.0) { return 0.0; }
    if (x >= 1.0) { return 1.0; }
    const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                            a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) {
        return front * beta_cf(a, b, x) / a;
    }
    return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double df) {
    if (!(df > 0.0)) {
        throw std::invalid_argument("student_t_cdf requires df > 0");
    }
    if (std::isinf(t)) { return t > 0 ? 1.0 : 0.0; }
    const double x = df / (df + t * t);
    const double half_tail = 0.5 * regularized_incomplete_beta(df / 2.0, 0.5, x);
    return t <= 0.0 ? half_tail : 1.0 - half_tail;
}

} // namespace wmkit
