#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <vector>

#include "thinspec/error.hpp"
#include "thinspec/profile.hpp"

namespace thinspec {

// Power series in x truncated at a fixed order.
struct TruncatedSeries {
    std::vector<double> coeffs;

    TruncatedSeries() : coeffs(1, 0.0) {}
    explicit TruncatedSeries(int order) : coeffs(std::size_t(order + 1), 0.0) {}
    TruncatedSeries(std::vector<double> c, int order) : coeffs(std::size_t(order + 1), 0.0) {
        for (std::size_t k = 0; k < c.size() && k < coeffs.size(); ++k) coeffs[k] = c[k];
    }

    int order() const { return int(coeffs.size()) - 1; }

    // Negative and out-of-range indices read as zero.
    double operator[](int k) const {
        return (k < 0 || k > order()) ? 0.0 : coeffs[std::size_t(k)];
    }
    double& at(int k) { return coeffs.at(std::size_t(k)); }

    static TruncatedSeries constant(double v, int order) {
        TruncatedSeries s(order);
        s.coeffs[0] = v;
        return s;
    }
};

inline TruncatedSeries series_mul(const TruncatedSeries& a, const TruncatedSeries& b, int N) {
    if (N < 0) throw ParameterError("series_mul: negative order");
    TruncatedSeries r(N);
    for (int k = 0; k <= N; ++k) {
        double s = 0.0;
        for (int i = 0; i <= k; ++i) s += a[i] * b[k - i];
        r.coeffs[std::size_t(k)] = s;
    }
    return r;
}

inline TruncatedSeries series_reciprocal(const TruncatedSeries& a, int N) {
    if (a[0] == 0.0) throw DomainError("series reciprocal: zero constant term");
    TruncatedSeries r(N);
    r.coeffs[0] = 1.0 / a[0];
    for (int k = 1; k <= N; ++k) {
        double s = 0.0;
        for (int i = 1; i <= k; ++i) s += a[i] * r[k - i];
        r.coeffs[std::size_t(k)] = -s / a[0];
    }
    return r;
}

inline TruncatedSeries series_pow(const TruncatedSeries& a, int p, int N) {
    if (N < 0) throw ParameterError("series_pow: negative order");
    TruncatedSeries base = a;
    if (p < 0) {
        base = series_reciprocal(a, N);
        p = -p;
    }
    TruncatedSeries result = TruncatedSeries::constant(1.0, N);
    // binary exponentiation
    while (p > 0) {
        if (p & 1) result = series_mul(result, base, N);
        p >>= 1;
        if (p > 0) base = series_mul(base, base, N);
    }
    return result;
}

inline TruncatedSeries series_derivative(const TruncatedSeries& a, int N) {
    TruncatedSeries r(N);
    for (int k = 0; k <= N; ++k) r.coeffs[std::size_t(k)] = double(k + 1) * a[k + 1];
    return r;
}

inline TruncatedSeries series_scale(const TruncatedSeries& a, double s) {
    TruncatedSeries r = a;
    for (double& v : r.coeffs) v *= s;
    return r;
}

// Polynomial in y stored as degree -> coefficient.
struct PolynomialPotential {
    std::map<int, double> coeffs;

    void add(int degree, double value) {
        if (degree < 0) throw ParameterError("potential: negative degree");
        if (value == 0.0) return;
        coeffs[degree] += value;
    }

    double operator()(double y) const {
        double s = 0.0;
        for (const auto& [d, c] : coeffs) s += c * std::pow(y, d);
        return s;
    }

    double coefficient(int degree) const {
        auto it = coeffs.find(degree);
        return it == coeffs.end() ? 0.0 : it->second;
    }

    // Highest degree carrying a coefficient above tol in magnitude, -1 for the zero polynomial.
    int degree(double tol = 0.0) const {
        for (auto it = coeffs.rbegin(); it != coeffs.rend(); ++it)
            if (std::abs(it->second) > tol) return it->first;
        return -1;
    }

    bool is_zero(double tol = 0.0) const { return degree(tol) < 0; }

    double max_abs_coefficient() const {
        double m = 0.0;
        for (const auto& kv : coeffs) m = std::max(m, std::abs(kv.second));
        return m;
    }

    static PolynomialPotential monomial(int degree, double c) {
        PolynomialPotential p;
        p.add(degree, c);
        return p;
    }
};

struct ScalingConstants {
    double a0 = 0.0;      // pi^2 / M^2
    double a1 = 0.0;      // c0 / M
    double a = 0.0;       // kappa m^2 c0^2 / pi^2
    double kappa = 0.0;   // pi^2/3 + 1/4
    double alpha1 = 0.0;  // 2/(m+2)
    double alpha = 0.0;   // m alpha1
};

inline ScalingConstants scaling_constants(const DomainProfile& p) {
    using std::numbers::pi;
    ScalingConstants s;
    s.kappa = pi * pi / 3.0 + 0.25;
    s.a0 = pi * pi / (p.M * p.M);
    s.a1 = p.c0() / p.M;
    s.a = s.kappa * double(p.m) * p.m * p.c0() * p.c0() / (pi * pi);
    s.alpha1 = 2.0 / (p.m + 2.0);
    s.alpha = p.m * s.alpha1;
    return s;
}

// H_0 potential part plus H_1..H_N (H[n-1] holds H_n).
struct PerturbationFamily {
    ScalingConstants constants;
    PolynomialPotential H0;
    std::vector<PolynomialPotential> H;
    double exponent_step = 0.0;
};

// Terms of the scaled operator in powers of eps^{alpha1}, for a general polynomial c.
//
// The kinetic-correction products beta * gamma all carry y^{n-2}; the factor (s-1) is
// bound to the summation index s in k + s m = n.
inline PerturbationFamily build_perturbation_terms(const DomainProfile& profile, int N) {
    if (N < 0) throw ParameterError("build_perturbation_terms: negative order");
    profile.validate();
    const ScalingConstants sc = scaling_constants(profile);
    const int m = profile.m;
    const double M = profile.M;
    const int order = N + 2;

    TruncatedSeries c(profile.c_coeffs, order);
    TruncatedSeries dc = series_derivative(c, order);
    TruncatedSeries d = series_mul(c, c, order);
    TruncatedSeries f = series_mul(c, dc, order);
    TruncatedSeries g = series_mul(dc, dc, order);
    TruncatedSeries cm = series_scale(c, 1.0 / M);

    PerturbationFamily fam;
    fam.constants = sc;
    fam.exponent_step = sc.alpha1;
    fam.H0.add(m, 2.0 * sc.a0 * sc.a1);
    fam.H.resize(std::size_t(N));

    const double kap = sc.kappa;
    for (int n = 1; n <= N; ++n) {
        PolynomialPotential Hn;
        Hn.add(n + m, 2.0 * sc.a0 * c[n] / M);
        for (int s = 1; s * m <= n; ++s) {
            const int k = n - s * m;
            TruncatedSeries alpha_s = series_pow(cm, s + 1, k);
            Hn.add(n + m, (s + 2) * sc.a0 * alpha_s[k]);
            if (s == 1) continue;  // (s - 1) factor vanishes
            const double A1 = kap * double(m) * m / (std::numbers::pi * std::numbers::pi) * (s - 1) * sc.a0;
            const double A2 = 2.0 * m / (M * M) * kap * (s - 1);
            const double A3 = kap * (s - 1) / (M * M);
            TruncatedSeries beta_s = series_pow(cm, s - 2, k);
            double acc = 0.0;
            for (int i = 0; i <= k; ++i) {
                const int j = k - i;
                acc += beta_s[i] * (A1 * d[j] + A2 * f[j - 1] + A3 * g[j - 2]);
            }
            if (n >= 2) Hn.add(n - 2, acc);
        }
        fam.H[std::size_t(n - 1)] = Hn;
    }
    return fam;
}

// Constant-c family in powers of eps^{alpha}:
// H_n = (n+2) a0 a1^{n+1} y^{nm+m} + (n-1) a a0 a1^{n-2} y^{nm-2}.
inline PerturbationFamily build_constant_c_terms(const DomainProfile& profile, int N) {
    profile.validate();
    const ScalingConstants sc = scaling_constants(profile);
    const int m = profile.m;
    PerturbationFamily fam;
    fam.constants = sc;
    fam.exponent_step = sc.alpha;
    fam.H0.add(m, 2.0 * sc.a0 * sc.a1);
    fam.H.resize(std::size_t(N));
    for (int n = 1; n <= N; ++n) {
        PolynomialPotential Hn;
        Hn.add(n * m + m, (n + 2) * sc.a0 * std::pow(sc.a1, n + 1));
        if (n != 1) Hn.add(n * m - 2, (n - 1) * sc.a * sc.a0 * std::pow(sc.a1, n - 2));
        fam.H[std::size_t(n - 1)] = Hn;
    }
    return fam;
}

} // namespace thinspec
