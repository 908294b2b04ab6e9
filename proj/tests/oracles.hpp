#pragma once

// Independent reference computations used only by the tests.

#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <vector>

#include "thinspec/profile.hpp"
#include "thinspec/series.hpp"

namespace oracle {

// Taylor coefficients of an analytic f by the trapezoid rule on the circle |z| = r.
inline std::vector<double> taylor_by_contour(const std::function<std::complex<double>(std::complex<double>)>& f,
                                             int order, double r, int samples = 256) {
    std::vector<double> out(std::size_t(order + 1), 0.0);
    for (int k = 0; k <= order; ++k) {
        std::complex<double> s = 0.0;
        for (int i = 0; i < samples; ++i) {
            const double th = 2.0 * std::numbers::pi * i / samples;
            const std::complex<double> z = std::polar(r, th);
            s += f(z) * std::polar(1.0, -k * th);
        }
        out[std::size_t(k)] = (s / double(samples)).real() / std::pow(r, k);
    }
    return out;
}

// Scaled-operator terms read off the expansion of
//   eps^{2 alpha1} [pi^2/(eps^2 h^2) - pi^2/(eps^2 M^2) + kappa h'^2/h^2]  at x = eps^{alpha1} y,
// i.e. H_n = a0 F_{n+m} y^{n+m} + kappa G_{n-2} y^{n-2} with F = (h/M)^{-2} - 1, G = (h'/h)^2.
inline std::vector<thinspec::PolynomialPotential> direct_terms(const thinspec::DomainProfile& p, int N, double r = 1.0) {
    using C = std::complex<double>;
    const double M = p.M;
    const int m = p.m;
    auto cz = [&](C z) {
        C s = 0.0;
        for (int k = int(p.c_coeffs.size()) - 1; k >= 0; --k) s = s * z + p.c_coeffs[std::size_t(k)];
        return s;
    };
    auto dcz = [&](C z) {
        C s = 0.0;
        for (int k = int(p.c_coeffs.size()) - 1; k >= 1; --k) s = s * z + double(k) * p.c_coeffs[std::size_t(k)];
        return s;
    };
    auto hz = [&](C z) { return M - cz(z) * std::pow(z, m); };
    auto dhz = [&](C z) { return -(dcz(z) * std::pow(z, m) + double(m) * cz(z) * std::pow(z, m - 1)); };
    auto F = [&](C z) { return std::pow(hz(z) / M, -2) - 1.0; };
    auto G = [&](C z) { C q = dhz(z) / hz(z); return q * q; };
    const auto Fc = taylor_by_contour(F, N + m, r);
    const auto Gc = taylor_by_contour(G, N, r);
    const double a0 = std::numbers::pi * std::numbers::pi / (M * M);
    const double kappa = std::numbers::pi * std::numbers::pi / 3.0 + 0.25;
    std::vector<thinspec::PolynomialPotential> H(static_cast<std::size_t>(N));
    for (int n = 1; n <= N; ++n) {
        H[std::size_t(n - 1)].add(n + m, a0 * Fc[std::size_t(n + m)]);
        if (n >= 2) H[std::size_t(n - 1)].add(n - 2, kappa * Gc[std::size_t(n - 2)]);
    }
    return H;
}

// Even ground state of -psi'' + V psi = E psi by RK4 shooting from y = 0 and bisection on psi(L).
inline double shooting_ground_state(const std::function<double(double)>& V, double Elo, double Ehi, double L = 6.0,
                                    int steps = 24000) {
    auto endpoint = [&](double E) {
        double y = 0.0, u = 1.0, v = 0.0;
        const double h = L / steps;
        auto f = [&](double yy, double uu) { return (V(yy) - E) * uu; };
        for (int i = 0; i < steps; ++i) {
            const double k1u = v, k1v = f(y, u);
            const double k2u = v + 0.5 * h * k1v, k2v = f(y + 0.5 * h, u + 0.5 * h * k1u);
            const double k3u = v + 0.5 * h * k2v, k3v = f(y + 0.5 * h, u + 0.5 * h * k2u);
            const double k4u = v + h * k3v, k4v = f(y + h, u + h * k3u);
            u += h / 6.0 * (k1u + 2 * k2u + 2 * k3u + k4u);
            v += h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v);
            y += h;
            if (std::abs(u) > 1e200) break;
        }
        return u;
    };
    double a = Elo, b = Ehi;
    const double fa = endpoint(a);
    for (int it = 0; it < 100; ++it) {
        const double mid = 0.5 * (a + b);
        if ((endpoint(mid) > 0) == (fa > 0)) a = mid;
        else b = mid;
    }
    return 0.5 * (a + b);
}

// <0|y|1> for -d^2/dy^2 + y^2 from the Hermite-function ladder: y psi_n = sqrt(n/2) psi_{n-1} + sqrt((n+1)/2) psi_{n+1}.
inline double hermite_ladder_element(int n, int k) {
    if (k == n + 1) return std::sqrt((n + 1) / 2.0);
    if (k == n - 1) return std::sqrt(n / 2.0);
    return 0.0;
}

// Taylor coefficients of (1 - sqrt(1 + 4 e^2)) / 2, the lower branch of diag(0,1) + e [[0,1],[1,0]].
inline std::vector<double> toy_branch_coefficients(int N) {
    // sqrt(1+u) = sum binom(1/2, k) u^k, u = 4 e^2
    std::vector<double> q(std::size_t(N), 0.0);
    double b = 1.0;  // binom(1/2, k)
    for (int k = 1; 2 * k <= N; ++k) {
        b *= (0.5 - (k - 1)) / k;
        q[std::size_t(2 * k - 1)] = -0.5 * b * std::pow(4.0, k);
    }
    return q;
}

} // namespace oracle
