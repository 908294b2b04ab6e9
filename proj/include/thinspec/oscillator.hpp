#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "thinspec/error.hpp"
#include "thinspec/quadrature.hpp"
#include "thinspec/series.hpp"
#include "thinspec/tridiagonal.hpp"

namespace thinspec {

struct Grid1D {
    double left = -1.0;
    double right = 1.0;
    int n = 3;

    Grid1D() = default;
    Grid1D(double l, double r, int count) : left(l), right(r), n(count) {
        if (n < 3) throw ParameterError("Grid1D: need at least 3 points");
        if (!(left < right)) throw ParameterError("Grid1D: left must be below right");
    }
    double spacing() const { return (right - left) / double(n - 1); }
    double x(int i) const { return left + spacing() * double(i); }
};

struct SpectralResult1D {
    std::vector<double> eigenvalues;
    Eigen::MatrixXd eigenfunctions;  // n x J, boundary samples are zero
    Grid1D grid;

    int modes() const { return int(eigenvalues.size()); }
};

using Potential1D = std::function<double(double)>;

namespace detail {

// Flip sign so the first interior extremum of |psi| (ignoring the numerically flat tail) is positive.
inline void fix_sign(Eigen::Ref<Eigen::VectorXd> psi) {
    const Eigen::Index n = psi.size();
    const double peak = psi.cwiseAbs().maxCoeff();
    for (Eigen::Index i = 1; i + 1 < n; ++i) {
        const double a = std::abs(psi[i]);
        if (a < 1e-2 * peak) continue;
        if (a >= std::abs(psi[i - 1]) && a >= std::abs(psi[i + 1])) {
            if (psi[i] < 0.0) psi = -psi;
            return;
        }
    }
}

} // namespace detail

// Lowest J Dirichlet eigenpairs of -d^2/dy^2 + V on [-L_minus, L_plus], 3-point differences.
inline SpectralResult1D solve_schrodinger_1d(const Potential1D& V, std::pair<double, double> box, int n, int J) {
    Grid1D grid(-box.first, box.second, n);
    if (J < 1 || J > n - 2) throw ParameterError("solve_schrodinger_1d: J must lie in [1, n-2]");
    const int ni = n - 2;
    const double h = grid.spacing();
    const double ih2 = 1.0 / (h * h);
    SymTridiagonal T;
    T.diag.resize(std::size_t(ni));
    T.off.assign(std::size_t(ni - 1), -ih2);
    for (int i = 0; i < ni; ++i) T.diag[std::size_t(i)] = 2.0 * ih2 + V(grid.x(i + 1));

    TridiagonalEigen te = lowest_eigenpairs(T, std::size_t(J));
    for (int k = 0; k + 1 < J; ++k) {
        const double gap = te.values[std::size_t(k + 1)] - te.values[std::size_t(k)];
        if (gap < 1e-9 * std::max(1.0, std::abs(te.values[std::size_t(k)])))
            throw DiagnosticError("solve_schrodinger_1d: near-degenerate eigenvalues");
    }

    SpectralResult1D r;
    r.grid = grid;
    r.eigenvalues = te.values;
    r.eigenfunctions = Eigen::MatrixXd::Zero(n, J);
    const double w = 1.0 / std::sqrt(h);  // unit Euclidean -> unit trapezoid norm
    for (int k = 0; k < J; ++k) {
        for (int i = 0; i < ni; ++i) r.eigenfunctions(i + 1, k) = w * te.vectors[std::size_t(k)][std::size_t(i)];
        detail::fix_sign(r.eigenfunctions.col(k));
    }
    return r;
}

inline SpectralResult1D solve_schrodinger_1d(const PolynomialPotential& V, std::pair<double, double> box, int n, int J) {
    return solve_schrodinger_1d(Potential1D([&V](double y) { return V(y); }), box, n, J);
}

struct RichardsonResult {
    std::vector<double> values;
    std::vector<double> errors;
    std::vector<double> coarse;
    std::vector<double> fine;
};

inline RichardsonResult richardson_combine(const std::vector<double>& coarse, const std::vector<double>& fine) {
    if (coarse.size() != fine.size()) throw ParameterError("richardson: size mismatch");
    RichardsonResult r;
    r.coarse = coarse;
    r.fine = fine;
    for (std::size_t k = 0; k < coarse.size(); ++k) {
        r.values.push_back((4.0 * fine[k] - coarse[k]) / 3.0);
        r.errors.push_back(std::abs(fine[k] - coarse[k]) / 3.0);
    }
    return r;
}

// Two resolutions whose spacings differ by a factor 2, i.e. (n2 - 1) = 2 (n1 - 1).
// Equal point counts are accepted and return the common value with zero error.
inline RichardsonResult richardson_refine(const Potential1D& V, std::pair<double, double> box, int J, int n1, int n2) {
    if (n1 != n2 && (n2 - 1) != 2 * (n1 - 1))
        throw ParameterError("richardson_refine: need (n2-1) = 2(n1-1)");
    auto a = solve_schrodinger_1d(V, box, n1, J);
    if (n1 == n2) return richardson_combine(a.eigenvalues, a.eigenvalues);
    auto b = solve_schrodinger_1d(V, box, n2, J);
    return richardson_combine(a.eigenvalues, b.eigenvalues);
}

inline RichardsonResult richardson_refine(const PolynomialPotential& V, std::pair<double, double> box, int J, int n1, int n2) {
    return richardson_refine(Potential1D([&V](double y) { return V(y); }), box, J, n1, n2);
}

// Gaussian decay rate 1/2 sqrt(a0 a1) read off the leading y^m coefficient (= 2 a0 a1).
inline double decay_rate(const PolynomialPotential& V) {
    const int d = V.degree();
    if (d < 2) throw ParameterError("decay_rate: potential does not grow at infinity");
    const double lead = V.coefficient(d);
    if (!(lead > 0.0)) throw ParameterError("decay_rate: leading coefficient must be positive");
    return 0.5 * std::sqrt(lead / 2.0);
}

// Smallest L in {1, 2, 4, ...} with D exp(-rate L^2) below tol.
inline double select_box_halfwidth(double rate, double tol, double D = 1.0) {
    if (!(tol > 0.0)) throw ParameterError("select_box_halfwidth: tol must be positive");
    if (!(rate > 0.0)) throw ParameterError("select_box_halfwidth: decay rate must be positive");
    double L = 1.0;
    while (D * std::exp(-rate * L * L) >= tol) {
        L *= 2.0;
        if (L > 1e6) throw ParameterError("select_box_halfwidth: no ladder value meets tol");
    }
    return L;
}

inline double select_box_halfwidth(const PolynomialPotential& V, double tol, double D = 1.0) {
    return select_box_halfwidth(decay_rate(V), tol, D);
}

// Box ends for the scaled interval: each side clipped at l/eps^{alpha1}.
inline std::pair<double, double> clip_box(double L, double l1, double l2, double eps, double alpha1) {
    const double s = std::pow(eps, alpha1);
    return {std::min(L, l1 / s), std::min(L, l2 / s)};
}

// a[n-1](s, k) = <H_n psi_s, psi_k>.
struct MatrixElementTable {
    std::vector<Eigen::MatrixXd> entries;
    int orders() const { return int(entries.size()); }
    int basis_size() const { return entries.empty() ? 0 : int(entries[0].rows()); }
    double operator()(int n, int s, int k) const { return entries.at(std::size_t(n - 1))(s, k); }
};

inline MatrixElementTable matrix_elements(const SpectralResult1D& r, const std::vector<PolynomialPotential>& H) {
    const int n = r.grid.n;
    const int S = r.modes();
    const double h = r.grid.spacing();
    MatrixElementTable t;
    std::vector<double> f(static_cast<std::size_t>(n));
    for (const auto& Hn : H) {
        Eigen::MatrixXd A = Eigen::MatrixXd::Zero(S, S);
        if (!Hn.is_zero()) {
            Eigen::VectorXd hv(n);
            for (int i = 0; i < n; ++i) hv[i] = Hn(r.grid.x(i));
            for (int s = 0; s < S; ++s)
                for (int k = s; k < S; ++k) {
                    for (int i = 0; i < n; ++i)
                        f[std::size_t(i)] = hv[i] * r.eigenfunctions(i, s) * r.eigenfunctions(i, k);
                    A(s, k) = A(k, s) = simpson(f, h);
                }
        }
        t.entries.push_back(std::move(A));
    }
    return t;
}

struct DecayCertificate {
    std::vector<double> required_D;  // smallest D making the bound hold beyond y0
    std::vector<double> peak;        // max |psi_j|
    std::vector<bool> pass;          // required_D <= 10 peak
    bool all_pass() const { return std::all_of(pass.begin(), pass.end(), [](bool b) { return b; }); }
};

// Pointwise check of |psi_j(y)| <= D exp(-rate y^2) for |y| >= y0, V(y0) = 2 mu_j.
// Samples below noise_floor * peak are treated as numerical zero.
inline DecayCertificate decay_certificate(const SpectralResult1D& r, const PolynomialPotential& V, double noise_floor = 1e-13) {
    const double rate = decay_rate(V);
    DecayCertificate c;
    for (int j = 0; j < r.modes(); ++j) {
        const double mu = r.eigenvalues[std::size_t(j)];
        const double peak = r.eigenfunctions.col(j).cwiseAbs().maxCoeff();
        double need = 0.0;
        for (int i = 0; i < r.grid.n; ++i) {
            const double y = r.grid.x(i);
            if (V(y) < 2.0 * mu) continue;  // V = (const) y^m, so this is |y| >= y0
            const double a = std::abs(r.eigenfunctions(i, j));
            if (a <= noise_floor * peak) continue;
            need = std::max(need, a * std::exp(rate * y * y));
        }
        c.required_D.push_back(need);
        c.peak.push_back(peak);
        c.pass.push_back(need <= 10.0 * peak);
    }
    return c;
}

} // namespace thinspec
