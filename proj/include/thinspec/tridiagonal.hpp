#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "thinspec/error.hpp"

namespace thinspec {

// Symmetric tridiagonal matrix: diag[0..n-1], off[0..n-2].
struct SymTridiagonal {
    std::vector<double> diag;
    std::vector<double> off;
    std::size_t size() const { return diag.size(); }
};

struct TridiagonalEigen {
    std::vector<double> values;
    std::vector<std::vector<double>> vectors;  // unit Euclidean norm
};

namespace detail {

// Number of eigenvalues strictly below x (Sturm sequence via LDL^T pivots).
inline std::size_t sturm_count(const SymTridiagonal& T, double x) {
    const std::size_t n = T.size();
    const double tiny = std::numeric_limits<double>::min() * 1e4;
    std::size_t count = 0;
    double q = T.diag[0] - x;
    if (q == 0.0) q = -tiny;
    if (q < 0.0) ++count;
    for (std::size_t i = 1; i < n; ++i) {
        q = T.diag[i] - x - T.off[i - 1] * T.off[i - 1] / q;
        if (q == 0.0) q = -tiny;
        if (q < 0.0) ++count;
    }
    return count;
}

// Solve (T - shift I) x = b with partial pivoting (banded LU, two superdiagonals after pivoting).
inline void shifted_solve(const SymTridiagonal& T, double shift, std::vector<double>& b) {
    const std::size_t n = T.size();
    double scale = 0.0;
    for (std::size_t i = 0; i < n; ++i) scale = std::max(scale, std::abs(T.diag[i] - shift));
    for (double e : T.off) scale = std::max(scale, std::abs(e));
    const double floor = std::numeric_limits<double>::epsilon() * std::max(scale, 1e-300);
    if (n == 1) {
        const double d0 = T.diag[0] - shift;
        b[0] /= (d0 == 0.0 ? floor : d0);
        return;
    }

    std::vector<double> dl(T.off), d(n), du(T.off), du2(n > 2 ? n - 2 : 0, 0.0);
    std::vector<char> swapped(n, 0);
    for (std::size_t i = 0; i < n; ++i) d[i] = T.diag[i] - shift;
    for (std::size_t i = 0; i + 1 < n; ++i) {
        if (std::abs(d[i]) >= std::abs(dl[i])) {
            if (d[i] == 0.0) d[i] = floor;
            const double f = dl[i] / d[i];
            dl[i] = f;
            d[i + 1] -= f * du[i];
        } else {
            const double f = d[i] / dl[i];
            d[i] = dl[i];
            dl[i] = f;
            const double tmp = du[i];
            du[i] = d[i + 1];
            d[i + 1] = tmp - f * d[i + 1];
            if (i + 2 < n) {
                du2[i] = du[i + 1];
                du[i + 1] = -f * du[i + 1];
            }
            swapped[i] = 1;
        }
    }
    if (d[n - 1] == 0.0) d[n - 1] = floor;
    // forward
    for (std::size_t i = 0; i + 1 < n; ++i) {
        if (swapped[i]) {
            const double tmp = b[i];
            b[i] = b[i + 1];
            b[i + 1] = tmp - dl[i] * b[i];
        } else {
            b[i + 1] -= dl[i] * b[i];
        }
    }
    // backward
    b[n - 1] /= d[n - 1];
    if (n > 1) b[n - 2] = (b[n - 2] - du[n - 2] * b[n - 1]) / d[n - 2];
    for (std::size_t k = n - 2; k-- > 0;) {
        const std::size_t i = k;
        b[i] = (b[i] - du[i] * b[i + 1] - du2[i] * b[i + 2]) / d[i];
    }
}

inline double norm2(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

} // namespace detail

// Lowest J eigenpairs by Sturm bisection and inverse iteration.
inline TridiagonalEigen lowest_eigenpairs(const SymTridiagonal& T, std::size_t J) {
    const std::size_t n = T.size();
    if (n == 0 || T.off.size() + 1 != n) throw ParameterError("tridiagonal: inconsistent sizes");
    if (J > n) throw ParameterError("tridiagonal: more modes requested than matrix size");

    double lo = std::numeric_limits<double>::max(), hi = -lo;
    for (std::size_t i = 0; i < n; ++i) {
        double r = 0.0;
        if (i > 0) r += std::abs(T.off[i - 1]);
        if (i + 1 < n) r += std::abs(T.off[i]);
        lo = std::min(lo, T.diag[i] - r);
        hi = std::max(hi, T.diag[i] + r);
    }
    const double span = std::max(hi - lo, 1e-300);
    lo -= 1e-12 * span;
    hi += 1e-12 * span;
    const double eps = std::numeric_limits<double>::epsilon();

    TridiagonalEigen out;
    out.values.resize(J);
    for (std::size_t k = 0; k < J; ++k) {
        double a = lo, b = hi;
        for (int it = 0; it < 400; ++it) {
            const double mid = 0.5 * (a + b);
            if (mid <= a || mid >= b) break;
            if (b - a <= 2.0 * eps * std::max(std::abs(a), std::abs(b)) + 1e-300) break;
            if (detail::sturm_count(T, mid) > k) b = mid;
            else a = mid;
        }
        out.values[k] = 0.5 * (a + b);
    }

    out.vectors.resize(J);
    for (std::size_t k = 0; k < J; ++k) {
        std::vector<double> v(n);
        for (std::size_t i = 0; i < n; ++i) v[i] = 1.0 + 0.01 * double((i * 7919 + k * 104729) % 997) / 997.0;
        for (int it = 0; it < 4; ++it) {
            detail::shifted_solve(T, out.values[k], v);
            // keep clustered vectors orthogonal
            for (std::size_t p = 0; p < k; ++p) {
                if (std::abs(out.values[p] - out.values[k]) > 1e-6 * span) continue;
                double dot = 0.0;
                for (std::size_t i = 0; i < n; ++i) dot += v[i] * out.vectors[p][i];
                for (std::size_t i = 0; i < n; ++i) v[i] -= dot * out.vectors[p][i];
            }
            const double nv = detail::norm2(v);
            if (!(nv > 0.0) || !std::isfinite(nv)) throw DiagnosticError("tridiagonal: inverse iteration breakdown");
            for (double& x : v) x /= nv;
        }
        out.vectors[k] = std::move(v);
    }
    return out;
}

} // namespace thinspec
