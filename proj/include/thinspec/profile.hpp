#pragma once

#include <cmath>
#include <sstream>
#include <vector>

#include "thinspec/error.hpp"

namespace thinspec {

// Height profile h(x) = M - c(x) x^m on [-l1, l2], c given by its Taylor coefficients.
struct DomainProfile {
    double M = 1.0;
    int m = 2;
    std::vector<double> c_coeffs{1.0};
    double l1 = 1.0;
    double l2 = 1.0;
    // Flat strips (c == 0) are allowed only when this is set; used for the rectangle checks.
    bool flat = false;

    static DomainProfile rectangle(double M, double l1, double l2, int m = 2) {
        DomainProfile p;
        p.M = M;
        p.m = m;
        p.c_coeffs = {0.0};
        p.l1 = l1;
        p.l2 = l2;
        p.flat = true;
        return p;
    }

    double c(double x) const { return poly(x, 0); }
    double dc(double x) const { return poly(x, 1); }
    double d2c(double x) const { return poly(x, 2); }

    double h(double x) const { return M - c(x) * std::pow(x, m); }

    double dh(double x) const {
        const double xm = std::pow(x, m);
        const double xm1 = m >= 1 ? std::pow(x, m - 1) : 0.0;
        return -(dc(x) * xm + m * c(x) * xm1);
    }

    double d2h(double x) const {
        const double xm = std::pow(x, m);
        const double xm1 = std::pow(x, m - 1);
        const double xm2 = m >= 2 ? std::pow(x, m - 2) : 0.0;
        return -(d2c(x) * xm + 2.0 * m * dc(x) * xm1 + double(m) * (m - 1) * c(x) * xm2);
    }

    double c0() const { return c_coeffs.empty() ? 0.0 : c_coeffs[0]; }

    // Throws on any violated invariant; h is checked on a dense uniform sample.
    void validate(int samples = 4001) const {
        if (!(M > 0.0)) throw ParameterError("profile: M must be positive");
        if (m < 2 || m % 2 != 0) {
            std::ostringstream os;
            os << "profile: m must be even and >= 2 (got " << m << ")";
            throw ParameterError(os.str());
        }
        if (!(l1 > 0.0) || !(l2 > 0.0)) throw ParameterError("profile: l1, l2 must be positive");
        if (!flat && c0() == 0.0) throw ParameterError("profile: c0 must be nonzero");
        for (double v : c_coeffs)
            if (!std::isfinite(v)) throw ParameterError("profile: non-finite c coefficient");
        const double a = -l1, b = l2;
        for (int i = 0; i < samples; ++i) {
            const double x = a + (b - a) * double(i) / double(samples - 1);
            const double hv = h(x);
            if (!(hv > 0.0)) {
                std::ostringstream os;
                os.precision(17);
                os << "profile: h(x) = " << hv << " is not positive at x = " << x;
                throw GeometryError(os.str());
            }
        }
    }

private:
    // d-th derivative of the polynomial c at x.
    double poly(double x, int d) const {
        double s = 0.0;
        for (int k = int(c_coeffs.size()) - 1; k >= d; --k) {
            double f = 1.0;
            for (int r = 0; r < d; ++r) f *= double(k - r);
            s = s * x + f * c_coeffs[k];
        }
        return s;
    }
};

} // namespace thinspec
