#pragma once

#include <cstddef>
#include <vector>

#include "thinspec/error.hpp"

namespace thinspec {

// Composite Simpson on uniform samples. Even sample counts close with a 3/8 panel.
inline double simpson(const std::vector<double>& f, double h) {
    const std::size_t n = f.size();
    if (n < 3) {
        if (n == 2) return 0.5 * h * (f[0] + f[1]);
        return 0.0;
    }
    std::size_t end = (n % 2 == 1) ? n - 1 : n - 4;
    double s = 0.0;
    for (std::size_t i = 0; i + 2 <= end; i += 2)
        s += f[i] + 4.0 * f[i + 1] + f[i + 2];
    s *= h / 3.0;
    if (n % 2 == 0) {
        if (n == 4) return 3.0 * h / 8.0 * (f[0] + 3.0 * f[1] + 3.0 * f[2] + f[3]);
        s += 3.0 * h / 8.0 * (f[end] + 3.0 * f[end + 1] + 3.0 * f[end + 2] + f[end + 3]);
    }
    return s;
}

template <class F>
double simpson(F&& f, double a, double b, std::size_t points) {
    if (points < 3) throw ParameterError("simpson: need at least 3 points");
    if (points % 2 == 0) ++points;
    const double h = (b - a) / double(points - 1);
    std::vector<double> v(points);
    for (std::size_t i = 0; i < points; ++i) v[i] = f(a + h * double(i));
    return simpson(v, h);
}

} // namespace thinspec
