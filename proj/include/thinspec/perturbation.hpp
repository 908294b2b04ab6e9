#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <tuple>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "thinspec/error.hpp"
#include "thinspec/oscillator.hpp"
#include "thinspec/series.hpp"

namespace thinspec {

// H0 = diag(H0_diag), perturbation sum_n eps^n V_n.
struct DensePerturbationProblem {
    Eigen::VectorXd H0_diag;
    std::vector<Eigen::MatrixXd> V_orders;

    int size() const { return int(H0_diag.size()); }

    void validate() const {
        const Eigen::Index S = H0_diag.size();
        if (S < 1) throw ParameterError("perturbation problem: empty basis");
        for (const auto& V : V_orders) {
            if (V.rows() != S || V.cols() != S) throw ParameterError("perturbation problem: dimension mismatch");
            const double scale = std::max(1.0, V.cwiseAbs().maxCoeff());
            if ((V - V.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
                throw ParameterError("perturbation problem: V_n not symmetric");
        }
    }
};

struct PerturbationExpansion {
    int base_index = 0;
    double mu_j = 0.0;
    double exponent_step = 0.0;  // power of eps per order
    double alpha1 = 0.0;         // scaling exponent used to convert nu to Lambda
    std::vector<double> q;       // q[n-1] = q_n
};

inline double min_gap(const Eigen::VectorXd& mu, int j) {
    double g = std::numeric_limits<double>::infinity();
    for (Eigen::Index s = 0; s < mu.size(); ++s)
        if (s != j) g = std::min(g, std::abs(mu[s] - mu[j]));
    return g;
}

// Order-by-order Rayleigh-Schroedinger recursion with intermediate normalization.
inline PerturbationExpansion rs_expand(const DensePerturbationProblem& pb, int j, int N) {
    pb.validate();
    const int S = pb.size();
    if (j < 0 || j >= S) throw ParameterError("rs_expand: base index out of range");
    if (N < 0) throw ParameterError("rs_expand: negative order");
    if (min_gap(pb.H0_diag, j) <= 1e-9) throw DiagnosticError("rs_expand: degenerate base eigenvalue");

    const int P = int(pb.V_orders.size());
    const Eigen::VectorXd& mu = pb.H0_diag;
    std::vector<Eigen::VectorXd> psi;
    psi.push_back(Eigen::VectorXd::Unit(S, j));
    std::vector<double> E(std::size_t(N + 1), 0.0);
    E[0] = mu[j];

    for (int n = 1; n <= N; ++n) {
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(S);
        for (int p = 1; p <= std::min(n, P); ++p) rhs += pb.V_orders[std::size_t(p - 1)] * psi[std::size_t(n - p)];
        E[std::size_t(n)] = rhs[j];
        for (int k = 1; k <= n; ++k) rhs -= E[std::size_t(k)] * psi[std::size_t(n - k)];
        Eigen::VectorXd next = Eigen::VectorXd::Zero(S);
        for (int s = 0; s < S; ++s)
            if (s != j) next[s] = rhs[s] / (mu[j] - mu[s]);
        psi.push_back(std::move(next));
    }

    PerturbationExpansion out;
    out.base_index = j;
    out.mu_j = mu[j];
    out.q.assign(E.begin() + 1, E.end());
    return out;
}

// Literal closed forms: q1 = -a_{1jj}, q2 = sum_{s!=j} a_{1sj} a_{1js} / (mu_s - mu_j) - a_{2jj}.
// These equal the branch coefficients up to one global sign; see sign_convention_report.
inline std::pair<double, double> closed_form_q1_q2(const MatrixElementTable& t, const std::vector<double>& mu, int j) {
    if (t.orders() < 2) throw ParameterError("closed_form_q1_q2: table needs orders 1 and 2");
    const int S = t.basis_size();
    const double q1 = -t(1, j, j);
    double q2 = -t(2, j, j);
    for (int s = 0; s < S; ++s)
        if (s != j) q2 += t(1, s, j) * t(1, j, s) / (mu[std::size_t(s)] - mu[std::size_t(j)]);
    return {q1, q2};
}

inline DensePerturbationProblem make_problem(const std::vector<double>& mu, const MatrixElementTable& t) {
    DensePerturbationProblem pb;
    pb.H0_diag = Eigen::Map<const Eigen::VectorXd>(mu.data(), Eigen::Index(mu.size()));
    pb.V_orders = t.entries;
    return pb;
}

struct BranchFit {
    std::vector<double> q;        // q_1..q_N
    double condition_number = 0;  // of the column-scaled design matrix
    int fit_degree = 0;
    std::vector<double> points;   // signed eps values actually used
    std::vector<double> branch;   // eigenvalue minus mu_j at each point
    double max_residual = 0;
};

// Radius r with sum_p r^p ||V_p||_2 = gap/2 (the branch is analytic and isolated inside it).
inline double kato_radius(const DensePerturbationProblem& pb, int j) {
    const double gap = min_gap(pb.H0_diag, j);
    std::vector<double> norms;
    double total = 0.0;
    for (const auto& V : pb.V_orders) {
        const double nv = V.size() ? Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(V, Eigen::EigenvaluesOnly).eigenvalues().cwiseAbs().maxCoeff() : 0.0;
        norms.push_back(nv);
        total += nv;
    }
    if (!(total > 0.0) || !std::isfinite(gap)) return 1.0;
    auto f = [&](double r) {
        double s = 0.0, rp = 1.0;
        for (double nv : norms) { rp *= r; s += rp * nv; }
        return s;
    };
    double lo = 0.0, hi = 1.0;
    while (f(hi) < 0.5 * gap) hi *= 2.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (f(mid) < 0.5 * gap ? lo : hi) = mid;
    }
    return lo;
}

// Geometric ladder rho * r * 2^{-i}, i = 0..points-1, with r the Kato radius.
inline std::vector<double> default_fit_ladder(const DensePerturbationProblem& pb, int j, int points = 8, double rho = 0.5) {
    const double r = kato_radius(pb, j);
    std::vector<double> L;
    for (int i = 0; i < points; ++i) L.push_back(rho * r * std::ldexp(1.0, -i));
    return L;
}

// Follows the j-th branch of H0 + sum eps^n V_n by eigenvector overlap on +eps and -eps,
// then least-squares fits the Taylor coefficients. The fit degree exceeds N (default N+6,
// at least 10, at most points-1) so the returned q_1..q_N are not biased by the tail.
inline BranchFit brute_force_branch_fit(const DensePerturbationProblem& pb, int j, std::vector<double> ladder, int N, int degree = -1) {
    using LD = long double;
    using MatL = Eigen::Matrix<LD, Eigen::Dynamic, Eigen::Dynamic>;
    using VecL = Eigen::Matrix<LD, Eigen::Dynamic, 1>;
    pb.validate();
    const int S = pb.size();
    if (j < 0 || j >= S) throw ParameterError("branch fit: base index out of range");
    if (N < 1) throw ParameterError("branch fit: N must be >= 1");
    for (double& e : ladder) e = std::abs(e);
    std::sort(ladder.begin(), ladder.end());
    ladder.erase(std::unique(ladder.begin(), ladder.end()), ladder.end());
    if (!ladder.empty() && ladder.front() == 0.0) ladder.erase(ladder.begin());
    if (int(ladder.size()) < N + 2) throw ParameterError("branch fit: ladder needs at least N+2 distinct nonzero values");
    if (min_gap(pb.H0_diag, j) <= 1e-9) throw DiagnosticError("branch fit: degenerate base eigenvalue");

    const int npts = 2 * int(ladder.size());
    int D = degree > 0 ? degree : std::max(N + 6, 10);
    D = std::min(D, npts - 1);
    D = std::max(D, N);

    BranchFit fit;
    fit.fit_degree = D;
    std::vector<LD> values;
    const LD mu_j = pb.H0_diag[j];
    for (int side : {+1, -1}) {
        VecL prev = VecL::Zero(S);
        prev[j] = 1;
        for (double a : ladder) {
            const LD e = LD(side) * LD(a);
            MatL H = MatL::Zero(S, S);
            for (int s = 0; s < S; ++s) H(s, s) = LD(pb.H0_diag[s]);
            LD ep = 1;
            for (const auto& V : pb.V_orders) {
                ep *= e;
                H += ep * V.cast<LD>();
            }
            Eigen::SelfAdjointEigenSolver<MatL> es(H);
            VecL ov = (es.eigenvectors().transpose() * prev).cwiseAbs();
            Eigen::Index k;
            const LD best = ov.maxCoeff(&k);
            if (best < LD(0.7)) throw DiagnosticError("branch fit: branch crossing detected (overlap below 0.7)");
            prev = es.eigenvectors().col(k);
            fit.points.push_back(double(e));
            values.push_back(es.eigenvalues()[k] - mu_j);
            fit.branch.push_back(double(values.back()));
        }
    }

    // long double least squares on columns (eps/eps_max)^p, p = 1..D
    const LD emax = LD(ladder.back());
    MatL A(npts, D);
    VecL b(npts);
    for (int i = 0; i < npts; ++i) {
        const LD t = LD(fit.points[std::size_t(i)]) / emax;
        LD tp = 1;
        for (int p = 0; p < D; ++p) {
            tp *= t;
            A(i, p) = tp;
        }
        b[i] = values[std::size_t(i)];
    }
    Eigen::ColPivHouseholderQR<MatL> qr(A);
    VecL c = qr.solve(b);
    Eigen::JacobiSVD<MatL> svd(A);
    const auto sv = svd.singularValues();
    fit.condition_number = double(sv[0] / sv[sv.size() - 1]);
    fit.max_residual = double((A * c - b).cwiseAbs().maxCoeff());
    LD scale = 1;
    for (int p = 0; p < N; ++p) {
        scale *= emax;
        fit.q.push_back(double(c[p] / scale));
    }
    return fit;
}

struct SignConventionReport {
    double q1_closed = 0, q2_closed = 0;
    double q1_rs = 0, q2_rs = 0;
    double q1_fit = 0, q2_fit = 0;
    int matched_sign = 0;  // +1, -1, or 0 when neither global sign matches
};

inline SignConventionReport sign_convention_report(const MatrixElementTable& t, const std::vector<double>& mu, int j,
                                                   const PerturbationExpansion& rs, const BranchFit& fit, double tol = 1e-6) {
    SignConventionReport r;
    std::tie(r.q1_closed, r.q2_closed) = closed_form_q1_q2(t, mu, j);
    r.q1_rs = rs.q.size() > 0 ? rs.q[0] : 0.0;
    r.q2_rs = rs.q.size() > 1 ? rs.q[1] : 0.0;
    r.q1_fit = fit.q.size() > 0 ? fit.q[0] : 0.0;
    r.q2_fit = fit.q.size() > 1 ? fit.q[1] : 0.0;
    auto close = [tol](double a, double b) { return std::abs(a - b) <= tol * std::max(1.0, std::abs(b)); };
    for (int s : {+1, -1})
        if (close(s * r.q1_closed, r.q1_fit) && close(s * r.q2_closed, r.q2_fit)) {
            r.matched_sign = s;
            break;
        }
    return r;
}

struct Prediction {
    double nu = 0;
    double Lambda = 0;
};

inline Prediction evaluate_prediction(const PerturbationExpansion& e, double eps, int K, double M) {
    if (K < 0 || K > int(e.q.size())) throw ParameterError("evaluate_prediction: K out of range");
    Prediction p;
    p.nu = e.mu_j;
    for (int n = 1; n <= K; ++n) p.nu += e.q[std::size_t(n - 1)] * std::pow(eps, n * e.exponent_step);
    const double pi2 = std::numbers::pi * std::numbers::pi;
    p.Lambda = pi2 / (M * M * eps * eps) + std::pow(eps, -2.0 * e.alpha1) * p.nu;
    return p;
}

// Settings for building the oscillator expansion from a profile.
struct OscillatorOptions {
    int grid_points = 4001;
    double box_tol = 1e-12;
    int basis_size = 0;  // 0 -> max(4J, 40)
    int modes = 5;       // J
};

struct OscillatorModel {
    PerturbationFamily family;
    SpectralResult1D spectrum;
    MatrixElementTable table;
    DensePerturbationProblem problem;
    std::pair<double, double> box;
    std::vector<PerturbationExpansion> expansions;  // one per base index j < J
};

// Free 1D box used for flat strips: the x-modes of the rectangle in scaled variables.
inline OscillatorModel flat_model(const DomainProfile& p, double eps, const OscillatorOptions& opt, int N) {
    const double alpha1 = 2.0 / (p.m + 2.0);
    const double s = std::pow(eps, alpha1);
    OscillatorModel om;
    om.family.constants = scaling_constants(p);
    om.family.exponent_step = alpha1;
    om.family.H.assign(std::size_t(N), PolynomialPotential{});
    om.box = {p.l1 / s, p.l2 / s};
    const int J = opt.modes;
    const int S = opt.basis_size > 0 ? opt.basis_size : std::max(4 * J, 40);
    om.spectrum = solve_schrodinger_1d(Potential1D([](double) { return 0.0; }), om.box, std::min(opt.grid_points, 1001), std::max(S, J));
    // exact box modes replace the discrete ones for the base values
    const double width = om.box.first + om.box.second;
    for (int k = 0; k < om.spectrum.modes(); ++k)
        om.spectrum.eigenvalues[std::size_t(k)] = std::pow(std::numbers::pi * (k + 1) / width, 2);
    om.table = matrix_elements(om.spectrum, om.family.H);
    om.problem = make_problem(om.spectrum.eigenvalues, om.table);
    for (int j = 0; j < J; ++j) {
        PerturbationExpansion e = rs_expand(om.problem, j, N);
        e.exponent_step = alpha1;
        e.alpha1 = alpha1;
        om.expansions.push_back(e);
    }
    return om;
}

// Oscillator spectrum, matrix elements, and expansions q_1..q_N for j < J.
// eps > 0 clips the box to the scaled interval; eps <= 0 uses the decay-selected box on the line.
inline OscillatorModel oscillator_model(const DomainProfile& p, int N, const OscillatorOptions& opt, double eps = 0.0) {
    if (p.flat) {
        if (!(eps > 0.0)) throw ParameterError("oscillator_model: flat profile needs eps > 0");
        return flat_model(p, eps, opt, N);
    }
    OscillatorModel om;
    om.family = build_perturbation_terms(p, N);
    const double L = select_box_halfwidth(om.family.H0, opt.box_tol);
    om.box = eps > 0.0 ? clip_box(L, p.l1, p.l2, eps, om.family.constants.alpha1) : std::make_pair(L, L);
    const int J = opt.modes;
    const int S = opt.basis_size > 0 ? opt.basis_size : std::max(4 * J, 40);
    om.spectrum = solve_schrodinger_1d(om.family.H0, om.box, opt.grid_points, S);
    om.table = matrix_elements(om.spectrum, om.family.H);
    om.problem = make_problem(om.spectrum.eigenvalues, om.table);
    for (int j = 0; j < J; ++j) {
        PerturbationExpansion e = rs_expand(om.problem, j, N);
        e.exponent_step = om.family.exponent_step;
        e.alpha1 = om.family.constants.alpha1;
        om.expansions.push_back(e);
    }
    return om;
}

} // namespace thinspec
