#pragma once

#include <algorithm>
#include <array>
#include <memory>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "thinspec/error.hpp"
#include "thinspec/profile.hpp"

namespace thinspec {

using SparseMatrix = Eigen::SparseMatrix<double>;

// Tensor mesh on [-l1, l2] x [0, 1]; x[0], x[nx+1], t[0], t[nt+1] are Dirichlet nodes.
struct Mesh2D {
    int nx = 0;
    int nt = 0;
    std::vector<double> x;
    std::vector<double> t;

    static Mesh2D uniform(double l1, double l2, int nx, int nt) {
        if (nx < 1 || nt < 1) throw ParameterError("Mesh2D: need at least one interior node per direction");
        Mesh2D m;
        m.nx = nx;
        m.nt = nt;
        for (int i = 0; i <= nx + 1; ++i) m.x.push_back(-l1 + (l1 + l2) * double(i) / double(nx + 1));
        for (int k = 0; k <= nt + 1; ++k) m.t.push_back(double(k) / double(nt + 1));
        return m;
    }

    // Halved spacing in both directions; coarse nodes are kept.
    Mesh2D refined() const { return uniform(-x.front(), x.back(), 2 * nx + 1, 2 * nt + 1); }

    // Inverse of refined(); needs odd interior counts of at least 3.
    bool coarsenable() const { return nx >= 3 && nt >= 3 && nx % 2 == 1 && nt % 2 == 1; }
    Mesh2D coarsened() const {
        if (!coarsenable()) throw ParameterError("Mesh2D: coarsening needs odd interior counts >= 3");
        return uniform(-x.front(), x.back(), (nx - 1) / 2, (nt - 1) / 2);
    }

    int unknowns() const { return nx * nt; }
    int elements() const { return (nx + 1) * (nt + 1); }

    // Unknown index of node (i, k), i in 0..nx+1, k in 0..nt+1; -1 on the boundary.
    int index(int i, int k) const {
        if (i <= 0 || i > nx || k <= 0 || k > nt) return -1;
        return (i - 1) * nt + (k - 1);
    }

    // Corner nodes of element (i, k) counter-clockwise from (x_i, t_k).
    std::array<std::pair<int, int>, 4> element_nodes(int i, int k) const {
        return {{{i, k}, {i + 1, k}, {i + 1, k + 1}, {i, k + 1}}};
    }
};

struct DiscreteForms {
    SparseMatrix K;  // stiffness
    SparseMatrix B;  // mass
};

namespace detail {

struct Q1Point {
    double xi, eta, w;
};

inline std::array<Q1Point, 4> gauss2x2() {
    const double g = 1.0 / std::sqrt(3.0);
    return {{{-g, -g, 1.0}, {g, -g, 1.0}, {g, g, 1.0}, {-g, g, 1.0}}};
}

// Shape function values and reference derivatives for the ordering of element_nodes.
inline void q1_shape(double xi, double eta, double N[4], double dxi[4], double deta[4]) {
    const double sx[4] = {-1, 1, 1, -1}, se[4] = {-1, -1, 1, 1};
    for (int a = 0; a < 4; ++a) {
        N[a] = 0.25 * (1 + sx[a] * xi) * (1 + se[a] * eta);
        dxi[a] = 0.25 * sx[a] * (1 + se[a] * eta);
        deta[a] = 0.25 * se[a] * (1 + sx[a] * xi);
    }
}

} // namespace detail

// Q1 assembly of the Dirichlet form in straightened coordinates t = y / (eps h(x)):
//   energy  int int [(u_x - t (h'/h) u_t)^2 + (u_t / (eps h))^2] eps h dx dt
//   mass    int int u^2 eps h dx dt
inline DiscreteForms assemble_mapped_form(const DomainProfile& profile, double eps, const Mesh2D& mesh) {
    if (!(eps > 0.0)) throw ParameterError("assemble_mapped_form: eps must be positive");
    for (double xv : mesh.x)
        if (!(profile.h(xv) > 0.0)) {
            std::ostringstream os;
            os << "assemble_mapped_form: nonpositive height at x = " << xv;
            throw GeometryError(os.str());
        }
    const auto qp = detail::gauss2x2();
    std::vector<Eigen::Triplet<double>> tk, tb;
    tk.reserve(std::size_t(mesh.elements()) * 16);
    tb.reserve(std::size_t(mesh.elements()) * 16);

    for (int i = 0; i <= mesh.nx; ++i) {
        const double x0 = mesh.x[std::size_t(i)], hx = mesh.x[std::size_t(i + 1)] - x0;
        // geometry at the two Gauss abscissae in x is shared by the whole column of elements
        double H[2], R[2];
        for (int g = 0; g < 2; ++g) {
            const double X = x0 + 0.5 * hx * (1.0 + (g == 0 ? -1.0 : 1.0) / std::sqrt(3.0));
            const double hv = profile.h(X);
            if (!(hv > 0.0)) {
                std::ostringstream os;
                os << "assemble_mapped_form: nonpositive height at x = " << X;
                throw GeometryError(os.str());
            }
            H[g] = eps * hv;
            R[g] = profile.dh(X) / hv;
        }
        for (int k = 0; k <= mesh.nt; ++k) {
            const double t0 = mesh.t[std::size_t(k)], ht = mesh.t[std::size_t(k + 1)] - t0;
            const auto nodes = mesh.element_nodes(i, k);
            int id[4];
            for (int a = 0; a < 4; ++a) id[a] = mesh.index(nodes[std::size_t(a)].first, nodes[std::size_t(a)].second);
            double Ke[4][4] = {}, Be[4][4] = {};
            for (const auto& q : qp) {
                const int g = q.xi < 0 ? 0 : 1;
                const double T = t0 + 0.5 * ht * (1.0 + q.eta);
                double N[4], dxi[4], deta[4];
                detail::q1_shape(q.xi, q.eta, N, dxi, deta);
                const double w = q.w * 0.25 * hx * ht * H[g];
                double gx[4], gt[4];
                for (int a = 0; a < 4; ++a) {
                    const double ux = dxi[a] * 2.0 / hx, ut = deta[a] * 2.0 / ht;
                    gx[a] = ux - T * R[g] * ut;
                    gt[a] = ut / H[g];
                }
                for (int a = 0; a < 4; ++a)
                    for (int b = 0; b < 4; ++b) {
                        Ke[a][b] += w * (gx[a] * gx[b] + gt[a] * gt[b]);
                        Be[a][b] += w * N[a] * N[b];
                    }
            }
            for (int a = 0; a < 4; ++a) {
                if (id[a] < 0) continue;
                for (int b = 0; b < 4; ++b) {
                    if (id[b] < 0) continue;
                    tk.emplace_back(id[a], id[b], Ke[a][b]);
                    tb.emplace_back(id[a], id[b], Be[a][b]);
                }
            }
        }
    }
    DiscreteForms f;
    const int n = mesh.unknowns();
    f.K.resize(n, n);
    f.B.resize(n, n);
    f.K.setFromTriplets(tk.begin(), tk.end());
    f.B.setFromTriplets(tb.begin(), tb.end());
    return f;
}

struct SpectralResult2D {
    double epsilon = 0.0;
    std::vector<double> eigenvalues;
    Eigen::MatrixXd eigenvectors;  // unknowns x J, B-orthonormal
    std::vector<double> residuals;  // ||K u - L B u|| / (|L| ||B u||)
    int iterations = 0;
    std::vector<double> shifts;     // shifts actually factored
};

struct EigenSolveOptions {
    double shift = 0.0;       // must lie below the lowest eigenvalue
    int block_extra = -1;     // extra block vectors; -1 -> max(J, 4)
    int max_iter = 400;
    unsigned seed = 12345;
    bool adaptive_shift = true;
};

// Lower bound for the spectrum used as the first shift: 0.9 pi^2 / (M eps)^2.
inline double default_shift(double M, double eps) {
    return 0.9 * std::numbers::pi * std::numbers::pi / (M * M * eps * eps);
}

namespace detail {

struct ShiftedFactor {
    Eigen::SimplicialLDLT<SparseMatrix> ldlt;
    double shift = 0.0;
    Eigen::Index negative = 0;
};

inline bool factor_shift(ShiftedFactor& f, const SparseMatrix& K, const SparseMatrix& B, double sigma) {
    SparseMatrix A = K - sigma * B;
    f.ldlt.compute(A);
    if (f.ldlt.info() != Eigen::Success) return false;
    f.negative = (f.ldlt.vectorD().array() < 0.0).count();
    f.shift = sigma;
    return true;
}

} // namespace detail

// Lowest J eigenpairs of K u = L B u by shift-invert block iteration with Rayleigh-Ritz.
// A sparse LDL^T of K - sigma B serves as the inner solve; its inertia certifies that no
// eigenvalue lies below sigma. Once the Ritz values settle, the shift moves up toward the
// lowest Ritz value (kept only if the inertia check still passes).
inline SpectralResult2D solve_lowest_modes(const SparseMatrix& K, const SparseMatrix& B, int J, double tol,
                                           const EigenSolveOptions& opt) {
    const Eigen::Index n = K.rows();
    if (J < 1 || J > n) throw ParameterError("solve_lowest_modes: J out of range");
    if (!(tol > 0.0)) throw ParameterError("solve_lowest_modes: tol must be positive");
    const int extra = opt.block_extra >= 0 ? opt.block_extra : std::max(J, 4);
    const Eigen::Index p = std::min<Eigen::Index>(n, J + extra);

    auto Fp = std::make_unique<detail::ShiftedFactor>();
    double sigma = opt.shift;
    for (int attempt = 0;; ++attempt) {
        if (detail::factor_shift(*Fp, K, B, sigma) && Fp->negative == 0) break;
        if (attempt > 30) throw DiagnosticError("solve_lowest_modes: no admissible shift below the spectrum");
        sigma = sigma - 0.1 * std::abs(sigma) - 1.0;
    }

    SpectralResult2D out;
    out.shifts.push_back(sigma);
    std::mt19937 rng(opt.seed);
    std::normal_distribution<double> nd;
    Eigen::MatrixXd X(n, p);
    for (Eigen::Index c = 0; c < p; ++c)
        for (Eigen::Index r = 0; r < n; ++r) X(r, c) = nd(rng);

    std::ostringstream trace;
    Eigen::VectorXd theta;
    int reshifts = 0;
    for (int it = 1; it <= opt.max_iter; ++it) {
        Eigen::MatrixXd Y = Fp->ldlt.solve(B * X);
        Eigen::MatrixXd KY = K * Y, BY = B * Y;
        Eigen::MatrixXd Kp = Y.transpose() * KY, Bp = Y.transpose() * BY;
        Kp = 0.5 * (Kp + Kp.transpose()).eval();
        Bp = 0.5 * (Bp + Bp.transpose()).eval();
        Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ges(Kp, Bp);
        if (ges.info() != Eigen::Success) throw DiagnosticError("solve_lowest_modes: Rayleigh-Ritz failed (block lost rank)");
        theta = ges.eigenvalues();
        const Eigen::MatrixXd& C = ges.eigenvectors();
        X = Y * C;
        Eigen::MatrixXd KX = KY * C, BX = BY * C;

        double worst = 0.0;
        std::vector<double> res(static_cast<std::size_t>(J));
        for (int j = 0; j < J; ++j) {
            const double r = (KX.col(j) - theta[j] * BX.col(j)).norm() / (std::abs(theta[j]) * BX.col(j).norm());
            res[std::size_t(j)] = r;
            worst = std::max(worst, r);
        }
        trace << "it " << it << " shift " << Fp->shift << " max residual " << worst << "\n";
        if (worst < tol) {
            out.iterations = it;
            out.residuals = res;
            break;
        }
        if (it == opt.max_iter)
            throw DiagnosticError("solve_lowest_modes: no convergence\n" + trace.str());

        if (opt.adaptive_shift && reshifts < 4 && worst < 1e-2 && p > 1) {
            const double cand = theta[0] - 0.5 * (theta[1] - theta[0]);
            if (cand > Fp->shift + 0.05 * (theta[0] - Fp->shift)) {
                ++reshifts;
                auto G = std::make_unique<detail::ShiftedFactor>();
                if (detail::factor_shift(*G, K, B, cand) && G->negative == 0) {
                    Fp = std::move(G);
                    out.shifts.push_back(cand);
                }
            }
        }
    }

    out.eigenvalues.assign(theta.data(), theta.data() + J);
    out.eigenvectors = X.leftCols(J);
    return out;
}

inline SpectralResult2D solve_lowest_modes(const SparseMatrix& K, const SparseMatrix& B, int J, double tol, double shift) {
    EigenSolveOptions o;
    o.shift = shift;
    return solve_lowest_modes(K, B, J, tol, o);
}

// Interior node counts: nx = max(64, 16 / eps^{alpha1}) rounded up to odd, nt fixed.
struct MeshRule {
    int nx_min = 64;
    double nx_per_width = 16.0;  // nodes per unit of eps^{alpha1}
    int nt = 127;

    Mesh2D mesh(const DomainProfile& p, double eps) const {
        const double alpha1 = 2.0 / (p.m + 2.0);
        int nx = std::max(nx_min, int(std::ceil(nx_per_width / std::pow(eps, alpha1))));
        nx += 1 - nx % 2;  // odd counts keep the mesh coarsenable
        return Mesh2D::uniform(p.l1, p.l2, nx, nt);
    }
};

struct DirectSolve2D {
    SpectralResult2D coarse;
    SpectralResult2D fine;
    std::vector<double> extrapolated;  // (4 fine - coarse) / 3
    std::vector<double> error;         // error estimate for extrapolated
    std::vector<double> fine_error;    // |fine - coarse| / 3
};

// Lowest J eigenvalues on mesh and on mesh.refined(), combined by Richardson extrapolation.
// When the mesh can be coarsened once more, the extrapolated error is estimated from the
// h^4 remainder, |R(mesh, fine) - R(coarser, mesh)| / 15; otherwise |fine - coarse| / 3.
inline DirectSolve2D direct_solve_2d(const DomainProfile& p, double eps, const Mesh2D& mesh, int J, double tol,
                                     unsigned seed = 12345) {
    EigenSolveOptions o;
    o.shift = default_shift(p.M, eps);
    o.seed = seed;
    auto solve = [&](const Mesh2D& m) {
        auto f = assemble_mapped_form(p, eps, m);
        auto r = solve_lowest_modes(f.K, f.B, J, tol, o);
        r.epsilon = eps;
        return r;
    };
    DirectSolve2D d;
    d.coarse = solve(mesh);
    d.fine = solve(mesh.refined());
    std::vector<double> coarser;
    if (mesh.coarsenable()) coarser = solve(mesh.coarsened()).eigenvalues;
    for (int j = 0; j < J; ++j) {
        const double c = d.coarse.eigenvalues[std::size_t(j)], f = d.fine.eigenvalues[std::size_t(j)];
        const double r = (4.0 * f - c) / 3.0;
        d.extrapolated.push_back(r);
        d.fine_error.push_back(std::abs(f - c) / 3.0);
        if (coarser.empty()) {
            d.error.push_back(d.fine_error.back());
        } else {
            const double r0 = (4.0 * c - coarser[std::size_t(j)]) / 3.0;
            d.error.push_back(std::abs(r - r0) / 15.0);
        }
    }
    return d;
}

} // namespace thinspec
