#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>

#include "thinspec/error.hpp"
#include "thinspec/laplacian2d.hpp"
#include "thinspec/profile.hpp"
#include "thinspec/quadrature.hpp"

namespace thinspec {

inline constexpr double kappa_const = std::numbers::pi * std::numbers::pi / 3.0 + 0.25;

// Discrete adiabatic subspace: column i is the nodal interpolant of
// chi_i(x) sqrt(2 / (eps h(x))) sin(pi t), chi_i the hat function at x-node i.
// The B-Gram matrix G = V^T B V is tridiagonal; P v = V G^{-1} V^T B v.
class AdiabaticBasis {
public:
    AdiabaticBasis(const Mesh2D& mesh, const DomainProfile& profile, double eps, const SparseMatrix& B)
        : mesh_(mesh) {
        const int n = mesh.unknowns();
        std::vector<Eigen::Triplet<double>> tv;
        tv.reserve(std::size_t(n));
        for (int i = 1; i <= mesh.nx; ++i) {
            const double hv = profile.h(mesh.x[std::size_t(i)]);
            if (!(hv > 0.0)) {
                std::ostringstream os;
                os << "AdiabaticBasis: nonpositive height at x = " << mesh.x[std::size_t(i)];
                throw GeometryError(os.str());
            }
            const double s = std::sqrt(2.0 / (eps * hv));
            for (int k = 1; k <= mesh.nt; ++k)
                tv.emplace_back(mesh.index(i, k), i - 1, s * std::sin(std::numbers::pi * mesh.t[std::size_t(k)]));
        }
        V_.resize(n, mesh.nx);
        V_.setFromTriplets(tv.begin(), tv.end());
        BV_ = B * V_;
        G_ = SparseMatrix(V_.transpose() * BV_);
        G_.prune(0.0);
        llt_ = std::make_unique<Eigen::SimplicialLLT<SparseMatrix>>(G_);
        if (llt_->info() != Eigen::Success) throw GeometryError("AdiabaticBasis: Gram matrix is not positive definite");
        // Cholesky pivots small against the Gram diagonal flag near rank loss
        const double dmax = G_.diagonal().maxCoeff();
        Eigen::VectorXd piv = SparseMatrix(llt_->matrixL()).diagonal();
        for (Eigen::Index i = 0; i < piv.size(); ++i)
            if (!(piv[i] * piv[i] > 1e-12 * dmax)) throw GeometryError("AdiabaticBasis: basis is rank deficient");
    }

    int size() const { return int(V_.cols()); }
    const SparseMatrix& vectors() const { return V_; }
    const SparseMatrix& gram() const { return G_; }
    const Mesh2D& mesh() const { return mesh_; }

    // Coordinates c with P v = V c.
    Eigen::VectorXd coords(const Eigen::VectorXd& v) const { return llt_->solve(BV_.transpose() * v); }
    Eigen::VectorXd project(const Eigen::VectorXd& v) const { return V_ * coords(v); }
    Eigen::VectorXd complement(const Eigen::VectorXd& v) const { return v - project(v); }
    // Transposes acting on dual vectors (functionals): P^T r = B V G^{-1} V^T r.
    Eigen::VectorXd project_dual(const Eigen::VectorXd& r) const {
        Eigen::VectorXd c = llt_->solve(V_.transpose() * r);
        return BV_ * c;
    }
    Eigen::VectorXd complement_dual(const Eigen::VectorXd& r) const { return r - project_dual(r); }

    // Dense B-orthonormal basis W = V L^{-T}; for small meshes.
    Eigen::MatrixXd orthonormal_vectors() const {
        Eigen::MatrixXd Vd(V_);
        Eigen::MatrixXd Lt = Eigen::MatrixXd(llt_->matrixU());
        Eigen::MatrixXd Pm = Eigen::MatrixXd(llt_->permutationP());
        // G = P^T L L^T P
        Eigen::MatrixXd W = Vd * Pm.transpose();
        return Lt.transpose().triangularView<Eigen::Lower>().solve(W.transpose()).transpose();
    }

private:
    Mesh2D mesh_;
    SparseMatrix V_;
    SparseMatrix BV_;
    SparseMatrix G_;
    std::unique_ptr<Eigen::SimplicialLLT<SparseMatrix>> llt_;
};

inline AdiabaticBasis build_projection(const Mesh2D& mesh, const DomainProfile& profile, double eps, const SparseMatrix& B) {
    return AdiabaticBasis(mesh, profile, eps, B);
}

struct A11Ritz {
    std::vector<double> values;
    Eigen::MatrixXd coords;   // nx x J, G-orthonormal
    Eigen::MatrixXd vectors;  // nodal phi_j = V coords_j, B-normalized
};

// The four blocks A_ab = Pi_a B^{-1} K Pi_b, Pi_1 = P, Pi_2 = Q. Blocks are applied, never formed.
// dual(a, b, v) returns B A_ab v = Pi_a^T K Pi_b v; apply(a, b, v) returns A_ab v.
class BlockOperators {
public:
    BlockOperators(SparseMatrix K, SparseMatrix B, std::shared_ptr<const AdiabaticBasis> basis)
        : K_(std::move(K)), B_(std::move(B)), basis_(std::move(basis)) {}

    const SparseMatrix& K() const { return K_; }
    const SparseMatrix& B() const { return B_; }
    const AdiabaticBasis& basis() const { return *basis_; }

    Eigen::VectorXd part(int a, const Eigen::VectorXd& v) const { return a == 1 ? basis_->project(v) : basis_->complement(v); }
    Eigen::VectorXd part_dual(int a, const Eigen::VectorXd& r) const {
        return a == 1 ? basis_->project_dual(r) : basis_->complement_dual(r);
    }

    Eigen::VectorXd dual(int a, int b, const Eigen::VectorXd& v) const {
        check(a, b);
        return part_dual(a, K_ * part(b, v));
    }

    Eigen::VectorXd apply(int a, int b, const Eigen::VectorXd& v) const { return mass_solve(dual(a, b, v)); }

    Eigen::VectorXd mass_solve(const Eigen::VectorXd& r) const {
        if (!bllt_) {
            bllt_ = std::make_unique<Eigen::SimplicialLLT<SparseMatrix>>(B_);
            if (bllt_->info() != Eigen::Success) throw DiagnosticError("BlockOperators: mass matrix factorization failed");
        }
        return bllt_->solve(r);
    }

    double inner(const Eigen::VectorXd& u, const Eigen::VectorXd& v) const { return u.dot(B_ * v); }
    double norm(const Eigen::VectorXd& u) const { return std::sqrt(std::max(0.0, inner(u, u))); }

    // Generalized tridiagonal pair (V^T K V, G) whose eigenpairs are the A11 Ritz pairs.
    A11Ritz a11_ritz(int J) const {
        const auto& V = basis_->vectors();
        Eigen::MatrixXd Kc = Eigen::MatrixXd(SparseMatrix(V.transpose() * (K_ * V)));
        Eigen::MatrixXd Gc = Eigen::MatrixXd(basis_->gram());
        Kc = 0.5 * (Kc + Kc.transpose()).eval();
        if (J < 1 || J > Kc.rows()) throw ParameterError("a11_ritz: J out of range");
        Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ges(Kc, Gc);
        if (ges.info() != Eigen::Success) throw DiagnosticError("a11_ritz: eigen solve failed");
        A11Ritz r;
        r.values.assign(ges.eigenvalues().data(), ges.eigenvalues().data() + J);
        r.coords = ges.eigenvectors().leftCols(J);
        r.vectors = V * r.coords;
        return r;
    }

private:
    static void check(int a, int b) {
        if ((a != 1 && a != 2) || (b != 1 && b != 2)) throw ParameterError("BlockOperators: block index must be 1 or 2");
    }

    SparseMatrix K_;
    SparseMatrix B_;
    std::shared_ptr<const AdiabaticBasis> basis_;
    mutable std::unique_ptr<Eigen::SimplicialLLT<SparseMatrix>> bllt_;
};

inline BlockOperators build_blocks(const SparseMatrix& K, const SparseMatrix& B, std::shared_ptr<const AdiabaticBasis> basis) {
    return BlockOperators(K, B, std::move(basis));
}

enum class ResolventMethod { ProjectedCG, BorderedLU };

// z = (A22 - lambda)^{-1} w for w in range(Q), posed in dual form Q^T (K - lambda B) Q z = B w.
// ProjectedCG: conjugate gradients on range(Q) with preconditioner Q D^{-1} Q^T, D = diag(K - lambda B).
// BorderedLU: sparse LU of [[K - lambda B, B V], [V^T B, 0]], whose first block row solves the same system.
class ResolventSolver {
public:
    ResolventSolver(const BlockOperators& blocks, double lambda, ResolventMethod method = ResolventMethod::ProjectedCG,
                    double tol = 1e-10, int max_iter = 20000)
        : blocks_(blocks), lambda_(lambda), method_(method), tol_(tol), max_iter_(max_iter) {
        A_ = blocks.K() - lambda * blocks.B();
        if (method_ == ResolventMethod::ProjectedCG) {
            dinv_ = A_.diagonal().cwiseInverse();
            if (!(A_.diagonal().minCoeff() > 0.0)) throw DiagnosticError("ResolventSolver: nonpositive diagonal");
        } else {
            const auto& V = blocks.basis().vectors();
            SparseMatrix BV = blocks.B() * V;
            const Eigen::Index n = A_.rows(), m = V.cols();
            std::vector<Eigen::Triplet<double>> t;
            t.reserve(std::size_t(A_.nonZeros() + 2 * BV.nonZeros()));
            for (int c = 0; c < A_.outerSize(); ++c)
                for (SparseMatrix::InnerIterator it(A_, c); it; ++it) t.emplace_back(it.row(), it.col(), it.value());
            for (int c = 0; c < BV.outerSize(); ++c)
                for (SparseMatrix::InnerIterator it(BV, c); it; ++it) {
                    t.emplace_back(it.row(), n + it.col(), it.value());
                    t.emplace_back(n + it.col(), it.row(), it.value());
                }
            SparseMatrix Bd(n + m, n + m);
            Bd.setFromTriplets(t.begin(), t.end());
            Bd.makeCompressed();
            lu_ = std::make_unique<Eigen::SparseLU<SparseMatrix>>();
            lu_->compute(Bd);
            if (lu_->info() != Eigen::Success) throw DiagnosticError("ResolventSolver: bordered factorization failed");
        }
    }

    double lambda() const { return lambda_; }
    int last_iterations() const { return last_iter_; }

    // rhs is a dual vector; it is projected by Q^T first.
    Eigen::VectorXd solve(const Eigen::VectorXd& rhs_in) const {
        const AdiabaticBasis& P = blocks_.basis();
        Eigen::VectorXd rhs = P.complement_dual(rhs_in);
        const double rn = rhs.norm();
        if (rn == 0.0) return Eigen::VectorXd::Zero(rhs.size());
        if (method_ == ResolventMethod::BorderedLU) {
            Eigen::VectorXd b = Eigen::VectorXd::Zero(A_.rows() + P.size());
            b.head(rhs.size()) = rhs;
            Eigen::VectorXd s = lu_->solve(b);
            if (lu_->info() != Eigen::Success) throw DiagnosticError("ResolventSolver: bordered solve failed");
            last_iter_ = 1;
            return P.complement(s.head(rhs.size()));
        }
        Eigen::VectorXd x = Eigen::VectorXd::Zero(rhs.size());
        Eigen::VectorXd r = rhs;
        Eigen::VectorXd y = P.complement(dinv_.cwiseProduct(r));
        Eigen::VectorXd p = y;
        double rz = r.dot(y);
        std::ostringstream trace;
        for (int it = 1; it <= max_iter_; ++it) {
            Eigen::VectorXd Ap = P.complement_dual(A_ * p);
            const double pAp = p.dot(Ap);
            if (!(pAp > 0.0)) {
                std::ostringstream os;
                os << "ResolventSolver: nonpositive curvature at iteration " << it << " (shift above the A22 floor?)";
                throw DiagnosticError(os.str());
            }
            const double alpha = rz / pAp;
            x += alpha * p;
            r -= alpha * Ap;
            const double rel = r.norm() / rn;
            if (it % 100 == 0) trace << "it " << it << " relres " << rel << "\n";
            if (rel < tol_) {
                last_iter_ = it;
                return P.complement(x);
            }
            y = P.complement(dinv_.cwiseProduct(r));
            const double rz1 = r.dot(y);
            p = y + (rz1 / rz) * p;
            rz = rz1;
        }
        throw DiagnosticError("ResolventSolver: projected CG did not converge\n" + trace.str());
    }

private:
    const BlockOperators& blocks_;
    double lambda_;
    ResolventMethod method_;
    double tol_;
    int max_iter_;
    SparseMatrix A_;
    Eigen::VectorXd dinv_;
    std::unique_ptr<Eigen::SparseLU<SparseMatrix>> lu_;
    mutable int last_iter_ = 0;
};

struct GapReport {
    double min_ritz = 0.0;
    double floor = 0.0;    // 4 pi^2 / (M eps)^2
    double margin = 0.0;   // min_ritz / (0.9 floor) - 1
    bool pass = false;
    int steps = 0;
    double shift = 0.0;
    std::vector<double> ritz;  // lowest few A22 Ritz values
};

// Lowest Ritz value of A22 from B-inner-product Lanczos (full reorthogonalization) on
// (A22 - sigma)^{-1} restricted to range(Q), sigma = 2 pi^2 / (M eps)^2.
inline GapReport a22_gap_check(const BlockOperators& blocks, double eps, double M, int steps = 40, unsigned seed = 7,
                               ResolventMethod method = ResolventMethod::ProjectedCG) {
    const double pi2 = std::numbers::pi * std::numbers::pi;
    GapReport g;
    g.floor = 4.0 * pi2 / (M * M * eps * eps);
    const Eigen::Index n = blocks.K().rows();
    const int k = int(std::min<Eigen::Index>(steps, n - blocks.basis().size()));
    if (k < 1) throw ParameterError("a22_gap_check: empty complement");

    auto run = [&](double sigma) {
        ResolventSolver R(blocks, sigma, method);
        std::mt19937 rng(seed);
        std::normal_distribution<double> nd;
        Eigen::VectorXd q(n);
        for (Eigen::Index i = 0; i < n; ++i) q[i] = nd(rng);
        q = blocks.basis().complement(q);
        q /= blocks.norm(q);
        Eigen::MatrixXd Qk(n, k), BQ(n, k);
        Eigen::MatrixXd T = Eigen::MatrixXd::Zero(k, k);
        int used = 0;
        for (int j = 0; j < k; ++j) {
            Qk.col(j) = q;
            BQ.col(j) = blocks.B() * q;
            Eigen::VectorXd w = R.solve(BQ.col(j));
            for (int pass = 0; pass < 2; ++pass)
                for (int i = 0; i <= j; ++i) {
                    const double c = BQ.col(i).dot(w);
                    if (pass == 0) T(i, j) = c;
                    else T(i, j) += c;
                    w -= c * Qk.col(i);
                }
            used = j + 1;
            const double beta = blocks.norm(w);
            if (j + 1 < k) {
                if (beta < 1e-14 * std::abs(T(j, j))) break;
                T(j + 1, j) = beta;
                q = w / beta;
            }
        }
        Eigen::MatrixXd Ts = T.topLeftCorner(used, used);
        Ts = 0.5 * (Ts + Ts.transpose()).eval();
        for (int i = 0; i + 1 < used; ++i) Ts(i, i + 1) = Ts(i + 1, i);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Ts);
        std::vector<double> vals;
        for (int i = 0; i < used; ++i) {
            const double th = es.eigenvalues()[i];
            if (th != 0.0) vals.push_back(sigma + 1.0 / th);
        }
        std::sort(vals.begin(), vals.end());
        g.steps = used;
        g.shift = sigma;
        return vals;
    };

    std::vector<double> vals;
    try {
        vals = run(0.5 * g.floor);
    } catch (const DiagnosticError&) {
        vals = run(0.0);  // the half-floor shift was not below the complement spectrum
    }
    g.min_ritz = vals.front();
    g.ritz.assign(vals.begin(), vals.begin() + std::min<std::size_t>(5, vals.size()));
    g.margin = g.min_ritz / (0.9 * g.floor) - 1.0;
    g.pass = g.min_ritz >= 0.9 * g.floor;
    return g;
}

struct CorrectionSeries {
    double lambda = 0.0;
    Eigen::VectorXd phi;
    Eigen::VectorXd u1;
    std::vector<double> corr_a;
    double radius_estimate = 0.0;  // distance from lambda to the A22 floor
    double overlap = 0.0;          // <u1, phi>
    double u1_norm = 0.0;
    double phi_norm = 0.0;
    int solves = 0;

    double operator()(double x) const {
        double s = 0.0;
        for (auto it = corr_a.rbegin(); it != corr_a.rend(); ++it) s = s * x + *it;
        return s;
    }
    double derivative(double x) const {
        double s = 0.0;
        for (std::size_t n = corr_a.size(); n-- > 1;) s = s * x + double(n) * corr_a[n];
        return s;
    }
};

// a_n = -<u1, A12 (A22 - lambda)^{-n-1} A21 phi> / <u1, phi>, n = 0..N.
// The chain z_1 = R (A21 phi), z_{k+1} = R z_k reuses one resolvent.
inline CorrectionSeries correction_coefficients(const BlockOperators& blocks, double lambda, const Eigen::VectorXd& phi,
                                                const Eigen::VectorXd& u1, int N, double radius_estimate = 0.0,
                                                ResolventMethod method = ResolventMethod::ProjectedCG,
                                                double overlap_floor = 1e-8) {
    if (N < 0) throw ParameterError("correction_coefficients: N must be >= 0");
    CorrectionSeries s;
    s.lambda = lambda;
    s.phi = phi;
    s.u1 = u1;
    s.radius_estimate = radius_estimate;
    s.overlap = blocks.inner(u1, phi);
    s.u1_norm = blocks.norm(u1);
    s.phi_norm = blocks.norm(phi);
    if (!(std::abs(s.overlap) >= overlap_floor * s.u1_norm * s.phi_norm))
        throw DiagnosticError("correction_coefficients: <u1, phi> is numerically zero");

    const Eigen::VectorXd w0 = blocks.dual(2, 1, phi);  // B A21 phi
    const Eigen::VectorXd lu = blocks.part_dual(2, blocks.K() * u1);  // Q^T K u1
    if (w0.norm() == 0.0 || lu.norm() == 0.0) {
        s.corr_a.assign(std::size_t(N + 1), 0.0);
        return s;
    }
    ResolventSolver R(blocks, lambda, method);
    Eigen::VectorXd z = R.solve(w0);
    ++s.solves;
    for (int n = 0; n <= N; ++n) {
        s.corr_a.push_back(-lu.dot(z) / s.overlap);
        if (n < N) {
            z = R.solve(blocks.B() * z);
            ++s.solves;
        }
    }
    return s;
}

struct FixedPointTrace {
    std::vector<double> iterates;
    bool converged = false;
    double ratio = 0.0;      // empirical contraction ratio
    double lipschitz = 0.0;  // |g'| at the last iterate
};

// lambda~_0 = a_0, lambda~_{k+1} = g(lambda~_k).
inline FixedPointTrace fixed_point_iterate(const CorrectionSeries& g, double tol, int max_iter = 100) {
    if (g.corr_a.empty()) throw ParameterError("fixed_point_iterate: empty series");
    FixedPointTrace t;
    t.iterates.push_back(g.corr_a[0]);
    int bad = 0;
    double prev_step = -1.0;
    std::vector<double> ratios;
    for (int k = 0; k < max_iter; ++k) {
        const double x = t.iterates.back();
        const double y = g(x);
        t.iterates.push_back(y);
        const double step = std::abs(y - x);
        if (!std::isfinite(y)) throw DiagnosticError("fixed_point_iterate: iterate is not finite");
        if (prev_step > 0.0 && step > 0.0) {
            const double r = step / prev_step;
            ratios.push_back(r);
            bad = r >= 1.0 ? bad + 1 : 0;
            if (bad >= 3) throw DiagnosticError("fixed_point_iterate: non-contraction over 3 consecutive steps");
        }
        if (step < tol) {
            t.converged = true;
            break;
        }
        prev_step = step;
    }
    t.lipschitz = std::abs(g.derivative(t.iterates.back()));
    // steps near round-off carry no information; fall back to |g'| then
    t.ratio = ratios.empty() ? t.lipschitz : *std::max_element(ratios.begin(), ratios.end());
    if (!ratios.empty() && ratios.size() == 1 && std::abs(t.iterates[1] - t.iterates[0]) < 1e3 * tol)
        t.ratio = t.lipschitz;
    return t;
}

// Transverse mode g = sqrt(2/(eps h)) sin(pi y/(eps h)) and its x-derivatives at fixed y.
struct TransverseMode {
    double eps, h, r, rp;  // r = h'/h, rp = r'

    TransverseMode(const DomainProfile& p, double e, double x) : eps(e) {
        h = p.h(x);
        r = p.dh(x) / h;
        rp = p.d2h(x) / h - r * r;
    }
    double height() const { return eps * h; }
    void eval(double y, double& g, double& gx, double& gxx) const {
        const double A = std::sqrt(2.0 / (eps * h));
        const double s = std::numbers::pi * y / (eps * h);
        const double F = 0.5 * std::sin(s) + s * std::cos(s);
        const double Fp = 1.5 * std::cos(s) - s * std::sin(s);
        g = A * std::sin(s);
        gx = -r * A * F;
        gxx = -A * (rp - 0.5 * r * r) * F + r * r * s * A * Fp;
    }
};

struct IdentityRow {
    double x = 0.0;
    std::string name;
    double numeric = 0.0;
    double closed = 0.0;
    double scale = 0.0;  // integral of |integrand|
    bool gated = true;
    bool pass = false;
    double rel() const {
        const double s = std::max(scale, std::abs(closed));
        return s == 0.0 ? 0.0 : std::abs(numeric - closed) / s;
    }
};

// Closed forms of the transverse integrals, with r = h'/h and q = h''/h.
struct TransverseClosedForms {
    static double g2(double, double) { return 1.0; }
    static double ggx(double, double) { return 0.0; }
    static double gx2(double r, double) { return kappa_const * r * r; }
    static double ggxx(double r, double) { return -kappa_const * r * r; }
    static double gxgxx(double r, double q) {
        const double pi2 = std::numbers::pi * std::numbers::pi;
        return q * r * kappa_const + r * r * r * (-0.25 - 4.0 * pi2 / 3.0);
    }
    // As printed; carries the (1/16 + pi^2/12) r^3 term.
    static double gxx2(double r, double q) {
        const double pi2 = std::numbers::pi * std::numbers::pi;
        return (0.5 + 53.0 * pi2 / 12.0 + pi2 * pi2 / 5.0) * std::pow(r, 4) - (0.5 + 8.0 * pi2 / 3.0) * r * r * q +
               kappa_const * q * q + (1.0 / 16.0 + pi2 / 12.0) * r * r * r;
    }
};

// Composite Simpson in y on [0, eps h] per sample x; every identity but the g''^2 one is gated.
inline std::vector<IdentityRow> transverse_integral_check(const DomainProfile& p, double eps, const std::vector<double>& xs,
                                                          int points = 4001, double tol = 1e-8) {
    if (points < 2001) throw ParameterError("transverse_integral_check: need at least 2001 points");
    if (points % 2 == 0) ++points;
    std::vector<IdentityRow> rows;
    for (double x : xs) {
        TransverseMode m(p, eps, x);
        const double H = m.height(), dy = H / double(points - 1);
        const double q = p.d2h(x) / m.h;
        std::vector<double> G(static_cast<std::size_t>(points)), GX(G.size()), GXX(G.size());
        for (int i = 0; i < points; ++i) m.eval(dy * i, G[std::size_t(i)], GX[std::size_t(i)], GXX[std::size_t(i)]);
        auto integrate = [&](auto f, double& val, double& scale) {
            std::vector<double> a(G.size()), b(G.size());
            for (std::size_t i = 0; i < G.size(); ++i) {
                a[i] = f(i);
                b[i] = std::abs(a[i]);
            }
            val = simpson(a, dy);
            scale = simpson(b, dy);
        };
        struct Spec {
            const char* name;
            std::function<double(std::size_t)> f;
            double closed;
            bool gated;
        };
        const std::vector<Spec> specs = {
            {"g^2", [&](std::size_t i) { return G[i] * G[i]; }, TransverseClosedForms::g2(m.r, q), true},
            {"g g'", [&](std::size_t i) { return G[i] * GX[i]; }, TransverseClosedForms::ggx(m.r, q), true},
            {"g'^2", [&](std::size_t i) { return GX[i] * GX[i]; }, TransverseClosedForms::gx2(m.r, q), true},
            {"g g''", [&](std::size_t i) { return G[i] * GXX[i]; }, TransverseClosedForms::ggxx(m.r, q), true},
            {"g' g''", [&](std::size_t i) { return GX[i] * GXX[i]; }, TransverseClosedForms::gxgxx(m.r, q), true},
            {"g''^2", [&](std::size_t i) { return GXX[i] * GXX[i]; }, TransverseClosedForms::gxx2(m.r, q), false},
        };
        for (const auto& sp : specs) {
            IdentityRow row;
            row.x = x;
            row.name = sp.name;
            row.closed = sp.closed;
            row.gated = sp.gated;
            integrate(sp.f, row.numeric, row.scale);
            row.pass = std::abs(row.numeric - row.closed) <= tol * std::max(row.scale, std::abs(row.closed));
            rows.push_back(row);
        }
    }
    return rows;
}

struct A21IdentityReport {
    double discrete = 0.0;       // ||A21 f||_B^2 from the blocks
    double closed_printed = 0.0; // four-integral formula with the printed g''^2 term
    double closed_quadrature = 0.0;  // same structure with transverse integrals by quadrature
    double rel_printed = 0.0;
    double rel_quadrature = 0.0;
    double bound = 0.0;          // C int chi'^2 + D int chi^2
    double C = 0.0, D = 0.0;
    bool bound_holds = false;
};

struct TestFunction1D {
    std::function<double(double)> f;
    std::function<double(double)> df;

    // (1 - z^2)^4 on [-l1, l2], z the affine map onto [-1, 1].
    static TestFunction1D bump(double l1, double l2) {
        const double c = 0.5 * (l2 - l1), w = 0.5 * (l1 + l2);
        TestFunction1D t;
        t.f = [=](double x) {
            const double z = (x - c) / w;
            return std::abs(z) >= 1.0 ? 0.0 : std::pow(1.0 - z * z, 4);
        };
        t.df = [=](double x) {
            const double z = (x - c) / w;
            return std::abs(z) >= 1.0 ? 0.0 : -8.0 * z * std::pow(1.0 - z * z, 3) / w;
        };
        return t;
    }
};

// Compares the closed form for ||A21 f||^2, f = chi g, with the discrete ||Q B^{-1} K f||_B^2.
inline A21IdentityReport a21_identity_check(const DomainProfile& p, double eps, const TestFunction1D& chi,
                                            const BlockOperators& blocks, int xpoints = 4001, int ypoints = 2001) {
    A21IdentityReport rep;
    const double a = -p.l1, b = p.l2;
    if (xpoints % 2 == 0) ++xpoints;
    const double dx = (b - a) / double(xpoints - 1);
    std::vector<double> printed(static_cast<std::size_t>(xpoints)), quad(printed.size()), c2(printed.size()), d2(printed.size());
    double wmax1 = 0.0, wmax2 = 0.0, wmax3 = 0.0;
    for (int i = 0; i < xpoints; ++i) {
        const double x = a + dx * i;
        TransverseMode m(p, eps, x);
        const double r = m.r, q = p.d2h(x) / m.h;
        const double X = chi.f(x), Xp = chi.df(x);
        const double W1 = 4.0 * kappa_const * r * r;
        const double W2p = 4.0 * TransverseClosedForms::gxgxx(r, q);
        const double W3p = TransverseClosedForms::gxx2(r, q) - kappa_const * kappa_const * std::pow(r, 4);
        printed[std::size_t(i)] = W1 * Xp * Xp + W2p * X * Xp + W3p * X * X;
        wmax1 = std::max(wmax1, std::abs(W1));
        wmax2 = std::max(wmax2, std::abs(W2p));
        wmax3 = std::max(wmax3, std::abs(W3p));

        double sgp = 0.0, sgg = 0.0, s2 = 0.0;
        if (X != 0.0 || Xp != 0.0) {
            const int np = ypoints % 2 == 0 ? ypoints + 1 : ypoints;
            const double H = m.height(), dy = H / double(np - 1);
            std::vector<double> fa(static_cast<std::size_t>(np)), fb(fa.size()), fc(fa.size());
            for (int k = 0; k < np; ++k) {
                double g, gx, gxx;
                m.eval(dy * k, g, gx, gxx);
                fa[std::size_t(k)] = gx * gx;
                fb[std::size_t(k)] = gx * gxx;
                fc[std::size_t(k)] = gxx * gxx;
            }
            sgp = simpson(fa, dy);
            sgg = simpson(fb, dy);
            s2 = simpson(fc, dy);
        }
        quad[std::size_t(i)] = 4.0 * sgp * Xp * Xp + 4.0 * sgg * X * Xp + (s2 - kappa_const * kappa_const * std::pow(r, 4)) * X * X;
        c2[std::size_t(i)] = Xp * Xp;
        d2[std::size_t(i)] = X * X;
    }
    rep.closed_printed = simpson(printed, dx);
    rep.closed_quadrature = simpson(quad, dx);
    // 2|chi chi'| <= chi^2 + chi'^2
    rep.C = wmax1 + 0.5 * wmax2;
    rep.D = wmax3 + 0.5 * wmax2;
    rep.bound = rep.C * simpson(c2, dx) + rep.D * simpson(d2, dx);
    rep.bound_holds = rep.closed_printed <= rep.bound * (1.0 + 1e-12) + 1e-300;

    const auto& mesh = blocks.basis().mesh();
    Eigen::VectorXd coeff(mesh.nx);
    for (int i = 1; i <= mesh.nx; ++i) coeff[i - 1] = chi.f(mesh.x[std::size_t(i)]);
    Eigen::VectorXd f = blocks.basis().vectors() * coeff;
    Eigen::VectorXd w = blocks.apply(2, 1, f);
    rep.discrete = blocks.inner(w, w);
    auto rel = [](double num, double ref) {
        const double s = std::max(std::abs(ref), std::abs(num));
        return s == 0.0 ? 0.0 : std::abs(num - ref) / s;
    };
    rep.rel_printed = rel(rep.discrete, rep.closed_printed);
    rep.rel_quadrature = rel(rep.discrete, rep.closed_quadrature);
    return rep;
}

struct A11Comparison {
    std::vector<double> ritz;      // A11 Ritz values
    std::vector<double> model;     // 1D operator eigenvalues on the same x nodes
    std::vector<double> rel_diff;
    double transverse_estimate = 0.0;  // relative discretization effect of the t mesh, (pi h_t)^2 / 12
    double floor = 0.0;                // pi^2/(eps M)^2 (1 - 10/nt^2)
    bool floor_ok = false;
};

// Lowest J eigenvalues of -d^2/dx^2 + pi^2/(eps h)^2 + kappa h'^2/h^2 with linear elements
// on the x nodes of mesh, two-point Gauss for the potential.
inline std::vector<double> a11_model_eigenvalues(const DomainProfile& p, double eps, const Mesh2D& mesh, int J) {
    const int n = mesh.nx;
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(n, n), Mm = Eigen::MatrixXd::Zero(n, n);
    const double g = 1.0 / std::sqrt(3.0);
    const double pi2 = std::numbers::pi * std::numbers::pi;
    for (int e = 0; e <= n; ++e) {
        const double x0 = mesh.x[std::size_t(e)], hx = mesh.x[std::size_t(e + 1)] - x0;
        double ke[2][2] = {{1.0 / hx, -1.0 / hx}, {-1.0 / hx, 1.0 / hx}};
        double me[2][2] = {{hx / 3.0, hx / 6.0}, {hx / 6.0, hx / 3.0}};
        for (double xi : {-g, g}) {
            const double X = x0 + 0.5 * hx * (1.0 + xi);
            const double hv = p.h(X), r = p.dh(X) / hv;
            const double W = pi2 / (eps * eps * hv * hv) + kappa_const * r * r;
            const double N[2] = {0.5 * (1.0 - xi), 0.5 * (1.0 + xi)};
            for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b) ke[a][b] += 0.5 * hx * W * N[a] * N[b];
        }
        const int id[2] = {e - 1, e};
        for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b) {
                if (id[a] < 0 || id[a] >= n || id[b] < 0 || id[b] >= n) continue;
                S(id[a], id[b]) += ke[a][b];
                Mm(id[a], id[b]) += me[a][b];
            }
    }
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ges(S, Mm, Eigen::EigenvaluesOnly);
    return {ges.eigenvalues().data(), ges.eigenvalues().data() + J};
}

inline A11Comparison verify_a11_formula(const BlockOperators& blocks, const DomainProfile& p, double eps, int J) {
    A11Comparison c;
    const auto& mesh = blocks.basis().mesh();
    c.ritz = blocks.a11_ritz(J).values;
    c.model = a11_model_eigenvalues(p, eps, mesh, J);
    for (int j = 0; j < J; ++j)
        c.rel_diff.push_back(std::abs(c.ritz[std::size_t(j)] - c.model[std::size_t(j)]) / std::abs(c.model[std::size_t(j)]));
    const double ht = 1.0 / double(mesh.nt + 1);
    c.transverse_estimate = std::pow(std::numbers::pi * ht, 2) / 12.0;
    c.floor = std::numbers::pi * std::numbers::pi / (eps * eps * p.M * p.M) * (1.0 - 10.0 / double(mesh.nt * mesh.nt));
    c.floor_ok = std::all_of(c.ritz.begin(), c.ritz.end(), [&](double v) { return v >= c.floor; });
    return c;
}

// Residuals of the block form of K u = Lambda B u, normalized by Lambda ||B u||.
inline std::pair<double, double> block_system_residuals(const BlockOperators& blocks, double Lambda, const Eigen::VectorXd& u) {
    const Eigen::VectorXd Bu = blocks.B() * u;
    const double scale = std::abs(Lambda) * Bu.norm();
    const Eigen::VectorXd r1 = blocks.dual(1, 1, u) + blocks.dual(1, 2, u) - Lambda * blocks.part_dual(1, Bu);
    const Eigen::VectorXd r2 = blocks.dual(2, 1, u) + blocks.dual(2, 2, u) - Lambda * blocks.part_dual(2, Bu);
    return {r1.norm() / scale, r2.norm() / scale};
}

struct ReductionOptions {
    int modes = 1;
    int order = 6;  // truncation N of g
    double eig_tol = 1e-10;
    double fixed_point_tol = 1e-12;
    int lanczos_steps = 40;
    unsigned seed = 12345;
    ResolventMethod method = ResolventMethod::ProjectedCG;
};

struct ModeReduction {
    int j = 0;
    double Lambda = 0.0;         // direct 2D eigenvalue
    double lambda = 0.0;         // A11 Ritz value
    double overlap_ratio = 0.0;  // |<u1, phi>| / (||u1|| ||phi||)
    bool pairing_ok = false;     // <P u_j, phi_j> dominant among <P u_j, phi_k>
    double a21_u1 = 0.0;         // ||A21 u1||_B
    double a21_phi = 0.0;        // ||A21 phi||_B
    double residual_p = 0.0, residual_q = 0.0;
    CorrectionSeries oracle;     // u1 = P u
    CorrectionSeries approx;     // u1 = phi
    FixedPointTrace fp_oracle;
    FixedPointTrace fp_approx;
    double tilde_direct() const { return Lambda - lambda; }
    double scaling_quantity() const { return a21_u1 * a21_phi / std::max(std::abs(oracle.overlap), 1e-300); }
};

struct ReductionResult {
    double epsilon = 0.0;
    Mesh2D mesh;
    GapReport gap;
    double resolvent_norm = 0.0;  // 1 / (A22 floor Ritz - lambda_0)
    std::vector<ModeReduction> modes;
};

// Reduction at one eps reusing a direct solve computed on the same mesh.
inline ReductionResult reduce_at(const DomainProfile& p, double eps, const Mesh2D& mesh, const ReductionOptions& opt,
                                 const SpectralResult2D& direct) {
    if (direct.eigenvectors.rows() != mesh.unknowns() || int(direct.eigenvalues.size()) < opt.modes)
        throw ParameterError("reduce_at: direct solve does not match mesh or mode count");
    ReductionResult res;
    res.epsilon = eps;
    res.mesh = mesh;
    auto forms = assemble_mapped_form(p, eps, mesh);
    auto basis = std::make_shared<const AdiabaticBasis>(mesh, p, eps, forms.B);
    BlockOperators blocks(std::move(forms.K), std::move(forms.B), basis);
    auto ritz = blocks.a11_ritz(opt.modes);
    res.gap = a22_gap_check(blocks, eps, p.M, opt.lanczos_steps, opt.seed, opt.method);

    const int J = opt.modes;
    Eigen::MatrixXd U1(direct.eigenvectors.rows(), J);
    for (int j = 0; j < J; ++j) U1.col(j) = basis->project(direct.eigenvectors.col(j));
    for (int j = 0; j < J; ++j) {
        ModeReduction mr;
        mr.j = j;
        mr.Lambda = direct.eigenvalues[std::size_t(j)];
        mr.lambda = ritz.values[std::size_t(j)];
        Eigen::VectorXd phi = ritz.vectors.col(j);
        Eigen::VectorXd u = direct.eigenvectors.col(j);
        if (blocks.inner(U1.col(j), phi) < 0.0) {
            phi = -phi;
        }
        Eigen::VectorXd u1 = U1.col(j);
        double best = 0.0;
        int arg = -1;
        for (int k = 0; k < J; ++k) {
            const double o = std::abs(blocks.inner(u1, ritz.vectors.col(k)));
            if (o > best) {
                best = o;
                arg = k;
            }
        }
        mr.pairing_ok = arg == j;
        std::tie(mr.residual_p, mr.residual_q) = block_system_residuals(blocks, mr.Lambda, u);
        mr.a21_u1 = blocks.norm(blocks.apply(2, 1, u1));
        mr.a21_phi = blocks.norm(blocks.apply(2, 1, phi));
        const double radius = res.gap.min_ritz - mr.lambda;
        mr.oracle = correction_coefficients(blocks, mr.lambda, phi, u1, opt.order, radius, opt.method);
        mr.approx = correction_coefficients(blocks, mr.lambda, phi, phi, opt.order, radius, opt.method);
        mr.overlap_ratio = std::abs(mr.oracle.overlap) / (mr.oracle.u1_norm * mr.oracle.phi_norm);
        mr.fp_oracle = fixed_point_iterate(mr.oracle, opt.fixed_point_tol);
        mr.fp_approx = fixed_point_iterate(mr.approx, opt.fixed_point_tol);
        res.modes.push_back(std::move(mr));
    }
    res.resolvent_norm = 1.0 / (res.gap.min_ritz - res.modes.front().lambda);
    return res;
}

// Full reduction at one eps on one mesh: direct solve, basis, blocks, A11 Ritz pairs,
// gap check and the correction series in oracle and approximate modes.
inline ReductionResult reduce_at(const DomainProfile& p, double eps, const Mesh2D& mesh, const ReductionOptions& opt) {
    auto forms = assemble_mapped_form(p, eps, mesh);
    EigenSolveOptions eo;
    eo.shift = default_shift(p.M, eps);
    eo.seed = opt.seed;
    return reduce_at(p, eps, mesh, opt, solve_lowest_modes(forms.K, forms.B, opt.modes, opt.eig_tol, eo));
}

struct ScalingProbe {
    std::vector<double> eps;
    std::vector<double> quantity;  // ||A21 u1|| ||A21 phi|| / |<u1, phi>|
    double slope = 0.0;
    double residual = 0.0;  // rms misfit of the log-log line
    bool degenerate = false;
};

// Least-squares slope of log y against log x.
inline std::pair<double, double> loglog_fit(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    if (n < 2 || y.size() != n) throw ParameterError("loglog_fit: need at least two points");
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double lx = std::log(x[i]), ly = std::log(y[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    const double icept = (sy - slope * sx) / double(n);
    double rr = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = std::log(y[i]) - (icept + slope * std::log(x[i]));
        rr += d * d;
    }
    return {slope, std::sqrt(rr / double(n))};
}

inline ScalingProbe a21_scaling_probe(const std::vector<double>& eps, const std::vector<double>& quantity, double zero_tol = 1e-12) {
    if (eps.size() < 4) throw ParameterError("a21_scaling_probe: need at least 4 ladder points");
    ScalingProbe sp;
    sp.eps = eps;
    sp.quantity = quantity;
    sp.degenerate = std::all_of(quantity.begin(), quantity.end(), [&](double q) { return std::abs(q) <= zero_tol; });
    if (sp.degenerate) return sp;
    std::tie(sp.slope, sp.residual) = loglog_fit(eps, quantity);
    return sp;
}

inline ScalingProbe a21_scaling_probe(const DomainProfile& p, const std::vector<double>& eps, const MeshRule& rule,
                                      const ReductionOptions& opt) {
    std::vector<double> q;
    for (double e : eps) {
        auto r = reduce_at(p, e, rule.mesh(p, e), opt);
        q.push_back(r.modes.front().scaling_quantity());
    }
    return a21_scaling_probe(eps, q);
}

} // namespace thinspec
