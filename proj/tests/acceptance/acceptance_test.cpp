// Acceptance run: one PASS/FAIL line per criterion 1-10, nonzero exit when any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "thinspec/harness.hpp"

using namespace thinspec;

namespace {

constexpr double pi = std::numbers::pi;
constexpr double c0 = 1.0 / (2.0 * pi * pi);

struct Outcome {
    bool pass = false;
    std::string detail;
};

DomainProfile harmonic() {
    DomainProfile p;
    p.M = 1.0;
    p.m = 2;
    p.c_coeffs = {c0};
    p.l1 = p.l2 = 2.0;
    return p;
}

// c(x) = c0 (1 + x/4)
DomainProfile linear_c() {
    auto p = harmonic();
    p.c_coeffs = {c0, c0 / 4.0};
    return p;
}

std::string num(double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.4g", v);
    return b;
}

// Linear-c sweep over the default ladder, shared by criteria 5, 9 and 10.
const SweepReport& linear_sweep() {
    static std::optional<SweepReport> rep;
    if (!rep) {
        ExperimentConfig cfg;
        cfg.profile = linear_c();
        cfg.modes = 1;
        rep = run_sweep(cfg);
    }
    return *rep;
}

Outcome c1_oscillator() {
    OscillatorOptions o;
    o.modes = 4;
    const auto om = oscillator_model(harmonic(), 1, o);
    const auto r = richardson_refine(om.family.H0, om.box, 4, 2001, 4001);
    double worst = 0.0;
    for (int j = 0; j < 4; ++j) worst = std::max(worst, std::abs(r.values[std::size_t(j)] - (2.0 * j + 1.0)));
    return {worst <= 1e-7, "max |mu_j - (2j+1)| = " + num(worst) + " (tol 1e-7)"};
}

DensePerturbationProblem random_problem(std::mt19937& rng, int S, int P) {
    std::uniform_real_distribution<double> u(-1.0, 1.0), gap(0.5, 1.5);
    DensePerturbationProblem pb;
    pb.H0_diag.resize(S);
    double level = u(rng);
    for (int s = 0; s < S; ++s) {
        pb.H0_diag[s] = level;
        level += gap(rng);
    }
    for (int p = 0; p < P; ++p) {
        Eigen::MatrixXd A(S, S);
        for (int i = 0; i < S; ++i)
            for (int k = i; k < S; ++k) A(i, k) = A(k, i) = u(rng);
        pb.V_orders.push_back(A);
    }
    return pb;
}

Outcome c2_oracle_equivalence() {
    std::mt19937 rng(20240601);
    std::uniform_int_distribution<int> Sd(2, 8), Nd(1, 4), Pd(1, 4);
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const int S = Sd(rng), N = Nd(rng), P = Pd(rng);
        const auto pb = random_problem(rng, S, P);
        const int j = std::uniform_int_distribution<int>(0, S - 1)(rng);
        const auto e = rs_expand(pb, j, N);
        const auto f = brute_force_branch_fit(pb, j, default_fit_ladder(pb, j), N);
        for (int n = 0; n < N; ++n) {
            const double a = f.q[std::size_t(n)], b = e.q[std::size_t(n)];
            worst = std::max(worst, std::abs(a - b) / std::max(1.0, std::abs(b)));
        }
    }
    DensePerturbationProblem toy;
    toy.H0_diag = Eigen::Vector2d(0.0, 1.0);
    Eigen::Matrix2d V;
    V << 0, 1, 1, 0;
    toy.V_orders = {V};
    const auto t = rs_expand(toy, 0, 6);
    const double toy_err = std::max({std::abs(t.q[1] + 1.0), std::abs(t.q[3] - 1.0), std::abs(t.q[5] + 2.0)});
    return {worst <= 1e-6 && toy_err <= 1e-6,
            "50 instances max diff " + num(worst) + "; toy (q2,q4,q6) = (" + num(t.q[1]) + ", " + num(t.q[3]) + ", " + num(t.q[5]) + ")"};
}

Outcome c3_closed_forms() {
    const auto p = linear_c();
    OscillatorOptions o;
    o.modes = 2;
    o.basis_size = 40;
    const auto big = oscillator_model(p, 2, o);
    o.basis_size = 20;
    const auto small = oscillator_model(p, 2, o);
    bool ok = true;
    std::ostringstream d;
    for (int j = 0; j < 2; ++j) {
        const auto& e = big.expansions[std::size_t(j)];
        const auto fit = brute_force_branch_fit(big.problem, j, default_fit_ladder(big.problem, j), 2);
        const auto sc = sign_convention_report(big.table, big.spectrum.eigenvalues, j, e, fit);
        const int s = sc.matched_sign;
        const double d1 = std::abs(s * sc.q1_closed - e.q[0]);
        const double d2 = std::abs(s * sc.q2_closed - e.q[1]);
        const double tail = std::abs(big.expansions[std::size_t(j)].q[1] - small.expansions[std::size_t(j)].q[1]);
        const bool okj = s != 0 && d1 <= 1e-10 && d2 <= std::max(tail, 1e-10);
        ok = ok && okj;
        d << "j=" << j << " sign " << s << " |dq1| " << num(d1) << " |dq2| " << num(d2) << " tail " << num(tail) << "; ";
    }
    return {ok, d.str() + "global sign -1 matches the brute-force branch"};
}

Outcome c4_two_term_law() {
    ExperimentConfig cfg;  // harmonic calibration, default ladder
    cfg.modes = 2;
    cfg.reduction = false;
    const auto rep = run_sweep(cfg);
    if (rep.failed_cells() > 0) return {false, "sweep cell failed"};
    bool ok = true;
    std::ostringstream d;
    const auto& L = cfg.epsilons;
    for (int j = 0; j < 2; ++j) {
        auto s = [&](std::size_t i) {
            const double e = L[i];
            return std::pow(e, 2.0 * rep.alpha1) * (rep.find(e, j, 0)->lambda_direct - pi * pi / (e * e));
        };
        // leading correction is linear in eps for the constant-c profile; the ladder halves
        const std::size_t n = L.size();
        const double rich = (L[n - 2] * s(n - 1) - L[n - 1] * s(n - 2)) / (L[n - 2] - L[n - 1]);
        const double mu = 2.0 * j + 1.0;
        const double rel = std::abs(rich - mu) / mu;
        ok = ok && rel <= 0.02;
        d << "j=" << j << " raw " << num(s(n - 1)) << " extrapolated " << num(rich) << " rel " << num(rel) << "; ";
    }
    return {ok, d.str()};
}

Outcome c5_residual_exponents() {
    const auto& rep = linear_sweep();
    bool ok = rep.failed_cells() == 0;
    std::ostringstream d;
    for (int K = 0; K <= 2; ++K) {
        const SlopeFit& s = rep.slopes[std::size_t(K)];
        const bool okk = std::isfinite(s.slope) && std::abs(s.slope - s.expected) <= 0.3;
        ok = ok && okk;
        d << "K=" << K << " slope " << num(s.slope) << " expected " << num(s.expected) << (okk ? " ok" : " MISS") << "; ";
    }
    return {ok, d.str()};
}

Outcome c6_transverse() {
    const auto p = linear_c();
    std::vector<double> xs;
    for (int k = 0; k < 10; ++k) xs.push_back(-p.l1 + (p.l1 + p.l2) * (k + 0.5) / 10.0);
    const auto rows = transverse_integral_check(p, 0.1, xs, 4001, 1e-8);
    bool ok = true;
    double worst = 0.0, ungated = 0.0;
    for (const auto& r : rows) {
        if (r.gated) {
            ok = ok && r.pass;
            worst = std::max(worst, r.rel());
        } else {
            ungated = std::max(ungated, r.rel());
        }
    }
    return {ok, "gated max rel " + num(worst) + " (tol 1e-8); g''^2 residual " + num(ungated) + " (reported)"};
}

Outcome c7_blocks() {
    const auto p = DomainProfile::rectangle(1.0, 1.0, 1.0);
    const double eps = 0.1;
    const Mesh2D mesh = MeshRule{}.mesh(p, eps);
    auto forms = assemble_mapped_form(p, eps, mesh);
    auto basis = std::make_shared<const AdiabaticBasis>(mesh, p, eps, forms.B);
    BlockOperators bl(std::move(forms.K), std::move(forms.B), basis);
    const int J = 3;
    const auto a11 = verify_a11_formula(bl, p, eps, J);
    double worst_closed = 0.0, worst_model = 0.0;
    for (int k = 1; k <= J; ++k) {
        const double exact = pi * pi * k * k / 4.0 + pi * pi / (eps * eps);
        worst_closed = std::max(worst_closed, std::abs(a11.ritz[std::size_t(k - 1)] - exact) / exact);
        worst_model = std::max(worst_model, a11.rel_diff[std::size_t(k - 1)]);
    }
    const auto gap = a22_gap_check(bl, eps, p.M);
    std::mt19937 rng(7);
    std::normal_distribution<double> nd;
    double reasm = 0.0, adj = 0.0;
    for (int t = 0; t < 3; ++t) {
        Eigen::VectorXd v(mesh.unknowns()), w(mesh.unknowns());
        for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = nd(rng);
        for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = nd(rng);
        const Eigen::VectorXd Kv = bl.K() * v;
        const Eigen::VectorXd sum = bl.dual(1, 1, v) + bl.dual(1, 2, v) + bl.dual(2, 1, v) + bl.dual(2, 2, v);
        reasm = std::max(reasm, (sum - Kv).norm() / Kv.norm());
        const double scale = std::abs(v.dot(bl.K() * w)) + Kv.norm() * w.norm();
        adj = std::max(adj, std::abs(v.dot(bl.dual(1, 2, w)) - w.dot(bl.dual(2, 1, v))) / scale);
    }
    const bool ok = worst_closed <= 5e-3 && worst_model <= 5e-3 && gap.pass && reasm <= 1e-9 && adj <= 1e-10;
    return {ok, "A11 vs closed " + num(worst_closed) + ", vs 1D operator " + num(worst_model) + "; A22 min/floor " +
                    num(gap.min_ritz / gap.floor) + " (>= 0.9); reassembly " + num(reasm) + "; adjoint " + num(adj)};
}

Outcome c8_contraction() {
    const auto p = linear_c();
    const MeshRule rule;
    bool ok = true;
    std::ostringstream d;
    for (double eps : {0.1, 0.05}) {
        const Mesh2D mesh = rule.mesh(p, eps);
        ReductionOptions o;
        const auto fine = reduce_at(p, eps, mesh, o);
        const auto coarse = reduce_at(p, eps, mesh.coarsened(), o);
        const auto& m = fine.modes.front();
        const double tilde = m.fp_oracle.iterates.back();
        const double diff = m.tilde_direct();
        // error of Lambda_0 - lambda_0 from one mesh level, h^2 behaviour
        const double est = std::abs(diff - coarse.modes.front().tilde_direct()) / 3.0;
        const bool okk = m.fp_oracle.converged && m.fp_oracle.ratio < 0.5 && std::abs(tilde - diff) <= 3.0 * est;
        ok = ok && okk;
        d << "eps=" << eps << " ratio " << num(m.fp_oracle.ratio) << " |tilde - (Lambda-lambda)| " << num(std::abs(tilde - diff))
          << " <= 3*" << num(est) << "; ";
    }
    const auto rect = DomainProfile::rectangle(1.0, 1.0, 1.0);
    const auto r = reduce_at(rect, 0.1, rule.mesh(rect, 0.1), ReductionOptions{});
    const double t = std::abs(r.modes.front().fp_oracle.iterates.back());
    const bool rect_ok = t <= 1e-10 * r.modes.front().Lambda;
    d << "rectangle |tilde| " << num(t);
    return {ok && rect_ok, d.str()};
}

Outcome c9_scaling() {
    const auto& rep = linear_sweep();
    std::vector<double> eps, q, scaled;
    for (const auto& c : rep.cells) {
        eps.push_back(c.epsilon);
        q.push_back(c.modes.front().scaling_quantity);
        const auto* r = rep.find(c.epsilon, 0, 0);
        scaled.push_back(std::abs(std::pow(c.epsilon, 2.0 * rep.alpha1) * r->lambda_tilde_oracle));
    }
    const auto probe = a21_scaling_probe(eps, q);
    const bool slope_ok = !probe.degenerate && probe.slope >= -1.5 && probe.slope <= -0.5;
    const std::size_t n = scaled.size();
    const bool mono = n >= 3 && scaled[n - 2] < scaled[n - 3] && scaled[n - 1] < scaled[n - 2];
    return {slope_ok && mono, "probe slope " + num(probe.slope) + " (accepted [-1.5, -0.5]), quantity " + num(q.front()) + " .. " +
                                  num(q.back()) + "; |eps^{2a1} tilde| last three " + num(scaled[n - 3]) + ", " +
                                  num(scaled[n - 2]) + ", " + num(scaled[n - 1]) + (mono ? " decreasing" : " NOT decreasing")};
}

Outcome c10_overlap() {
    const auto& rep = linear_sweep();
    bool ok = true;
    double worst = 1.0;
    for (const auto& c : rep.cells) {
        if (c.epsilon > 0.2) continue;
        const double r = c.modes.front().overlap_ratio;
        worst = std::min(worst, r);
        ok = ok && r >= 0.5;
    }
    return {ok, "min |<u1,phi>|/(|u1||phi|) over eps <= 0.2: " + num(worst)};
}

} // namespace

int main() {
    struct Criterion {
        int id;
        const char* name;
        std::function<Outcome()> run;
        double limit_s;  // runtime bound, 0 when none
    };
    const std::vector<Criterion> all{
        {1, "oscillator exactness", c1_oscillator, 10.0},
        {2, "perturbation oracle equivalence", c2_oracle_equivalence, 30.0},
        {3, "closed-form consistency", c3_closed_forms, 0.0},
        {4, "two-term law", c4_two_term_law, 600.0},
        {5, "higher-order residual exponents", c5_residual_exponents, 0.0},
        {6, "transverse integral identities", c6_transverse, 5.0},
        {7, "block verification", c7_blocks, 0.0},
        {8, "contraction scheme", c8_contraction, 0.0},
        {9, "scaling probes", c9_scaling, 0.0},
        {10, "overlap floor", c10_overlap, 0.0},
    };
    int failed = 0;
    for (const auto& c : all) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (c.limit_s > 0.0 && s > c.limit_s) {
            o.pass = false;
            o.detail += " runtime over " + num(c.limit_s) + " s";
        }
        if (!o.pass) ++failed;
        std::printf("[%s] C%d %s: %s (%.2f s)\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), s);
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria passed\n", int(all.size()) - failed, all.size());
    return failed == 0 ? 0 : 1;
}
