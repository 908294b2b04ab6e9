// Command-line front end: oscillator, expand, direct2d, reduce, verify, sweep.
//
// Exit status: 0 all gated checks pass, 1 computational failure or failed gate, 2 configuration error.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "thinspec/harness.hpp"

using namespace thinspec;

namespace {

struct Globals {
    std::string config_path;
    std::string out_dir;
    std::string format = "csv";
    long long seed = -1;
};

std::string scalar(const json& v) {
    if (v.is_number_float()) return fmt17(v.get<double>());
    if (v.is_null()) return "nan";
    if (v.is_string()) {
        std::string s = v.get<std::string>();
        std::replace(s.begin(), s.end(), ',', ';');
        return s;
    }
    return v.dump();
}

// Flat text rendering: scalars as key,value; arrays of objects as CSV tables.
void render_csv(std::ostream& os, const json& j, const std::string& prefix = "") {
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
        const json& v = it.value();
        if (v.is_object()) {
            render_csv(os, v, key);
        } else if (v.is_array() && !v.empty() && v.front().is_object()) {
            os << "# " << key << "\n";
            std::vector<std::string> cols;
            for (auto c = v.front().begin(); c != v.front().end(); ++c) cols.push_back(c.key());
            for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
            os << "\n";
            for (const auto& row : v) {
                for (std::size_t i = 0; i < cols.size(); ++i) {
                    const json& cell = row.contains(cols[i]) ? row.at(cols[i]) : json();
                    if (cell.is_array()) {
                        std::string s;
                        for (const auto& e : cell) s += (s.empty() ? "" : " ") + scalar(e);
                        os << (i ? "," : "") << s;
                    } else {
                        os << (i ? "," : "") << scalar(cell);
                    }
                }
                os << "\n";
            }
        } else if (v.is_array()) {
            os << key;
            for (const auto& e : v) os << "," << scalar(e);
            os << "\n";
        } else {
            os << key << "," << scalar(v) << "\n";
        }
    }
}

void emit(const Globals& g, const ExperimentConfig& cfg, const std::string& command, const json& result) {
    const ReportFormat f = parse_format(g.format);
    std::ostringstream os;
    if (f == ReportFormat::Json)
        os << result.dump(2) << "\n";
    else
        render_csv(os, result);
    if (g.out_dir.empty()) {
        std::cout << os.str();
        return;
    }
    std::error_code ec;
    std::filesystem::create_directories(g.out_dir, ec);
    if (ec) throw ConfigError("cannot create output directory " + g.out_dir + ": " + ec.message());
    const auto path = std::filesystem::path(g.out_dir) / (cfg.output.stem + "_" + command + (f == ReportFormat::Json ? ".json" : ".csv"));
    std::ofstream out(path);
    if (!out || !(out << os.str())) throw ConfigError("cannot write " + path.string());
    std::cout << "wrote " << path.string() << "\n";
}

ExperimentConfig load(const Globals& g) {
    ExperimentConfig cfg = g.config_path.empty() ? ExperimentConfig{} : load_config(g.config_path);
    if (g.seed >= 0) cfg.seed = unsigned(g.seed);
    cfg.validate();
    return cfg;
}

double pick_eps(const ExperimentConfig& cfg, double eps) {
    if (eps <= 0.0) return cfg.verify_epsilon;
    if (!(eps < 1.0)) throw ConfigError("--eps must lie in (0, 1)");
    return eps;
}

int cmd_oscillator(const ExperimentConfig& cfg, json& out) {
    const DomainProfile& p = cfg.profile;
    OscillatorOptions oo = cfg.oscillator_options();
    if (p.flat) {
        const double eps = cfg.verify_epsilon;
        const auto om = oscillator_model(p, cfg.order, oo, eps);
        out["box"] = {om.box.first, om.box.second};
        out["mu"] = std::vector<double>(om.spectrum.eigenvalues.begin(), om.spectrum.eigenvalues.begin() + cfg.modes);
        out["note"] = "flat profile: free box at verify_epsilon, no decay certificate";
        return 0;
    }
    const auto om = oscillator_model(p, cfg.order, oo);
    const int n2 = cfg.mesh.grid_points_1d, n1 = (n2 - 1) / 2 + 1;
    const auto rr = richardson_refine(om.family.H0, om.box, cfg.modes, n1, n2);
    SpectralResult1D low = solve_schrodinger_1d(om.family.H0, om.box, n2, cfg.modes);
    const auto cert = decay_certificate(low, om.family.H0);
    out["box"] = {-om.box.first, om.box.second};
    out["decay_rate"] = decay_rate(om.family.H0);
    json modes = json::array();
    for (int j = 0; j < cfg.modes; ++j)
        modes.push_back({{"j", j},
                         {"mu", rr.values[std::size_t(j)]},
                         {"mu_error", rr.errors[std::size_t(j)]},
                         {"mu_fine", rr.fine[std::size_t(j)]},
                         {"decay_D", cert.required_D[std::size_t(j)]},
                         {"peak", cert.peak[std::size_t(j)]},
                         {"decay_pass", bool(cert.pass[std::size_t(j)])}});
    out["modes"] = modes;
    return cert.all_pass() ? 0 : 1;
}

int cmd_expand(const ExperimentConfig& cfg, json& out) {
    const DomainProfile& p = cfg.profile;
    const int N = std::max(cfg.order, 2);
    const auto om = p.flat ? oscillator_model(p, N, cfg.oscillator_options(), cfg.verify_epsilon)
                           : oscillator_model(p, N, cfg.oscillator_options());
    const auto& mu = om.spectrum.eigenvalues;
    int status = 0;
    json modes = json::array();
    for (int j = 0; j < cfg.modes; ++j) {
        const auto& e = om.expansions[std::size_t(j)];
        const auto [q1c, q2c] = closed_form_q1_q2(om.table, mu, j);
        const auto fit = brute_force_branch_fit(om.problem, j, default_fit_ladder(om.problem, j), N);
        const auto sc = sign_convention_report(om.table, mu, j, e, fit);
        // q1 = -(sign) a_{1jj}
        const double a1jj = om.table(1, j, j);
        const double check = -double(sc.matched_sign) * a1jj;
        const bool agree = sc.matched_sign != 0 && std::abs(check - e.q[0]) <= 1e-10 * std::max(1.0, std::abs(e.q[0]));
        if (!agree) status = 1;
        modes.push_back({{"j", j},
                         {"mu", e.mu_j},
                         {"q", e.q},
                         {"q1_closed", q1c},
                         {"q2_closed", q2c},
                         {"q_fit", fit.q},
                         {"sign", sc.matched_sign},
                         {"a1jj", a1jj},
                         {"q1_check", check},
                         {"q1_agrees", agree}});
    }
    out["exponent_step"] = om.family.exponent_step;
    out["modes"] = modes;
    return status;
}

int cmd_direct2d(const ExperimentConfig& cfg, double eps, json& out) {
    const Mesh2D mesh = cfg.mesh_rule().mesh(cfg.profile, eps);
    const auto d = direct_solve_2d(cfg.profile, eps, mesh, cfg.modes, cfg.tolerances.eigen, cfg.seed);
    out["epsilon"] = eps;
    out["nx"] = mesh.nx;
    out["nt"] = mesh.nt;
    json modes = json::array();
    for (int j = 0; j < cfg.modes; ++j)
        modes.push_back({{"j", j},
                         {"coarse", d.coarse.eigenvalues[std::size_t(j)]},
                         {"fine", d.fine.eigenvalues[std::size_t(j)]},
                         {"extrapolated", d.extrapolated[std::size_t(j)]},
                         {"error", d.error[std::size_t(j)]},
                         {"residual_coarse", d.coarse.residuals[std::size_t(j)]}});
    out["modes"] = modes;
    return 0;
}

int cmd_reduce(const ExperimentConfig& cfg, double eps, json& out) {
    const Mesh2D mesh = cfg.mesh_rule().mesh(cfg.profile, eps);
    const auto r = reduce_at(cfg.profile, eps, mesh, cfg.reduction_options(cfg.seed));
    out["epsilon"] = eps;
    out["nx"] = mesh.nx;
    out["nt"] = mesh.nt;
    out["gap"] = {{"min_ritz", r.gap.min_ritz}, {"floor", r.gap.floor}, {"margin", r.gap.margin}, {"pass", r.gap.pass}};
    out["resolvent_norm"] = r.resolvent_norm;
    json modes = json::array();
    for (const auto& m : r.modes)
        modes.push_back({{"j", m.j},
                         {"Lambda", m.Lambda},
                         {"lambda", m.lambda},
                         {"tilde_direct", m.tilde_direct()},
                         {"tilde_oracle", m.fp_oracle.iterates.back()},
                         {"tilde_approx", m.fp_approx.iterates.back()},
                         {"ratio_oracle", m.fp_oracle.ratio},
                         {"converged_oracle", m.fp_oracle.converged},
                         {"overlap_ratio", m.overlap_ratio},
                         {"pairing_ok", m.pairing_ok},
                         {"a21_u1", m.a21_u1},
                         {"a21_phi", m.a21_phi},
                         {"residual_p", m.residual_p},
                         {"residual_q", m.residual_q},
                         {"corr_a_oracle", m.oracle.corr_a},
                         {"corr_a_approx", m.approx.corr_a}});
    out["modes"] = modes;
    bool ok = r.gap.pass;
    for (const auto& m : r.modes) ok = ok && m.fp_oracle.converged && m.fp_approx.converged;
    return ok ? 0 : 1;
}

int cmd_verify(const ExperimentConfig& cfg, json& out) {
    const auto rep = run_verify(cfg);
    json rows = json::array();
    for (const auto& c : rep.checks)
        rows.push_back({{"check", c.name},
                        {"value", c.value},
                        {"threshold", c.threshold},
                        {"gated", c.gated},
                        {"result", c.gated ? (c.pass ? "PASS" : "FAIL") : "REPORT"},
                        {"note", c.note}});
    out["epsilon"] = cfg.verify_epsilon;
    out["checks"] = rows;
    out["all_pass"] = rep.all_pass();
    return rep.all_pass() ? 0 : 1;
}

int cmd_sweep(const Globals& g, const ExperimentConfig& cfg) {
    const ReportFormat f = parse_format(g.format);
    const auto rep = run_sweep(cfg);
    const std::string dir = g.out_dir.empty() ? cfg.output.dir : g.out_dir;
    for (const auto& path : emit_report(rep, dir, cfg.output.stem, f)) std::cout << "wrote " << path << "\n";
    std::cout << "j,K,expected,slope,points\n";
    for (const auto& s : rep.slopes)
        std::cout << s.j << ',' << s.K << ',' << fmt17(s.expected) << ',' << fmt17(s.slope) << ',' << s.points.size() << "\n";
    for (const auto& c : rep.cells)
        if (c.status != "ok") std::cout << "cell eps=" << fmt17(c.epsilon) << " " << c.status << ": " << c.message << "\n";
    return rep.failed_cells() == 0 ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Thin-domain Dirichlet eigenvalue toolkit"};
    app.fallthrough();
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config_path, "JSON experiment config (default: harmonic calibration)");
    app.add_option("--out", g.out_dir, "output directory");
    app.add_option("--format", g.format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
    app.add_option("--seed", g.seed, "seed for randomized checks")->check(CLI::NonNegativeNumber);

    double eps = 0.0;
    auto* osc = app.add_subcommand("oscillator", "1D oscillator spectrum and decay certificate");
    auto* exp = app.add_subcommand("expand", "q_n table with closed-form cross-check");
    auto* d2 = app.add_subcommand("direct2d", "lowest 2D eigenvalues at one eps");
    d2->add_option("--eps", eps, "epsilon (default: verify_epsilon)");
    auto* red = app.add_subcommand("reduce", "block reduction, gap check, correction series, fixed point");
    red->add_option("--eps", eps, "epsilon (default: verify_epsilon)");
    auto* ver = app.add_subcommand("verify", "gated identity and formula checks");
    auto* swp = app.add_subcommand("sweep", "full pipeline over the eps ladder");

    if (argc <= 1) {
        std::cerr << app.help();
        return 2;
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        std::cerr << app.help();
        return 2;
    }

    try {
        const ExperimentConfig cfg = load(g);
        parse_format(g.format);
        json out;
        int status = 0;
        std::string name;
        if (osc->parsed()) {
            name = "oscillator";
            status = cmd_oscillator(cfg, out);
        } else if (exp->parsed()) {
            name = "expand";
            status = cmd_expand(cfg, out);
        } else if (d2->parsed()) {
            name = "direct2d";
            status = cmd_direct2d(cfg, pick_eps(cfg, eps), out);
        } else if (red->parsed()) {
            name = "reduce";
            status = cmd_reduce(cfg, pick_eps(cfg, eps), out);
        } else if (ver->parsed()) {
            name = "verify";
            status = cmd_verify(cfg, out);
        } else if (swp->parsed()) {
            return cmd_sweep(g, cfg);
        }
        emit(g, cfg, name, out);
        return status;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error (" << e.kind() << "): " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
