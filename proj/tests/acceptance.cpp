// Acceptance suite: one PASS/FAIL line per criterion.
//   acceptance                 run every criterion
//   acceptance --criterion N   run criterion N only

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <boost/random/normal_distribution.hpp>

#include "CLI11.hpp"

#include "qtrack/classical.hpp"
#include "qtrack/error.hpp"
#include "qtrack/experiments.hpp"
#include "qtrack/fock.hpp"
#include "qtrack/phase_space.hpp"
#include "qtrack/sme.hpp"

using namespace qtrack;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / v.size();
}

// Sample variance (n - 1).
double var_of(const std::vector<double>& v) {
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return v.size() < 2 ? 0.0 : s / (v.size() - 1);
}

Outcome operator_algebra() {
    double worst = 0.0, corner = 0.0;
    bool corner_ok = true;
    for (int dim : {60, 120}) {
        const auto q = build_quadratures(dim);
        const ComplexMatrix c = (q.x * q.p - q.p * q.x).entries();
        for (int m = 0; m < dim - 1; ++m) {
            for (int n = 0; n < dim - 1; ++n) {
                const Complex want = m == n ? Complex(0, 1) : Complex(0, 0);
                worst = std::max(worst, std::abs(c(m, n) - want));
            }
        }
        corner = (c(dim - 1, dim - 1) / Complex(0, 1)).real();
        corner_ok = corner_ok && std::abs(corner - (1.0 - dim)) < 1e-10;
    }
    double spectrum = 0.0;
    for (int dim : {60, 120}) {
        const auto l = build_ladder_ops(dim);
        const ComplexMatrix n = (l.raising * l.lowering).entries();
        for (int i = 0; i < dim; ++i) {
            for (int j = 0; j < dim; ++j) {
                spectrum = std::max(spectrum, std::abs(n(i, j) - (i == j ? double(i) : 0.0)));
            }
        }
    }
    // sqrt(n)^2 lands within an ulp of n
    const double spectrum_tol = 4.0 * std::numeric_limits<double>::epsilon() * 120;
    return {worst <= 1e-12 && spectrum <= spectrum_tol && corner_ok,
            fmt("max |[x,p] - i| interior = %.2e (tol 1e-12); max |a^dag a - diag(0..d-1)| = "
                "%.2e (tol %.1e); corner at dim 120 = %.1f",
                worst, spectrum, spectrum_tol, corner)};
}

Outcome thermalization() {
    ModelParams m;
    m.k = 0.0;
    m.alpha = 0.0;
    m.gamma = 0.0;
    m.damping = 0.125;
    m.kbt = 2.0;
    m.dim = 60;
    const double t_end = 10.0 / m.damping;
    const auto steps = static_cast<std::size_t>(std::llround(t_end / m.dt));
    const auto l = build_ladder_ops(m.dim);
    const OperatorMatrix number = l.raising * l.lowering;

    RouchonIntegrator integ(m);
    auto rho = DensityMatrix::fock(0, m.dim);
    for (std::size_t i = 0; i < steps; ++i) rho = integ.step(rho, 0.0, StepMode::Estimate);
    const double n = expectation(number, rho).real();
    const double target = thermal_occupancy(m.kbt);
    const double rel = std::abs(n - target) / target;
    return {rel <= 0.01, fmt("<a^dag a>(t=%.0f) = %.5f vs n_bar = %.5f, rel. dev. %.3f%% (tol 1%%)",
                             t_end, n, target, 100.0 * rel)};
}

Outcome positivity() {
    const std::vector<double> kbts{0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0};
    const std::vector<double> gammas{0.0, 0.01, 0.05, 0.1};
    const std::size_t steps = 16000;

    std::size_t checked = 0, bad = 0, aborted = 0;
    double worst_trace = 0.0;
    ExperimentConfig cfg;
    cfg.sweep.kbt = kbts;
    cfg.sweep.gamma = gammas;
    for (const auto& pt : cfg.sweep_points()) {
        IntegrationOptions opt;
        opt.snapshot_every = 1;
        opt.observer = [&](std::size_t step, const DensityMatrix& r) {
            if (step == 0) return;
            ++checked;
            const double tr = std::abs(r.entries().trace().real() - 1.0);
            worst_trace = std::max(worst_trace, tr);
            if (tr > 1e-10 || !is_positive_semidefinite(r.entries(), 1e-8)) ++bad;
        };
        try {
            const auto initial = thermal_state(thermal_occupancy(pt.params.kbt), pt.params.dim);
            const auto truth = simulate_truth(pt.params, initial, steps, derive_seed(pt.seed, 0), opt);
            estimate_conditional(truth.record, pt.params, std::nullopt, opt);
        } catch (const Error&) {
            ++aborted;
        }
    }
    return {bad == 0 && aborted == 0 && checked >= 1000000,
            fmt("%zu violations, %zu aborted runs over %zu checked steps (need >= 1e6, 32 grid "
                "points, truth + conditional); max |Tr - 1| = %.1e",
                bad, aborted, checked, worst_trace)};
}

Outcome self_consistency() {
    ModelParams m;
    m.eta = 1.0;
    m.k = 0.05;
    m.kbt = 0.25;
    m.gamma = 0.0;
    m.dim = auto_dimension(m.kbt);
    const std::size_t steps = 200000, transient = 20000;
    const auto truth =
        simulate_truth(m, thermal_state(thermal_occupancy(m.kbt), m.dim), steps, 4242);
    const auto est = estimate_conditional(truth.record, m);
    double dx = 0.0, pur = 0.0;
    for (std::size_t i = transient; i < truth.log.size(); ++i) {
        dx += std::abs(truth.log.mean_x[i] - est.mean_x[i]);
        pur += est.purity[i];
    }
    const double n = static_cast<double>(truth.log.size() - transient);
    dx /= n;
    pur /= n;
    return {dx <= 0.1 && pur >= 0.5,
            fmt("time-averaged |<x>_truth - <x>_cond| = %.4f (tol 0.1), mean conditional purity = "
                "%.3f (need >= 0.5), 200 cycles after a 20-cycle transient",
                dx, pur)};
}

// Discrete Kalman filter of the Euler-discretized linear model that
// generated the record.
struct Kalman {
    Eigen::Vector2d mean;
    Eigen::Matrix2d cov;
};

Outcome filter_oracle() {
    ModelParams m;
    m.gamma = 0.0;
    m.alpha = 0.0;
    const std::size_t steps = 100000, transient = 20000, particles = 1000;
    const auto prior = GaussianPrior::stationary(m);
    const auto sim = simulate_classical(m, ClassicalState{1.0, -0.5}, steps, 555);
    const auto pf = run_particle_filter(sim.record, m, particles, prior, 556);

    const double dt = m.dt, g = std::sqrt(8.0 * m.k * m.eta);
    Eigen::Matrix2d f;
    f << 1.0, dt, -dt, 1.0 - m.damping * dt;
    Eigen::Matrix2d q = Eigen::Matrix2d::Zero();
    q(1, 1) = (2.0 * m.k + 2.0 * m.damping * m.kbt) * dt;
    const Eigen::RowVector2d h(g * dt, 0.0);

    Kalman kf{Eigen::Vector2d(prior.mean_x, prior.mean_p), Eigen::Matrix2d::Zero()};
    kf.cov(0, 0) = prior.var_x;
    kf.cov(1, 1) = prior.var_p;
    std::size_t inside = 0, total = 0;
    for (std::size_t i = 0; i < steps; ++i) {
        // dy_i measures the state at the start of step i
        const double s = (h * kf.cov * h.transpose())(0, 0) + dt;
        const Eigen::Vector2d gain = kf.cov * h.transpose() / s;
        kf.mean += gain * (sim.record.increments[i] - (h * kf.mean)(0, 0));
        kf.cov -= gain * h * kf.cov;
        kf.mean = f * kf.mean;
        kf.cov = f * kf.cov * f.transpose() + q;
        if (i + 1 < transient) continue;
        ++total;
        const double sx = std::sqrt(kf.cov(0, 0)), sp = std::sqrt(kf.cov(1, 1));
        if (std::abs(pf.log.mean_x[i + 1] - kf.mean(0)) <= 3.0 * sx &&
            std::abs(pf.log.mean_p[i + 1] - kf.mean(1)) <= 3.0 * sp) {
            ++inside;
        }
    }
    const double frac = static_cast<double>(inside) / total;
    return {frac >= 0.99,
            fmt("particle-filter mean within 3 Kalman std at %.2f%% of %zu post-transient steps "
                "(need >= 99%%), N = %zu, 100 cycles",
                100.0 * frac, total, particles)};
}

Outcome classical_stationary() {
    ModelParams m;
    m.gamma = 0.0;
    m.alpha = 0.0;
    const std::size_t paths = 2000, per_unit = 1000, units = 120, skip = 20;
    const auto prior = GaussianPrior::stationary(m);
    Rng rng(derive_seed(66, 0));
    boost::random::normal_distribution<double> dw(0.0, std::sqrt(m.dt));
    boost::random::normal_distribution<double> init(0.0, 1.0);
    std::vector<ClassicalState> s(paths);
    for (auto& c : s) c = {std::sqrt(prior.var_x) * init(rng), std::sqrt(prior.var_p) * init(rng)};

    std::vector<double> samples;
    for (std::size_t u = 0; u < units; ++u) {
        for (std::size_t i = 0; i < per_unit; ++i) {
            for (auto& c : s) {
                const double dy = dw(rng);
                const double du = dw(rng);
                c = sde_step(c, m, SdeNoise{dy, du}, m.dt);
            }
        }
        if (u + 1 <= skip) continue;
        std::vector<double> p(paths);
        for (std::size_t k = 0; k < paths; ++k) p[k] = s[k].p;
        samples.push_back(var_of(p));
    }
    const double v = mean_of(samples);
    const double target = m.kbt + m.k / m.damping;
    const double rel = std::abs(v - target) / target;
    return {rel <= 0.05,
            fmt("time-averaged Var(p) = %.4f vs kBT + k/Gamma = %.4f, rel. dev. %.2f%% (tol 5%%); "
                "%zu paths x %zu time units",
                v, target, 100.0 * rel, paths, units - skip)};
}

Outcome wigner_values() {
    const PhaseSpaceGrid grid;
    const int c = 100;
    constexpr double pi = std::numbers::pi;
    const double n_bar = thermal_occupancy(2.0);
    const auto w0 = wigner(DensityMatrix::fock(0, 60), grid);
    const auto wt = wigner(thermal_state(n_bar, 120), grid);
    const auto w1 = wigner(DensityMatrix::fock(1, 60), grid);
    const double e0 = std::abs(w0(c, c) - 1.0 / pi);
    const double et = std::abs(wt(c, c) - 1.0 / (pi * (2.0 * n_bar + 1.0)));
    const double e1 = std::abs(w1(c, c) + 1.0 / pi);
    const double norm = std::max({std::abs(w0.normalization_residual()),
                                  std::abs(wt.normalization_residual()),
                                  std::abs(w1.normalization_residual())});
    return {e0 <= 1e-3 && et <= 1e-3 && e1 <= 1e-3 && norm <= 1e-2,
            fmt("W(0,0) errors: ground %.1e, thermal %.1e, Fock-1 %.1e (tol 1e-3); worst "
                "|mass - 1| = %.1e (tol 1e-2); 201x201 grid on [-6,6]^2",
                e0, et, e1, norm)};
}

PhaseSpaceField gaussian(const PhaseSpaceGrid& g, double mx) {
    Eigen::MatrixXd v(g.nx, g.np);
    for (int i = 0; i < g.nx; ++i) {
        for (int j = 0; j < g.np; ++j) {
            const double dx = g.x(i) - mx, dp = g.p(j);
            v(i, j) = std::exp(-0.5 * (dx * dx + dp * dp));
        }
    }
    return renormalized(PhaseSpaceField(g, FieldMode::Pdf, v));
}

Outcome kl_oracle() {
    const PhaseSpaceGrid grid{-8.0, 8.0, -8.0, 8.0, 321, 321};
    const double delta = 0.5;
    const auto p1 = gaussian(grid, delta);
    const auto p2 = gaussian(grid, 0.0);
    const double kl = kl_divergence(p1, p2);
    const double self = kl_divergence(p1, p1);
    const double err = std::abs(kl - delta * delta / 2.0);
    return {err <= 0.01 && self == 0.0,
            fmt("KL(N(0.5,1) || N(0,1)) = %.5f vs 0.125 (tol 0.01); KL(P||P) = %g (need exactly 0)",
                kl, self)};
}

struct SpreadCheck {
    bool pass = true;
    std::string text;
};

// For one metric at one temperature: std of the per-gamma means against the
// pooled within-gamma (seed-to-seed) std.
SpreadCheck spread(const std::map<double, std::vector<double>>& by_gamma, const char* name,
                   double kbt) {
    std::vector<double> means;
    double pooled = 0.0;
    std::size_t dof = 0;
    for (const auto& [gamma, v] : by_gamma) {
        means.push_back(mean_of(v));
        pooled += var_of(v) * (v.size() - 1);
        dof += v.size() - 1;
    }
    const double between = std::sqrt(var_of(means));
    const double within = std::sqrt(pooled / dof);
    const bool ok = between < 2.0 * within;
    return {ok, fmt("%s@kBT=%.2g %.3g/%.3g%s", name, kbt, between, within, ok ? "" : "!")};
}

Outcome nonlinearity_independence() {
    const std::vector<double> kbts{0.5, 2.0};
    const std::vector<double> gammas{0.0, 0.01, 0.05, 0.1};
    const int seeds = 5;
    // [kbt][gamma] -> per-seed values
    std::map<double, std::map<double, std::vector<double>>> sx, sp, kl;
    std::size_t failures = 0;
    for (int s = 0; s < seeds; ++s) {
        ExperimentConfig cfg;
        cfg.cycles = 40;
        cfg.transient_cycles = 20;
        cfg.snapshot_every = 1000;
        cfg.seed = 9000 + s;
        cfg.sweep.kbt = kbts;
        cfg.sweep.gamma = gammas;
        const auto res = run_kl_sweep(cfg, RunOptions{true, false});
        for (const auto& p : res.points) {
            if (p.failure) ++failures;
            sx[p.kbt][p.gamma].push_back(p.filter_vs_conditional.sigma_x);
            sp[p.kbt][p.gamma].push_back(p.filter_vs_conditional.sigma_p);
            kl[p.kbt][p.gamma].push_back(p.kl_mean);
        }
    }
    bool ok = failures == 0;
    std::string text = "between-gamma std / pooled seed std:";
    for (double t : kbts) {
        for (auto [table, name] : {std::pair{&sx, "sigma_x"}, {&sp, "sigma_p"}, {&kl, "KL"}}) {
            const auto c = spread((*table)[t], name, t);
            ok = ok && c.pass;
            text += " " + c.text;
        }
    }
    const auto avg = [&](auto& table, double t) {
        std::vector<double> all;
        for (const auto& [g, v] : table[t]) all.insert(all.end(), v.begin(), v.end());
        return mean_of(all);
    };
    const double x_lo = avg(sx, 0.5), x_hi = avg(sx, 2.0);
    const double p_lo = avg(sp, 0.5), p_hi = avg(sp, 2.0);
    const bool trend = x_hi >= x_lo && p_hi >= p_lo;
    ok = ok && trend;
    text += fmt("; mean sigma_x %.3f -> %.3f, sigma_p %.3f -> %.3f (kBT 0.5 -> 2.0, need "
                "non-decreasing); %zu failed points; 5 seeds, 20 cycles after a 20-cycle transient",
                x_lo, x_hi, p_lo, p_hi, failures);
    return {ok, text};
}

Outcome efficiency_trend() {
    const std::vector<double> kbts{0.5, 1.25, 2.0};
    const std::vector<double> etas{1.0, 0.5, 0.25};
    const int seeds = 3;
    std::map<std::pair<double, double>, std::vector<double>> kl;
    std::size_t failures = 0;
    for (int s = 0; s < seeds; ++s) {
        ExperimentConfig cfg;
        cfg.model.gamma = 0.1;
        cfg.cycles = 40;
        cfg.transient_cycles = 20;
        cfg.snapshot_every = 1000;
        cfg.seed = 7000 + s;
        cfg.sweep.kbt = kbts;
        cfg.sweep.eta = etas;
        const auto res = run_kl_sweep(cfg, RunOptions{true, false});
        for (const auto& p : res.points) {
            if (p.failure) ++failures;
            kl[{p.kbt, p.eta}].push_back(p.kl_mean);
        }
    }
    bool ok = failures == 0;
    std::string text = "relative KL change vs eta = 1:";
    for (double t : kbts) {
        const double base = mean_of(kl[{t, 1.0}]);
        for (double e : {0.5, 0.25}) {
            const double rel = (mean_of(kl[{t, e}]) - base) / base;
            const bool exempt = t > 1.25 && e < 0.5;
            // at eta = 0.5 and kBT <= 1.25 the change must be small either way;
            // elsewhere only a marked increase is ruled out
            bool pass = exempt || (e == 0.5 && t <= 1.25 ? std::abs(rel) < 0.5 : rel < 0.5);
            ok = ok && pass;
            text += fmt(" kBT=%.3g,eta=%.3g: %+.1f%%%s", t, e, 100.0 * rel,
                        exempt ? " (exempt)" : (pass ? "" : " !"));
        }
    }
    text += fmt("; %zu failed points; gamma = 0.1, 3 seeds, 20 cycles after a 20-cycle transient", failures);
    return {ok, text};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

Outcome determinism() {
    ExperimentConfig cfg;
    cfg.model.kbt = 0.5;
    cfg.cycles = 3;
    cfg.transient_cycles = 1;
    cfg.snapshot_every = 500;
    cfg.write_fields = true;
    cfg.sweep.gamma = std::vector<double>{0.0, 0.1};
    const fs::path base = fs::temp_directory_path() / "qtrack_acceptance_determinism";
    fs::remove_all(base);
    cfg.output_dir = (base / "a").string();
    run_kl_sweep(cfg);
    cfg.output_dir = (base / "b").string();
    run_kl_sweep(cfg);

    std::size_t same = 0, differ = 0, missing = 0;
    for (const auto& e : fs::recursive_directory_iterator(base / "a")) {
        if (!e.is_regular_file()) continue;
        const auto rel = fs::relative(e.path(), base / "a");
        if (rel == "manifest.json") continue;  // holds wall-clock timings
        if (!fs::exists(base / "b" / rel)) {
            ++missing;
        } else if (slurp(e.path()) == slurp(base / "b" / rel)) {
            ++same;
        } else {
            ++differ;
        }
    }
    fs::remove_all(base);
    return {differ == 0 && missing == 0 && same > 0,
            fmt("%zu output files byte-identical, %zu differ, %zu missing across two runs "
                "(manifest.json excluded: it records wall-clock timings)",
                same, differ, missing)};
}

struct Criterion {
    const char* name;
    std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    int only = 0;
    app.add_option("--criterion", only, "Run a single criterion (1-11)")->check(CLI::Range(1, 11));
    CLI11_PARSE(app, argc, argv);

    const std::vector<Criterion> all{
        {"operator algebra", operator_algebra},
        {"thermalization", thermalization},
        {"positivity and trace", positivity},
        {"self-consistent estimation", self_consistency},
        {"linear-regime filter oracle", filter_oracle},
        {"classical stationary statistics", classical_stationary},
        {"Wigner correctness", wigner_values},
        {"KL oracle", kl_oracle},
        {"independence of nonlinearity", nonlinearity_independence},
        {"efficiency trend", efficiency_trend},
        {"determinism", determinism},
    };

    bool ok = true;
    for (std::size_t i = 0; i < all.size(); ++i) {
        if (only != 0 && static_cast<int>(i + 1) != only) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = all[i].run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::cout << (o.pass ? "PASS" : "FAIL") << "  C" << (i + 1) << "  " << all[i].name
                  << ": " << o.detail << fmt("  [%.1f s]", secs) << std::endl;
        ok = ok && o.pass;
    }
    return ok ? 0 : 1;
}
