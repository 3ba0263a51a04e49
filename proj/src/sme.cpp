#include "qtrack/sme.hpp"

#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>

#include <boost/random/mersenne_twister.hpp>
#include <boost/random/normal_distribution.hpp>

#include "qtrack/error.hpp"
#include "qtrack/io.hpp"

namespace qtrack {

namespace {

constexpr int kBand = 4;  // x^4 couples levels n and n +/- 4

BandedOperator banded(const ComplexMatrix& m) { return BandedOperator::from_dense(m, kBand, kBand); }

}  // namespace

void TrajectoryLog::reserve(std::size_t n) {
    times.reserve(n);
    mean_x.reserve(n);
    mean_p.reserve(n);
}

void TrajectoryLog::append(double t, double x, double p) {
    times.push_back(t);
    mean_x.push_back(x);
    mean_p.push_back(p);
}

void TrajectoryLog::append(double t, double x, double p, double pur) {
    append(t, x, p);
    purity.push_back(pur);
}

// ---------------------------------------------------------------------------

OperatorMatrix build_hamiltonian(const ModelParams& params, double phi) {
    params.validate();
    const auto [x, p] = build_quadratures(params.dim);
    const auto x2 = x * x;
    const auto x4 = x2 * x2;
    const double prefactor = 1.0 + params.alpha * std::sin(2.0 * phi);
    return Complex(0.5) * (p * p) +
           Complex(prefactor) * (Complex(0.5) * x2 + Complex(params.gamma / 4.0) * x4) +
           Complex(params.damping / 4.0) * (x * p + p * x);
}

ThermalOps build_thermal_ops(double n_bar, double omega, double q, int dim) {
    if (!(q > 0.0)) throw InvalidArgument("build_thermal_ops: quality factor must be > 0");
    if (!(n_bar >= 0.0)) throw InvalidArgument("build_thermal_ops: n_bar must be >= 0");
    const auto ladder = build_ladder_ops(dim);
    const double c1 = std::sqrt((n_bar + 1.0) * omega / q);
    const double c2 = std::sqrt(n_bar * omega / q);
    return {Complex(c1) * ladder.lowering, Complex(c2) * ladder.raising};
}

double feedback_phase(double mean_x, double mean_p) {
    if (mean_x == 0.0 && mean_p == 0.0) return 0.0;
    const double phi = std::atan2(mean_p, mean_x);
    return phi == -std::numbers::pi ? std::numbers::pi : phi;
}

double feedback_phase(const DensityMatrix& rho) {
    const auto [x, p] = build_quadratures(rho.dim());
    return feedback_phase(expectation(x, rho).real(), expectation(p, rho).real());
}

// ---------------------------------------------------------------------------

RouchonIntegrator::RouchonIntegrator(const ModelParams& params)
    : params_(params), record_gain_(std::sqrt(8.0 * params.k * params.eta)) {
    params_.validate();
    const int d = params_.dim;
    const auto [xo, po] = build_quadratures(d);
    const ComplexMatrix& x = xo.entries();
    const ComplexMatrix& p = po.entries();
    const ComplexMatrix x2 = x * x;

    const double n_bar = thermal_occupancy(params_.kbt, params_.omega);
    const auto thermal = build_thermal_ops(n_bar, params_.omega, params_.quality_factor(), d);
    const ComplexMatrix& v1 = thermal.v1.entries();
    const ComplexMatrix& v2 = thermal.v2.entries();
    const ComplexMatrix l = std::sqrt(2.0 * params_.k) * x;

    const Complex i(0.0, 1.0);
    const ComplexMatrix h_static = 0.5 * p * p + (params_.damping / 4.0) * (x * p + p * x);
    const double dt = params_.dt;
    // K is diagonal for the thermal pair, so its exponentials are exact
    const Eigen::VectorXd k_diag = (v1.adjoint() * v1 + v2.adjoint() * v2).diagonal().real();
    const Eigen::VectorXd quarter = (-0.25 * dt * k_diag).array().exp();
    ComplexMatrix diss = -0.5 * dt * (l.adjoint() * l);
    diss.diagonal().array() += (quarter.array().square() - 1.0).cast<Complex>();

    x_ = BandedOperator::from_dense(x, 1, 1);
    p_ = BandedOperator::from_dense(p, 1, 1);
    h_static_ = banded(h_static);
    trap_ = banded(0.5 * x2 + (params_.gamma / 4.0) * (x2 * x2));
    dissipative_ = BandedOperator::from_dense(diss, 2, 2);
    const auto weighted = [&](const ComplexMatrix& v) -> ComplexMatrix {
        return quarter.cast<Complex>().asDiagonal() * v * quarter.cast<Complex>().asDiagonal();
    };
    jumps_.push_back(BandedOperator::from_dense(weighted(v1), 0, 1));
    if (n_bar > 0.0) {
        jumps_.push_back(BandedOperator::from_dense(weighted(v2), 1, 0));
        double_jumps_.push_back(BandedOperator::from_dense(v1 * v2, 0, 0));
        double_jumps_.push_back(BandedOperator::from_dense(v2 * v1, 0, 0));
        double_jumps_.push_back(BandedOperator::from_dense(v2 * v2, 2, 0));
    }
    double_jumps_.push_back(BandedOperator::from_dense(v1 * v1, 0, 2));
    cayley_ = BandedOperator(d, kBand, kBand);
    meas_ = BandedOperator::from_dense(l, 1, 1);
    meas_sq_ = BandedOperator::from_dense(l * l, 2, 2);
    kraus_ = BandedOperator(d, 2, 2);
    scratch_.resize(d, d);
    out_.resize(d, d);
    work_t_.resize(d, d);
    adj_t_.resize(d, d);
    rotated_.resize(d, d);
}

double RouchonIntegrator::mean_x(const DensityMatrix& rho) const {
    return x_.trace_product(rho.entries()).real();
}

double RouchonIntegrator::mean_p(const DensityMatrix& rho) const {
    return p_.trace_product(rho.entries()).real();
}

DensityMatrix RouchonIntegrator::step(const DensityMatrix& rho, double increment, StepMode mode) {
    if (rho.dim() != params_.dim) {
        throw DimensionMismatch("rouchon_step: state dim " + std::to_string(rho.dim()) +
                                " vs params dim " + std::to_string(params_.dim));
    }
    if (!std::isfinite(increment)) throw InvalidArgument("rouchon_step: non-finite increment");

    const ComplexMatrix& r = rho.entries();
    const double dt = params_.dt;
    const double eta = params_.eta;
    const double mx = mean_x(rho);
    const double mp = mean_p(rho);
    const double dy = mode == StepMode::Truth ? record_gain_ * mx * dt + increment : increment;
    const double trap_scale = 1.0 + params_.alpha * std::sin(2.0 * feedback_phase(mx, mp));

    // Unitary part. With A = I + iH dt/2 we have A + A^dag = 2I, so
    // U = A^{-1} A^dag = 2 A^{-1} - I. Solves run on transposed copies;
    // for Hermitian X, X^T = conj(X).
    const Complex half_i_dt(0.0, 0.5 * dt);
    for (int o = -kBand; o <= kBand; ++o) cayley_.diagonal(o).setZero();
    cayley_.diagonal(0).array() += 1.0;
    cayley_.add_scaled(h_static_, half_i_dt);
    cayley_.add_scaled(trap_, trap_scale * half_i_dt);
    cayley_lu_.factor(cayley_);

    work_t_ = r.conjugate();
    cayley_lu_.solve_transposed(work_t_);
    work_t_ = 2.0 * work_t_ - r.conjugate();  // (U rho)^T
    adj_t_ = work_t_.adjoint();                 // ((U rho)^dag)^T
    work_t_ = adj_t_;
    cayley_lu_.solve_transposed(work_t_);
    work_t_ = 2.0 * work_t_ - adj_t_;           // (U rho U^dag)^T
    rotated_ = work_t_.transpose();

    // Measurement and environment Kraus map, diagonal by diagonal.
    for (int o = -2; o <= 2; ++o) kraus_.diagonal(o).setZero();
    kraus_.diagonal(0).array() += 1.0;
    kraus_.add_scaled(dissipative_, Complex(1.0, 0.0));
    kraus_.add_scaled(meas_, Complex(std::sqrt(eta) * dy, 0.0));
    kraus_.add_scaled(meas_sq_, Complex(0.5 * eta * (dy * dy - dt), 0.0));

    // Every term is Hermitian: build the upper triangle, then mirror.
    kraus_.multiply_left(rotated_, scratch_);
    kraus_.multiply_right_adjoint_upper(scratch_, out_);
    if (eta < 1.0 && params_.k > 0.0) {
        meas_.accumulate_sandwich_upper(rotated_, (1.0 - eta) * dt, out_, scratch_);
    }
    // Environment jumps, second order in dt: midpoint-weighted single jumps
    // plus the double-jump term.
    for (const auto& w : jumps_) w.accumulate_sandwich_upper(rotated_, dt, out_, scratch_);
    for (const auto& vv : double_jumps_) {
        vv.accumulate_sandwich_upper(rotated_, 0.5 * dt * dt, out_, scratch_);
    }

    const double tr = out_.trace().real();
    if (!(tr > 0.0) || !std::isfinite(tr)) {
        throw NumericalInvariantError("rouchon_step: non-positive trace before normalization");
    }
    const int d = params_.dim;
    ComplexMatrix next(d, d);
    const double inv = 1.0 / tr;
    for (int j = 0; j < d; ++j) {
        for (int i = 0; i < j; ++i) {
            const Complex v = inv * out_(i, j);
            next(i, j) = v;
            next(j, i) = std::conj(v);
        }
        next(j, j) = Complex(inv * out_(j, j).real(), 0.0);
    }
    return DensityMatrix::from_mirrored(std::move(next));
}

DensityMatrix rouchon_step(const DensityMatrix& rho, const ModelParams& params, double increment,
                           StepMode mode) {
    RouchonIntegrator integrator(params);
    return integrator.step(rho, increment, mode);
}

// ---------------------------------------------------------------------------

ConditionalEstimator::ConditionalEstimator(const ModelParams& params, DensityMatrix initial)
    : integrator_(params), rho_(std::move(initial)) {
    mean_x_ = integrator_.mean_x(rho_);
    mean_p_ = integrator_.mean_p(rho_);
}

void ConditionalEstimator::update(double dy) {
    innovation_ = dy - integrator_.record_gain() * mean_x_ * integrator_.params().dt;
    rho_ = integrator_.step(rho_, dy, StepMode::Estimate);
    mean_x_ = integrator_.mean_x(rho_);
    mean_p_ = integrator_.mean_p(rho_);
}

namespace {

void handle_snapshot(const IntegrationOptions& options, std::size_t step, const DensityMatrix& rho,
                     TrajectoryLog& log) {
    if (options.check_positivity && !is_positive_semidefinite(rho.entries())) {
        throw NumericalInvariantError("density matrix lost positivity at step " +
                                      std::to_string(step));
    }
    if (options.snapshot_every == 0 || step % options.snapshot_every != 0) return;
    if (options.observer) options.observer(step, rho);
    if (options.keep_snapshots) log.snapshots.push_back({step, rho});
}

}  // namespace

TruthRun simulate_truth(const ModelParams& params, const DensityMatrix& initial, std::size_t steps,
                        std::uint64_t seed, const IntegrationOptions& options) {
    RouchonIntegrator integrator(params);
    if (initial.dim() != params.dim) throw DimensionMismatch("simulate_truth: initial state dim");

    TruthRun run;
    run.record.dt = params.dt;
    run.record.seed = seed;
    run.record.params_hash = params_hash(params);
    run.record.increments.reserve(steps);
    run.log.reserve(steps + 1);

    boost::random::mt19937_64 rng(seed);
    boost::random::normal_distribution<double> noise(0.0, std::sqrt(params.dt));

    DensityMatrix rho = initial;
    double mx = integrator.mean_x(rho);
    run.log.append(0.0, mx, integrator.mean_p(rho), purity(rho));
    handle_snapshot(options, 0, rho, run.log);
    for (std::size_t n = 1; n <= steps; ++n) {
        const double dw = noise(rng);
        run.record.increments.push_back(integrator.record_gain() * mx * params.dt + dw);
        rho = integrator.step(rho, dw, StepMode::Truth);
        mx = integrator.mean_x(rho);
        run.log.append(static_cast<double>(n) * params.dt, mx, integrator.mean_p(rho), purity(rho));
        handle_snapshot(options, n, rho, run.log);
    }
    return run;
}

TrajectoryLog estimate_conditional(const MeasurementRecord& record, const ModelParams& params,
                                   const std::optional<DensityMatrix>& initial,
                                   const IntegrationOptions& options) {
    if (std::abs(record.dt - params.dt) > 1e-15 * std::abs(params.dt)) {
        throw InvalidArgument("estimate_conditional: record dt " + io::format_double(record.dt) +
                              " does not match params dt " + io::format_double(params.dt));
    }
    ConditionalEstimator est(params, initial ? *initial : DensityMatrix::maximally_mixed(params.dim));

    TrajectoryLog log;
    log.reserve(record.length() + 1);
    log.append(0.0, est.mean_x(), est.mean_p(), purity(est.state()));
    handle_snapshot(options, 0, est.state(), log);
    for (std::size_t n = 1; n <= record.length(); ++n) {
        est.update(record.increments[n - 1]);
        log.append(static_cast<double>(n) * params.dt, est.mean_x(), est.mean_p(),
                   purity(est.state()));
        handle_snapshot(options, n, est.state(), log);
    }
    return log;
}

std::string params_hash(const ModelParams& params) {
    return io::sha256_hex(params.canonical_string());
}

// ---------------------------------------------------------------------------
// CSV formats

void write_record_csv(std::ostream& os, const MeasurementRecord& record) {
    os << "# qtrack measurement record\n";
    os << "# dt=" << io::format_double(record.dt) << '\n';
    os << "# steps=" << record.length() << '\n';
    os << "# seed=" << record.seed << '\n';
    os << "# params_hash=" << record.params_hash << '\n';
    os << "dy\n";
    for (double v : record.increments) os << io::format_double(v) << '\n';
}

MeasurementRecord read_record_csv(std::istream& is) {
    MeasurementRecord rec;
    std::string line;
    bool have_dt = false;
    bool have_header = false;
    std::size_t declared_steps = 0;
    bool have_steps = false;
    while (std::getline(is, line)) {
        const auto t = io::trim(line);
        if (t.empty()) continue;
        if (t.front() == '#') {
            const auto body = io::trim(t.substr(1));
            const auto eq = body.find('=');
            if (eq == std::string_view::npos) continue;
            const auto key = io::trim(body.substr(0, eq));
            const auto val = io::trim(body.substr(eq + 1));
            if (key == "dt") {
                rec.dt = io::parse_double(val);
                have_dt = true;
            } else if (key == "steps") {
                declared_steps = std::stoull(std::string(val));
                have_steps = true;
            } else if (key == "seed") {
                rec.seed = std::stoull(std::string(val));
            } else if (key == "params_hash") {
                rec.params_hash = std::string(val);
            }
            continue;
        }
        if (!have_header) {
            if (t != "dy") throw InvalidArgument("record csv: expected 'dy' column header");
            have_header = true;
            continue;
        }
        const double v = io::parse_double(t);
        if (!std::isfinite(v)) throw InvalidArgument("record csv: non-finite increment");
        rec.increments.push_back(v);
    }
    if (!have_dt || !(rec.dt > 0.0)) throw InvalidArgument("record csv: missing or invalid dt");
    if (have_steps && declared_steps != rec.length()) {
        throw InvalidArgument("record csv: header declares " + std::to_string(declared_steps) +
                              " steps but file holds " + std::to_string(rec.length()));
    }
    return rec;
}

void write_log_csv(std::ostream& os, const TrajectoryLog& log) {
    const bool with_purity = !log.purity.empty();
    os << (with_purity ? "t,mean_x,mean_p,purity\n" : "t,mean_x,mean_p\n");
    for (std::size_t i = 0; i < log.size(); ++i) {
        os << io::format_double(log.times[i]) << ',' << io::format_double(log.mean_x[i]) << ','
           << io::format_double(log.mean_p[i]);
        if (with_purity) os << ',' << io::format_double(log.purity[i]);
        os << '\n';
    }
}

TrajectoryLog read_log_csv(std::istream& is) {
    TrajectoryLog log;
    std::string line;
    if (!std::getline(is, line)) throw InvalidArgument("log csv: empty input");
    const auto header = io::trim(line);
    bool with_purity = false;
    if (header == "t,mean_x,mean_p,purity") {
        with_purity = true;
    } else if (header != "t,mean_x,mean_p") {
        throw InvalidArgument("log csv: unexpected header '" + std::string(header) + "'");
    }
    while (std::getline(is, line)) {
        const auto t = io::trim(line);
        if (t.empty()) continue;
        std::vector<double> cols;
        std::size_t start = 0;
        while (true) {
            const auto comma = t.find(',', start);
            cols.push_back(io::parse_double(t.substr(start, comma - start)));
            if (comma == std::string_view::npos) break;
            start = comma + 1;
        }
        if (cols.size() != (with_purity ? 4u : 3u)) throw InvalidArgument("log csv: bad row");
        if (with_purity) {
            log.append(cols[0], cols[1], cols[2], cols[3]);
        } else {
            log.append(cols[0], cols[1], cols[2]);
        }
    }
    return log;
}

}  // namespace qtrack
