#include "qtrack/classical.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_real_distribution.hpp>

#include "qtrack/error.hpp"
#include "qtrack/io.hpp"

namespace qtrack {

namespace {

constexpr double kWeightSumTol = 1e-9;

// sin(2 atan2(p, x)) without the trig calls; zero at the origin.
inline double sin_two_phase(double x, double p) {
    const double r2 = x * x + p * p;
    return r2 > 0.0 ? 2.0 * x * p / r2 : 0.0;
}

void normalize(std::vector<double>& w) {
    double sum = 0.0;
    for (double v : w) sum += v;
    if (!(sum > 0.0) || !std::isfinite(sum)) {
        throw DegenerateEnsemble("particle weights vanished (sum = " + io::format_double(sum) + ")");
    }
    const double inv = 1.0 / sum;
    for (double& v : w) v *= inv;
}

}  // namespace

ClassicalState sde_step(const ClassicalState& s, const ModelParams& params, SdeNoise noise,
                        double dt) {
    const double trap = 1.0 + params.alpha * sin_two_phase(s.x, s.p);
    const double force = trap * (-s.x - params.gamma * s.x * s.x * s.x) - params.damping * s.p;
    ClassicalState next;
    next.p = s.p + force * dt + std::sqrt(2.0 * params.k) * noise.dY +
             std::sqrt(2.0 * params.damping * params.kbt) * noise.dU;
    next.x = s.x + s.p * dt;
    return next;
}

GaussianPrior GaussianPrior::stationary(const ModelParams& params) {
    const double var = params.kbt + params.k / params.damping;
    return {0.0, 0.0, var, var};
}

ParticleEnsemble pf_init(std::size_t n, const GaussianPrior& prior, std::uint64_t seed) {
    if (n < 2) throw InvalidArgument("pf_init: need at least 2 particles");
    if (!(prior.var_x >= 0.0) || !(prior.var_p >= 0.0)) {
        throw InvalidArgument("pf_init: prior variances must be >= 0");
    }
    ParticleEnsemble e;
    e.rng.seed(seed);
    boost::random::normal_distribution<double> gx(prior.mean_x, std::sqrt(prior.var_x));
    boost::random::normal_distribution<double> gp(prior.mean_p, std::sqrt(prior.var_p));
    e.particles.resize(n);
    for (auto& s : e.particles) {
        s.x = gx(e.rng);
        s.p = gp(e.rng);
    }
    e.weights.assign(n, 1.0 / static_cast<double>(n));
    return e;
}

double effective_sample_size(std::span<const double> weights) {
    double sum = 0.0;
    double sum2 = 0.0;
    for (double w : weights) {
        if (w < 0.0) throw InvalidArgument("effective_sample_size: negative weight");
        sum += w;
        sum2 += w * w;
    }
    if (std::abs(sum - 1.0) > kWeightSumTol) {
        throw InvalidArgument("effective_sample_size: weights are not normalized (sum = " +
                              io::format_double(sum) + ")");
    }
    return 1.0 / sum2;
}

std::vector<std::size_t> systematic_indices(std::span<const double> weights, double u0) {
    const std::size_t n = weights.size();
    double total = 0.0;
    for (double w : weights) total += w;
    if (n == 0 || !(total > 0.0)) throw DegenerateEnsemble("systematic_resample: all weights zero");

    // Cumulative sum with the last positive entry pinned to exactly 1, so
    // rounding can never select a zero-weight tail particle.
    std::vector<double> cdf(n);
    double acc = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t i = 0; i < n; ++i) {
        acc += weights[i] / total;
        cdf[i] = acc;
        if (weights[i] > 0.0) last_positive = i;
    }
    for (std::size_t i = last_positive; i < n; ++i) cdf[i] = 1.0;

    std::vector<std::size_t> idx(n);
    const double step = 1.0 / static_cast<double>(n);
    std::size_t i = 0;
    for (std::size_t m = 0; m < n; ++m) {
        const double u = u0 + static_cast<double>(m) * step;
        while (u >= cdf[i] && i < last_positive) ++i;
        idx[m] = i;
    }
    return idx;
}

void systematic_resample(ParticleEnsemble& ensemble) {
    const std::size_t n = ensemble.size();
    boost::random::uniform_real_distribution<double> uni(0.0, 1.0 / static_cast<double>(n));
    const auto idx = systematic_indices(ensemble.weights, uni(ensemble.rng));
    std::vector<ClassicalState> next(n);
    for (std::size_t m = 0; m < n; ++m) next[m] = ensemble.particles[idx[m]];
    ensemble.particles = std::move(next);
    ensemble.weights.assign(n, 1.0 / static_cast<double>(n));
}

void pf_propagate(ParticleEnsemble& ensemble, const ModelParams& params) {
    const double dt = params.dt;
    boost::random::normal_distribution<double> wiener(0.0, std::sqrt(dt));
    for (auto& s : ensemble.particles) {
        const double dY = wiener(ensemble.rng);
        const double dU = wiener(ensemble.rng);
        s = sde_step(s, params, {dY, dU}, dt);
    }
}

void pf_reweight(ParticleEnsemble& ensemble, double dy, const ModelParams& params) {
    if (!std::isfinite(dy)) throw InvalidArgument("pf_update: non-finite measurement increment");
    const double dt = params.dt;
    const double gain = std::sqrt(8.0 * params.k * params.eta) * dt;
    const std::size_t n = ensemble.size();

    // Log-likelihoods, shifted by their maximum before exponentiating.
    std::vector<double> loglik(n);
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        const double r = dy - gain * ensemble.particles[i].x;
        loglik[i] = -r * r / (2.0 * dt);
        if (ensemble.weights[i] > 0.0) best = std::max(best, loglik[i]);
    }
    if (!std::isfinite(best)) throw DegenerateEnsemble("pf_update: every weight is zero");
    for (std::size_t i = 0; i < n; ++i) ensemble.weights[i] *= std::exp(loglik[i] - best);
    normalize(ensemble.weights);
}

UpdateInfo pf_update(ParticleEnsemble& ensemble, double dy, const ModelParams& params,
                     const ResamplePolicy& policy) {
    pf_propagate(ensemble, params);
    pf_reweight(ensemble, dy, params);
    UpdateInfo info;
    info.ess_before_resample = effective_sample_size(ensemble.weights);
    if (info.ess_before_resample < policy.ess_fraction * static_cast<double>(ensemble.size())) {
        systematic_resample(ensemble);
        info.resampled = true;
    }
    return info;
}

EnsembleMoments ensemble_moments(const ParticleEnsemble& ensemble) {
    EnsembleMoments m;
    double wsum = 0.0;
    for (std::size_t i = 0; i < ensemble.size(); ++i) {
        const double w = ensemble.weights[i];
        m.mean_x += w * ensemble.particles[i].x;
        m.mean_p += w * ensemble.particles[i].p;
        wsum += w;
    }
    if (wsum > 0.0) {
        m.mean_x /= wsum;
        m.mean_p /= wsum;
    }
    return m;
}

ClassicalRun simulate_classical(const ModelParams& params, ClassicalState initial,
                                std::size_t steps, std::uint64_t seed) {
    params.validate();
    const double dt = params.dt;
    const double gain = std::sqrt(8.0 * params.k * params.eta);
    Rng rng(seed);
    boost::random::normal_distribution<double> wiener(0.0, std::sqrt(dt));

    ClassicalRun run;
    run.record.dt = dt;
    run.record.seed = seed;
    run.record.params_hash = params_hash(params);
    run.record.increments.reserve(steps);
    run.log.reserve(steps + 1);
    ClassicalState s = initial;
    run.log.append(0.0, s.x, s.p);
    for (std::size_t n = 0; n < steps; ++n) {
        const double dZ = wiener(rng);
        const double dY = wiener(rng);
        const double dU = wiener(rng);
        run.record.increments.push_back(gain * s.x * dt + dZ);
        s = sde_step(s, params, {dY, dU}, dt);
        run.log.append(static_cast<double>(n + 1) * dt, s.x, s.p);
    }
    return run;
}

FilterRun run_particle_filter(const MeasurementRecord& record, const ModelParams& params,
                              std::size_t particles, const GaussianPrior& prior,
                              std::uint64_t seed, const ResamplePolicy& policy) {
    params.validate();
    if (std::abs(record.dt - params.dt) > 1e-15 * params.dt) {
        throw InvalidArgument("run_particle_filter: record dt " + io::format_double(record.dt) +
                              " differs from model dt " + io::format_double(params.dt));
    }
    auto ensemble = pf_init(particles, prior, seed);
    FilterRun run;
    run.log.reserve(record.length() + 1);
    run.min_ess = static_cast<double>(particles);
    auto m = ensemble_moments(ensemble);
    run.log.append(0.0, m.mean_x, m.mean_p);
    for (std::size_t n = 0; n < record.length(); ++n) {
        const auto info = pf_update(ensemble, record.increments[n], params, policy);
        run.min_ess = std::min(run.min_ess, info.ess_before_resample);
        if (info.resampled) ++run.resample_count;
        m = ensemble_moments(ensemble);
        run.log.append(static_cast<double>(n + 1) * params.dt, m.mean_x, m.mean_p);
    }
    return run;
}

void write_ensemble_csv(std::ostream& os, const ParticleEnsemble& ensemble) {
    os << "x,p,weight\n";
    for (std::size_t i = 0; i < ensemble.size(); ++i) {
        os << io::format_double(ensemble.particles[i].x) << ','
           << io::format_double(ensemble.particles[i].p) << ','
           << io::format_double(ensemble.weights[i]) << '\n';
    }
}

}  // namespace qtrack
