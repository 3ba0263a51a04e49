#pragma once

// Classical counterpart of the oscillator model and a bootstrap particle
// filter that tracks the same measurement record as the conditional SME.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include <boost/random/mersenne_twister.hpp>

#include "qtrack/fock.hpp"
#include "qtrack/sme.hpp"

namespace qtrack {

using Rng = boost::random::mt19937_64;

struct ClassicalState {
    double x = 0.0;
    double p = 0.0;
};

/// Wiener increments for the back-action (dY) and thermal (dU) channels.
struct SdeNoise {
    double dY = 0.0;
    double dU = 0.0;
};

/// One Euler-Maruyama step of
///   dp = (1 + alpha sin 2phi)(-x - gamma x^3) dt - Gamma p dt
///        + sqrt(2k) dY + sqrt(2 Gamma kBT) dU
///   dx = p dt
/// with phi = atan2(p, x) taken from the state at the start of the step.
ClassicalState sde_step(const ClassicalState& s, const ModelParams& params, SdeNoise noise,
                        double dt);

struct GaussianPrior {
    double mean_x = 0.0;
    double mean_p = 0.0;
    double var_x = 1.0;
    double var_p = 1.0;

    /// Stationary covariance of the linear trap: kBT + k/Gamma on both axes.
    static GaussianPrior stationary(const ModelParams& params);
};

struct ParticleEnsemble {
    std::vector<ClassicalState> particles;
    std::vector<double> weights;
    Rng rng;

    std::size_t size() const { return particles.size(); }
};

/// N particles from `prior` with uniform weights 1/N. Throws InvalidArgument for N < 2.
ParticleEnsemble pf_init(std::size_t n, const GaussianPrior& prior, std::uint64_t seed);

/// 1 / sum w_i^2. Throws InvalidArgument when the weights do not sum to 1.
double effective_sample_size(std::span<const double> weights);

/// Ancestor indices for systematic resampling with offset u0 in [0, 1/N).
std::vector<std::size_t> systematic_indices(std::span<const double> weights, double u0);
/// Draws u0 from the ensemble's generator; output weights are uniform.
void systematic_resample(ParticleEnsemble& ensemble);

struct ResamplePolicy {
    double ess_fraction = 0.5;  ///< resample when ESS < fraction * N
};

struct UpdateInfo {
    double ess_before_resample = 0.0;
    bool resampled = false;
};

/// Propagates every particle through sde_step with fresh noise, multiplies
/// its weight by exp(-(dy - sqrt(8 k eta) x dt)^2 / (2 dt)), renormalizes and
/// resamples per `policy`. Throws DegenerateEnsemble if every weight vanishes.
UpdateInfo pf_update(ParticleEnsemble& ensemble, double dy, const ModelParams& params,
                     const ResamplePolicy& policy = {});

/// Reweights without propagating (the likelihood half of pf_update).
void pf_reweight(ParticleEnsemble& ensemble, double dy, const ModelParams& params);
/// Propagates without reweighting (the prediction half of pf_update).
void pf_propagate(ParticleEnsemble& ensemble, const ModelParams& params);

struct EnsembleMoments {
    double mean_x = 0.0;
    double mean_p = 0.0;
};
EnsembleMoments ensemble_moments(const ParticleEnsemble& ensemble);

/// Truth trajectory of the classical SDE and the record it emits,
/// dy = sqrt(8 k eta) x dt + dZ with x taken at the start of the step.
/// The log holds steps + 1 points. Noise per step is drawn in the order dZ, dY, dU.
struct ClassicalRun {
    TrajectoryLog log;
    MeasurementRecord record;
};
ClassicalRun simulate_classical(const ModelParams& params, ClassicalState initial,
                                std::size_t steps, std::uint64_t seed);

struct FilterRun {
    TrajectoryLog log;  ///< entry 0 is the prior mean
    std::size_t resample_count = 0;
    double min_ess = 0.0;
};

/// Runs pf_update over every increment of `record`.
FilterRun run_particle_filter(const MeasurementRecord& record, const ModelParams& params,
                              std::size_t particles, const GaussianPrior& prior,
                              std::uint64_t seed, const ResamplePolicy& policy = {});

/// Columns x, p, weight.
void write_ensemble_csv(std::ostream& os, const ParticleEnsemble& ensemble);

}  // namespace qtrack
