#pragma once

// End-to-end runs: truth SME -> record -> conditional SME and particle
// filter in lockstep -> error statistics and KL divergence, driven by an
// INI config and written out as CSV/JSON with a run manifest.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "qtrack/classical.hpp"
#include "qtrack/fock.hpp"
#include "qtrack/phase_space.hpp"
#include "qtrack/sme.hpp"

namespace qtrack {

/// min(120, max(60, ceil(40 (1 + kBT))))
int auto_dimension(double kbt);

/// Stable 64-bit mix of (master, index); the same pair gives the same seed
/// on every platform and in any enumeration order.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

/// Unset axes fall back to the [model] value; set axes must be non-empty.
struct SweepAxes {
    std::optional<std::vector<double>> kbt;
    std::optional<std::vector<double>> gamma;
    std::optional<std::vector<double>> eta;
};

struct SweepPoint {
    std::size_t index = 0;
    ModelParams params;
    std::uint64_t seed = 0;
    std::vector<std::string> warnings;
};

struct ExperimentConfig {
    ModelParams model;
    bool auto_dim = true;  ///< dim from auto_dimension(kBT) per sweep point

    std::size_t particles = 1000;
    std::size_t cycles = 200;
    std::size_t transient_cycles = 20;
    std::uint64_t seed = 1;
    /// Steps between density-matrix snapshots; KL is evaluated at every
    /// post-transient snapshot. 0 disables both.
    std::size_t snapshot_every = 100;
    /// Keep every n-th log entry when writing trajectory CSVs.
    std::size_t log_every = 1;
    bool check_positivity = false;
    bool write_trajectories = true;
    bool write_fields = false;
    std::size_t parallel = 1;
    std::string output_dir = "out";

    PhaseSpaceGrid grid;
    SweepAxes sweep;

    /// round(1 / dt): one oscillator cycle is one time unit.
    std::size_t steps_per_cycle() const;
    std::size_t steps() const { return cycles * steps_per_cycle(); }
    std::size_t transient_steps() const { return transient_cycles * steps_per_cycle(); }

    std::vector<std::string> violations() const;
    void validate() const;  ///< throws ConfigError with every violation

    /// kBT outermost, then gamma, then eta.
    std::vector<SweepPoint> sweep_points() const;

    /// Every setting that affects results (not output_dir or parallel), one
    /// key=value per line with 17-digit numbers.
    std::string canonical_string() const;
    std::string hash() const;
};

/// Parses INI text with sections [model], [run], [grid], [sweep]. Unknown
/// sections and keys are rejected; every violation is collected into a
/// single ConfigError.
ExperimentConfig parse_config_text(std::string_view text);
/// Throws ConfigError if the file cannot be read.
ExperimentConfig parse_config(const std::filesystem::path& path);

struct StageTimings {
    double truth = 0.0;
    double conditional = 0.0;
    double filter = 0.0;
    double phase_space = 0.0;
    double output = 0.0;
};

struct KlSample {
    std::size_t step = 0;
    double kl = 0.0;
    double wigner_residual = 0.0;  ///< sum(W) dx dp - 1 before clipping
    double out_of_bounds_mass = 0.0;
};

struct PointResult {
    SweepPoint point;
    TrajectoryLog truth;
    TrajectoryLog conditional;
    TrajectoryLog classical;
    MeasurementRecord record;
    ErrorStats filter_vs_conditional;
    ErrorStats filter_vs_truth;
    ErrorStats conditional_vs_truth;
    std::vector<KlSample> kl;
    double kl_mean = 0.0;
    double kl_std = 0.0;  ///< population std over kl samples
    std::size_t resample_count = 0;
    StageTimings timings;
    /// Set when a stage aborted on an invariant failure.
    std::optional<std::string> failure;
};

struct PointOptions {
    bool compute_kl = true;
    /// Called for every KL snapshot with both fields (e.g. to save them).
    std::function<void(std::size_t step, const PhaseSpaceField& wigner,
                       const PhaseSpaceField& pdf)>
        field_observer;
    /// Replaces the computed (P1, P2) pair; for injecting known fields.
    std::function<std::pair<PhaseSpaceField, PhaseSpaceField>(std::size_t step,
                                                              const DensityMatrix& rho,
                                                              const ParticleEnsemble& ensemble)>
        field_override;
};

/// Truth run, then the conditional SME and particle filter over the same
/// record, then error statistics and (optionally) KL at post-transient
/// snapshots. Invariant failures are caught and reported in `failure`.
PointResult run_point(const ExperimentConfig& config, const SweepPoint& point,
                      const PointOptions& options = {});

/// run_point on the first sweep point without KL.
PointResult run_tracking(const ExperimentConfig& config);

struct SweepSummary {
    std::size_t index = 0;
    double kbt = 0.0;
    double gamma = 0.0;
    double eta = 0.0;
    int dim = 0;
    std::uint64_t seed = 0;
    ErrorStats filter_vs_conditional;
    ErrorStats filter_vs_truth;
    ErrorStats conditional_vs_truth;
    double kl_mean = 0.0;
    double kl_std = 0.0;
    std::size_t kl_samples = 0;
    std::size_t resample_count = 0;
    StageTimings timings;
    std::vector<std::string> warnings;
    std::optional<std::string> failure;
};

struct SweepResult {
    std::string config_hash;
    std::vector<SweepSummary> points;
    std::size_t invariant_violations = 0;
};

struct RunOptions {
    bool compute_kl = true;
    /// Write per-point files and the manifest under config.output_dir.
    bool write_outputs = true;
};

/// Every sweep point, up to config.parallel at a time. Writes
/// summary.csv, metrics.json, manifest.json and one directory per point.
SweepResult run_kl_sweep(const ExperimentConfig& config, const RunOptions& options = {});

/// Summary row for a finished point.
SweepSummary summarize(const PointResult& result);

/// Manifest JSON for a finished run. `files` are paths relative to the
/// output directory; their SHA-256 digests are recorded.
struct ManifestInput {
    std::string command;
    const ExperimentConfig* config = nullptr;
    std::vector<SweepSummary> points;
    std::vector<std::string> files;
    std::size_t invariant_violations = 0;
    std::vector<std::string> warnings;
};
void write_manifest(const std::filesystem::path& out_dir, const ManifestInput& input);

/// Writes a log keeping every `every`-th entry (the last is always kept).
void write_log_file(const std::filesystem::path& path, const TrajectoryLog& log,
                    std::size_t every = 1);

}  // namespace qtrack
