// qtrack: command-line front end for truth simulation, conditional
// estimation, particle-filter tracking, comparison and parameter sweeps.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "qtrack/classical.hpp"
#include "qtrack/error.hpp"
#include "qtrack/experiments.hpp"
#include "qtrack/io.hpp"
#include "qtrack/phase_space.hpp"
#include "qtrack/sme.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace qtrack;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

struct CommonFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::size_t> parallel;
    std::optional<std::size_t> snapshot_every;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool config_required = true) {
    auto* c = cmd->add_option("--config", f.config, "INI config file");
    if (config_required) c->required();
    cmd->add_option("--seed", f.seed, "Master seed (overrides [run] seed)");
    cmd->add_option("--out", f.out, "Output directory (overrides [run] output_dir)");
    cmd->add_option("--parallel", f.parallel, "Sweep points run concurrently")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--snapshot-every", f.snapshot_every,
                    "Steps between snapshots and KL evaluations (0 disables)");
}

ExperimentConfig load(const CommonFlags& f) {
    ExperimentConfig c = parse_config(f.config);
    if (f.seed) c.seed = *f.seed;
    if (f.out) c.output_dir = *f.out;
    if (f.parallel) c.parallel = *f.parallel;
    if (f.snapshot_every) c.snapshot_every = *f.snapshot_every;
    c.validate();
    return c;
}

MeasurementRecord load_record(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot read record file '" + path + "'");
    return read_record_csv(in);
}

void warn_if_foreign(const MeasurementRecord& record, const ModelParams& params) {
    if (!record.params_hash.empty() && record.params_hash != params_hash(params)) {
        std::cerr << "warning: record was generated with different model parameters\n";
    }
}

double elapsed(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void finish(const fs::path& out, const std::string& command, const ExperimentConfig& config,
            std::vector<std::string> files, const SweepSummary& summary) {
    ManifestInput mi;
    mi.command = command;
    mi.config = &config;
    mi.points = {summary};
    mi.files = std::move(files);
    write_manifest(out, mi);
}

int cmd_simulate(const CommonFlags& f) {
    const auto config = load(f);
    const auto point = config.sweep_points().front();
    const fs::path out = config.output_dir;
    fs::create_directories(out);
    std::vector<std::string> files;

    IntegrationOptions opt;
    opt.snapshot_every = config.snapshot_every;
    opt.check_positivity = config.check_positivity;
    if (config.write_fields && config.snapshot_every > 0) {
        fs::create_directories(out / "fields");
        opt.observer = [&](std::size_t step, const DensityMatrix& rho) {
            const std::string name = "fields/wigner_" + std::to_string(step) + ".bin";
            std::ofstream os(out / name, std::ios::binary);
            write_field_binary(os, wigner(rho, config.grid));
            files.push_back(name);
        };
    }
    const auto t0 = std::chrono::steady_clock::now();
    const auto initial =
        thermal_state(thermal_occupancy(point.params.kbt, point.params.omega), point.params.dim);
    const auto run =
        simulate_truth(point.params, initial, config.steps(), derive_seed(point.seed, 0), opt);
    SweepSummary summary;
    summary.index = point.index;
    summary.warnings = point.warnings;
    summary.timings.truth = elapsed(t0);

    {
        std::ofstream os(out / "record.csv", std::ios::binary);
        write_record_csv(os, run.record);
    }
    write_log_file(out / "truth.csv", run.log, config.log_every);
    files.insert(files.begin(), {"record.csv", "truth.csv"});
    finish(out, "simulate", config, files, summary);
    std::cout << "wrote " << run.record.length() << " increments to " << (out / "record.csv").string()
              << '\n';
    return kExitOk;
}

int cmd_estimate(const CommonFlags& f, const std::string& record_path) {
    const auto config = load(f);
    const auto point = config.sweep_points().front();
    const auto record = load_record(record_path);
    warn_if_foreign(record, point.params);
    const fs::path out = config.output_dir;
    fs::create_directories(out);
    std::vector<std::string> files;

    IntegrationOptions opt;
    opt.snapshot_every = config.snapshot_every;
    opt.check_positivity = config.check_positivity;
    if (config.write_fields && config.snapshot_every > 0) {
        fs::create_directories(out / "fields");
        opt.observer = [&](std::size_t step, const DensityMatrix& rho) {
            const std::string name = "fields/wigner_" + std::to_string(step) + ".bin";
            std::ofstream os(out / name, std::ios::binary);
            write_field_binary(os, wigner(rho, config.grid));
            files.push_back(name);
        };
    }
    const auto t0 = std::chrono::steady_clock::now();
    const auto log = estimate_conditional(record, point.params, std::nullopt, opt);
    SweepSummary summary;
    summary.index = point.index;
    summary.warnings = point.warnings;
    summary.timings.conditional = elapsed(t0);
    write_log_file(out / "conditional.csv", log, config.log_every);
    files.insert(files.begin(), "conditional.csv");
    finish(out, "estimate", config, files, summary);
    std::cout << "wrote " << log.size() << " conditional estimates to "
              << (out / "conditional.csv").string() << '\n';
    return kExitOk;
}

int cmd_track(const CommonFlags& f, const std::string& record_path) {
    const auto config = load(f);
    const auto point = config.sweep_points().front();
    const auto record = load_record(record_path);
    warn_if_foreign(record, point.params);
    const fs::path out = config.output_dir;
    fs::create_directories(out);

    const auto t0 = std::chrono::steady_clock::now();
    const auto run = run_particle_filter(record, point.params, config.particles,
                                         GaussianPrior::stationary(point.params),
                                         derive_seed(point.seed, 1));
    SweepSummary summary;
    summary.index = point.index;
    summary.warnings = point.warnings;
    summary.resample_count = run.resample_count;
    summary.timings.filter = elapsed(t0);
    write_log_file(out / "classical.csv", run.log, config.log_every);
    finish(out, "track", config, {"classical.csv"}, summary);
    std::cout << "wrote " << run.log.size() << " filter estimates to " << (out / "classical.csv").string()
              << " (" << run.resample_count << " resamples)\n";
    return kExitOk;
}

PhaseSpaceField load_field(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidArgument("cannot read field file '" + path + "'");
    return read_field_binary(in);
}

int cmd_compare(const std::string& truth_path, const std::string& estimate_path,
                std::size_t discard, const std::string& p1_path, const std::string& p2_path,
                const std::string& out_path) {
    json j;
    if (!truth_path.empty() || !estimate_path.empty()) {
        if (truth_path.empty() || estimate_path.empty()) {
            throw InvalidArgument("compare: --reference and --estimate go together");
        }
        std::ifstream a(truth_path), b(estimate_path);
        if (!a || !b) throw InvalidArgument("compare: cannot read trajectory logs");
        const auto stats = trajectory_error_stats(read_log_csv(a), read_log_csv(b), discard);
        j["error_stats"] = {{"sigma_x", stats.sigma_x},
                            {"sigma_p", stats.sigma_p},
                            {"samples", stats.samples},
                            {"discard", discard}};
    }
    if (!p1_path.empty() || !p2_path.empty()) {
        if (p1_path.empty() || p2_path.empty()) {
            throw InvalidArgument("compare: --p1 and --p2 go together");
        }
        auto p1 = load_field(p1_path);
        auto p2 = load_field(p2_path);
        if (p1.mode() == FieldMode::Wigner) p1 = positive_part(p1);
        else if (std::abs(p1.normalization_residual()) > 0.0) p1 = renormalized(p1);
        if (p2.mode() == FieldMode::Wigner) p2 = positive_part(p2);
        else if (std::abs(p2.normalization_residual()) > 0.0) p2 = renormalized(p2);
        j["kl"] = {{"value", kl_divergence(p1, p2)}, {"floor", kl_floor(p1.grid())}};
    }
    if (j.is_null()) throw InvalidArgument("compare: nothing to compare");
    const std::string text = j.dump(2);
    if (out_path.empty()) {
        std::cout << text << '\n';
    } else {
        std::ofstream os(out_path, std::ios::binary);
        os << text << '\n';
    }
    return kExitOk;
}

int cmd_sweep(const CommonFlags& f, bool no_kl) {
    const auto config = load(f);
    RunOptions opt;
    opt.compute_kl = !no_kl;
    const auto result = run_kl_sweep(config, opt);
    for (const auto& p : result.points) {
        std::cout << "point " << p.index << " kbt=" << io::format_double(p.kbt)
                  << " gamma=" << io::format_double(p.gamma) << " eta=" << io::format_double(p.eta)
                  << ": sigma_x=" << p.filter_vs_conditional.sigma_x
                  << " sigma_p=" << p.filter_vs_conditional.sigma_p << " kl=" << p.kl_mean;
        if (p.failure) std::cout << " FAILED: " << *p.failure;
        std::cout << '\n';
    }
    std::cout << "outputs in " << config.output_dir << " (config " << result.config_hash << ")\n";
    return result.invariant_violations > 0 ? kExitNumerical : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Quantum trajectories of a feedback-cooled oscillator and their classical tracking"};
    app.require_subcommand(1);

    CommonFlags sim_f, est_f, trk_f, swp_f;
    auto* sim = app.add_subcommand("simulate", "Truth SME trajectory and its measurement record");
    add_common(sim, sim_f);

    std::string est_record;
    auto* est = app.add_subcommand("estimate", "Conditional SME driven by a record file");
    add_common(est, est_f);
    est->add_option("--record", est_record, "Record CSV from 'simulate'")->required();

    std::string trk_record;
    auto* trk = app.add_subcommand("track", "Bootstrap particle filter driven by a record file");
    add_common(trk, trk_f);
    trk->add_option("--record", trk_record, "Record CSV from 'simulate'")->required();

    std::string cmp_ref, cmp_est, cmp_p1, cmp_p2, cmp_out;
    std::size_t cmp_discard = 0;
    auto* cmp = app.add_subcommand("compare", "Error statistics of two logs and/or KL of two fields");
    cmp->add_option("--reference", cmp_ref, "Reference trajectory log CSV");
    cmp->add_option("--estimate", cmp_est, "Estimated trajectory log CSV");
    cmp->add_option("--discard", cmp_discard, "Leading log entries to skip");
    cmp->add_option("--p1", cmp_p1, "Field file for P1 (Wigner fields use their positive part)");
    cmp->add_option("--p2", cmp_p2, "Field file for P2");
    cmp->add_option("--out", cmp_out, "Write JSON here instead of stdout");

    bool swp_no_kl = false;
    auto* swp = app.add_subcommand("sweep", "Full pipeline over every sweep point");
    add_common(swp, swp_f);
    swp->add_flag("--no-kl", swp_no_kl, "Skip Wigner/KL evaluation");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*sim) return cmd_simulate(sim_f);
        if (*est) return cmd_estimate(est_f, est_record);
        if (*trk) return cmd_track(trk_f, trk_record);
        if (*cmp) return cmd_compare(cmp_ref, cmp_est, cmp_discard, cmp_p1, cmp_p2, cmp_out);
        if (*swp) return cmd_sweep(swp_f, swp_no_kl);
    } catch (const ConfigError& e) {
        std::cerr << e.what() << '\n';
        return kExitConfig;
    } catch (const NumericalInvariantError& e) {
        std::cerr << "numerical invariant failure: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const DegenerateEnsemble& e) {
        std::cerr << "numerical invariant failure: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitFailure;
    }
    return kExitFailure;
}
