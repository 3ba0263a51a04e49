#include "qtrack/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "json.hpp"

#include "qtrack/error.hpp"
#include "qtrack/io.hpp"

namespace qtrack {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kTailWarnThreshold = 1e-6;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::string join_doubles(const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += io::format_double(v[i]);
    }
    return out;
}

std::string point_key(const ModelParams& p) {
    return "kbt=" + io::format_double(p.kbt) + ",gamma=" + io::format_double(p.gamma) +
           ",eta=" + io::format_double(p.eta);
}

std::string point_dir_name(std::size_t index) {
    std::string s = std::to_string(index);
    if (s.size() < 4) s.insert(0, 4 - s.size(), '0');
    return "point_" + s;
}

json stats_json(const ErrorStats& s) {
    return {{"sigma_x", s.sigma_x}, {"sigma_p", s.sigma_p}, {"samples", s.samples}};
}

json timings_json(const StageTimings& t) {
    return {{"truth", t.truth},
            {"conditional", t.conditional},
            {"filter", t.filter},
            {"phase_space", t.phase_space},
            {"output", t.output}};
}

// ---------------------------------------------------------------------------
// INI parsing

struct Parser {
    std::vector<std::string> errors;

    // Each reader leaves `dst` untouched when the text is malformed, so the
    // semantic checks that follow see only values that actually parsed.
    void number(const std::string& where, const std::string& text, double& dst) {
        double v = 0.0;
        if (parse_number(where, text, v)) dst = v;
    }

    bool parse_number(const std::string& where, const std::string& text, double& v) {
        try {
            v = io::parse_double(text);
        } catch (const InvalidArgument&) {
            errors.push_back(where + ": expected a number, got '" + text + "'");
            return false;
        }
        if (!std::isfinite(v)) {
            errors.push_back(where + ": value must be finite");
            return false;
        }
        return true;
    }

    template <class T>
    void count(const std::string& where, const std::string& text, T& dst) {
        const auto t = io::trim(text);
        std::uint64_t v = 0;
        const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
        if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size() ||
            v > static_cast<std::uint64_t>(std::numeric_limits<T>::max())) {
            errors.push_back(where + ": expected a non-negative integer, got '" + text + "'");
            return;
        }
        dst = static_cast<T>(v);
    }

    void boolean(const std::string& where, const std::string& text, bool& dst) {
        std::string t(io::trim(text));
        std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
        if (t == "true" || t == "yes" || t == "on" || t == "1") {
            dst = true;
        } else if (t == "false" || t == "no" || t == "off" || t == "0") {
            dst = false;
        } else {
            errors.push_back(where + ": expected true or false, got '" + text + "'");
        }
    }

    void list(const std::string& where, const std::string& text,
              std::optional<std::vector<double>>& dst) {
        std::vector<double> out;
        bool ok = true;
        std::string_view rest = io::trim(text);
        while (!rest.empty()) {
            const auto comma = rest.find(',');
            const auto item = io::trim(rest.substr(0, comma));
            double v = 0.0;
            if (item.empty()) {
                errors.push_back(where + ": empty list element");
                ok = false;
            } else if (parse_number(where, std::string(item), v)) {
                out.push_back(v);
            } else {
                ok = false;
            }
            if (comma == std::string_view::npos) break;
            rest = rest.substr(comma + 1);
        }
        if (ok) dst = std::move(out);
    }
};

}  // namespace

int auto_dimension(double kbt) {
    const double raw = std::ceil(40.0 * (1.0 + kbt));
    return static_cast<int>(std::min(120.0, std::max(60.0, raw)));
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
    return splitmix64(splitmix64(master) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

std::size_t ExperimentConfig::steps_per_cycle() const {
    if (!(model.dt > 0.0)) return 0;
    return static_cast<std::size_t>(std::llround(1.0 / model.dt));
}

std::vector<std::string> ExperimentConfig::violations() const {
    std::vector<std::string> out;
    for (auto& v : model.violations()) {
        if (auto_dim && v.rfind("dim", 0) == 0) continue;
        out.push_back("model: " + v);
    }
    if (model.dt > 0.0 && steps_per_cycle() == 0) out.push_back("model: dt must be <= 2");
    if (particles < 2) out.push_back("run: particles must be >= 2");
    if (cycles > 0 && transient_cycles >= cycles) {
        out.push_back("run: transient_cycles must be < cycles");
    }
    if (log_every < 1) out.push_back("run: log_every must be >= 1");
    if (parallel < 1) out.push_back("run: parallel must be >= 1");
    if (output_dir.empty()) out.push_back("run: output_dir must not be empty");
    for (auto& v : grid.violations()) out.push_back(v);

    const std::pair<const char*, const std::optional<std::vector<double>>*> axes[] = {
        {"kbt", &sweep.kbt}, {"gamma", &sweep.gamma}, {"eta", &sweep.eta}};
    bool axes_ok = true;
    for (const auto& [name, axis] : axes) {
        if (axis->has_value() && (*axis)->empty()) {
            out.push_back(std::string("sweep: axis ") + name + " is empty");
            axes_ok = false;
        }
    }
    if (axes_ok && out.empty()) {
        for (const auto& pt : sweep_points()) {
            for (const auto& v : pt.params.violations()) {
                out.push_back("sweep point " + point_key(pt.params) + ": " + v);
            }
        }
    }
    return out;
}

void ExperimentConfig::validate() const {
    auto v = violations();
    if (!v.empty()) throw ConfigError(std::move(v));
}

std::vector<SweepPoint> ExperimentConfig::sweep_points() const {
    const auto kbts = sweep.kbt.value_or(std::vector<double>{model.kbt});
    const auto gammas = sweep.gamma.value_or(std::vector<double>{model.gamma});
    const auto etas = sweep.eta.value_or(std::vector<double>{model.eta});
    std::vector<SweepPoint> out;
    for (double kbt : kbts) {
        for (double gamma : gammas) {
            for (double eta : etas) {
                SweepPoint pt;
                pt.index = out.size();
                pt.params = model;
                pt.params.kbt = kbt;
                pt.params.gamma = gamma;
                pt.params.eta = eta;
                if (auto_dim) pt.params.dim = auto_dimension(kbt);
                pt.seed = derive_seed(seed, pt.index);
                if (pt.params.dim >= 2 && kbt >= 0.0 && std::isfinite(kbt)) {
                    const double n_bar = thermal_occupancy(kbt, model.omega);
                    const double tail = tail_population(thermal_state(n_bar, pt.params.dim));
                    if (tail > kTailWarnThreshold) {
                        pt.warnings.push_back("thermal occupancy in the top 10% of levels is " +
                                              io::format_double(tail) + " at " +
                                              point_key(pt.params) + ", dim " +
                                              std::to_string(pt.params.dim));
                    }
                }
                out.push_back(std::move(pt));
            }
        }
    }
    return out;
}

std::string ExperimentConfig::canonical_string() const {
    std::ostringstream os;
    const auto f = io::format_double;
    os << "model.k=" << f(model.k) << '\n'
       << "model.eta=" << f(model.eta) << '\n'
       << "model.gamma=" << f(model.gamma) << '\n'
       << "model.damping=" << f(model.damping) << '\n'
       << "model.kbt=" << f(model.kbt) << '\n'
       << "model.alpha=" << f(model.alpha) << '\n'
       << "model.omega=" << f(model.omega) << '\n'
       << "model.dt=" << f(model.dt) << '\n'
       << "model.dim=" << (auto_dim ? std::string("auto") : std::to_string(model.dim)) << '\n'
       << "run.particles=" << particles << '\n'
       << "run.cycles=" << cycles << '\n'
       << "run.transient_cycles=" << transient_cycles << '\n'
       << "run.seed=" << seed << '\n'
       << "run.snapshot_every=" << snapshot_every << '\n'
       << "run.log_every=" << log_every << '\n'
       << "run.check_positivity=" << check_positivity << '\n'
       << "run.write_trajectories=" << write_trajectories << '\n'
       << "run.write_fields=" << write_fields << '\n'
       << "grid.x_min=" << f(grid.x_min) << '\n'
       << "grid.x_max=" << f(grid.x_max) << '\n'
       << "grid.p_min=" << f(grid.p_min) << '\n'
       << "grid.p_max=" << f(grid.p_max) << '\n'
       << "grid.nx=" << grid.nx << '\n'
       << "grid.np=" << grid.np << '\n';
    const auto axis = [](const std::optional<std::vector<double>>& a) {
        return a ? join_doubles(*a) : std::string("model");
    };
    os << "sweep.kbt=" << axis(sweep.kbt) << '\n'
       << "sweep.gamma=" << axis(sweep.gamma) << '\n'
       << "sweep.eta=" << axis(sweep.eta) << '\n';
    return os.str();
}

std::string ExperimentConfig::hash() const { return io::sha256_hex(canonical_string()); }

ExperimentConfig parse_config_text(std::string_view text) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        std::istringstream is{std::string(text)};
        pt::ini_parser::read_ini(is, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError({std::string("syntax: ") + e.message() + " (line " +
                           std::to_string(e.line()) + ")"});
    }

    ExperimentConfig c;
    Parser p;
    using Handler = std::function<void(const std::string& where, const std::string& value)>;
    const auto num = [&](double& dst) {
        return Handler([&](const std::string& w, const std::string& v) { p.number(w, v, dst); });
    };
    const auto cnt = [&](auto& dst) {
        return Handler([&](const std::string& w, const std::string& v) { p.count(w, v, dst); });
    };
    const auto flag = [&](bool& dst) {
        return Handler([&](const std::string& w, const std::string& v) { p.boolean(w, v, dst); });
    };
    const auto axis = [&](std::optional<std::vector<double>>& dst) {
        return Handler([&](const std::string& w, const std::string& v) { p.list(w, v, dst); });
    };

    const std::map<std::string, std::map<std::string, Handler>> schema = {
        {"model",
         {{"k", num(c.model.k)},
          {"eta", num(c.model.eta)},
          {"gamma", num(c.model.gamma)},
          {"damping", num(c.model.damping)},
          {"kbt", num(c.model.kbt)},
          {"alpha", num(c.model.alpha)},
          {"omega", num(c.model.omega)},
          {"dt", num(c.model.dt)},
          {"dim", Handler([&](const std::string& w, const std::string& v) {
               if (io::trim(v) == "auto") {
                   c.auto_dim = true;
               } else {
                   c.auto_dim = false;
                   p.count(w, v, c.model.dim);
               }
           })}}},
        {"run",
         {{"particles", cnt(c.particles)},
          {"cycles", cnt(c.cycles)},
          {"transient_cycles", cnt(c.transient_cycles)},
          {"seed", cnt(c.seed)},
          {"snapshot_every", cnt(c.snapshot_every)},
          {"log_every", cnt(c.log_every)},
          {"check_positivity", flag(c.check_positivity)},
          {"write_trajectories", flag(c.write_trajectories)},
          {"write_fields", flag(c.write_fields)},
          {"parallel", cnt(c.parallel)},
          {"output_dir", Handler([&](const std::string&, const std::string& v) {
               c.output_dir = std::string(io::trim(v));
           })}}},
        {"grid",
         {{"x_min", num(c.grid.x_min)},
          {"x_max", num(c.grid.x_max)},
          {"p_min", num(c.grid.p_min)},
          {"p_max", num(c.grid.p_max)},
          {"nx", cnt(c.grid.nx)},
          {"np", cnt(c.grid.np)}}},
        {"sweep", {{"kbt", axis(c.sweep.kbt)}, {"gamma", axis(c.sweep.gamma)}, {"eta", axis(c.sweep.eta)}}},
    };

    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty()) {
            p.errors.push_back("key '" + section + "' is outside any section");
            continue;
        }
        const auto sec = schema.find(section);
        if (sec == schema.end()) {
            p.errors.push_back("unknown section [" + section + "]");
            continue;
        }
        for (const auto& [key, value] : body) {
            const auto h = sec->second.find(key);
            if (h == sec->second.end()) {
                p.errors.push_back("unknown key '" + key + "' in [" + section + "]");
                continue;
            }
            h->second(section + "." + key, value.data());
        }
    }

    auto errors = std::move(p.errors);
    for (auto& v : c.violations()) errors.push_back(std::move(v));
    if (!errors.empty()) throw ConfigError(std::move(errors));
    return c;
}

ExperimentConfig parse_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError({"cannot read config file '" + path.string() + "'"});
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

// ---------------------------------------------------------------------------
// Pipeline

PointResult run_point(const ExperimentConfig& config, const SweepPoint& point,
                      const PointOptions& options) {
    PointResult res;
    res.point = point;
    const ModelParams& params = point.params;
    const std::size_t steps = config.steps();
    if (steps == 0) return res;
    const std::size_t transient = std::min(config.transient_steps(), steps);

    try {
        auto t0 = Clock::now();
        IntegrationOptions topt;
        topt.snapshot_every = 0;
        topt.check_positivity = config.check_positivity;
        const auto initial = thermal_state(thermal_occupancy(params.kbt, params.omega), params.dim);
        auto truth = simulate_truth(params, initial, steps, derive_seed(point.seed, 0), topt);
        res.timings.truth = seconds_since(t0);
        res.truth = std::move(truth.log);
        res.record = std::move(truth.record);

        ConditionalEstimator est(params, DensityMatrix::maximally_mixed(params.dim));
        auto ensemble =
            pf_init(config.particles, GaussianPrior::stationary(params), derive_seed(point.seed, 1));
        res.conditional.reserve(steps + 1);
        res.classical.reserve(steps + 1);
        res.conditional.append(0.0, est.mean_x(), est.mean_p(), purity(est.state()));
        auto m = ensemble_moments(ensemble);
        res.classical.append(0.0, m.mean_x, m.mean_p);

        const bool kl_on = options.compute_kl && config.snapshot_every > 0;
        for (std::size_t n = 1; n <= steps; ++n) {
            const double dy = res.record.increments[n - 1];
            const double t = static_cast<double>(n) * params.dt;

            auto tc = Clock::now();
            est.update(dy);
            if (config.check_positivity && !is_positive_semidefinite(est.state().entries())) {
                throw NumericalInvariantError("conditional state lost positivity at step " +
                                              std::to_string(n));
            }
            res.conditional.append(t, est.mean_x(), est.mean_p(), purity(est.state()));
            res.timings.conditional += seconds_since(tc);

            auto tf = Clock::now();
            if (pf_update(ensemble, dy, params).resampled) ++res.resample_count;
            m = ensemble_moments(ensemble);
            res.classical.append(t, m.mean_x, m.mean_p);
            res.timings.filter += seconds_since(tf);

            if (kl_on && n >= transient && n % config.snapshot_every == 0) {
                auto tk = Clock::now();
                KlSample s;
                s.step = n;
                if (options.field_override) {
                    const auto [f1, f2] = options.field_override(n, est.state(), ensemble);
                    s.kl = kl_divergence(f1, f2);
                } else {
                    const auto w = wigner(est.state(), config.grid);
                    s.wigner_residual = w.normalization_residual();
                    const auto hist = ensemble_field(ensemble, config.grid);
                    s.out_of_bounds_mass = hist.out_of_bounds_mass;
                    if (hist.out_of_bounds_mass >= 1.0 - 1e-12) {
                        throw NumericalInvariantError("every particle left the phase-space grid at step " +
                                                      std::to_string(n));
                    }
                    const auto p1 = renormalized(hist);
                    const auto p2 = positive_part(w);
                    s.kl = kl_divergence(p1, p2);
                    if (options.field_observer) options.field_observer(n, w, hist);
                }
                res.kl.push_back(s);
                res.timings.phase_space += seconds_since(tk);
            }
        }
    } catch (const NumericalInvariantError& e) {
        res.failure = e.what();
    } catch (const DegenerateEnsemble& e) {
        res.failure = e.what();
    }
    if (res.failure) return res;

    res.filter_vs_conditional = trajectory_error_stats(res.conditional, res.classical, transient);
    res.filter_vs_truth = trajectory_error_stats(res.truth, res.classical, transient);
    res.conditional_vs_truth = trajectory_error_stats(res.truth, res.conditional, transient);
    if (!res.kl.empty()) {
        double sum = 0.0;
        for (const auto& s : res.kl) sum += s.kl;
        res.kl_mean = sum / static_cast<double>(res.kl.size());
        double var = 0.0;
        for (const auto& s : res.kl) var += (s.kl - res.kl_mean) * (s.kl - res.kl_mean);
        res.kl_std = std::sqrt(var / static_cast<double>(res.kl.size()));
    }
    return res;
}

PointResult run_tracking(const ExperimentConfig& config) {
    config.validate();
    PointOptions opt;
    opt.compute_kl = false;
    return run_point(config, config.sweep_points().front(), opt);
}

SweepSummary summarize(const PointResult& r) {
    SweepSummary s;
    s.index = r.point.index;
    s.kbt = r.point.params.kbt;
    s.gamma = r.point.params.gamma;
    s.eta = r.point.params.eta;
    s.dim = r.point.params.dim;
    s.seed = r.point.seed;
    s.filter_vs_conditional = r.filter_vs_conditional;
    s.filter_vs_truth = r.filter_vs_truth;
    s.conditional_vs_truth = r.conditional_vs_truth;
    s.kl_mean = r.kl_mean;
    s.kl_std = r.kl_std;
    s.kl_samples = r.kl.size();
    s.resample_count = r.resample_count;
    s.timings = r.timings;
    s.warnings = r.point.warnings;
    s.failure = r.failure;
    return s;
}

// ---------------------------------------------------------------------------
// Output

void write_log_file(const fs::path& path, const TrajectoryLog& log, std::size_t every) {
    every = std::max<std::size_t>(every, 1);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write '" + path.string() + "'");
    if (every == 1) {
        write_log_csv(os, log);
        return;
    }
    TrajectoryLog thin;
    const bool with_purity = !log.purity.empty();
    for (std::size_t i = 0; i < log.size(); ++i) {
        if (i % every != 0 && i + 1 != log.size()) continue;
        if (with_purity) {
            thin.append(log.times[i], log.mean_x[i], log.mean_p[i], log.purity[i]);
        } else {
            thin.append(log.times[i], log.mean_x[i], log.mean_p[i]);
        }
    }
    write_log_csv(os, thin);
}

namespace {

std::string file_sha256(const fs::path& path, std::uintmax_t& bytes) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string data = ss.str();
    bytes = data.size();
    return io::sha256_hex(data);
}

std::vector<std::string> write_point_files(const ExperimentConfig& config, const PointResult& r,
                                           const fs::path& out_dir) {
    std::vector<std::string> files;
    const std::string dir = point_dir_name(r.point.index);
    fs::create_directories(out_dir / dir);
    const auto add = [&](const std::string& name) { files.push_back(dir + "/" + name); };

    if (config.write_trajectories) {
        {
            std::ofstream os(out_dir / dir / "record.csv", std::ios::binary);
            write_record_csv(os, r.record);
        }
        add("record.csv");
        write_log_file(out_dir / dir / "truth.csv", r.truth, config.log_every);
        add("truth.csv");
        write_log_file(out_dir / dir / "conditional.csv", r.conditional, config.log_every);
        add("conditional.csv");
        write_log_file(out_dir / dir / "classical.csv", r.classical, config.log_every);
        add("classical.csv");
    }
    {
        std::ofstream os(out_dir / dir / "kl.csv", std::ios::binary);
        os << "step,t,kl,wigner_residual,out_of_bounds_mass\n";
        for (const auto& s : r.kl) {
            os << s.step << ',' << io::format_double(static_cast<double>(s.step) * r.point.params.dt)
               << ',' << io::format_double(s.kl) << ',' << io::format_double(s.wigner_residual)
               << ',' << io::format_double(s.out_of_bounds_mass) << '\n';
        }
    }
    add("kl.csv");
    return files;
}

json summary_json(const SweepSummary& s) {
    json j = {{"index", s.index},
              {"key", "kbt=" + io::format_double(s.kbt) + ",gamma=" + io::format_double(s.gamma) +
                          ",eta=" + io::format_double(s.eta)},
              {"kbt", s.kbt},
              {"gamma", s.gamma},
              {"eta", s.eta},
              {"dim", s.dim},
              {"seed", s.seed},
              {"filter_vs_conditional", stats_json(s.filter_vs_conditional)},
              {"filter_vs_truth", stats_json(s.filter_vs_truth)},
              {"conditional_vs_truth", stats_json(s.conditional_vs_truth)},
              {"kl_mean", s.kl_mean},
              {"kl_std", s.kl_std},
              {"kl_samples", s.kl_samples},
              {"resample_count", s.resample_count}};
    j["failure"] = s.failure ? json(*s.failure) : json(nullptr);
    return j;
}

}  // namespace

void write_manifest(const fs::path& out_dir, const ManifestInput& in) {
    json j;
    j["command"] = in.command;
    if (in.config) {
        j["config_hash"] = in.config->hash();
        j["seed"] = in.config->seed;
        json cfg = json::object();
        std::istringstream lines(in.config->canonical_string());
        std::string line;
        while (std::getline(lines, line)) {
            const auto eq = line.find('=');
            cfg[line.substr(0, eq)] = line.substr(eq + 1);
        }
        j["config"] = cfg;
        j["steps_per_cycle"] = in.config->steps_per_cycle();
        j["kl_floor_mass"] = KlOptions{}.floor_mass;
    }
    StageTimings total;
    json per_point = json::array();
    json failures = json::array();
    json warnings = in.warnings;
    for (const auto& s : in.points) {
        total.truth += s.timings.truth;
        total.conditional += s.timings.conditional;
        total.filter += s.timings.filter;
        total.phase_space += s.timings.phase_space;
        total.output += s.timings.output;
        json t = timings_json(s.timings);
        t["index"] = s.index;
        per_point.push_back(t);
        if (s.failure) failures.push_back({{"index", s.index}, {"message", *s.failure}});
        for (const auto& w : s.warnings) warnings.push_back(w);
    }
    j["timings"] = {{"total", timings_json(total)}, {"points", per_point}};
    j["invariant_violations"] = in.invariant_violations;
    j["failures"] = failures;
    j["warnings"] = warnings;
    json files = json::array();
    for (const auto& f : in.files) {
        std::uintmax_t bytes = 0;
        const auto digest = file_sha256(out_dir / f, bytes);
        files.push_back({{"path", f}, {"sha256", digest}, {"bytes", bytes}});
    }
    j["files"] = files;
    std::ofstream os(out_dir / "manifest.json", std::ios::binary);
    if (!os) throw Error("cannot write manifest in '" + out_dir.string() + "'");
    os << j.dump(2) << '\n';
}

SweepResult run_kl_sweep(const ExperimentConfig& config, const RunOptions& options) {
    config.validate();
    const auto points = config.sweep_points();
    const fs::path out_dir = config.output_dir;
    if (options.write_outputs) fs::create_directories(out_dir);

    std::vector<SweepSummary> summaries(points.size());
    std::vector<std::vector<std::string>> files(points.size());
    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr first_error;

    const auto worker = [&] {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= points.size()) return;
            try {
                PointOptions popt;
                popt.compute_kl = options.compute_kl;
                const fs::path field_dir = out_dir / point_dir_name(i) / "fields";
                if (options.write_outputs && config.write_fields) {
                    fs::create_directories(field_dir);
                    popt.field_observer = [&, i](std::size_t step, const PhaseSpaceField& w,
                                                 const PhaseSpaceField& pdf) {
                        const std::string stem = std::to_string(step);
                        std::ofstream ow(field_dir / ("wigner_" + stem + ".bin"), std::ios::binary);
                        write_field_binary(ow, w);
                        std::ofstream op(field_dir / ("pdf_" + stem + ".bin"), std::ios::binary);
                        write_field_binary(op, pdf);
                        files[i].push_back(point_dir_name(i) + "/fields/wigner_" + stem + ".bin");
                        files[i].push_back(point_dir_name(i) + "/fields/pdf_" + stem + ".bin");
                    };
                }
                auto result = run_point(config, points[i], popt);
                auto to = Clock::now();
                if (options.write_outputs) {
                    auto written = write_point_files(config, result, out_dir);
                    files[i].insert(files[i].end(), written.begin(), written.end());
                }
                result.timings.output = seconds_since(to);
                summaries[i] = summarize(result);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        }
    };
    const std::size_t nthreads = std::min(config.parallel, std::max<std::size_t>(points.size(), 1));
    if (nthreads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < nthreads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (first_error) std::rethrow_exception(first_error);

    SweepResult result;
    result.config_hash = config.hash();
    result.points = summaries;
    for (const auto& s : summaries) {
        if (s.failure) ++result.invariant_violations;
    }
    if (!options.write_outputs) return result;

    std::vector<std::string> all_files;
    for (const auto& f : files) all_files.insert(all_files.end(), f.begin(), f.end());
    {
        std::ofstream os(out_dir / "summary.csv", std::ios::binary);
        os << "# config_hash=" << result.config_hash << '\n';
        os << "index,kbt,gamma,eta,dim,seed,sigma_x,sigma_p,sigma_x_filter_truth,"
              "sigma_p_filter_truth,sigma_x_conditional_truth,sigma_p_conditional_truth,"
              "kl_mean,kl_std,kl_samples,resamples,failed\n";
        const auto f = io::format_double;
        for (const auto& s : summaries) {
            os << s.index << ',' << f(s.kbt) << ',' << f(s.gamma) << ',' << f(s.eta) << ','
               << s.dim << ',' << s.seed << ',' << f(s.filter_vs_conditional.sigma_x) << ','
               << f(s.filter_vs_conditional.sigma_p) << ',' << f(s.filter_vs_truth.sigma_x) << ','
               << f(s.filter_vs_truth.sigma_p) << ',' << f(s.conditional_vs_truth.sigma_x) << ','
               << f(s.conditional_vs_truth.sigma_p) << ',' << f(s.kl_mean) << ',' << f(s.kl_std)
               << ',' << s.kl_samples << ',' << s.resample_count << ',' << (s.failure ? 1 : 0)
               << '\n';
        }
    }
    {
        json j;
        j["config_hash"] = result.config_hash;
        j["kl_floor"] = kl_floor(config.grid);
        j["kl_floor_mass"] = KlOptions{}.floor_mass;
        j["snapshot_every"] = config.snapshot_every;
        j["transient_steps"] = config.transient_steps();
        j["grid"] = {{"x_min", config.grid.x_min}, {"x_max", config.grid.x_max},
                     {"p_min", config.grid.p_min}, {"p_max", config.grid.p_max},
                     {"nx", config.grid.nx},       {"np", config.grid.np}};
        json pts = json::array();
        for (const auto& s : summaries) pts.push_back(summary_json(s));
        j["points"] = pts;
        std::ofstream os(out_dir / "metrics.json", std::ios::binary);
        os << j.dump(2) << '\n';
    }
    all_files.push_back("summary.csv");
    all_files.push_back("metrics.json");

    ManifestInput mi;
    mi.command = "sweep";
    mi.config = &config;
    mi.points = summaries;
    mi.files = all_files;
    mi.invariant_violations = result.invariant_violations;
    write_manifest(out_dir, mi);
    return result;
}

}  // namespace qtrack
