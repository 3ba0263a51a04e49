#include "qtrack/phase_space.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <map>
#include <numbers>
#include <ostream>

#include "qtrack/error.hpp"
#include "qtrack/io.hpp"

namespace qtrack {

std::vector<std::string> PhaseSpaceGrid::violations() const {
    std::vector<std::string> out;
    if (nx < 2) out.push_back("grid nx must be >= 2");
    if (np < 2) out.push_back("grid np must be >= 2");
    if (!(x_max > x_min)) out.push_back("grid x_max must exceed x_min");
    if (!(p_max > p_min)) out.push_back("grid p_max must exceed p_min");
    return out;
}

void PhaseSpaceGrid::validate() const {
    const auto v = violations();
    if (v.empty()) return;
    std::string msg = "invalid phase-space grid:";
    for (const auto& s : v) msg += " " + s + ";";
    throw InvalidArgument(msg);
}

const char* to_string(FieldMode mode) { return mode == FieldMode::Wigner ? "wigner" : "pdf"; }

PhaseSpaceField::PhaseSpaceField(PhaseSpaceGrid grid, FieldMode mode, Eigen::MatrixXd values)
    : grid_(grid), mode_(mode), values_(std::move(values)) {
    grid_.validate();
    if (values_.rows() != grid_.nx || values_.cols() != grid_.np) {
        throw DimensionMismatch("PhaseSpaceField: values shape does not match grid");
    }
}

double PhaseSpaceField::mass() const { return values_.sum() * grid_.cell_area(); }

bool normalization_ok(const PhaseSpaceField& field) {
    const double tol = field.mode() == FieldMode::Wigner ? kWignerNormTol : kPdfNormTol;
    return std::abs(field.normalization_residual()) <= tol;
}

// ---------------------------------------------------------------------------
// Wigner function

namespace {

constexpr int kBatch = 16;  // grid points evaluated together so the recurrence vectorizes

}  // namespace

PhaseSpaceField wigner(const DensityMatrix& rho, const PhaseSpaceGrid& grid) {
    grid.validate();
    const int d = rho.dim();
    const auto& r = rho.entries();

    // Trailing entries of a diagonal whose absolute sum stays below this are
    // dropped; since |f_n| <= 1 the pointwise error is at most 2/pi times it.
    constexpr double kTailTol = 1e-17;

    // Off-diagonal L holds (-1)^n rho(n+L, n), n = 0 .. d-1-L, plus the
    // recurrence coefficients of the normalized Laguerre functions
    //   f_n = sqrt(n!/(n+L)!) y^{L/2} e^{-y/2} L_n^L(y).
    std::vector<Eigen::VectorXcd> diag(d);
    std::vector<Eigen::VectorXd> coef_a(d);  // 1/sqrt((n+1)(n+1+L))
    std::vector<Eigen::VectorXd> coef_b(d);  // sqrt(n(n+L))
    std::vector<double> half_log_fact(d);    // log(L!)/2
    for (int L = 0; L < d; ++L) {
        const int len = d - L;
        diag[L].resize(len);
        coef_a[L].resize(len);
        coef_b[L].resize(len);
        for (int n = 0; n < len; ++n) {
            diag[L](n) = (n % 2 == 0 ? 1.0 : -1.0) * r(n + L, n);
            coef_a[L](n) = 1.0 / std::sqrt((n + 1.0) * (n + 1.0 + L));
            coef_b[L](n) = std::sqrt(static_cast<double>(n) * (n + L));
        }
        half_log_fact[L] = 0.5 * std::lgamma(L + 1.0);
    }
    std::vector<int> used(d, 0);  // entries of diagonal L that contribute
    for (int L = 0; L < d; ++L) {
        double tail = 0.0;
        int len = d - L;
        while (len > 0 && tail + std::abs(diag[L](len - 1)) <= kTailTol) {
            tail += std::abs(diag[L](len - 1));
            --len;
        }
        used[L] = len;
    }

    Eigen::MatrixXd values(grid.nx, grid.np);
    for (int i = 0; i < grid.nx; ++i) {
        const double x = grid.x(i);
        for (int j0 = 0; j0 < grid.np; j0 += kBatch) {
            const int nb = std::min(kBatch, grid.np - j0);
            std::array<double, kBatch> y{}, log_y{}, cos_t{}, sin_t{}, acc{};
            for (int b = 0; b < kBatch; ++b) {
                const double p = grid.p(j0 + std::min(b, nb - 1));
                const double r2 = x * x + p * p;
                y[b] = 2.0 * r2;
                log_y[b] = std::log(y[b]);
                const double rad = std::sqrt(r2);
                // (x - ip)/|x - ip| = exp(-i theta)
                cos_t[b] = rad > 0.0 ? x / rad : 1.0;
                sin_t[b] = rad > 0.0 ? -p / rad : 0.0;
            }
            std::array<double, kBatch> ph_re{}, ph_im{};  // exp(-i L theta)
            ph_re.fill(1.0);

            for (int L = 0; L < d; ++L) {
                if (L > 0) {
                    for (int b = 0; b < kBatch; ++b) {
                        const double re = ph_re[b] * cos_t[b] - ph_im[b] * sin_t[b];
                        const double im = ph_re[b] * sin_t[b] + ph_im[b] * cos_t[b];
                        ph_re[b] = re;
                        ph_im[b] = im;
                    }
                }
                const int len = used[L];
                if (len == 0) continue;
                const Complex* rl = diag[L].data();
                const double* a = coef_a[L].data();
                const double* bcoef = coef_b[L].data();

                std::array<double, kBatch> f{}, f_prev{}, s_re{}, s_im{};
                for (int b = 0; b < kBatch; ++b) {
                    f[b] = L == 0 ? std::exp(-0.5 * y[b])
                                  : std::exp(0.5 * L * log_y[b] - half_log_fact[L] - 0.5 * y[b]);
                    s_re[b] = rl[0].real() * f[b];
                    s_im[b] = rl[0].imag() * f[b];
                }
                for (int n = 0; n + 1 < len; ++n) {
                    const double base = 2.0 * n + 1.0 + L;
                    const double an = a[n];
                    const double bn = bcoef[n];
                    const double rre = rl[n + 1].real();
                    const double rim = rl[n + 1].imag();
                    for (int b = 0; b < kBatch; ++b) {
                        const double next = ((base - y[b]) * f[b] - bn * f_prev[b]) * an;
                        f_prev[b] = f[b];
                        f[b] = next;
                        s_re[b] += rre * next;
                        s_im[b] += rim * next;
                    }
                }
                const double weight = L == 0 ? 1.0 : 2.0;
                for (int b = 0; b < kBatch; ++b) {
                    acc[b] += weight * (ph_re[b] * s_re[b] - ph_im[b] * s_im[b]);
                }
            }
            for (int b = 0; b < nb; ++b) values(i, j0 + b) = acc[b] / std::numbers::pi;
        }
    }
    return PhaseSpaceField(grid, FieldMode::Wigner, std::move(values));
}

// ---------------------------------------------------------------------------

PhaseSpaceField ensemble_field(const ParticleEnsemble& ensemble, const PhaseSpaceGrid& grid) {
    grid.validate();
    Eigen::MatrixXd values = Eigen::MatrixXd::Zero(grid.nx, grid.np);
    const double dx = grid.dx();
    const double dp = grid.dp();
    const double inv_area = 1.0 / (dx * dp);
    double oob_mass = 0.0;
    std::size_t oob_count = 0;
    for (std::size_t k = 0; k < ensemble.size(); ++k) {
        const auto& s = ensemble.particles[k];
        const double w = ensemble.weights[k];
        const double fi = std::floor((s.x - grid.x_min) / dx + 0.5);
        const double fj = std::floor((s.p - grid.p_min) / dp + 0.5);
        if (fi < 0.0 || fi >= grid.nx || fj < 0.0 || fj >= grid.np || !std::isfinite(fi) ||
            !std::isfinite(fj)) {
            oob_mass += w;
            ++oob_count;
            continue;
        }
        values(static_cast<int>(fi), static_cast<int>(fj)) += w * inv_area;
    }
    PhaseSpaceField field(grid, FieldMode::Pdf, std::move(values));
    field.out_of_bounds_mass = oob_mass;
    field.out_of_bounds_count = oob_count;
    return field;
}

PhaseSpaceField positive_part(const PhaseSpaceField& field) {
    Eigen::MatrixXd clipped = field.values().cwiseMax(0.0);
    const double mass = clipped.sum() * field.grid().cell_area();
    if (!(mass > 0.0)) throw InvalidArgument("positive_part: field has no positive values");
    clipped /= mass;
    return PhaseSpaceField(field.grid(), FieldMode::Pdf, std::move(clipped));
}

PhaseSpaceField renormalized(const PhaseSpaceField& field) {
    if (field.values().minCoeff() < 0.0) throw InvalidArgument("renormalized: negative values");
    const double mass = field.mass();
    if (!(mass > 0.0)) throw InvalidArgument("renormalized: field has zero mass");
    PhaseSpaceField out(field.grid(), FieldMode::Pdf, field.values() / mass);
    out.out_of_bounds_mass = field.out_of_bounds_mass;
    out.out_of_bounds_count = field.out_of_bounds_count;
    return out;
}

double kl_floor(const PhaseSpaceGrid& grid, const KlOptions& options) {
    return options.floor_mass / grid.cell_area();
}

double kl_divergence(const PhaseSpaceField& p1, const PhaseSpaceField& p2,
                     const KlOptions& options) {
    if (!(p1.grid() == p2.grid())) throw DimensionMismatch("kl_divergence: grids differ");
    for (const auto* f : {&p1, &p2}) {
        if (f->values().minCoeff() < 0.0) {
            throw InvalidArgument("kl_divergence: inputs must be non-negative");
        }
        if (std::abs(f->mass() - 1.0) > options.normalization_tol) {
            throw InvalidArgument("kl_divergence: input not normalized (mass " +
                                  io::format_double(f->mass()) + ")");
        }
    }
    const double floor = kl_floor(p1.grid(), options);
    const auto& a = p1.values();
    const auto& b = p2.values();
    double acc = 0.0;
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
        for (Eigen::Index i = 0; i < a.rows(); ++i) {
            const double pa = a(i, j);
            if (pa <= 0.0) continue;
            // both sides floored so that equal fields give exactly zero
            acc += pa * std::log(std::max(pa, floor) / std::max(b(i, j), floor));
        }
    }
    return acc * p1.grid().cell_area();
}

ErrorStats trajectory_error_stats(const TrajectoryLog& truth, const TrajectoryLog& estimate,
                                  std::size_t discard) {
    if (truth.size() != estimate.size()) {
        throw DimensionMismatch("trajectory_error_stats: logs differ in length (" +
                                std::to_string(truth.size()) + " vs " +
                                std::to_string(estimate.size()) + ")");
    }
    ErrorStats out;
    if (discard >= truth.size()) return out;
    const std::size_t n = truth.size() - discard;
    auto population_std = [&](const std::vector<double>& a, const std::vector<double>& b) {
        double mean = 0.0;
        for (std::size_t i = discard; i < a.size(); ++i) mean += a[i] - b[i];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = discard; i < a.size(); ++i) {
            const double e = a[i] - b[i] - mean;
            var += e * e;
        }
        return std::sqrt(var / static_cast<double>(n));
    };
    out.sigma_x = population_std(truth.mean_x, estimate.mean_x);
    out.sigma_p = population_std(truth.mean_p, estimate.mean_p);
    out.samples = n;
    return out;
}

// ---------------------------------------------------------------------------
// Serialization

void write_field_csv(std::ostream& os, const PhaseSpaceField& field) {
    const auto& g = field.grid();
    os << "x,p,value\n";
    for (int i = 0; i < g.nx; ++i) {
        for (int j = 0; j < g.np; ++j) {
            os << io::format_double(g.x(i)) << ',' << io::format_double(g.p(j)) << ','
               << io::format_double(field(i, j)) << '\n';
        }
    }
}

PhaseSpaceField read_field_csv(std::istream& is, FieldMode mode) {
    std::string line;
    if (!std::getline(is, line) || io::trim(line) != "x,p,value") {
        throw InvalidArgument("field csv: expected header 'x,p,value'");
    }
    std::map<double, std::map<double, double>> rows;
    while (std::getline(is, line)) {
        const auto t = io::trim(line);
        if (t.empty()) continue;
        const auto c1 = t.find(',');
        const auto c2 = t.find(',', c1 + 1);
        if (c1 == std::string_view::npos || c2 == std::string_view::npos) {
            throw InvalidArgument("field csv: malformed row");
        }
        rows[io::parse_double(t.substr(0, c1))][io::parse_double(t.substr(c1 + 1, c2 - c1 - 1))] =
            io::parse_double(t.substr(c2 + 1));
    }
    if (rows.size() < 2) throw InvalidArgument("field csv: need at least 2 x values");
    const auto& first = rows.begin()->second;
    PhaseSpaceGrid g;
    g.nx = static_cast<int>(rows.size());
    g.np = static_cast<int>(first.size());
    g.x_min = rows.begin()->first;
    g.x_max = rows.rbegin()->first;
    g.p_min = first.begin()->first;
    g.p_max = first.rbegin()->first;
    Eigen::MatrixXd values(g.nx, g.np);
    int i = 0;
    for (const auto& [x, col] : rows) {
        if (static_cast<int>(col.size()) != g.np) throw InvalidArgument("field csv: ragged grid");
        int j = 0;
        for (const auto& [p, v] : col) values(i, j++) = v;
        ++i;
    }
    return PhaseSpaceField(g, mode, std::move(values));
}

namespace {

constexpr char kMagic[4] = {'Q', 'T', 'P', 'F'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& is) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) {
        throw InvalidArgument("field binary: truncated input");
    }
    return v;
}

}  // namespace

void write_field_binary(std::ostream& os, const PhaseSpaceField& field) {
    const auto& g = field.grid();
    os.write(kMagic, 4);
    put<std::uint32_t>(os, kVersion);
    put<std::uint32_t>(os, field.mode() == FieldMode::Wigner ? 0u : 1u);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(g.nx));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(g.np));
    put<double>(os, g.x_min);
    put<double>(os, g.x_max);
    put<double>(os, g.p_min);
    put<double>(os, g.p_max);
    put<double>(os, field.normalization_residual());
    for (int i = 0; i < g.nx; ++i) {
        for (int j = 0; j < g.np; ++j) put<double>(os, field(i, j));
    }
}

PhaseSpaceField read_field_binary(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
        throw InvalidArgument("field binary: bad magic");
    }
    if (get<std::uint32_t>(is) != kVersion) throw InvalidArgument("field binary: unknown version");
    const auto mode_tag = get<std::uint32_t>(is);
    if (mode_tag > 1) throw InvalidArgument("field binary: unknown mode");
    PhaseSpaceGrid g;
    g.nx = static_cast<int>(get<std::uint32_t>(is));
    g.np = static_cast<int>(get<std::uint32_t>(is));
    g.x_min = get<double>(is);
    g.x_max = get<double>(is);
    g.p_min = get<double>(is);
    g.p_max = get<double>(is);
    get<double>(is);  // residual is recomputed from the values
    g.validate();
    Eigen::MatrixXd values(g.nx, g.np);
    for (int i = 0; i < g.nx; ++i) {
        for (int j = 0; j < g.np; ++j) values(i, j) = get<double>(is);
    }
    return PhaseSpaceField(g, mode_tag == 0 ? FieldMode::Wigner : FieldMode::Pdf, std::move(values));
}

}  // namespace qtrack
