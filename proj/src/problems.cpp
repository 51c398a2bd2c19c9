#include "selfsim/problems.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <fmt/format.h>
#include <unsupported/Eigen/NonLinearOptimization>
#include <unsupported/Eigen/NumericalDiff>

#include "selfsim/error.hpp"

namespace selfsim {

// Operators --------------------------------------------------------------

namespace {

template <class S>
S nagumo_rhs(const SpatialJet<S> &w, double a) {
    return w.d2[0] + w.value * ((1.0 - w.value) * (w.value - a));
}

template <class S>
S laplacian(const SpatialJet<S> &w, int dim) {
    S s = w.d2[0];
    for (int k = 1; k < dim; ++k)
        s = s + w.d2[static_cast<std::size_t>(k)];
    return s;
}

template <class S>
S pme_rhs(const SpatialJet<S> &w, double r) {
    if (r == 0.0)
        throw Error("porous-medium operator is singular at rho = 0; exclude it from interior collocation");
    // (w^2)'' + (w^2)'/r = 2 (w'^2 + w w'') + 2 w w' / r
    return 2.0 * (square(w.d1[0]) + w.value * w.d2[0]) + (2.0 / r) * (w.value * w.d1[0]);
}

template <class S>
S burgers_rhs(const SpatialJet<S> &w, double nu) {
    return nu * w.d2[0] - w.value * w.d1[0];
}

} // namespace

double NagumoOperator::apply(const SpatialJet<double> &w, std::span<const double>) const { return nagumo_rhs(w, a_); }
Var NagumoOperator::apply(const SpatialJet<Var> &w, std::span<const double>) const { return nagumo_rhs(w, a_); }
std::string NagumoOperator::describe() const { return fmt::format("w_yy + w(1-w)(w-{})", a_); }

double Laplacian::apply(const SpatialJet<double> &w, std::span<const double>) const { return laplacian(w, dim_); }
Var Laplacian::apply(const SpatialJet<Var> &w, std::span<const double>) const { return laplacian(w, dim_); }
std::string Laplacian::describe() const { return dim_ == 1 ? "w_yy" : "w_xx + w_yy"; }

double PorousMediumRadial::apply(const SpatialJet<double> &w, std::span<const double> x) const {
    return pme_rhs(w, x[0]);
}
Var PorousMediumRadial::apply(const SpatialJet<Var> &w, std::span<const double> x) const { return pme_rhs(w, x[0]); }
std::string PorousMediumRadial::describe() const { return "(w^2)_rr + (w^2)_r / r"; }

double ViscousBurgers::apply(const SpatialJet<double> &w, std::span<const double>) const { return burgers_rhs(w, nu_); }
Var ViscousBurgers::apply(const SpatialJet<Var> &w, std::span<const double>) const { return burgers_rhs(w, nu_); }
std::string ViscousBurgers::describe() const { return fmt::format("{} w_yy - w w_y", nu_); }

// Builders ---------------------------------------------------------------

namespace {

BoundaryCondition zero_flux(int axis, Side side) { return {axis, side, BcKind::ZeroFlux, 0.0, false}; }

double gaussian(std::span<const double> x) { return std::exp(-x[0] * x[0]); }
void gaussian_grad(std::span<const double> x, std::span<double> g) { g[0] = -2.0 * x[0] * std::exp(-x[0] * x[0]); }

} // namespace

ProblemSpec nagumo_problem(double a) {
    if (!(a > 0.0 && a < 0.5))
        throw ConfigError("case_params.a", "Nagumo parameter must lie in (0, 1/2)");
    ProblemSpec p;
    p.name = "nagumo";
    p.spatial_dim = 1;
    p.space = {{-30.0, 30.0}};
    p.tau_end = 20.0;
    p.exponents = {0.0, 1.0};
    p.symmetries = {true, false};
    p.unknowns = {Rate::Translation};
    p.rhs = std::make_shared<NagumoOperator>(a);
    p.constraints = {Constraint::template_integral(WeightKind::Slope)};
    p.bcs = {zero_flux(0, Side::Min), zero_flux(0, Side::Max)};
    auto ramp = [](std::span<const double> x) {
        const double y = x[0];
        if (y < 0.0)
            return 0.0;
        if (y > 10.0)
            return 1.0;
        return y / 10.0;
    };
    p.initial = ramp;
    p.templ.value = ramp;
    // One-sided slopes averaged at the kinks.
    p.templ.gradient = [](std::span<const double> x, std::span<double> g) {
        const double y = x[0];
        if (y == 0.0 || y == 10.0)
            g[0] = 0.05;
        else
            g[0] = (y > 0.0 && y < 10.0) ? 0.1 : 0.0;
    };
    p.breakpoints = {0.0, 10.0};
    p.validate();
    return p;
}

ProblemSpec diffusion1d_problem() {
    ProblemSpec p;
    p.name = "diffusion1d";
    p.spatial_dim = 1;
    p.space = {{-8.0, 8.0}};
    p.tau_end = 5.0;
    p.exponents = {-2.0, 1.0};
    p.symmetries = {true, true};
    p.unknowns = {Rate::Amplitude, Rate::Width};
    p.rhs = std::make_shared<Laplacian>(1);
    p.constraints = {Constraint::template_integral(WeightKind::Template),
                     Constraint::template_integral(WeightKind::Moment)};
    p.bcs = {zero_flux(0, Side::Min), zero_flux(0, Side::Max)};
    p.initial = [](std::span<const double> x) {
        return 0.5 * (std::tanh((x[0] + 1.0) / 0.2) - std::tanh((x[0] - 1.0) / 0.2));
    };
    p.templ = {gaussian, gaussian_grad};
    p.validate();
    return p;
}

ProblemSpec diffusion2d_problem() {
    ProblemSpec p;
    p.name = "diffusion2d";
    p.spatial_dim = 2;
    p.space = {{0.0, 4.0}, {0.0, 4.0}};
    p.tau_end = 4.0;
    p.exponents = {-2.0, 1.0};
    p.symmetries = {true, true};
    p.unknowns = {Rate::Amplitude, Rate::Width};
    p.rhs = std::make_shared<Laplacian>(2);
    p.constraints = {Constraint::template_integral(WeightKind::Template),
                     Constraint::template_integral(WeightKind::Moment)};
    p.bcs = {
        {0, Side::Min, BcKind::Symmetry, 0.0, false},
        {1, Side::Min, BcKind::Symmetry, 0.0, false},
        {0, Side::Max, BcKind::Dirichlet, 0.0, true},
        {1, Side::Max, BcKind::Dirichlet, 0.0, true},
    };
    auto ic = [](std::span<const double> x) { return std::exp(-(std::abs(x[0]) + std::abs(x[1]))); };
    p.initial = ic;
    p.templ.value = ic;
    p.templ.gradient = [ic](std::span<const double> x, std::span<double> g) {
        const double t = ic(x);
        g[0] = x[0] < 0.0 ? t : -t;
        g[1] = x[1] < 0.0 ? t : -t;
    };
    p.validate();
    return p;
}

ProblemSpec pme_problem() {
    ProblemSpec p;
    p.name = "pme2d";
    p.spatial_dim = 1;
    p.space = {{0.0, 10.0}};
    p.tau_end = 40.0;
    p.exponents = {-2.0, 2.0};
    p.symmetries = {false, true};
    p.unknowns = {Rate::Amplitude, Rate::Width};
    // Written with decay rates: w_tau - G w + C rho w_rho = L(w).
    p.frame = {-1.0, -1.0, 1.0};
    p.rhs = std::make_shared<PorousMediumRadial>();
    p.constraints = {Constraint::orthogonality(), Constraint::pinning({9.0}, 1.0)};
    p.bcs = {{0, Side::Min, BcKind::Dirichlet, 0.0, false}, zero_flux(0, Side::Max)};
    p.initial = [](std::span<const double> x) { return 1.0 / (1.0 + std::exp(-2.5 * (x[0] - 4.0))); };
    p.templ.value = [](std::span<const double> x) { return -1.0 + 2.0 / (1.0 + std::exp(-2.5 * (x[0] - 7.0))); };
    p.templ.gradient = [](std::span<const double> x, std::span<double> g) {
        const double e = std::exp(-2.5 * (x[0] - 7.0));
        g[0] = 5.0 * e / square(1.0 + e);
    };
    p.validate();
    return p;
}

ProblemSpec burgers_problem(double nu) {
    if (!(nu > 0.0))
        throw ConfigError("case_params.nu", "viscosity must be positive");
    ProblemSpec p;
    p.name = "burgers";
    p.spatial_dim = 1;
    p.space = {{-6.0, 6.0}};
    p.tau_end = 6.0;
    p.exponents = {-2.0, 1.0};
    p.symmetries = {true, true};
    p.unknowns = {Rate::Width, Rate::Translation};
    p.linkage = Linkage::InverseAmplitude;
    p.rhs = std::make_shared<ViscousBurgers>(nu);
    p.constraints = {Constraint::template_integral(WeightKind::TemplatePlusMoment),
                     Constraint::template_integral(WeightKind::Slope)};
    p.bcs = {zero_flux(0, Side::Min), zero_flux(0, Side::Max)};
    p.initial = gaussian;
    p.templ = {gaussian, gaussian_grad};
    p.validate();
    return p;
}

// Oracles ----------------------------------------------------------------

double nagumo_exact(double y) { return 1.0 / (1.0 + std::exp(-y / std::numbers::sqrt2)); }

double nagumo_speed(double a) { return -std::numbers::sqrt2 * (0.5 - a); }

double burgers_exact(double x, double t_star, double a_star, double c_star, double nu) {
    if (!(t_star > 0.0) || !(nu > 0.0))
        throw Error("burgers_exact: t* and nu must be positive");
    const double z = (x - c_star) / std::sqrt(4.0 * nu * t_star);
    const double gauss = std::exp(-z * z);
    if (gauss == 0.0)
        return 0.0;
    // Numerator and denominator divided by exp(A / 2nu) - 1.
    const double denom = 1.0 / std::expm1(a_star / (2.0 * nu)) + 0.5 * std::erfc(z);
    return std::sqrt(nu / (std::numbers::pi * t_star)) * gauss / denom;
}

namespace {

struct BurgersFunctor {
    using Scalar = double;
    using InputType = Eigen::VectorXd;
    using ValueType = Eigen::VectorXd;
    using JacobianType = Eigen::MatrixXd;
    enum { InputsAtCompileTime = Eigen::Dynamic, ValuesAtCompileTime = Eigen::Dynamic };

    std::span<const double> x, v;
    double nu;

    [[nodiscard]] int inputs() const { return 3; }
    [[nodiscard]] int values() const { return static_cast<int>(x.size()); }

    int operator()(const Eigen::VectorXd &p, Eigen::VectorXd &r) const {
        const double a = std::exp(p[0]);
        const double t = std::exp(p[2]);
        for (std::size_t i = 0; i < x.size(); ++i)
            r[static_cast<Eigen::Index>(i)] = burgers_exact(x[i], t, a, p[1], nu) - v[i];
        return 0;
    }
};

} // namespace

BurgersFit fit_burgers_params(std::span<const double> x, std::span<const double> values, double nu) {
    if (x.size() != values.size() || x.size() < 4)
        throw DimensionError("fit_burgers_params: need matching grids with at least 4 samples");
    double peak = 0.0;
    for (double v : values) {
        if (!std::isfinite(v))
            throw NonFiniteError("fit_burgers_params: non-finite profile value");
        peak = std::max(peak, std::abs(v));
    }
    if (peak < 1e-12)
        throw Error("fit_burgers_params: degenerate (zero) amplitude");

    const Grid1D grid(std::vector<double>(x.begin(), x.end()));
    const double mass = std::max(trapezoid_1d(values, grid), 1e-3);

    BurgersFunctor f{x, values, nu};
    Eigen::NumericalDiff<BurgersFunctor> nd(f);
    std::optional<BurgersFit> best;
    Eigen::VectorXd r(static_cast<Eigen::Index>(x.size()));
    const double lo = x.front();
    const double hi = x.back();
    for (int ic = 0; ic < 9; ++ic) {
        for (double t0 : {0.5, 2.0, 8.0}) {
            Eigen::VectorXd p(3);
            p << std::log(mass), lo + (hi - lo) * (ic + 1) / 10.0, std::log(t0);
            Eigen::LevenbergMarquardt<Eigen::NumericalDiff<BurgersFunctor>> lm(nd);
            lm.parameters.maxfev = 4000;
            lm.minimize(p);
            if (!p.allFinite())
                continue;
            f(p, r);
            if (!r.allFinite())
                continue;
            const double rms = std::sqrt(r.squaredNorm() / static_cast<double>(r.size()));
            if (!best || rms < best->residual)
                best = BurgersFit{std::exp(p[0]), p[1], std::exp(p[2]), rms};
        }
    }
    if (!best)
        throw ConvergenceError("fit_burgers_params: no start produced a finite fit");
    if (best->residual > 0.1 * peak)
        throw ConvergenceError(fmt::format("fit_burgers_params: poor fit (rms {:.3g}); best A*={:.6g} c*={:.6g} t*={:.6g}",
                                           best->residual, best->a_star, best->c_star, best->t_star));
    return *best;
}

SteadyRate steady_rate(std::span<const double> series, double fraction) {
    if (series.empty())
        throw Error("steady_rate: empty series");
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw ConfigError("fraction", "must lie in (0, 1]");
    const auto n = static_cast<double>(series.size());
    auto k = static_cast<std::size_t>(std::ceil(fraction * n - 1e-9));
    k = std::clamp<std::size_t>(k, 1, series.size());
    const auto tail = series.last(k);
    double mean = 0.0;
    for (double v : tail)
        mean += v;
    mean /= static_cast<double>(k);
    double var = 0.0;
    for (double v : tail)
        var += square(v - mean);
    return {mean, std::sqrt(var / static_cast<double>(k))};
}

ShiftFit fit_shift(std::span<const double> x, std::span<const double> values, const std::function<double(double)> &f,
                   double lo, double hi) {
    if (x.size() != values.size())
        throw DimensionError("fit_shift: grid and values differ in length");
    const Grid1D grid(std::vector<double>(x.begin(), x.end()));
    const auto &w = grid.weights();
    auto l2 = [&](double s) {
        double acc = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i)
            acc += w[i] * square(values[i] - f(x[i] - s));
        return acc;
    };
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double c = b - g * (b - a), d = a + g * (b - a);
    double fc = l2(c), fd = l2(d);
    while (b - a > 1e-10) {
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = l2(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = l2(d);
        }
    }
    ShiftFit out;
    out.shift = 0.5 * (a + b);
    out.l2 = std::sqrt(l2(out.shift));
    for (std::size_t i = 0; i < x.size(); ++i)
        out.linf = std::max(out.linf, std::abs(values[i] - f(x[i] - out.shift)));
    return out;
}

// Registry ---------------------------------------------------------------

namespace {

double param(const CaseParams &p, const std::string &key) {
    const auto it = p.find(key);
    if (it == p.end())
        throw ConfigError("case_params." + key, "missing");
    return it->second;
}

void ratio_metrics(CaseResult &r, double target, double tol) {
    r.targets["G/C"] = {target, tol};
}

void post_nagumo(const ProblemSpec &, const CaseParams &params, CaseResult &r) {
    const double a = param(params, "a");
    const double v = r.steady.at("V").mean;
    const double theory = nagumo_speed(a);
    r.metrics["speed"] = v;
    r.metrics["speed_theory"] = theory;
    r.metrics["speed_abs_error"] = std::abs(std::abs(v) - std::abs(theory));
    r.metrics["|dc/dt|"] = std::abs(v);
    r.targets["|dc/dt|"] = {std::abs(theory), 0.01};

    std::vector<double> x;
    for (Eigen::Index i = 0; i < r.final_profile.points.cols(); ++i)
        x.push_back(r.final_profile.points(0, i));
    const ShiftFit fit = fit_shift(x, r.final_profile.values, nagumo_exact);
    r.metrics["shift"] = fit.shift;
    r.metrics["profile_linf"] = fit.linf;
    r.targets["profile_linf"] = {0.0, 0.02};
    for (double xi : x)
        r.oracle.push_back(nagumo_exact(xi - fit.shift));
}

void post_diffusion1d(const ProblemSpec &, const CaseParams &, CaseResult &r) {
    ratio_metrics(r, -1.0, 0.02);
    r.targets["alpha"] = {0.5, 0.02};
    r.targets["beta"] = {-0.5, 0.02};
}

void post_diffusion2d(const ProblemSpec &, const CaseParams &, CaseResult &r) {
    ratio_metrics(r, -2.0, 0.1);
    r.targets["beta"] = {-1.0, 0.05};
}

void post_pme(const ProblemSpec &, const CaseParams &, CaseResult &r) {
    ratio_metrics(r, 0.831677, 0.02);
    r.targets["alpha"] = {0.85633, 0.01};
}

void post_burgers(const ProblemSpec &, const CaseParams &params, CaseResult &r) {
    const double nu = param(params, "nu");
    const double c = r.steady.at("C").mean;
    const double v = r.steady.at("V").mean;
    if (c != 0.0) {
        r.metrics["t_star_predicted"] = 1.0 / (2.0 * c);
        r.metrics["c_star_predicted"] = -v / c;
    }
    std::vector<double> x;
    for (Eigen::Index i = 0; i < r.final_profile.points.cols(); ++i)
        x.push_back(r.final_profile.points(0, i));
    try {
        const BurgersFit fit = fit_burgers_params(x, r.final_profile.values, nu);
        r.metrics["A_star"] = fit.a_star;
        r.metrics["c_star"] = fit.c_star;
        r.metrics["t_star"] = fit.t_star;
        double linf = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double e = burgers_exact(x[i], fit.t_star, fit.a_star, fit.c_star, nu);
            r.oracle.push_back(e);
            linf = std::max(linf, std::abs(e - r.final_profile.values[i]));
        }
        r.metrics["profile_linf"] = linf;
    } catch (const Error &) {
        r.metrics["profile_linf"] = std::numeric_limits<double>::infinity();
    }
    r.targets["A_star"] = {1.7713, 0.15 * 1.7713};
    r.targets["c_star"] = {-1.8715, 0.15 * 1.8715};
    r.targets["t_star"] = {2.1666, 0.15 * 2.1666};
    r.targets["profile_linf"] = {0.0, 0.02};
}

std::vector<CaseDefinition> build_registry() {
    std::vector<CaseDefinition> r;
    r.push_back({"nagumo",
                 {{"a", 0.01}},
                 [](const CaseParams &p) { return nagumo_problem(param(p, "a")); },
                 {{599}, 200},
                 {{200}, 60},
                 {{2, 20, 20, 1}},
                 {{1, 5, 1}},
                 post_nagumo,
                 2000, 500});
    r.push_back({"diffusion1d",
                 {},
                 [](const CaseParams &) { return diffusion1d_problem(); },
                 {{399}, 100},
                 {{150}, 40},
                 {{2, 40, 40, 1}},
                 {{1, 5, 2}},
                 post_diffusion1d,
                 20000, 2000});
    r.push_back({"diffusion2d",
                 {},
                 [](const CaseParams &) { return diffusion2d_problem(); },
                 {{41, 41}, 41},
                 {{21, 21}, 21},
                 {{3, 40, 40, 40, 1}},
                 {{1, 5, 2}},
                 post_diffusion2d,
                 12000, 1000});
    r.push_back({"pme2d",
                 {},
                 [](const CaseParams &) { return pme_problem(); },
                 {{499}, 100},
                 {{200}, 40},
                 {{2, 40, 40, 1}},
                 {{1, 5, 2}},
                 post_pme,
                 6000, 1000});
    r.push_back({"burgers",
                 {{"nu", 0.025}},
                 [](const CaseParams &p) { return burgers_problem(param(p, "nu")); },
                 {{599}, 300},
                 {{200}, 100},
                 {{2, 20, 20, 20, 1}},
                 {{1, 4, 2}},
                 post_burgers,
                 4000, 500});
    return r;
}

} // namespace

const std::vector<CaseDefinition> &case_registry() {
    static const std::vector<CaseDefinition> registry = build_registry();
    return registry;
}

std::vector<std::string> case_names() {
    std::vector<std::string> names;
    for (const auto &c : case_registry())
        names.push_back(c.name);
    return names;
}

const CaseDefinition &find_case(const std::string &name) {
    for (const auto &c : case_registry())
        if (c.name == name)
            return c;
    std::string list;
    for (const auto &n : case_names())
        list += (list.empty() ? "" : ", ") + n;
    throw ConfigError("case", "unknown case '" + name + "'; registered: " + list);
}

Snapshot profile_snapshot(const ProblemSpec &problem, const CollocationSet &cs, const Networks &nets, double tau) {
    const int dim = problem.spatial_dim;
    Snapshot s;
    s.tau = tau;
    s.points = cs.quad_nodes;
    Eigen::MatrixXd pts(dim + 1, cs.quad_nodes.cols());
    pts.topRows(dim) = cs.quad_nodes;
    pts.row(dim).setConstant(tau);
    const Eigen::MatrixXd v = eval_values(nets.profile, nets.profile_params(), pts);
    s.values.assign(v.data(), v.data() + v.size());
    return s;
}

CaseResult evaluate_case(const CaseDefinition &def, const CaseParams &params, const ProblemSpec &problem,
                         const CollocationSet &cs, const Networks &nets, std::size_t samples) {
    if (samples < 2)
        throw ConfigError("samples", "need at least 2 rate samples");
    CaseResult r;
    r.name = def.name;
    Eigen::MatrixXd taus(1, static_cast<Eigen::Index>(samples));
    for (std::size_t i = 0; i < samples; ++i) {
        const double t = problem.tau_end * static_cast<double>(i) / static_cast<double>(samples - 1);
        r.tau.push_back(t);
        taus(0, static_cast<Eigen::Index>(i)) = t;
    }
    const Eigen::MatrixXd out = eval_values(nets.rates, nets.rate_params(), taus);
    const bool has_g = problem.has_rate(Rate::Amplitude) || problem.linkage == Linkage::InverseAmplitude;
    const bool has_c = problem.has_rate(Rate::Width);
    const bool has_v = problem.has_rate(Rate::Translation);
    for (std::size_t i = 0; i < samples; ++i) {
        const Eigen::VectorXd col = out.col(static_cast<Eigen::Index>(i));
        const RateValues rv =
            resolve_rates(problem, std::span<const double>(col.data(), static_cast<std::size_t>(col.size())));
        if (has_g)
            r.rates["G"].push_back(rv.amplitude);
        if (has_c)
            r.rates["C"].push_back(rv.width);
        if (has_v)
            r.rates["V"].push_back(rv.translation);
    }
    for (const auto &[name, series] : r.rates)
        r.steady[name] = steady_rate(series, 0.1);

    if (has_g && has_c) {
        const double g = r.steady["G"].mean;
        const double c = r.steady["C"].mean;
        r.metrics["G/C"] = g / c;
        try {
            r.exponents = infer_exponents(problem.exponents.a, problem.exponents.b, g, c);
            r.metrics["alpha"] = r.exponents->alpha;
            r.metrics["beta"] = r.exponents->beta;
        } catch (const Error &) {
            r.metrics["kappa"] = -(problem.exponents.a * c + (problem.exponents.b - 1.0) * g);
        }
    }
    r.final_profile = profile_snapshot(problem, cs, nets, problem.tau_end);
    if (def.postprocess)
        def.postprocess(problem, params, r);
    return r;
}

} // namespace selfsim
