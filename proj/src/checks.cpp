#include "selfsim/checks.hpp"

#include <chrono>
#include <cmath>
#include <random>

#include <fmt/format.h>

#include "selfsim/error.hpp"
#include "selfsim/optimizer.hpp"
#include "selfsim/problems.hpp"

namespace selfsim {

namespace {

// Smooth 1D test function with analytic derivatives.
struct Bump {
    double v, d1, d2;
};

Bump bump(double y) {
    const double e = std::exp(-0.3 * y * y);
    return {0.5 + 0.3 * std::sin(1.1 * y) + 0.4 * e, 0.33 * std::cos(1.1 * y) - 0.24 * y * e,
            -0.363 * std::sin(1.1 * y) + 0.4 * (-0.6 + 0.36 * y * y) * e};
}

// f(y) = prod_k bump(y_k) with pure second derivatives.
SpatialJet<double> test_jet(std::span<const double> y) {
    SpatialJet<double> j;
    if (y.size() == 1) {
        const Bump b = bump(y[0]);
        j.value = b.v;
        j.d1[0] = b.d1;
        j.d2[0] = b.d2;
        return j;
    }
    const Bump bx = bump(y[0]);
    const Bump by = bump(y[1]);
    j.value = bx.v * by.v;
    j.d1 = {bx.d1 * by.v, bx.v * by.d1};
    j.d2 = {bx.d2 * by.v, bx.v * by.d2};
    return j;
}

double elapsed_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

SuiteResult suite_autodiff() {
    SuiteResult r{"autodiff_fd", true, "", 0.0};
    std::mt19937_64 rng(12345);
    std::uniform_int_distribution<int> width(1, 40);
    std::uniform_int_distribution<int> dim(1, 3);
    std::uniform_int_distribution<int> hidden(1, 2);
    std::uniform_real_distribution<double> coord(-5.0, 5.0);
    const double h = 1e-4;
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<int> widths{dim(rng)};
        for (int k = hidden(rng); k > 0; --k)
            widths.push_back(width(rng));
        widths.push_back(1);
        const MlpSpec spec{widths};
        const ParamVector p = init_params(spec, rng());
        std::vector<double> x(static_cast<std::size_t>(widths[0]));
        for (double &v : x)
            v = coord(rng);
        const Jet2 j = forward_jet(widths, p, x);
        for (int i = 0; i < widths[0]; ++i) {
            auto xp = x, xm = x;
            xp[static_cast<std::size_t>(i)] += h;
            xm[static_cast<std::size_t>(i)] -= h;
            const Jet2 jp = forward_jet(widths, p, xp);
            const Jet2 jm = forward_jet(widths, p, xm);
            const double fd = (jp.value - jm.value) / (2.0 * h);
            worst = std::max(worst, std::abs(j.grad[static_cast<std::size_t>(i)] - fd) / std::max(1.0, std::abs(fd)));
            for (int k = 0; k < widths[0]; ++k) {
                const double fdh =
                    (jp.grad[static_cast<std::size_t>(k)] - jm.grad[static_cast<std::size_t>(k)]) / (2.0 * h);
                worst = std::max(worst, std::abs(j.hess(i, k) - fdh) / std::max(1.0, std::abs(fdh)));
            }
        }
    }
    // Parameter gradient of a loss built from input derivatives.
    double worst_param = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
        const std::vector<int> widths{2, 20, 1};
        const ParamVector p = init_params({widths}, 100 + static_cast<std::uint64_t>(trial));
        const std::vector<double> x{coord(rng), coord(rng)};
        Eigen::MatrixXd pt(2, 1);
        pt << x[0], x[1];
        const TapedFunction f = [&](Tape &t, std::span<const Var> v) {
            const JetBatch b = mlp_jet_batch(t, widths, v, pt, JetRequest::full(2));
            return square(b.grad(0, 0)) + b.hess(0, 0, 1) * b.value(0);
        };
        const GradientFunction g = [&](std::span<const double> q, std::vector<double> &grad) {
            Tape t;
            const auto v = t.variables(q);
            const Var y = f(t, v);
            grad = loss_gradient(t, y, v);
            return y.value();
        };
        worst_param = std::max(worst_param, fd_check_gradient(g, p, 1e-6));
    }
    r.passed = worst < 1e-5 && worst_param < 1e-5;
    r.detail = fmt::format("input derivatives max rel err {:.2e}, parameter gradients {:.2e} (limit 1e-05)", worst,
                           worst_param);
    return r;
}

SuiteResult suite_loss_gradient() {
    SuiteResult r{"loss_gradient", true, "", 0.0};
    std::string detail;
    for (const auto &def : case_registry()) {
        const ProblemSpec p = def.build(def.defaults);
        GridSizes g = def.desk_grid;
        for (int &n : g.space)
            n = p.spatial_dim == 1 ? 16 : 6;
        g.tau = 3;
        const CollocationSet cs = make_collocation(p, g);
        Networks nets = Networks::initialize(def.profile, def.rates, 0);
        const LossWeights w{1.0, 2.0, 0.5, 1.5};
        const GradientFunction f = [&](std::span<const double> q, std::vector<double> &grad) {
            Networks n = nets;
            n.params.assign(q.begin(), q.end());
            return total_loss(p, n, cs, w, &grad).total;
        };
        std::vector<std::size_t> coords;
        const std::size_t np = def.profile.parameter_count();
        for (std::size_t i = 0; i < nets.params.size(); ++i)
            if (i % 7 == 0 || i >= np)
                coords.push_back(i);
        const double err = fd_check_gradient(f, nets.params, 1e-6, coords);
        if (!(err < 1e-5))
            r.passed = false;
        detail += fmt::format("{}{} {:.2e}", detail.empty() ? "" : ", ", def.name, err);
    }
    r.detail = "max rel err per case: " + detail + " (limit 1e-05)";
    return r;
}

SuiteResult suite_quadrature() {
    SuiteResult r{"quadrature", true, "", 0.0};
    auto err = [](std::size_t n) {
        const Grid1D g = Grid1D::uniform(0.0, 1.0, n + 1);
        std::vector<double> v;
        for (double x : g.nodes())
            v.push_back(std::exp(x) * std::sin(3.0 * x));
        const double exact = (std::exp(1.0) * (std::sin(3.0) - 3.0 * std::cos(3.0)) + 3.0) / 10.0;
        return std::abs(trapezoid_1d(v, g) - exact);
    };
    const double r1 = err(10) / err(20);
    const double r2 = err(20) / err(40);
    const Grid1D g = Grid1D::uniform(-8.0, 8.0, 599);
    std::vector<double> v;
    for (double x : g.nodes())
        v.push_back(std::exp(-x * x));
    const double gauss = std::abs(trapezoid_1d(v, g) - std::sqrt(std::acos(-1.0)));
    r.passed = r1 > 3.5 && r1 < 4.5 && r2 > 3.5 && r2 < 4.5 && gauss < 1e-6;
    r.detail = fmt::format("halving ratios {:.3f}, {:.3f} (want 3.5-4.5); Gaussian error {:.1e}", r1, r2, gauss);
    return r;
}

ProblemSpec maybe_mutated(ProblemSpec p, const CheckOptions &o) {
    if (o.flip_diffusion_amplitude)
        p.frame.amplitude = -p.frame.amplitude;
    return p;
}

SuiteResult suite_scaling() {
    SuiteResult r{"scaling_law", true, "", 0.0};
    std::string detail;
    for (const auto &def : case_registry()) {
        const ProblemSpec p = def.build(def.defaults);
        const double e = scaling_law_error(p, 7);
        if (!(e < 1e-8))
            r.passed = false;
        detail += fmt::format("{}{} {:.1e}", detail.empty() ? "" : ", ", def.name, e);
    }
    r.detail = "max rel err: " + detail + " (limit 1e-08)";
    return r;
}

SuiteResult suite_annihilation(const CheckOptions &o) {
    SuiteResult r{"exact_annihilation", true, "", 0.0};
    const double en = nagumo_annihilation_error(0.01);
    const double e1 = diffusion_annihilation_error(maybe_mutated(diffusion1d_problem(), o));
    const double e2 = diffusion_annihilation_error(maybe_mutated(diffusion2d_problem(), o));
    r.passed = en < 1e-8 && e1 < 1e-8 && e2 < 1e-8;
    r.detail = fmt::format("nagumo {:.1e}, diffusion1d {:.1e}, diffusion2d {:.1e} (limit 1e-08)", en, e1, e2);
    return r;
}

bool wolfe_ok(const TrainHistory &h, const LbfgsConfig &c) {
    for (const auto &w : h.wolfe) {
        if (!(w.f1 <= w.f0 + c.c1 * w.step * w.slope0))
            return false;
        if (!(std::abs(w.slope1) <= c.c2 * std::abs(w.slope0)))
            return false;
    }
    return true;
}

SuiteResult suite_wolfe() {
    SuiteResult r{"wolfe", true, "", 0.0};
    const LbfgsConfig cfg;

    const std::size_t n = 10;
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    std::vector<double> target(n), start(n);
    for (std::size_t i = 0; i < n; ++i) {
        target[i] = u(rng);
        start[i] = u(rng);
    }
    const Objective quad = [&](std::span<const double> x, std::vector<double> &g) {
        g.resize(n);
        double f = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            g[i] = x[i] - target[i];
            f += 0.5 * g[i] * g[i];
        }
        return f;
    };
    const MinimizeResult q = minimize(quad, start, cfg);
    double qerr = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        qerr = std::max(qerr, std::abs(q.x[i] - target[i]));

    const Objective rosen = [](std::span<const double> x, std::vector<double> &g) {
        g.resize(2);
        const double a = 1.0 - x[0], b = x[1] - x[0] * x[0];
        g[0] = -2.0 * a - 400.0 * x[0] * b;
        g[1] = 200.0 * b;
        return a * a + 100.0 * b * b;
    };
    const MinimizeResult ro = minimize(rosen, {-1.2, 1.0}, cfg);
    const double rerr = std::max(std::abs(ro.x[0] - 1.0), std::abs(ro.x[1] - 1.0));

    const bool wq = wolfe_ok(q.history, cfg);
    const bool wr = wolfe_ok(ro.history, cfg);
    r.passed = qerr < 1e-8 && q.history.iterations() <= static_cast<int>(n) + 5 && rerr < 1e-6 && wq && wr;
    r.detail = fmt::format("quadratic err {:.1e} in {} iterations; Rosenbrock err {:.1e} in {} iterations; "
                           "Wolfe conditions {}",
                           qerr, q.history.iterations(), rerr, ro.history.iterations(),
                           (wq && wr) ? "hold on every step" : "VIOLATED");
    return r;
}

} // namespace

const std::vector<SuiteInfo> &suite_list() {
    static const std::vector<SuiteInfo> list{
        {"autodiff_fd", "network input derivatives and parameter gradients vs central differences"},
        {"loss_gradient", "total-loss gradient of every case vs central differences"},
        {"quadrature", "trapezoid second-order convergence and Gaussian integral"},
        {"scaling_law", "operator scaling identities for all five cases"},
        {"exact_annihilation", "residual of the Nagumo wave and the diffusion Gaussians"},
        {"wolfe", "L-BFGS on a quadratic and Rosenbrock with Wolfe-condition audit"},
    };
    return list;
}

SuiteResult run_suite(const std::string &name, const CheckOptions &options) {
    const auto t0 = std::chrono::steady_clock::now();
    SuiteResult r;
    try {
        if (name == "autodiff_fd")
            r = suite_autodiff();
        else if (name == "loss_gradient")
            r = suite_loss_gradient();
        else if (name == "quadrature")
            r = suite_quadrature();
        else if (name == "scaling_law")
            r = suite_scaling();
        else if (name == "exact_annihilation")
            r = suite_annihilation(options);
        else if (name == "wolfe")
            r = suite_wolfe();
        else
            throw ConfigError("suite", "unknown suite '" + name + "'");
    } catch (const ConfigError &) {
        throw;
    } catch (const std::exception &e) {
        r = {name, false, std::string("error: ") + e.what(), 0.0};
    }
    r.seconds = elapsed_since(t0);
    return r;
}

double scaling_law_error(const ProblemSpec &problem, std::uint64_t seed, int trials) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> scale(0.5, 2.0);
    std::uniform_real_distribution<double> shift(-1.0, 1.0);
    const int dim = problem.spatial_dim;
    const bool linked = problem.linkage == Linkage::InverseAmplitude;
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
        double a = 1.0, b = 1.0, c = 0.0;
        if (problem.symmetries.scaling) {
            a = scale(rng);
            b = linked ? 1.0 / a : scale(rng);
        }
        if (problem.symmetries.translation)
            c = shift(rng);
        const double factor = std::pow(a, problem.exponents.a) * std::pow(b, problem.exponents.b);
        for (int s = 0; s < 5; ++s) {
            std::array<double, 2> x{}, y{};
            for (int k = 0; k < dim; ++k) {
                const Interval &iv = problem.space[static_cast<std::size_t>(k)];
                // Keep clear of a radial origin.
                const double lo = iv.lo == 0.0 ? 0.5 : iv.lo;
                std::uniform_real_distribution<double> pos(lo, iv.hi);
                x[static_cast<std::size_t>(k)] = pos(rng);
                // Only the first axis is translated.
                y[static_cast<std::size_t>(k)] = (x[static_cast<std::size_t>(k)] - (k == 0 ? c : 0.0)) / a;
            }
            const auto ys = std::span<const double>(y.data(), static_cast<std::size_t>(dim));
            const auto xs = std::span<const double>(x.data(), static_cast<std::size_t>(dim));
            const SpatialJet<double> f = test_jet(ys);
            SpatialJet<double> g;
            g.value = b * f.value;
            for (int k = 0; k < dim; ++k) {
                g.d1[static_cast<std::size_t>(k)] = b / a * f.d1[static_cast<std::size_t>(k)];
                g.d2[static_cast<std::size_t>(k)] = b / (a * a) * f.d2[static_cast<std::size_t>(k)];
            }
            const double lhs = problem.rhs->apply(g, xs);
            const double rhs = factor * problem.rhs->apply(f, ys);
            const double denom = std::max(std::abs(lhs), std::abs(rhs));
            if (denom > 1e-12)
                worst = std::max(worst, std::abs(lhs - rhs) / denom);
        }
    }
    return worst;
}

double nagumo_annihilation_error(double a) {
    const ProblemSpec p = nagumo_problem(a);
    RateValues rates;
    rates.translation = nagumo_speed(a);
    const double s = 1.0 / std::sqrt(2.0);
    double worst = 0.0;
    for (int i = 0; i <= 600; ++i) {
        const double y = -30.0 + 0.1 * i;
        // w = 1 / (1 + e), e = exp(-y / sqrt 2)
        const double w = nagumo_exact(y);
        const double w1 = s * w * (1.0 - w);
        const double w2 = s * w1 * (1.0 - 2.0 * w);
        Jet2 j(2);
        j.value = w;
        j.grad = {w1, 0.0};
        j.set_hess(0, 0, w2);
        const std::array<double, 2> pt{y, 1.0};
        worst = std::max(worst, std::abs(pde_residual(p, j, rates, pt)));
    }
    return worst;
}

double diffusion_annihilation_error(const ProblemSpec &problem) {
    const int dim = problem.spatial_dim;
    RateValues rates;
    rates.amplitude = -0.5 * dim;
    rates.width = 0.5;
    double worst = 0.0;
    const int n = dim == 1 ? 400 : 40;
    const Interval iv = problem.space[0];
    for (int i = 0; i <= n; ++i)
        for (int k = 0; k <= (dim == 1 ? 0 : n); ++k) {
            std::array<double, 3> pt{};
            pt[0] = iv.lo + (iv.hi - iv.lo) * i / n;
            if (dim == 2)
                pt[1] = problem.space[1].lo + (problem.space[1].hi - problem.space[1].lo) * k / n;
            pt[static_cast<std::size_t>(dim)] = 1.0;
            double r2 = 0.0;
            for (int a = 0; a < dim; ++a)
                r2 += square(pt[static_cast<std::size_t>(a)]);
            const double w = std::exp(-r2 / 4.0);
            Jet2 j(dim + 1);
            j.value = w;
            for (int a = 0; a < dim; ++a) {
                const double x = pt[static_cast<std::size_t>(a)];
                j.grad[static_cast<std::size_t>(a)] = -0.5 * x * w;
                j.set_hess(a, a, (0.25 * x * x - 0.5) * w);
            }
            worst = std::max(worst, std::abs(pde_residual(problem, j, rates,
                                                          std::span<const double>(pt.data(), static_cast<std::size_t>(dim + 1)))));
        }
    return worst;
}

} // namespace selfsim
