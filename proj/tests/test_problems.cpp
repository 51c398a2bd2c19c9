#include <doctest.h>

#include <cmath>
#include <numbers>

#include "selfsim/checks.hpp"
#include "selfsim/problems.hpp"

using namespace selfsim;

namespace {

double at(const ScalarField &f, double x) { return f(std::span<const double>(&x, 1)); }
double at(const ScalarField &f, double x, double y) {
    const double p[2] = {x, y};
    return f(std::span<const double>(p, 2));
}

} // namespace

TEST_CASE("Nagumo builder and oracle") {
    CHECK(std::abs(nagumo_speed(0.01)) == doctest::Approx(0.692965).epsilon(1e-6));
    CHECK(nagumo_speed(0.01) < 0.0);
    CHECK(std::abs(nagumo_speed(0.5 - 1e-9)) < 1e-8);
    const ProblemSpec p = nagumo_problem(0.01);
    CHECK(at(p.initial, 5.0) == 0.5);
    CHECK(at(p.initial, -1.0) == 0.0);
    CHECK(at(p.initial, 11.0) == 1.0);
    CHECK(nagumo_exact(0.0) == 0.5);
    CHECK(nagumo_exact(60.0) == doctest::Approx(1.0));
    CHECK(nagumo_exact(-60.0) < 1e-15);
    CHECK(p.unknowns == std::vector<Rate>{Rate::Translation});
    CHECK_THROWS_AS(nagumo_problem(0.5), ConfigError);
    CHECK_THROWS_AS(nagumo_problem(0.0), ConfigError);
}

TEST_CASE("diffusion builders") {
    const ProblemSpec d = diffusion1d_problem();
    CHECK(at(d.initial, 0.0) == doctest::Approx(std::tanh(5.0)).epsilon(1e-15));
    CHECK(at(d.initial, 0.0) == doctest::Approx(0.99991).epsilon(1e-5));
    CHECK(d.exponents.a == -2.0);
    CHECK(d.exponents.b == 1.0);
    CHECK(at(d.templ.value, 0.0) == 1.0);
    double g = 1.0;
    const double zero = 0.0;
    d.templ.gradient(std::span<const double>(&zero, 1), std::span<double>(&g, 1));
    CHECK(g == 0.0);

    const ProblemSpec d2 = diffusion2d_problem();
    CHECK(at(d2.initial, 0.0, 0.0) == 1.0);
    CHECK(at(d2.initial, 4.0, 0.0) == doctest::Approx(0.01832).epsilon(1e-3));
    CHECK(d2.spatial_dim == 2);
}

TEST_CASE("porous-medium and Burgers builders") {
    const ProblemSpec p = pme_problem();
    CHECK(std::abs(at(p.templ.value, 7.0)) < 1e-15);
    CHECK(at(p.initial, 4.0) == 0.5);
    CHECK(at(p.initial, 9.0) == doctest::Approx(1.0 - 3.7e-6).epsilon(1e-6));
    CHECK(p.exponents.a == -2.0);
    CHECK(p.exponents.b == 2.0);

    const ProblemSpec b = burgers_problem(0.025);
    CHECK(b.linkage == Linkage::InverseAmplitude);
    CHECK(b.unknowns == std::vector<Rate>{Rate::Width, Rate::Translation});
    // Effective scaling exponent a + b * (-1) = -3 under A B = 1.
    CHECK(b.exponents.a - b.exponents.b == -3.0);
    CHECK_THROWS_AS(burgers_problem(0.0), ConfigError);
}

TEST_CASE("constraint residuals at tau = 0 with w = IC") {
    for (const char *name : {"nagumo", "diffusion2d", "burgers", "diffusion1d"}) {
        const auto &def = find_case(name);
        const ProblemSpec p = def.build(def.defaults);
        const CollocationSet cs = make_collocation(p, def.desk_grid);
        const auto r = algebraic_residuals(p, cs, p.initial, 0.0);
        CAPTURE(name);
        for (double v : r) {
            CHECK(std::isfinite(v));
            if (std::string(name) == "diffusion1d")
                CHECK(std::abs(v) < 0.5);
            else
                CHECK(v == 0.0);
        }
    }
}

TEST_CASE("burgers_exact asymptotics and mass") {
    const double nu = 0.025, a = 1.5, c = 0.0, t = 2.0;
    CHECK(burgers_exact(50.0, t, a, c, nu) == 0.0);
    const double s = std::sqrt(nu * t);
    const auto grid = Grid1D::uniform(c - 20 * s, c + 20 * s + 10.0, 200001);
    std::vector<double> v;
    for (double x : grid.nodes())
        v.push_back(burgers_exact(x, t, a, c, nu));
    CHECK(trapezoid_1d(v, grid) == doctest::Approx(a).epsilon(1e-6));
    CHECK_THROWS_AS(burgers_exact(0.0, 0.0, a, c, nu), Error);
}

TEST_CASE("burgers_exact solves the viscous Burgers equation") {
    const double nu = 0.025, a = 1.5, c = -0.5;
    const double h = 1e-4;
    double worst = 0.0;
    for (double t = 1.0; t <= 3.0; t += 0.25) {
        for (double x = -3.0; x <= 3.0; x += 0.01) {
            auto u = [&](double xx, double tt) { return burgers_exact(xx, tt, a, c, nu); };
            const double ut = (u(x, t + h) - u(x, t - h)) / (2 * h);
            const double ux = (u(x + h, t) - u(x - h, t)) / (2 * h);
            const double uxx = (u(x + h, t) - 2 * u(x, t) + u(x - h, t)) / (h * h);
            worst = std::max(worst, std::abs(ut + u(x, t) * ux - nu * uxx));
        }
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("fit_burgers_params round trip") {
    const double nu = 0.025;
    const auto grid = Grid1D::uniform(-6, 6, 599);
    std::vector<double> v;
    for (double x : grid.nodes())
        v.push_back(burgers_exact(x, 2.0, 1.5, 0.0, nu));
    const BurgersFit f = fit_burgers_params(grid.nodes(), v, nu);
    CHECK(std::abs(f.a_star - 1.5) < 1e-4);
    CHECK(std::abs(f.c_star - 0.0) < 1e-4);
    CHECK(std::abs(f.t_star - 2.0) < 1e-4);

    std::vector<double> reference;
    for (double x : grid.nodes())
        reference.push_back(burgers_exact(x, 2.1666, 1.7713, -1.8715, nu));
    const BurgersFit g = fit_burgers_params(grid.nodes(), reference, nu);
    CHECK(g.a_star == doctest::Approx(1.7713).epsilon(1e-4));
    CHECK(g.c_star == doctest::Approx(-1.8715).epsilon(1e-4));
    CHECK(g.t_star == doctest::Approx(2.1666).epsilon(1e-4));

    CHECK_THROWS_AS(fit_burgers_params(grid.nodes(), std::vector<double>(599, 0.0), nu), Error);
}

TEST_CASE("steady_rate") {
    const std::vector<double> c(50, 1.25);
    const SteadyRate s = steady_rate(c);
    CHECK(s.mean == 1.25);
    CHECK(s.deviation == 0.0);
    std::vector<double> step(100, 0.0);
    step.back() = 1.0;
    CHECK(steady_rate(step, 0.01).mean == 1.0);
    std::vector<double> ramp;
    for (int i = 0; i < 100; ++i)
        ramp.push_back(i / 99.0);
    // Mean of samples 90..99 of i / 99.
    CHECK(steady_rate(ramp, 0.1).mean == doctest::Approx(94.5 / 99.0).epsilon(1e-14));
    CHECK_THROWS_AS(steady_rate({}, 0.1), Error);
    CHECK_THROWS_AS(steady_rate(ramp, 0.0), ConfigError);
}

TEST_CASE("fit_shift recovers a planted shift") {
    const auto grid = Grid1D::uniform(-30, 30, 601);
    std::vector<double> v;
    for (double x : grid.nodes())
        v.push_back(nagumo_exact(x - 4.2));
    const ShiftFit f = fit_shift(grid.nodes(), v, nagumo_exact);
    CHECK(f.shift == doctest::Approx(4.2).epsilon(1e-6));
    CHECK(f.linf < 1e-6);
}

TEST_CASE("case registry") {
    CHECK(case_names() == std::vector<std::string>{"nagumo", "diffusion1d", "diffusion2d", "pme2d", "burgers"});
    try {
        (void)find_case("heat");
        FAIL("expected ConfigError");
    } catch (const ConfigError &e) {
        CHECK(e.field() == "case");
        CHECK(std::string(e.what()).find("burgers") != std::string::npos);
    }
    for (const auto &def : case_registry()) {
        const ProblemSpec p = def.build(def.defaults);
        CHECK(scaling_law_error(p, 3, 10) < 1e-8);
        Networks::initialize(def.profile, def.rates, 0).check_compatible(p);
    }
}

TEST_CASE("evaluate_case on an untrained Nagumo pair") {
    const auto &def = find_case("nagumo");
    const ProblemSpec p = def.build(def.defaults);
    const CollocationSet cs = make_collocation(p, {{50}, 10});
    const Networks n = Networks::initialize(def.profile, def.rates, 0);
    const CaseResult r = evaluate_case(def, def.defaults, p, cs, n, 21);
    CHECK(r.tau.size() == 21);
    CHECK(r.rates.at("V").size() == 21);
    CHECK(r.metrics.count("|dc/dt|") == 1);
    CHECK(r.targets.at("|dc/dt|").first == doctest::Approx(0.692965).epsilon(1e-6));
    CHECK(r.oracle.size() == r.final_profile.values.size());
}
