#include <doctest.h>

#include <cmath>
#include <random>

#include "selfsim/error.hpp"
#include "selfsim/optimizer.hpp"
#include "selfsim/problems.hpp"

using namespace selfsim;

namespace {

double rosenbrock(std::span<const double> x, std::vector<double> &g) {
    const double a = 1 - x[0], b = x[1] - x[0] * x[0];
    g = {-2 * a - 400 * x[0] * b, 200 * b};
    return a * a + 100 * b * b;
}

// Strong-Wolfe audit of every accepted step.
void audit(const TrainHistory &h, const LbfgsConfig &c) {
    for (const WolfeRecord &w : h.wolfe) {
        CHECK(w.slope0 < 0.0);
        CHECK(w.f1 <= w.f0 + c.c1 * w.step * w.slope0);
        CHECK(std::abs(w.slope1) <= c.c2 * std::abs(w.slope0));
    }
}

} // namespace

TEST_CASE("unit quadratic from a random start") {
    const int n = 12;
    std::mt19937_64 rng(4);
    std::normal_distribution<double> nd;
    std::vector<double> x0(n), start(n);
    for (int i = 0; i < n; ++i) {
        x0[static_cast<std::size_t>(i)] = nd(rng);
        start[static_cast<std::size_t>(i)] = 5 * nd(rng);
    }
    const Objective q = [&](std::span<const double> x, std::vector<double> &g) {
        g.resize(x.size());
        double f = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            g[i] = x[i] - x0[i];
            f += 0.5 * g[i] * g[i];
        }
        return f;
    };
    LbfgsConfig c;
    const MinimizeResult r = minimize(q, start, c);
    for (int i = 0; i < n; ++i)
        CHECK(std::abs(r.x[static_cast<std::size_t>(i)] - x0[static_cast<std::size_t>(i)]) < 1e-8);
    CHECK(r.history.iterations() <= n + 5);
    CHECK(r.history.stop_reason == "gradient_tolerance");
    audit(r.history, c);
}

TEST_CASE("ill-conditioned quadratic") {
    const int n = 10;
    const Objective q = [&](std::span<const double> x, std::vector<double> &g) {
        g.resize(x.size());
        double f = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double d = 1.0 + static_cast<double>(i);
            g[i] = d * (x[i] - 1.0);
            f += 0.5 * d * (x[i] - 1.0) * (x[i] - 1.0);
        }
        return f;
    };
    LbfgsConfig c;
    c.gradient_tolerance = 1e-10;
    const MinimizeResult r = minimize(q, std::vector<double>(n, 0.0), c);
    for (double v : r.x)
        CHECK(std::abs(v - 1.0) < 1e-9);
    CHECK(r.history.iterations() <= 40);
    audit(r.history, c);
}

TEST_CASE("Rosenbrock from (-1.2, 1)") {
    LbfgsConfig c;
    c.gradient_tolerance = 1e-10;
    c.max_iterations = 1000;
    const MinimizeResult r = minimize(rosenbrock, {-1.2, 1.0}, c);
    CHECK(std::abs(r.x[0] - 1.0) < 1e-6);
    CHECK(std::abs(r.x[1] - 1.0) < 1e-6);
    audit(r.history, c);
    CHECK(r.history.losses.size() == r.history.steps.size());
    CHECK(r.history.steps.front() == 0.0);
}

TEST_CASE("gradient below tolerance returns immediately") {
    LbfgsConfig c;
    c.gradient_tolerance = 1e-3;
    const MinimizeResult r = minimize(rosenbrock, {1.0, 1.0}, c);
    CHECK(r.history.iterations() == 0);
    CHECK(r.history.evaluations == 1);
    CHECK(r.x == std::vector<double>{1.0, 1.0});
}

TEST_CASE("max_iterations stops with the best iterate") {
    LbfgsConfig c;
    c.max_iterations = 5;
    const MinimizeResult r = minimize(rosenbrock, {-1.2, 1.0}, c);
    CHECK(r.history.stop_reason == "max_iterations");
    CHECK(r.history.iterations() == 5);
    double best = r.history.losses.front().total;
    for (const auto &l : r.history.losses)
        best = std::min(best, l.total);
    CHECK(r.f == best);
    std::vector<double> g;
    CHECK(rosenbrock(r.x, g) == r.f);
}

TEST_CASE("inconsistent gradient fails gracefully") {
    // Reported gradient points uphill; no step can satisfy sufficient decrease.
    const Objective bad = [](std::span<const double> x, std::vector<double> &g) {
        g = {-2 * x[0]};
        return x[0] * x[0];
    };
    LbfgsConfig c;
    const MinimizeResult r = minimize(bad, {1.0}, c);
    CHECK(r.history.line_search_failed);
    CHECK(r.history.stop_reason == "line_search_failed");
    CHECK(r.x == std::vector<double>{1.0});
    CHECK(r.f == 1.0);
}

TEST_CASE("non-finite start throws") {
    const Objective nan = [](std::span<const double>, std::vector<double> &g) {
        g = {0.0};
        return std::nan("");
    };
    CHECK_THROWS_AS(minimize(nan, {0.0}, LbfgsConfig{}), NonFiniteError);
}

TEST_CASE("config validation names fields") {
    LbfgsConfig c;
    c.memory = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.c2 = c.c1 / 2;
    try {
        c.validate();
        FAIL("expected ConfigError");
    } catch (const ConfigError &e) {
        CHECK(e.field() == "lbfgs.c1");
    }
}

TEST_CASE("warm-up fits a constant initial condition") {
    ProblemSpec p = diffusion1d_problem();
    p.initial = [](std::span<const double>) { return 0.7; };
    const CollocationSet cs = make_collocation(p, {{20}, 8});
    const Networks n = Networks::initialize(MlpSpec{{2, 10, 1}}, MlpSpec{{1, 5, 2}}, 0);
    LbfgsConfig c;
    c.warmup_iterations = 300;
    const MinimizeResult r = warmup(p, n, cs, c);
    ParamVector prof(r.x.begin(), r.x.end());
    Eigen::MatrixXd pts = cs.initial;
    const Eigen::MatrixXd v = eval_values(n.profile, prof, pts);
    CHECK((v.array() - 0.7).abs().maxCoeff() < 1e-3);
}

TEST_CASE("zero warm-up iterations leave parameters untouched") {
    const auto &def = find_case("nagumo");
    const ProblemSpec p = def.build(def.defaults);
    const CollocationSet cs = make_collocation(p, {{20}, 5});
    const Networks n = Networks::initialize(def.profile, def.rates, 1);
    LbfgsConfig c;
    c.warmup_iterations = 0;
    c.max_iterations = 0;
    const TrainResult t = train(p, cs, {}, c, n);
    CHECK(t.nets.params == n.params);
    CHECK(t.warmup.losses.empty());
}

TEST_CASE("warm-up reproduces the Nagumo ramp") {
    const auto &def = find_case("nagumo");
    const ProblemSpec p = def.build(def.defaults);
    const CollocationSet cs = make_collocation(p, {{60}, 5});
    const Networks n = Networks::initialize(def.profile, def.rates, 0);
    LbfgsConfig c;
    c.warmup_iterations = 500;
    const MinimizeResult r = warmup(p, n, cs, c);
    const ParamVector prof(r.x.begin(), r.x.end());
    const Eigen::MatrixXd v = eval_values(n.profile, prof, cs.initial);
    double worst = 0.0;
    for (Eigen::Index i = 0; i < v.cols(); ++i)
        worst = std::max(worst, std::abs(v(0, i) - cs.initial_values[static_cast<std::size_t>(i)]));
    CHECK(worst < 0.05);
}

TEST_CASE("training is deterministic and tolerates a zero constraint weight") {
    const auto &def = find_case("nagumo");
    const ProblemSpec p = def.build(def.defaults);
    const CollocationSet cs = make_collocation(p, {{16}, 4});
    const Networks n = Networks::initialize(MlpSpec{{2, 8, 1}}, MlpSpec{{1, 4, 1}}, 2);
    LbfgsConfig c;
    c.warmup_iterations = 10;
    c.max_iterations = 15;
    const TrainResult a = train(p, cs, {}, c, n);
    const TrainResult b = train(p, cs, {}, c, n);
    CHECK(a.nets.params == b.nets.params);
    REQUIRE(a.history.losses.size() == b.history.losses.size());
    for (std::size_t i = 0; i < a.history.losses.size(); ++i)
        CHECK(a.history.losses[i].total == b.history.losses[i].total);

    LossWeights w;
    w.alg = 0.0;
    const TrainResult z = train(p, cs, w, c, n);
    CHECK(!z.history.stop_reason.empty());
    for (const auto &l : z.history.losses)
        CHECK(std::isfinite(l.total));
}
