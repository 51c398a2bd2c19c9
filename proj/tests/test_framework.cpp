#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <numbers>

#include "selfsim/checks.hpp"
#include "selfsim/framework.hpp"
#include "selfsim/problems.hpp"

using namespace selfsim;

namespace {

// exp(-y^2 / 4) as a jet over (y, tau).
Jet2 gaussian_jet(double y) {
    Jet2 j(2);
    const double w = std::exp(-y * y / 4.0);
    j.value = w;
    j.grad = {-y / 2.0 * w, 0.0};
    j.set_hess(0, 0, (y * y / 4.0 - 0.5) * w);
    return j;
}

Networks zero_networks(const ProblemSpec &p, int hidden = 6) {
    Networks n = Networks::initialize({{p.spatial_dim + 1, hidden, 1}},
                                      {{1, 3, static_cast<int>(p.unknowns.size())}}, 0);
    std::fill(n.params.begin(), n.params.end(), 0.0);
    return n;
}

// Steady zero problem: every residual vanishes for w = 0 and zero rates.
ProblemSpec zero_problem() {
    ProblemSpec p = diffusion1d_problem();
    p.name = "zero";
    p.initial = [](std::span<const double>) { return 0.0; };
    p.templ.value = [](std::span<const double>) { return 0.0; };
    p.templ.gradient = [](std::span<const double>, std::span<double> g) { g[0] = 0.0; };
    return p;
}

struct EnvWorkers {
    explicit EnvWorkers(const char *n) { setenv("SELFSIM_WORKERS", n, 1); }
    ~EnvWorkers() { unsetenv("SELFSIM_WORKERS"); }
};

} // namespace

TEST_CASE("diffusion Gaussian is annihilated") {
    const ProblemSpec p = diffusion1d_problem();
    const RateValues r{-0.5, 0.5, 0.0};
    for (double y = -8; y <= 8; y += 0.37) {
        const std::vector<double> pt{y, 1.0};
        CHECK(std::abs(pde_residual(p, gaussian_jet(y), r, pt)) < 1e-14);
    }
    CHECK(diffusion_annihilation_error(p) < 1e-8);
    CHECK(diffusion_annihilation_error(diffusion2d_problem()) < 1e-8);
}

TEST_CASE("Nagumo wave with its speed is annihilated") {
    CHECK(nagumo_annihilation_error(0.01) < 1e-8);
    CHECK(nagumo_annihilation_error(0.3) < 1e-8);
}

TEST_CASE("zero networks give zero residual for every case") {
    for (const auto &def : case_registry()) {
        const ProblemSpec p = def.build(def.defaults);
        const Networks n = zero_networks(p);
        std::vector<double> pt;
        for (const Interval &iv : p.space)
            pt.push_back(0.5 * (iv.lo + iv.hi) + 0.1);
        pt.push_back(0.3);
        CHECK(pde_residual(p, n, pt) == 0.0);
    }
}

TEST_CASE("porous-medium residual is singular at the origin") {
    const ProblemSpec p = pme_problem();
    Jet2 j(2);
    j.value = 0.5;
    j.grad = {0.1, 0.0};
    const std::vector<double> at0{0.0, 1.0}, at1{1.0, 1.0};
    CHECK_THROWS_AS(pde_residual(p, j, RateValues{}, at0), Error);
    CHECK(std::isfinite(pde_residual(p, j, RateValues{}, at1)));
}

TEST_CASE("planted sign flip in the diffusion amplitude term is caught") {
    CHECK(run_suite("exact_annihilation").passed);
    CheckOptions o;
    o.flip_diffusion_amplitude = true;
    CHECK_FALSE(run_suite("exact_annihilation", o).passed);
}

TEST_CASE("algebraic residual examples") {
    const ProblemSpec d = diffusion1d_problem();
    const CollocationSet cs = make_collocation(d, {{150}, 10});
    const ScalarField twice_t = [](std::span<const double> x) { return 2.0 * std::exp(-x[0] * x[0]); };
    const auto r = algebraic_residuals(d, cs, twice_t, 1.0);
    REQUIRE(r.size() == 2);
    CHECK(std::abs(r[0] - std::sqrt(std::numbers::pi / 2.0)) < 1e-6);

    const ProblemSpec n = nagumo_problem(0.01);
    const CollocationSet ncs = make_collocation(n, {{200}, 10});
    const auto rn = algebraic_residuals(n, ncs, n.initial, 0.0);
    CHECK(rn == std::vector<double>{0.0});

    const ProblemSpec pme = pme_problem();
    const CollocationSet pcs = make_collocation(pme, {{200}, 10});
    const ScalarField one = [](std::span<const double>) { return 1.0; };
    const auto rp = algebraic_residuals(pme, pcs, one, 2.0);
    REQUIRE(rp.size() == 2);
    CHECK(rp[1] == 0.0); // pinning w(9) = 1
    // Orthogonality: integral of T over [0, 10].
    std::vector<double> tv;
    for (double x : pcs.quad_axes[0].nodes())
        tv.push_back(pme.templ.value(std::span<const double>(&x, 1)));
    CHECK(rp[0] == doctest::Approx(trapezoid_1d(tv, pcs.quad_axes[0])).epsilon(1e-13));
}

TEST_CASE("boundary residual examples") {
    const ProblemSpec pme = pme_problem();
    Jet2 j(2);
    j.value = 0.3;
    j.grad = {0.7, -0.2};
    CHECK(boundary_residual(pme, 0, j) == 0.3);
    CHECK(boundary_residual(pme, 1, j) == 0.7);
    const ProblemSpec d = diffusion1d_problem();
    CHECK(boundary_residual(d, 0, j) == -0.7);

    // Network independent of xi is even in xi: symmetry residual 0.
    const ProblemSpec d2 = diffusion2d_problem();
    Networks n = Networks::initialize({{3, 8, 1}}, {{1, 5, 2}}, 4);
    for (int k = 0; k < 8; ++k)
        n.params[static_cast<std::size_t>(3 * k)] = 0.0;
    const std::vector<double> on_axis{0.0, 1.3, 0.5};
    CHECK(boundary_residual(d2, 0, n, on_axis) == 0.0);

    // Random network: flux residual against central differences.
    const Networks m = Networks::initialize({{3, 8, 1}}, {{1, 5, 2}}, 5);
    const std::vector<double> on_wall{4.0, 1.3, 0.5};
    const double h = 1e-5;
    Eigen::MatrixXd pts(3, 2);
    pts << 4.0 + h, 4.0 - h, 1.3, 1.3, 0.5, 0.5;
    const Eigen::MatrixXd v = eval_values(m.profile, m.profile_params(), pts);
    const double fd = (v(0, 0) - v(0, 1)) / (2 * h);
    ProblemSpec flux = d2;
    flux.bcs[2].kind = BcKind::ZeroFlux;
    CHECK(std::abs(boundary_residual(flux, 2, m, on_wall) - fd) / std::max(1.0, std::abs(fd)) < 1e-5);
}

TEST_CASE("total loss is exactly zero on the zero problem") {
    const ProblemSpec p = zero_problem();
    const CollocationSet cs = make_collocation(p, {{20}, 8});
    const LossBreakdown lb = total_loss(p, zero_networks(p), cs, {});
    CHECK(lb.total == 0.0);
    CHECK(lb.e_pde == 0.0);
}

TEST_CASE("loss weights act linearly") {
    const auto &def = find_case("nagumo");
    const ProblemSpec p = def.build(def.defaults);
    const CollocationSet cs = make_collocation(p, {{24}, 8});
    const Networks n = Networks::initialize(def.profile, def.rates, 0);
    const LossBreakdown a = total_loss(p, n, cs, {1, 1, 1, 1});
    const LossBreakdown b = total_loss(p, n, cs, {2, 1, 1, 1});
    CHECK(a.e_pde == b.e_pde);
    CHECK(b.total - a.total == doctest::Approx(a.e_pde).epsilon(1e-12));
    CHECK(a.total > 0.0);
    CHECK(std::isfinite(a.total));

    const LossWeights w{0.37, 2.9, 0.013, 5.5};
    const LossBreakdown c = total_loss(p, n, cs, w);
    CHECK(c.total == w.pde * c.e_pde + w.alg * c.e_alg + w.bc * c.e_bc + w.ic * c.e_ic);
    CHECK(c.e_alg == a.e_alg);
}

TEST_CASE("loss and gradient do not depend on the worker count") {
    const auto &def = find_case("burgers");
    const ProblemSpec p = def.build(def.defaults);
    const CollocationSet cs = make_collocation(p, {{60}, 40});
    const Networks n = Networks::initialize(def.profile, def.rates, 2);
    std::vector<double> g1, g3;
    LossBreakdown a, b;
    {
        EnvWorkers env("1");
        a = total_loss(p, n, cs, {}, &g1);
    }
    {
        EnvWorkers env("3");
        b = total_loss(p, n, cs, {}, &g3);
    }
    CHECK(a.total == b.total);
    CHECK(a.e_alg == b.e_alg);
    CHECK(g1 == g3);
    const LossBreakdown again = total_loss(p, n, cs, {});
    CHECK(again.total == a.total);
}

TEST_CASE("non-finite residuals are reported with their point") {
    ProblemSpec p = diffusion1d_problem();
    p.initial = [](std::span<const double> x) { return x[0] > 3.0 ? std::nan("") : 0.0; };
    const CollocationSet cs = make_collocation(p, {{20}, 8});
    const Networks n = Networks::initialize({{2, 5, 1}}, {{1, 5, 2}}, 0);
    CHECK_THROWS_AS(total_loss(p, n, cs, {}), NonFiniteError);
}

TEST_CASE("collocation invariants") {
    for (const auto &def : case_registry()) {
        const ProblemSpec p = def.build(def.defaults);
        const CollocationSet cs = make_collocation(p, def.desk_grid);
        CAPTURE(def.name);
        std::size_t expect = static_cast<std::size_t>(def.desk_grid.tau);
        for (int s : def.desk_grid.space)
            expect *= static_cast<std::size_t>(s);
        CHECK(static_cast<std::size_t>(cs.interior.cols()) == expect);
        for (Eigen::Index k = 0; k < cs.interior.cols(); ++k) {
            for (int d = 0; d < p.spatial_dim; ++d) {
                const Interval &iv = p.space[static_cast<std::size_t>(d)];
                CHECK_MESSAGE((cs.interior(d, k) > iv.lo && cs.interior(d, k) < iv.hi), "point ", k);
            }
            CHECK(cs.interior(p.spatial_dim, k) > 0.0);
            CHECK(cs.interior(p.spatial_dim, k) <= p.tau_end + 1e-12);
            if (k > 0 && cs.interior(p.spatial_dim, k) < cs.interior(p.spatial_dim, k - 1))
                FAIL("interior not tau-major");
        }
        CHECK(std::is_sorted(cs.tau_samples.begin(), cs.tau_samples.end()));
        CHECK(cs.tau_samples.front() == 0.0);
        CHECK(cs.tau_samples.back() == p.tau_end);
        for (double bp : p.breakpoints) {
            const auto &nodes = cs.quad_axes[0].nodes();
            CHECK(std::find(nodes.begin(), nodes.end(), bp) != nodes.end());
        }
        // Initial points sit at tau = 0 with the IC values.
        for (Eigen::Index k = 0; k < cs.initial.cols(); ++k)
            CHECK(cs.initial(p.spatial_dim, k) == 0.0);
    }
    // Porous medium interior excludes rho = 0; Dirichlet boundary set holds it.
    const ProblemSpec pme = pme_problem();
    const CollocationSet pcs = make_collocation(pme, {{200}, 40});
    CHECK(pcs.interior.row(0).minCoeff() > 0.0);
    CHECK(pcs.boundary[0].points(0, 0) == 0.0);
    // 2D Dirichlet walls skip tau = 0.
    const ProblemSpec d2 = diffusion2d_problem();
    const CollocationSet dcs = make_collocation(d2, {{21, 21}, 21});
    for (const auto &set : dcs.boundary) {
        const double min_tau = set.points.row(2).minCoeff();
        if (d2.bcs[set.bc].positive_tau_only)
            CHECK(min_tau > 0.0);
        else
            CHECK(min_tau == 0.0);
    }
}

TEST_CASE("closure count must match the unknowns") {
    ProblemSpec p = diffusion1d_problem();
    p.constraints.pop_back();
    CHECK_THROWS_AS(p.validate(), ConfigError);
    ProblemSpec q = burgers_problem(0.025);
    q.unknowns.push_back(Rate::Amplitude);
    CHECK_THROWS_AS(q.validate(), ConfigError);
}

TEST_CASE("infer_exponents examples") {
    const Exponents d = infer_exponents(-2, 1, -1.99699, 1.99881);
    CHECK(d.alpha == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(d.beta == doctest::Approx(-0.49954).epsilon(1e-4));
    const Exponents p = infer_exponents(-2, 2, 0.831677, 1.0);
    CHECK(p.alpha == doctest::Approx(0.85593).epsilon(1e-5));
    CHECK(p.beta == doctest::Approx(0.711856).epsilon(1e-5));
    const Exponents s = infer_exponents(-2, 2, 3 * 0.831677, 3.0);
    CHECK(s.alpha == doctest::Approx(p.alpha).epsilon(1e-14));
    CHECK(s.beta == doctest::Approx(p.beta).epsilon(1e-14));
    CHECK_THROWS_AS(infer_exponents(-2, 1, 1.0, -1.0), Error);
    try {
        (void)infer_exponents(-2, 1, 0.0, 0.0);
    } catch (const Error &e) {
        CHECK(std::string(e.what()).find("non-forward time map") != std::string::npos);
    }
}

TEST_CASE("reconstruct_scales examples") {
    std::vector<double> tau, half, zero;
    for (int i = 0; i < 100; ++i) {
        tau.push_back(2.0 * i / 99.0);
        half.push_back(0.5);
        zero.push_back(0.0);
    }
    const ScaleHistory h = reconstruct_scales(zero, half, tau);
    CHECK(h.width.front() == 1.0);
    CHECK(std::abs(h.width.back() - std::exp(1.0)) < 1e-4);
    for (double v : h.amplitude)
        CHECK(v == 1.0);
    std::vector<double> t1;
    for (int i = 0; i < 100; ++i)
        t1.push_back(i / 99.0);
    const ScaleHistory r = reconstruct_scales(zero, t1, t1);
    CHECK(std::abs(r.width.back() - std::exp(0.5)) < 1e-4);
    const std::vector<double> short_grid(tau.begin(), tau.begin() + 10);
    CHECK_THROWS_AS(reconstruct_scales(zero, half, short_grid), DimensionError);
}
