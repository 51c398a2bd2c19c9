#include <doctest.h>

#include <cmath>
#include <numbers>

#include "selfsim/quadrature.hpp"

using namespace selfsim;

namespace {

std::vector<double> sample(const Grid1D &g, double (*f)(double)) {
    std::vector<double> v;
    for (double x : g.nodes())
        v.push_back(f(x));
    return v;
}

double smooth(double x) { return std::exp(x) * std::sin(3 * x); }
// Closed form of the integral of e^x sin 3x over [0, 2].
double smooth_integral() {
    auto F = [](double x) { return std::exp(x) * (std::sin(3 * x) - 3 * std::cos(3 * x)) / 10.0; };
    return F(2.0) - F(0.0);
}

} // namespace

TEST_CASE("1D trapezoid examples") {
    const Grid1D g({0.0, 0.5, 1.0});
    CHECK(trapezoid_1d(std::vector<double>{0.0, 0.5, 1.0}, g) == doctest::Approx(0.5).epsilon(1e-15));
    const Grid1D irregular({-1.0, -0.2, 0.3, 2.5});
    CHECK(trapezoid_1d(std::vector<double>(4, 1.0), irregular) == doctest::Approx(3.5).epsilon(1e-15));
    // Affine integrands are exact on irregular grids.
    std::vector<double> aff;
    for (double x : irregular.nodes())
        aff.push_back(2 * x - 1);
    CHECK(trapezoid_1d(aff, irregular) == doctest::Approx(2.5 * 2.5 - 1 - 3.5).epsilon(1e-14));
}

TEST_CASE("Gaussian on 599 nodes against a fine reference") {
    const auto g = Grid1D::uniform(-8, 8, 599);
    const auto gauss = [](double x) { return std::exp(-x * x); };
    std::vector<double> v;
    for (double x : g.nodes())
        v.push_back(gauss(x));
    const auto fine = Grid1D::uniform(-8, 8, 100001);
    std::vector<double> vf;
    for (double x : fine.nodes())
        vf.push_back(gauss(x));
    const double ref = trapezoid_1d(vf, fine);
    CHECK(std::abs(trapezoid_1d(v, g) - ref) < 1e-6);
    CHECK(std::abs(ref - std::sqrt(std::numbers::pi)) < 1e-6);
}

TEST_CASE("2D trapezoid examples") {
    Grid2D sq{Grid1D::uniform(0, 4, 9), Grid1D::uniform(0, 4, 5)};
    CHECK(trapezoid_2d(Eigen::MatrixXd::Ones(9, 5), sq) == doctest::Approx(16.0).epsilon(1e-14));

    Grid2D unit{Grid1D::uniform(0, 1, 3), Grid1D::uniform(0, 1, 3)};
    Eigen::MatrixXd xy(3, 3);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            xy(i, j) = unit.x.nodes()[static_cast<std::size_t>(i)] * unit.y.nodes()[static_cast<std::size_t>(j)];
    CHECK(trapezoid_2d(xy, unit) == doctest::Approx(0.25).epsilon(1e-15));

    Grid2D big{Grid1D::uniform(0, 4, 200), Grid1D::uniform(0, 4, 200)};
    Eigen::MatrixXd e(200, 200);
    for (int i = 0; i < 200; ++i)
        for (int j = 0; j < 200; ++j)
            e(i, j) = std::exp(-(big.x.nodes()[static_cast<std::size_t>(i)] + big.y.nodes()[static_cast<std::size_t>(j)]));
    const double exact = std::pow(1 - std::exp(-4.0), 2);
    CHECK(std::abs(trapezoid_2d(e, big) - exact) < 1e-4);
    // Leading Euler-Maclaurin term h^2/12 (f'(b) - f'(a)) per axis is ~6.5e-5
    // in total; with it removed the remainder is below 1e-5.
    const double h = 4.0 / 199.0;
    const double axis = 1 - std::exp(-4.0);
    const double corr = 2 * axis * (h * h / 12.0) * (1 - std::exp(-4.0));
    CHECK(std::abs(trapezoid_2d(e, big) - corr - exact) < 1e-5);

    CHECK_THROWS_AS(trapezoid_2d(Eigen::MatrixXd::Ones(3, 4), unit), DimensionError);
}

TEST_CASE("inner products") {
    const Grid1D g({-1.0, 0.0, 1.0});
    const std::vector<double> y{-1.0, 0.0, 1.0}, zero(3, 0.0);
    CHECK(inner_product(zero, zero, g) == 0.0);
    CHECK(inner_product(y, y, g) == 1.0);
    std::vector<double> diff(3);
    for (int i = 0; i < 3; ++i)
        diff[static_cast<std::size_t>(i)] = y[static_cast<std::size_t>(i)] - y[static_cast<std::size_t>(i)];
    CHECK(inner_product(diff, y, g) == 0.0);
    CHECK_THROWS_AS(inner_product(y, std::vector<double>{1.0, 2.0}, g), DimensionError);

    Tape t;
    auto f = t.variables(y);
    const Var v = inner_product(f, y, g.weights());
    CHECK(v.value() == 1.0);
    const auto grad = loss_gradient(t, v, f);
    CHECK(grad[0] == -0.5);
    CHECK(grad[2] == 0.5);
}

TEST_CASE("second-order convergence") {
    double prev = 0.0;
    for (std::size_t n : {21u, 41u, 81u, 161u}) {
        const auto g = Grid1D::uniform(0, 2, n);
        const double err = std::abs(trapezoid_1d(sample(g, smooth), g) - smooth_integral());
        if (prev > 0) {
            const double ratio = prev / err;
            CHECK(ratio > 3.5);
            CHECK(ratio < 4.5);
        }
        prev = err;
    }
}

TEST_CASE("linearity and reversal") {
    const Grid1D g({0.0, 0.3, 0.45, 1.2, 2.0});
    const auto f = sample(g, smooth);
    const auto h = sample(g, [](double x) { return std::cos(x); });
    std::vector<double> comb(f.size());
    for (std::size_t i = 0; i < f.size(); ++i)
        comb[i] = 2.5 * f[i] - 0.75 * h[i];
    CHECK(trapezoid_1d(comb, g) ==
          doctest::Approx(2.5 * trapezoid_1d(f, g) - 0.75 * trapezoid_1d(h, g)).epsilon(1e-14));

    // Reversed values on the mirrored grid x -> -x.
    std::vector<double> mirrored;
    for (auto it = g.nodes().rbegin(); it != g.nodes().rend(); ++it)
        mirrored.push_back(-*it);
    const Grid1D gm(mirrored);
    const std::vector<double> rev(f.rbegin(), f.rend());
    CHECK(trapezoid_1d(rev, gm) == doctest::Approx(trapezoid_1d(f, g)).epsilon(1e-15));
}

TEST_CASE("grid validation and cumulative integral") {
    CHECK_THROWS_AS(Grid1D({1.0}), ConfigError);
    CHECK_THROWS_AS(Grid1D({0.0, 1.0, 1.0}), ConfigError);
    CHECK_THROWS_AS(trapezoid_1d(std::vector<double>{1.0}, Grid1D({0.0, 1.0})), DimensionError);
    const auto g = Grid1D::uniform(0, 1, 11);
    const auto c = cumulative_trapezoid(std::vector<double>(11, 2.0), g);
    CHECK(c.front() == 0.0);
    CHECK(c.back() == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(c[5] == doctest::Approx(1.0).epsilon(1e-14));
}
