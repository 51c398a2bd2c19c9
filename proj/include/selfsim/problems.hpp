#pragma once

// Concrete case studies, their analytic oracles and the post-processing that
// turns a trained pair of networks into physical quantities.

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "selfsim/framework.hpp"

namespace selfsim {

// Spatial operators ------------------------------------------------------

/// w_yy + w (1 - w) (w - a)
class NagumoOperator final : public SpatialOperator {
  public:
    explicit NagumoOperator(double a) : a_(a) {}
    double apply(const SpatialJet<double> &w, std::span<const double> x) const override;
    Var apply(const SpatialJet<Var> &w, std::span<const double> x) const override;
    [[nodiscard]] std::string describe() const override;

  private:
    double a_;
};

/// Sum of pure second derivatives over `dim` axes.
class Laplacian final : public SpatialOperator {
  public:
    explicit Laplacian(int dim) : dim_(dim) {}
    double apply(const SpatialJet<double> &w, std::span<const double> x) const override;
    Var apply(const SpatialJet<Var> &w, std::span<const double> x) const override;
    [[nodiscard]] std::string describe() const override;

  private:
    int dim_;
};

/// Axisymmetric porous-medium operator (w^2)_rr + (w^2)_r / r. Throws at r = 0.
class PorousMediumRadial final : public SpatialOperator {
  public:
    double apply(const SpatialJet<double> &w, std::span<const double> x) const override;
    Var apply(const SpatialJet<Var> &w, std::span<const double> x) const override;
    [[nodiscard]] std::string describe() const override;
};

/// nu w_yy - w w_y
class ViscousBurgers final : public SpatialOperator {
  public:
    explicit ViscousBurgers(double nu) : nu_(nu) {}
    double apply(const SpatialJet<double> &w, std::span<const double> x) const override;
    Var apply(const SpatialJet<Var> &w, std::span<const double> x) const override;
    [[nodiscard]] std::string describe() const override;

  private:
    double nu_;
};

// Builders ---------------------------------------------------------------

ProblemSpec nagumo_problem(double a = 0.01);
ProblemSpec diffusion1d_problem();
ProblemSpec diffusion2d_problem();
ProblemSpec pme_problem();
ProblemSpec burgers_problem(double nu = 0.025);

// Oracles ----------------------------------------------------------------

double nagumo_exact(double y);
double nagumo_speed(double a);

/// Self-similar Burgers profile with mass A*, centre c*, time t*.
double burgers_exact(double x, double t_star, double a_star, double c_star, double nu);

struct BurgersFit {
    double a_star = 0.0;
    double c_star = 0.0;
    double t_star = 0.0;
    double residual = 0.0; // RMS misfit over the grid
};

/// Multistart Levenberg-Marquardt fit of burgers_exact to sampled values.
BurgersFit fit_burgers_params(std::span<const double> x, std::span<const double> values, double nu);

struct SteadyRate {
    double mean = 0.0;
    double deviation = 0.0;
};

/// Mean and standard deviation over the last ceil(fraction * n) samples.
SteadyRate steady_rate(std::span<const double> series, double fraction = 0.1);

struct ShiftFit {
    double shift = 0.0;
    double l2 = 0.0;   // trapezoid L2 mismatch
    double linf = 0.0; // max pointwise mismatch
};

/// Best horizontal shift s in [lo, hi] aligning values(x) with f(x - s),
/// by golden-section search on the L2 mismatch.
ShiftFit fit_shift(std::span<const double> x, std::span<const double> values, const std::function<double(double)> &f,
                   double lo = -10.0, double hi = 10.0);

// Case registry and post-processing -------------------------------------

struct Snapshot {
    double tau = 0.0;
    Eigen::MatrixXd points; // dim x Q
    std::vector<double> values;
};

struct CaseResult {
    std::string name;
    std::vector<double> tau;                      // rate sampling grid
    std::map<std::string, std::vector<double>> rates; // "G", "C", "V" after linkage
    std::map<std::string, SteadyRate> steady;
    std::optional<Exponents> exponents;
    std::map<std::string, double> metrics;
    /// Reference values and tolerances printed by the report.
    std::map<std::string, std::pair<double, double>> targets;
    Snapshot final_profile;
    /// Optional oracle overlay on the final profile grid.
    std::vector<double> oracle;
};

using CaseParams = std::map<std::string, double>;

struct CaseDefinition {
    std::string name;
    CaseParams defaults;
    std::function<ProblemSpec(const CaseParams &)> build;
    GridSizes full_grid;
    GridSizes desk_grid;
    MlpSpec profile;
    MlpSpec rates;
    /// Case-specific metrics filled in after the generic ones.
    std::function<void(const ProblemSpec &, const CaseParams &, CaseResult &)> postprocess;
    /// L-BFGS budgets of the desk preset (joint iterations, warm-up).
    int desk_iterations = 20000;
    int desk_warmup = 2000;
};

const std::vector<CaseDefinition> &case_registry();
std::vector<std::string> case_names();
/// Throws ConfigError("case") listing the registered names.
const CaseDefinition &find_case(const std::string &name);

/// Profile values at tau over the closed quadrature grid.
Snapshot profile_snapshot(const ProblemSpec &problem, const CollocationSet &collocation, const Networks &nets,
                          double tau);

/// Rates on a uniform grid of `samples` points over [0, tau_end], steady
/// means, exponents (when both G and C are present) and case metrics.
CaseResult evaluate_case(const CaseDefinition &def, const CaseParams &params, const ProblemSpec &problem,
                         const CollocationSet &collocation, const Networks &nets, std::size_t samples = 201);

} // namespace selfsim
