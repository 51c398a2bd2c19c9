#pragma once

// Symmetry-reduced PDE problems in dynamically rescaled coordinates and the
// physics-informed loss that couples the profile network w(x, tau) to the
// rate network p(tau).
//
// With u(x, t) = B(tau) w((x - c) / A, tau), G = d(ln B)/dtau,
// C = d(ln A)/dtau and V = (dc/dtau) / A, the rescaled equation reads
//
//     sigma * (G w - C x.grad(w) - V dw/dx0 + dw/dtau) = L(w)
//
// closed by one algebraic constraint per unknown rate.

#include <array>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "selfsim/autodiff.hpp"
#include "selfsim/network.hpp"
#include "selfsim/quadrature.hpp"

namespace selfsim {

struct Interval {
    double lo = 0.0;
    double hi = 1.0;
};

/// Unknown symmetry rates, in the order the rate network emits them.
enum class Rate {
    Amplitude,   // G = d(ln B)/dtau
    Width,       // C = d(ln A)/dtau
    Translation, // V = (dc/dtau) / A
};

const char *rate_name(Rate r);

enum class Linkage {
    None,
    /// A * B = 1, so G = -C and G is not an unknown.
    InverseAmplitude,
};

/// Exponents of the operator scaling law L_x(B f((x-c)/A)) = A^a B^b L_y(f).
struct ScalingExponents {
    double a = 0.0;
    double b = 1.0;
};

/// Which group actions the operator is covariant under (used by the
/// scaling-law property check).
struct Symmetries {
    bool translation = false;
    bool scaling = false;
};

/// Coefficients in front of the frame terms G w, C x.grad(w), V dw/dx0.
/// All +1 for the standard ansatz; the porous-medium focusing problem uses
/// decay rates (-1, -1).
struct FrameTerms {
    double amplitude = 1.0;
    double width = 1.0;
    double translation = 1.0;
};

/// Spatial jet: value, first and pure second derivatives per spatial axis.
template <class S>
struct SpatialJet {
    S value{};
    std::array<S, 2> d1{};
    std::array<S, 2> d2{};
};

/// The spatial operator L_y of the original PDE.
class SpatialOperator {
  public:
    virtual ~SpatialOperator() = default;
    virtual double apply(const SpatialJet<double> &w, std::span<const double> x) const = 0;
    virtual Var apply(const SpatialJet<Var> &w, std::span<const double> x) const = 0;
    [[nodiscard]] virtual std::string describe() const = 0;
};

enum class ConstraintKind { Pinning, Conservation, TemplateIntegral, Orthogonality };

/// Weight function phi built from the template T.
enum class WeightKind {
    Template,           // T
    Slope,              // dT/dx0
    Moment,             // x . grad(T)
    TemplatePlusMoment, // T + x . grad(T)
};

struct Constraint {
    ConstraintKind kind = ConstraintKind::TemplateIntegral;
    std::vector<double> location; // pinning
    double target = 0.0;          // pinned value w*, or conserved mass K
    WeightKind weight = WeightKind::Template;

    static Constraint pinning(std::vector<double> location, double value);
    static Constraint conservation(double mass);
    static Constraint template_integral(WeightKind weight);
    static Constraint orthogonality();
};

enum class BcKind { Dirichlet, ZeroFlux, Symmetry };
enum class Side { Min, Max };

struct BoundaryCondition {
    int axis = 0;
    Side side = Side::Min;
    BcKind kind = BcKind::ZeroFlux;
    double value = 0.0;             // Dirichlet data
    bool positive_tau_only = false; // skip the tau = 0 slice
};

using ScalarField = std::function<double(std::span<const double>)>;
using GradientField = std::function<void(std::span<const double>, std::span<double>)>;

struct TemplateFunction {
    ScalarField value;
    GradientField gradient;
};

struct ProblemSpec {
    std::string name;
    int spatial_dim = 1;
    std::vector<Interval> space;
    double tau_end = 1.0;
    ScalingExponents exponents;
    Symmetries symmetries;
    int sigma = 1;
    std::vector<Rate> unknowns;
    Linkage linkage = Linkage::None;
    FrameTerms frame;
    std::shared_ptr<const SpatialOperator> rhs;
    std::vector<Constraint> constraints;
    std::vector<BoundaryCondition> bcs;
    ScalarField initial;
    TemplateFunction templ;
    /// Axis-0 locations that must be quadrature nodes (kinks of T).
    std::vector<double> breakpoints;

    /// Throws ConfigError on inconsistent specs; in particular the number of
    /// constraints must equal the number of unknown rates.
    void validate() const;
    [[nodiscard]] int rate_index(Rate r) const; // -1 if not an unknown
    [[nodiscard]] bool has_rate(Rate r) const { return rate_index(r) >= 0; }
};

/// Weighted phi(x) of an integral constraint at a spatial point.
double constraint_weight(const ProblemSpec &problem, WeightKind kind, std::span<const double> x);

struct LossWeights {
    double pde = 1.0;
    double alg = 1.0;
    double bc = 1.0;
    double ic = 1.0;

    void validate() const;
};

struct LossBreakdown {
    double e_pde = 0.0;
    double e_alg = 0.0;
    double e_bc = 0.0;
    double e_ic = 0.0;
    double total = 0.0;
};

/// Collocation counts: interior points per spatial axis and tau slices.
struct GridSizes {
    std::vector<int> space;
    int tau = 10;
};

struct CollocationSet {
    int spatial_dim = 1;
    /// (dim + 1) x N, last row is tau; ordered tau-major.
    Eigen::MatrixXd interior;
    std::vector<int> interior_tau;

    struct BoundarySet {
        std::size_t bc = 0;
        Eigen::MatrixXd points;
        std::vector<int> tau;
    };
    std::vector<BoundarySet> boundary;

    /// (dim + 1) x M at tau = 0 on the quadrature nodes, with IC values.
    Eigen::MatrixXd initial;
    std::vector<double> initial_values;

    /// Ascending, starts at 0. Constraints are imposed at every sample.
    std::vector<double> tau_samples;

    /// Closed spatial quadrature grid (per axis) and its flattened nodes.
    std::vector<Grid1D> quad_axes;
    Eigen::MatrixXd quad_nodes; // dim x Q, x-major
    std::vector<double> quad_weights;
    std::vector<double> template_values;
    /// phi at the quadrature nodes for each integral constraint.
    std::vector<std::vector<double>> constraint_weights;

    [[nodiscard]] std::size_t quad_size() const { return quad_weights.size(); }
};

/// Uniform collocation: `sizes.space[k]` interior nodes strictly inside each
/// spatial interval, `sizes.tau` slices in (0, tau_end]. The quadrature grid
/// closes each axis and is refined just enough to contain every breakpoint.
CollocationSet make_collocation(const ProblemSpec &problem, const GridSizes &sizes);

/// The two trainable networks and their concatenated parameters
/// (profile first, then rates).
struct Networks {
    MlpSpec profile;
    MlpSpec rates;
    ParamVector params;

    static Networks initialize(MlpSpec profile, MlpSpec rates, std::uint64_t seed);

    [[nodiscard]] std::span<const double> profile_params() const {
        return std::span<const double>(params).first(profile.parameter_count());
    }
    [[nodiscard]] std::span<const double> rate_params() const {
        return std::span<const double>(params).subspan(profile.parameter_count());
    }
    /// Check both specs against the problem (input/output widths).
    void check_compatible(const ProblemSpec &problem) const;
};

/// Symmetry rates (G, C, V) after linkage; missing rates are 0.
struct RateValues {
    double amplitude = 0.0;
    double width = 0.0;
    double translation = 0.0;
};

RateValues resolve_rates(const ProblemSpec &problem, std::span<const double> network_outputs);

/// Signed residual of the rescaled PDE for a given profile jet over
/// (space..., tau) and rate values.
double pde_residual(const ProblemSpec &problem, const Jet2 &w, const RateValues &rates,
                    std::span<const double> point);
double pde_residual(const ProblemSpec &problem, const Networks &nets, std::span<const double> point);

/// Rate network outputs at tau.
std::vector<double> rate_outputs(const Networks &nets, double tau);

/// One residual per constraint at tau. `w` evaluates the profile at a point
/// (space..., tau).
std::vector<double> algebraic_residuals(const ProblemSpec &problem, const CollocationSet &collocation,
                                        const ScalarField &w, double tau);
std::vector<double> algebraic_residuals(const ProblemSpec &problem, const CollocationSet &collocation,
                                        const Networks &nets, double tau);

/// Dirichlet: w - g. Zero-flux / symmetry: outward normal derivative.
double boundary_residual(const ProblemSpec &problem, std::size_t bc_index, const Jet2 &w);
double boundary_residual(const ProblemSpec &problem, std::size_t bc_index, const Networks &nets,
                         std::span<const double> point);

/// Full loss with optional gradient over nets.params. Evaluation is split
/// into fixed chunks processed by `workers()` threads and reduced in chunk
/// order, so results do not depend on the worker count.
LossBreakdown total_loss(const ProblemSpec &problem, const Networks &nets, const CollocationSet &collocation,
                         const LossWeights &weights, std::vector<double> *gradient = nullptr);

/// Warm-up objective sum (w(x, tau) - w0(x))^2 over interior and initial
/// points; gradient over the profile parameters only.
double warmup_loss(const ProblemSpec &problem, const MlpSpec &profile, std::span<const double> profile_params,
                   const CollocationSet &collocation, std::vector<double> *gradient = nullptr);

struct Exponents {
    double alpha = 0.0; // width:     A ~ (t + t0)^alpha
    double beta = 0.0;  // amplitude: B ~ (t + t0)^beta
};

/// From steady rates: kappa = -(a C + (b - 1) G) must be positive;
/// alpha = C / kappa, beta = G / kappa.
Exponents infer_exponents(double a, double b, double G, double C);

struct ScaleHistory {
    std::vector<double> width;     // A(tau) / A0
    std::vector<double> amplitude; // B(tau) / B0
};

ScaleHistory reconstruct_scales(std::span<const double> G, std::span<const double> C, std::span<const double> tau);

/// Number of worker threads (env SELFSIM_WORKERS, default hardware).
unsigned workers();

} // namespace selfsim
