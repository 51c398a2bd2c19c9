#include "selfsim/framework.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "selfsim/error.hpp"

namespace selfsim {

const char *rate_name(Rate r) {
    switch (r) {
    case Rate::Amplitude:
        return "G";
    case Rate::Width:
        return "C";
    case Rate::Translation:
        return "V";
    }
    return "?";
}

Constraint Constraint::pinning(std::vector<double> location, double value) {
    Constraint c;
    c.kind = ConstraintKind::Pinning;
    c.location = std::move(location);
    c.target = value;
    return c;
}

Constraint Constraint::conservation(double mass) {
    Constraint c;
    c.kind = ConstraintKind::Conservation;
    c.target = mass;
    return c;
}

Constraint Constraint::template_integral(WeightKind weight) {
    Constraint c;
    c.kind = ConstraintKind::TemplateIntegral;
    c.weight = weight;
    return c;
}

Constraint Constraint::orthogonality() {
    Constraint c;
    c.kind = ConstraintKind::Orthogonality;
    c.weight = WeightKind::Template;
    return c;
}

int ProblemSpec::rate_index(Rate r) const {
    for (std::size_t i = 0; i < unknowns.size(); ++i)
        if (unknowns[i] == r)
            return static_cast<int>(i);
    return -1;
}

void ProblemSpec::validate() const {
    if (spatial_dim != 1 && spatial_dim != 2)
        throw ConfigError("spatial_dim", "must be 1 or 2");
    if (static_cast<int>(space.size()) != spatial_dim)
        throw ConfigError("domain", "one interval per spatial axis required");
    for (std::size_t k = 0; k < space.size(); ++k)
        if (!(space[k].hi > space[k].lo))
            throw ConfigError("domain[" + std::to_string(k) + "]", "empty interval");
    if (!(tau_end > 0.0))
        throw ConfigError("tau_end", "must be positive");
    if (sigma != 1 && sigma != -1)
        throw ConfigError("sigma", "must be +1 or -1");
    if (!rhs)
        throw ConfigError("rhs", "missing spatial operator");
    if (!initial)
        throw ConfigError("initial", "missing initial condition");
    if (unknowns.empty())
        throw ConfigError("unknowns", "at least one symmetry rate is required");
    if (linkage == Linkage::InverseAmplitude && has_rate(Rate::Amplitude))
        throw ConfigError("unknowns", "G is eliminated by the A*B = 1 linkage");
    if (constraints.size() != unknowns.size())
        throw ConfigError("constraints", std::to_string(constraints.size()) + " constraints for " +
                                             std::to_string(unknowns.size()) + " unknown rates");
    for (std::size_t i = 0; i < constraints.size(); ++i) {
        const Constraint &c = constraints[i];
        const std::string field = "constraints[" + std::to_string(i) + "]";
        if (c.kind == ConstraintKind::Pinning && static_cast<int>(c.location.size()) != spatial_dim)
            throw ConfigError(field, "pinning location must have one coordinate per axis");
        if ((c.kind == ConstraintKind::TemplateIntegral || c.kind == ConstraintKind::Orthogonality) &&
            (!templ.value || !templ.gradient))
            throw ConfigError(field, "integral constraint needs a template with gradient");
    }
    for (std::size_t i = 0; i < bcs.size(); ++i)
        if (bcs[i].axis < 0 || bcs[i].axis >= spatial_dim)
            throw ConfigError("bcs[" + std::to_string(i) + "]", "axis out of range");
}

double constraint_weight(const ProblemSpec &problem, WeightKind kind, std::span<const double> x) {
    const double t = problem.templ.value(x);
    std::array<double, 2> g{};
    problem.templ.gradient(x, std::span<double>(g.data(), x.size()));
    double moment = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k)
        moment += x[k] * g[k];
    switch (kind) {
    case WeightKind::Template:
        return t;
    case WeightKind::Slope:
        return g[0];
    case WeightKind::Moment:
        return moment;
    case WeightKind::TemplatePlusMoment:
        return t + moment;
    }
    return 0.0;
}

void LossWeights::validate() const {
    for (auto [name, v] : {std::pair{"weights.pde", pde}, {"weights.alg", alg}, {"weights.bc", bc}, {"weights.ic", ic}})
        if (!std::isfinite(v) || v < 0.0)
            throw ConfigError(name, "must be finite and nonnegative");
    if (!(pde > 0.0))
        throw ConfigError("weights.pde", "must be positive");
}

// --------------------------------------------------------------------------
// Collocation

namespace {

Grid1D closed_axis(const Interval &iv, int interior, std::span<const double> breakpoints) {
    const double len = iv.hi - iv.lo;
    auto aligned = [&](int m) {
        for (double bp : breakpoints) {
            const double pos = (bp - iv.lo) / len * m;
            if (std::abs(pos - std::round(pos)) > 1e-9)
                return false;
        }
        return true;
    };
    int m = interior + 1;
    while (!aligned(m)) {
        if (++m > 1'000'000)
            throw ConfigError("grid", "cannot align quadrature nodes with template breakpoints");
    }
    std::vector<double> nodes(static_cast<std::size_t>(m + 1));
    for (int i = 0; i <= m; ++i) {
        double x = iv.lo + len * static_cast<double>(i) / m;
        for (double bp : breakpoints)
            if (std::abs(x - bp) < 1e-9 * len)
                x = bp;
        nodes[static_cast<std::size_t>(i)] = x;
    }
    nodes.front() = iv.lo;
    nodes.back() = iv.hi;
    return Grid1D(std::move(nodes));
}

} // namespace

CollocationSet make_collocation(const ProblemSpec &problem, const GridSizes &sizes) {
    problem.validate();
    const int dim = problem.spatial_dim;
    if (static_cast<int>(sizes.space.size()) != dim)
        throw ConfigError("grid.space", "expected " + std::to_string(dim) + " entries");
    for (int k = 0; k < dim; ++k)
        if (sizes.space[static_cast<std::size_t>(k)] < 1)
            throw ConfigError("grid.space[" + std::to_string(k) + "]", "must be positive");
    if (sizes.tau < 1)
        throw ConfigError("grid.tau", "must be positive");

    CollocationSet cs;
    cs.spatial_dim = dim;

    std::vector<std::vector<double>> interior_axes;
    for (int k = 0; k < dim; ++k) {
        const Interval &iv = problem.space[static_cast<std::size_t>(k)];
        const int n = sizes.space[static_cast<std::size_t>(k)];
        std::vector<double> nodes(static_cast<std::size_t>(n));
        for (int j = 0; j < n; ++j)
            nodes[static_cast<std::size_t>(j)] = iv.lo + (iv.hi - iv.lo) * static_cast<double>(j + 1) / (n + 1);
        interior_axes.push_back(std::move(nodes));
        const std::span<const double> bps =
            (k == 0) ? std::span<const double>(problem.breakpoints) : std::span<const double>();
        cs.quad_axes.push_back(closed_axis(iv, n, bps));
    }

    cs.tau_samples.resize(static_cast<std::size_t>(sizes.tau + 1));
    for (int k = 0; k <= sizes.tau; ++k)
        cs.tau_samples[static_cast<std::size_t>(k)] = problem.tau_end * static_cast<double>(k) / sizes.tau;

    // Tensor products, x-major.
    auto tensor = [dim](const std::vector<std::vector<double>> &axes) {
        std::size_t count = 1;
        for (const auto &a : axes)
            count *= a.size();
        Eigen::MatrixXd pts(dim, static_cast<Eigen::Index>(count));
        Eigen::Index col = 0;
        if (dim == 1) {
            for (double x : axes[0])
                pts(0, col++) = x;
        } else {
            for (double x : axes[0])
                for (double y : axes[1]) {
                    pts(0, col) = x;
                    pts(1, col) = y;
                    ++col;
                }
        }
        return pts;
    };

    const Eigen::MatrixXd space_pts = tensor(interior_axes);
    const Eigen::Index ns = space_pts.cols();
    cs.interior.resize(dim + 1, ns * sizes.tau);
    cs.interior_tau.resize(static_cast<std::size_t>(ns * sizes.tau));
    for (int k = 1; k <= sizes.tau; ++k)
        for (Eigen::Index j = 0; j < ns; ++j) {
            const Eigen::Index col = (k - 1) * ns + j;
            cs.interior.col(col).head(dim) = space_pts.col(j);
            cs.interior(dim, col) = cs.tau_samples[static_cast<std::size_t>(k)];
            cs.interior_tau[static_cast<std::size_t>(col)] = k;
        }

    std::vector<std::vector<double>> quad_axes_nodes;
    for (const auto &g : cs.quad_axes)
        quad_axes_nodes.push_back(g.nodes());
    cs.quad_nodes = tensor(quad_axes_nodes);
    const Eigen::Index nq = cs.quad_nodes.cols();
    cs.quad_weights.resize(static_cast<std::size_t>(nq));
    if (dim == 1) {
        cs.quad_weights = cs.quad_axes[0].weights();
    } else {
        std::size_t q = 0;
        for (double wx : cs.quad_axes[0].weights())
            for (double wy : cs.quad_axes[1].weights())
                cs.quad_weights[q++] = wx * wy;
    }

    // Boundary sets.
    for (std::size_t b = 0; b < problem.bcs.size(); ++b) {
        const BoundaryCondition &bc = problem.bcs[b];
        const Interval &iv = problem.space[static_cast<std::size_t>(bc.axis)];
        const double pos = bc.side == Side::Min ? iv.lo : iv.hi;
        std::vector<std::vector<double>> axes = quad_axes_nodes;
        axes[static_cast<std::size_t>(bc.axis)] = {pos};
        const Eigen::MatrixXd edge = tensor(axes);
        CollocationSet::BoundarySet set;
        set.bc = b;
        const int first_tau = bc.positive_tau_only ? 1 : 0;
        const Eigen::Index nt = sizes.tau + 1 - first_tau;
        set.points.resize(dim + 1, edge.cols() * nt);
        Eigen::Index col = 0;
        for (int k = first_tau; k <= sizes.tau; ++k)
            for (Eigen::Index j = 0; j < edge.cols(); ++j) {
                set.points.col(col).head(dim) = edge.col(j);
                set.points(dim, col) = cs.tau_samples[static_cast<std::size_t>(k)];
                set.tau.push_back(k);
                ++col;
            }
        cs.boundary.push_back(std::move(set));
    }

    cs.initial.resize(dim + 1, nq);
    cs.initial.topRows(dim) = cs.quad_nodes;
    cs.initial.row(dim).setZero();
    cs.initial_values.resize(static_cast<std::size_t>(nq));
    cs.template_values.assign(static_cast<std::size_t>(nq), 0.0);
    for (Eigen::Index q = 0; q < nq; ++q) {
        const Eigen::VectorXd x = cs.quad_nodes.col(q);
        const std::span<const double> xs(x.data(), static_cast<std::size_t>(dim));
        cs.initial_values[static_cast<std::size_t>(q)] = problem.initial(xs);
        if (problem.templ.value)
            cs.template_values[static_cast<std::size_t>(q)] = problem.templ.value(xs);
    }

    for (const Constraint &c : problem.constraints) {
        std::vector<double> phi;
        if (c.kind == ConstraintKind::TemplateIntegral || c.kind == ConstraintKind::Orthogonality) {
            phi.resize(static_cast<std::size_t>(nq));
            for (Eigen::Index q = 0; q < nq; ++q) {
                const Eigen::VectorXd x = cs.quad_nodes.col(q);
                phi[static_cast<std::size_t>(q)] =
                    constraint_weight(problem, c.weight, std::span<const double>(x.data(), static_cast<std::size_t>(dim)));
            }
        } else if (c.kind == ConstraintKind::Conservation) {
            phi.assign(static_cast<std::size_t>(nq), 1.0);
        }
        cs.constraint_weights.push_back(std::move(phi));
    }
    return cs;
}

// --------------------------------------------------------------------------
// Networks

Networks Networks::initialize(MlpSpec profile, MlpSpec rates, std::uint64_t seed) {
    Networks n{std::move(profile), std::move(rates), {}};
    n.params = init_params(n.profile, seed);
    // Distinct stream for the rate network.
    const ParamVector r = init_params(n.rates, seed ^ 0x9E3779B97F4A7C15ULL);
    n.params.insert(n.params.end(), r.begin(), r.end());
    return n;
}

void Networks::check_compatible(const ProblemSpec &problem) const {
    profile.validate();
    rates.validate();
    if (profile.input_dim() != problem.spatial_dim + 1)
        throw ConfigError("networks.profile[0]", "must equal spatial dimension + 1 (" +
                                                     std::to_string(problem.spatial_dim + 1) + ")");
    if (profile.output_dim() != 1)
        throw ConfigError("networks.profile", "output width must be 1");
    if (rates.input_dim() != 1)
        throw ConfigError("networks.rates[0]", "rate network takes tau only");
    if (rates.output_dim() != static_cast<int>(problem.unknowns.size()))
        throw ConfigError("networks.rates", "output width must equal the number of unknown rates (" +
                                                std::to_string(problem.unknowns.size()) + ")");
    if (params.size() != profile.parameter_count() + rates.parameter_count())
        throw DimensionError("networks: parameter vector length does not match the specs");
}

RateValues resolve_rates(const ProblemSpec &problem, std::span<const double> outputs) {
    if (outputs.size() != problem.unknowns.size())
        throw DimensionError("rates: " + std::to_string(outputs.size()) + " values for " +
                             std::to_string(problem.unknowns.size()) + " unknowns");
    RateValues r;
    for (std::size_t i = 0; i < outputs.size(); ++i) {
        switch (problem.unknowns[i]) {
        case Rate::Amplitude:
            r.amplitude = outputs[i];
            break;
        case Rate::Width:
            r.width = outputs[i];
            break;
        case Rate::Translation:
            r.translation = outputs[i];
            break;
        }
    }
    if (problem.linkage == Linkage::InverseAmplitude)
        r.amplitude = -r.width;
    return r;
}

// --------------------------------------------------------------------------
// Residuals

namespace {

template <class S>
struct RateSet {
    std::optional<S> amplitude, width, translation;
};

template <class S>
S residual_core(const ProblemSpec &p, const SpatialJet<S> &w, const S &w_tau, const RateSet<S> &rates,
                std::span<const double> x) {
    S lhs = w_tau;
    if (rates.amplitude)
        lhs = lhs + p.frame.amplitude * (*rates.amplitude * w.value);
    if (rates.width) {
        S moment = x[0] * w.d1[0];
        if (p.spatial_dim == 2)
            moment = moment + x[1] * w.d1[1];
        lhs = lhs - p.frame.width * (*rates.width * moment);
    }
    if (rates.translation)
        lhs = lhs - p.frame.translation * (*rates.translation * w.d1[0]);
    const S rhs = p.rhs->apply(w, x);
    if (p.sigma == 1)
        return lhs - rhs;
    return -1.0 * lhs - rhs;
}

SpatialJet<double> spatial_jet(const Jet2 &w, int dim) {
    SpatialJet<double> j;
    j.value = w.value;
    for (int k = 0; k < dim; ++k) {
        j.d1[static_cast<std::size_t>(k)] = w.grad[static_cast<std::size_t>(k)];
        j.d2[static_cast<std::size_t>(k)] = w.hess(k, k);
    }
    return j;
}

std::string describe_point(std::span<const double> x) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < x.size(); ++i)
        os << (i ? ", " : "") << x[i];
    os << ')';
    return os.str();
}

} // namespace

double pde_residual(const ProblemSpec &problem, const Jet2 &w, const RateValues &rates,
                    std::span<const double> point) {
    const int dim = problem.spatial_dim;
    if (static_cast<int>(point.size()) != dim + 1 || w.dim() != dim + 1)
        throw DimensionError("pde_residual: expected (space..., tau) of length " + std::to_string(dim + 1));
    RateSet<double> rs;
    if (problem.has_rate(Rate::Amplitude) || problem.linkage == Linkage::InverseAmplitude)
        rs.amplitude = rates.amplitude;
    if (problem.has_rate(Rate::Width))
        rs.width = rates.width;
    if (problem.has_rate(Rate::Translation))
        rs.translation = rates.translation;
    return residual_core<double>(problem, spatial_jet(w, dim), w.grad[static_cast<std::size_t>(dim)], rs,
                                 point.first(static_cast<std::size_t>(dim)));
}

std::vector<double> rate_outputs(const Networks &nets, double tau) {
    const std::array<double, 1> t{tau};
    const Eigen::MatrixXd out = eval_values(nets.rates, nets.rate_params(), Eigen::Map<const Eigen::MatrixXd>(t.data(), 1, 1));
    return {out.data(), out.data() + out.size()};
}

double pde_residual(const ProblemSpec &problem, const Networks &nets, std::span<const double> point) {
    const auto jets = eval(nets.profile, nets.profile_params(), point);
    const auto outs = rate_outputs(nets, point.back());
    return pde_residual(problem, jets[0], resolve_rates(problem, outs), point);
}

std::vector<double> algebraic_residuals(const ProblemSpec &problem, const CollocationSet &cs, const ScalarField &w,
                                        double tau) {
    if (cs.constraint_weights.size() != problem.constraints.size())
        throw ConfigError("constraints", "collocation set was built for a different problem");
    const int dim = problem.spatial_dim;
    const std::size_t nq = cs.quad_size();
    std::vector<double> wv(nq);
    std::vector<double> pt(static_cast<std::size_t>(dim + 1));
    for (std::size_t q = 0; q < nq; ++q) {
        for (int k = 0; k < dim; ++k)
            pt[static_cast<std::size_t>(k)] = cs.quad_nodes(k, static_cast<Eigen::Index>(q));
        pt[static_cast<std::size_t>(dim)] = tau;
        wv[q] = w(pt);
    }
    std::vector<double> out;
    for (std::size_t i = 0; i < problem.constraints.size(); ++i) {
        const Constraint &c = problem.constraints[i];
        const auto &phi = cs.constraint_weights[i];
        double r = 0.0;
        switch (c.kind) {
        case ConstraintKind::Pinning: {
            std::vector<double> p = c.location;
            p.push_back(tau);
            r = w(p) - c.target;
            break;
        }
        case ConstraintKind::Conservation:
            for (std::size_t q = 0; q < nq; ++q)
                r += cs.quad_weights[q] * wv[q];
            r -= c.target;
            break;
        case ConstraintKind::TemplateIntegral:
            for (std::size_t q = 0; q < nq; ++q)
                r += cs.quad_weights[q] * ((wv[q] - cs.template_values[q]) * phi[q]);
            break;
        case ConstraintKind::Orthogonality:
            for (std::size_t q = 0; q < nq; ++q)
                r += cs.quad_weights[q] * (wv[q] * phi[q]);
            break;
        }
        out.push_back(r);
    }
    return out;
}

std::vector<double> algebraic_residuals(const ProblemSpec &problem, const CollocationSet &cs, const Networks &nets,
                                        double tau) {
    const ScalarField w = [&](std::span<const double> p) {
        const Eigen::MatrixXd x = Eigen::Map<const Eigen::VectorXd>(p.data(), static_cast<Eigen::Index>(p.size()));
        return eval_values(nets.profile, nets.profile_params(), x)(0, 0);
    };
    return algebraic_residuals(problem, cs, w, tau);
}

double boundary_residual(const ProblemSpec &problem, std::size_t bc_index, const Jet2 &w) {
    const BoundaryCondition &bc = problem.bcs.at(bc_index);
    if (bc.kind == BcKind::Dirichlet)
        return w.value - bc.value;
    const double d = w.grad[static_cast<std::size_t>(bc.axis)];
    return bc.side == Side::Max ? d : -d;
}

double boundary_residual(const ProblemSpec &problem, std::size_t bc_index, const Networks &nets,
                         std::span<const double> point) {
    return boundary_residual(problem, bc_index, eval(nets.profile, nets.profile_params(), point)[0]);
}

// --------------------------------------------------------------------------
// Loss evaluation

namespace {

// Every evaluation allocates and frees multi-megabyte buffers; keeping them on
// the heap instead of fresh mmaps avoids page-fault storms.
void tune_allocator() {
#if defined(__GLIBC__)
    static std::once_flag once;
    std::call_once(once, [] {
        mallopt(M_MMAP_THRESHOLD, 1 << 30);
        mallopt(M_TRIM_THRESHOLD, 1 << 30);
    });
#endif
}

} // namespace

unsigned workers() {
    if (const char *env = std::getenv("SELFSIM_WORKERS")) {
        const int n = std::atoi(env);
        if (n > 0)
            return static_cast<unsigned>(n);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

enum class Term { Pde, Alg, Bc, Ic };

struct Job {
    Term term;
    std::size_t set = 0; // boundary set index
    Eigen::Index begin = 0;
    Eigen::Index end = 0;
};

struct JobResult {
    double sum = 0.0;
    std::vector<double> grad;
};

constexpr Eigen::Index kChunk = 1024;

struct LeafSet {
    std::vector<Var> profile;
    std::vector<Var> rates;
};

LeafSet make_leaves(Tape &tape, const Networks &nets, bool with_rates) {
    LeafSet l;
    l.profile = tape.variables(nets.profile_params());
    if (with_rates)
        l.rates = tape.variables(nets.rate_params());
    return l;
}

JobResult finish(const Tape &tape, Var sum, const LeafSet &leaves, std::size_t n_params, bool with_grad) {
    JobResult r;
    r.sum = sum.value();
    if (with_grad) {
        const auto adj = tape.adjoints(sum);
        r.grad.assign(n_params, 0.0);
        std::size_t k = 0;
        for (const Var &v : leaves.profile)
            r.grad[k++] = adj[static_cast<std::size_t>(v.index())];
        for (const Var &v : leaves.rates)
            r.grad[k++] = adj[static_cast<std::size_t>(v.index())];
    }
    return r;
}

[[noreturn]] void non_finite(const char *what, const Eigen::MatrixXd &pts, Eigen::Index col) {
    const Eigen::VectorXd p = pts.col(col);
    throw NonFiniteError(std::string("non-finite ") + what + " residual at " +
                         describe_point(std::span<const double>(p.data(), static_cast<std::size_t>(p.size()))));
}

JetRequest interior_request(int dim) {
    JetRequest r;
    r.gradient = true;
    for (int k = 0; k < dim; ++k)
        r.hessian.emplace_back(k, k);
    return r;
}

class LossRunner {
  public:
    LossRunner(const ProblemSpec &p, const Networks &n, const CollocationSet &c) : p_(p), n_(n), c_(c) {}

    JobResult run(const Job &job, bool with_grad) const {
        switch (job.term) {
        case Term::Pde:
            return interior(job, with_grad);
        case Term::Bc:
            return boundary(job, with_grad);
        case Term::Ic:
            return initial(job, with_grad);
        case Term::Alg:
            return constraints(job, with_grad);
        }
        return {};
    }

  private:
    JobResult interior(const Job &job, bool with_grad) const {
        const int dim = p_.spatial_dim;
        const Eigen::Index n = job.end - job.begin;
        Tape tape;
        tape.reserve(static_cast<std::size_t>(n) * 40 + n_.params.size());
        const LeafSet leaves = make_leaves(tape, n_, true);
        const Eigen::MatrixXd pts = c_.interior.middleCols(job.begin, n);
        const JetBatch w = mlp_jet_batch(tape, n_.profile.widths, leaves.profile, pts, interior_request(dim));

        // Rate network at the distinct tau slices of this chunk.
        std::vector<int> slices;
        for (Eigen::Index j = job.begin; j < job.end; ++j) {
            const int k = c_.interior_tau[static_cast<std::size_t>(j)];
            if (slices.empty() || slices.back() != k)
                slices.push_back(k);
        }
        Eigen::MatrixXd taus(1, static_cast<Eigen::Index>(slices.size()));
        for (std::size_t s = 0; s < slices.size(); ++s)
            taus(0, static_cast<Eigen::Index>(s)) = c_.tau_samples[static_cast<std::size_t>(slices[s])];
        const JetBatch rates = mlp_jet_batch(tape, n_.rates.widths, leaves.rates, taus, JetRequest::value_only());

        const int ia = p_.rate_index(Rate::Amplitude);
        const int iw = p_.rate_index(Rate::Width);
        const int it = p_.rate_index(Rate::Translation);

        Var sum;
        std::size_t slice = 0;
        for (Eigen::Index j = 0; j < n; ++j) {
            const int k = c_.interior_tau[static_cast<std::size_t>(job.begin + j)];
            while (slices[slice] != k)
                ++slice;
            const auto s = static_cast<Eigen::Index>(slice);
            RateSet<Var> rs;
            if (iw >= 0)
                rs.width = rates.value(s, iw);
            if (it >= 0)
                rs.translation = rates.value(s, it);
            if (ia >= 0)
                rs.amplitude = rates.value(s, ia);
            else if (p_.linkage == Linkage::InverseAmplitude && rs.width)
                rs.amplitude = -*rs.width;

            SpatialJet<Var> sj;
            sj.value = w.value(j);
            for (int a = 0; a < dim; ++a) {
                sj.d1[static_cast<std::size_t>(a)] = w.grad(j, a);
                sj.d2[static_cast<std::size_t>(a)] = w.hess(j, a, a);
            }
            const double *x = pts.col(j).data();
            const Var r = residual_core<Var>(p_, sj, w.grad(j, dim), rs,
                                             std::span<const double>(x, static_cast<std::size_t>(dim)));
            if (!std::isfinite(r.value()))
                non_finite("pde", pts, j);
            sum = (j == 0) ? square(r) : sum + square(r);
        }
        return finish(tape, sum, leaves, n_.params.size(), with_grad);
    }

    JobResult boundary(const Job &job, bool with_grad) const {
        const auto &set = c_.boundary[job.set];
        const BoundaryCondition &bc = p_.bcs[set.bc];
        const Eigen::Index n = job.end - job.begin;
        Tape tape;
        const LeafSet leaves = make_leaves(tape, n_, false);
        const Eigen::MatrixXd pts = set.points.middleCols(job.begin, n);
        const bool dirichlet = bc.kind == BcKind::Dirichlet;
        const JetBatch w = mlp_jet_batch(tape, n_.profile.widths, leaves.profile, pts,
                                         dirichlet ? JetRequest::value_only() : JetRequest::first_order());
        Var sum;
        for (Eigen::Index j = 0; j < n; ++j) {
            Var r;
            if (dirichlet)
                r = w.value(j) - bc.value;
            else
                r = bc.side == Side::Max ? w.grad(j, bc.axis) : -w.grad(j, bc.axis);
            if (!std::isfinite(r.value()))
                non_finite("boundary", pts, j);
            sum = (j == 0) ? square(r) : sum + square(r);
        }
        return finish(tape, sum, leaves, n_.params.size(), with_grad);
    }

    JobResult initial(const Job &job, bool with_grad) const {
        const Eigen::Index n = job.end - job.begin;
        Tape tape;
        const LeafSet leaves = make_leaves(tape, n_, false);
        const Eigen::MatrixXd pts = c_.initial.middleCols(job.begin, n);
        const JetBatch w = mlp_jet_batch(tape, n_.profile.widths, leaves.profile, pts, JetRequest::value_only());
        Var sum;
        for (Eigen::Index j = 0; j < n; ++j) {
            const Var r = w.value(j) - c_.initial_values[static_cast<std::size_t>(job.begin + j)];
            if (!std::isfinite(r.value()))
                non_finite("initial", pts, j);
            sum = (j == 0) ? square(r) : sum + square(r);
        }
        return finish(tape, sum, leaves, n_.params.size(), with_grad);
    }

    // job.begin..end index tau samples.
    JobResult constraints(const Job &job, bool with_grad) const {
        const int dim = p_.spatial_dim;
        const Eigen::Index nq = c_.quad_nodes.cols();
        const Eigen::Index nt = job.end - job.begin;

        std::vector<std::size_t> pins;
        for (std::size_t i = 0; i < p_.constraints.size(); ++i)
            if (p_.constraints[i].kind == ConstraintKind::Pinning)
                pins.push_back(i);
        const auto npin = static_cast<Eigen::Index>(pins.size());

        // Columns: per tau slice, the quadrature nodes followed by pin points.
        const Eigen::Index per = nq + npin;
        Eigen::MatrixXd pts(dim + 1, per * nt);
        for (Eigen::Index t = 0; t < nt; ++t) {
            const double tau = c_.tau_samples[static_cast<std::size_t>(job.begin + t)];
            pts.block(0, t * per, dim, nq) = c_.quad_nodes;
            for (Eigen::Index k = 0; k < npin; ++k)
                for (int a = 0; a < dim; ++a)
                    pts(a, t * per + nq + k) = p_.constraints[pins[static_cast<std::size_t>(k)]].location[static_cast<std::size_t>(a)];
            pts.row(dim).segment(t * per, per).setConstant(tau);
        }

        Tape tape;
        const LeafSet leaves = make_leaves(tape, n_, false);
        const JetBatch w = mlp_jet_batch(tape, n_.profile.widths, leaves.profile, pts, JetRequest::value_only());

        Var sum;
        bool first = true;
        std::vector<Var> wv(static_cast<std::size_t>(nq));
        std::vector<Var> dv(static_cast<std::size_t>(nq));
        for (Eigen::Index t = 0; t < nt; ++t) {
            for (Eigen::Index q = 0; q < nq; ++q)
                wv[static_cast<std::size_t>(q)] = w.value(t * per + q);
            Eigen::Index pin = 0;
            for (std::size_t i = 0; i < p_.constraints.size(); ++i) {
                const Constraint &c = p_.constraints[i];
                const auto &phi = c_.constraint_weights[i];
                Var r;
                switch (c.kind) {
                case ConstraintKind::Pinning:
                    r = w.value(t * per + nq + pin) - c.target;
                    ++pin;
                    break;
                case ConstraintKind::Conservation:
                    r = inner_product(wv, phi, c_.quad_weights) - c.target;
                    break;
                case ConstraintKind::TemplateIntegral:
                    for (Eigen::Index q = 0; q < nq; ++q)
                        dv[static_cast<std::size_t>(q)] =
                            wv[static_cast<std::size_t>(q)] - c_.template_values[static_cast<std::size_t>(q)];
                    r = inner_product(dv, phi, c_.quad_weights);
                    break;
                case ConstraintKind::Orthogonality:
                    r = inner_product(wv, phi, c_.quad_weights);
                    break;
                }
                if (!std::isfinite(r.value()))
                    non_finite("algebraic", pts, t * per);
                sum = first ? square(r) : sum + square(r);
                first = false;
            }
        }
        return finish(tape, sum, leaves, n_.params.size(), with_grad);
    }

    const ProblemSpec &p_;
    const Networks &n_;
    const CollocationSet &c_;
};

std::vector<Job> plan_jobs(const CollocationSet &cs, std::size_t n_constraints) {
    std::vector<Job> jobs;
    for (Eigen::Index b = 0; b < cs.interior.cols(); b += kChunk)
        jobs.push_back({Term::Pde, 0, b, std::min(cs.interior.cols(), b + kChunk)});
    if (n_constraints > 0) {
        const auto nt = static_cast<Eigen::Index>(cs.tau_samples.size());
        const Eigen::Index per = std::max<Eigen::Index>(1, 4 * kChunk / std::max<Eigen::Index>(1, cs.quad_nodes.cols()));
        for (Eigen::Index b = 0; b < nt; b += per)
            jobs.push_back({Term::Alg, 0, b, std::min(nt, b + per)});
    }
    for (std::size_t s = 0; s < cs.boundary.size(); ++s)
        for (Eigen::Index b = 0; b < cs.boundary[s].points.cols(); b += kChunk)
            jobs.push_back({Term::Bc, s, b, std::min(cs.boundary[s].points.cols(), b + kChunk)});
    for (Eigen::Index b = 0; b < cs.initial.cols(); b += kChunk)
        jobs.push_back({Term::Ic, 0, b, std::min(cs.initial.cols(), b + kChunk)});
    return jobs;
}

template <class Fn>
void run_parallel(std::size_t count, Fn &&fn) {
    const unsigned nw = std::min<unsigned>(workers(), static_cast<unsigned>(std::max<std::size_t>(count, 1)));
    if (nw <= 1) {
        for (std::size_t i = 0; i < count; ++i)
            fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < nw; ++t)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error)
                        error = std::current_exception();
                }
            }
        });
    for (auto &th : pool)
        th.join();
    if (error)
        std::rethrow_exception(error);
}

} // namespace

LossBreakdown total_loss(const ProblemSpec &problem, const Networks &nets, const CollocationSet &collocation,
                         const LossWeights &weights, std::vector<double> *gradient) {
    tune_allocator();
    nets.check_compatible(problem);
    if (collocation.constraint_weights.size() != problem.constraints.size())
        throw ConfigError("constraints", "collocation set was built for a different problem");
    const auto jobs = plan_jobs(collocation, problem.constraints.size());
    std::vector<JobResult> results(jobs.size());
    const LossRunner runner(problem, nets, collocation);
    const bool with_grad = gradient != nullptr;
    run_parallel(jobs.size(), [&](std::size_t i) { results[i] = runner.run(jobs[i], with_grad); });

    LossBreakdown lb;
    if (with_grad)
        gradient->assign(nets.params.size(), 0.0);
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        double lambda = 0.0;
        switch (jobs[i].term) {
        case Term::Pde:
            lb.e_pde += results[i].sum;
            lambda = weights.pde;
            break;
        case Term::Alg:
            lb.e_alg += results[i].sum;
            lambda = weights.alg;
            break;
        case Term::Bc:
            lb.e_bc += results[i].sum;
            lambda = weights.bc;
            break;
        case Term::Ic:
            lb.e_ic += results[i].sum;
            lambda = weights.ic;
            break;
        }
        if (with_grad && lambda != 0.0)
            for (std::size_t k = 0; k < gradient->size(); ++k)
                (*gradient)[k] += lambda * results[i].grad[k];
    }
    lb.total = weights.pde * lb.e_pde + weights.alg * lb.e_alg + weights.bc * lb.e_bc + weights.ic * lb.e_ic;
    return lb;
}

double warmup_loss(const ProblemSpec &problem, const MlpSpec &profile, std::span<const double> profile_params,
                   const CollocationSet &cs, std::vector<double> *gradient) {
    tune_allocator();
    const int dim = problem.spatial_dim;
    struct Chunk {
        const Eigen::MatrixXd *pts;
        Eigen::Index begin, end;
    };
    std::vector<Chunk> chunks;
    for (Eigen::Index b = 0; b < cs.interior.cols(); b += kChunk)
        chunks.push_back({&cs.interior, b, std::min(cs.interior.cols(), b + kChunk)});
    for (Eigen::Index b = 0; b < cs.initial.cols(); b += kChunk)
        chunks.push_back({&cs.initial, b, std::min(cs.initial.cols(), b + kChunk)});

    std::vector<JobResult> results(chunks.size());
    const bool with_grad = gradient != nullptr;
    run_parallel(chunks.size(), [&](std::size_t i) {
        const Chunk &ch = chunks[i];
        const Eigen::Index n = ch.end - ch.begin;
        const Eigen::MatrixXd pts = ch.pts->middleCols(ch.begin, n);
        Tape tape;
        const auto leaves = tape.variables(profile_params);
        const JetBatch w = mlp_jet_batch(tape, profile.widths, leaves, pts, JetRequest::value_only());
        Var sum;
        for (Eigen::Index j = 0; j < n; ++j) {
            const Eigen::VectorXd x = pts.col(j).head(dim);
            const double target = problem.initial(std::span<const double>(x.data(), static_cast<std::size_t>(dim)));
            const Var r = w.value(j) - target;
            if (!std::isfinite(r.value()))
                non_finite("warm-up", pts, j);
            sum = (j == 0) ? square(r) : sum + square(r);
        }
        results[i].sum = sum.value();
        if (with_grad)
            results[i].grad = loss_gradient(tape, sum, leaves);
    });

    double total = 0.0;
    if (with_grad)
        gradient->assign(profile_params.size(), 0.0);
    for (const auto &r : results) {
        total += r.sum;
        if (with_grad)
            for (std::size_t k = 0; k < gradient->size(); ++k)
                (*gradient)[k] += r.grad[k];
    }
    return total;
}

// --------------------------------------------------------------------------
// Exponents and scale reconstruction

Exponents infer_exponents(double a, double b, double G, double C) {
    const double kappa = -(a * C + (b - 1.0) * G);
    if (!(kappa > 0.0))
        throw Error("non-forward time map: kappa = -(a*C + (b-1)*G) = " + std::to_string(kappa) +
                    " must be positive (check sigma / rate orientation)");
    return {C / kappa, G / kappa};
}

ScaleHistory reconstruct_scales(std::span<const double> G, std::span<const double> C, std::span<const double> tau) {
    if (G.size() != tau.size() || C.size() != tau.size())
        throw DimensionError("reconstruct_scales: series and tau grid lengths differ");
    const Grid1D grid(std::vector<double>(tau.begin(), tau.end()));
    const auto lg = cumulative_trapezoid(G, grid);
    const auto lc = cumulative_trapezoid(C, grid);
    ScaleHistory h;
    for (std::size_t i = 0; i < tau.size(); ++i) {
        h.amplitude.push_back(std::exp(lg[i]));
        h.width.push_back(std::exp(lc[i]));
    }
    return h;
}

} // namespace selfsim
