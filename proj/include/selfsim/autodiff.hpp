#pragma once

// Exact input derivatives of small dense tanh networks, plus a reverse-mode
// tape that differentiates scalar losses built from those derivatives with
// respect to every network parameter.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace selfsim {

/// Value, gradient and Hessian of a scalar function of `dim` inputs at one
/// point. The Hessian is stored once (packed upper triangle) and mirrored on
/// read, so it is symmetric by construction.
class Jet2 {
  public:
    Jet2() = default;
    explicit Jet2(int dim);

    [[nodiscard]] int dim() const noexcept { return static_cast<int>(grad.size()); }
    [[nodiscard]] double hess(int i, int j) const;
    void set_hess(int i, int j, double v);

    double value = 0.0;
    std::vector<double> grad;

  private:
    [[nodiscard]] std::size_t packed_index(int i, int j) const;
    std::vector<double> hess_;
};

/// Which derivative channels a batched network evaluation produces. Gradient
/// channels for all inputs are present whenever any derivative is requested.
struct JetRequest {
    bool gradient = false;
    std::vector<std::pair<int, int>> hessian;

    static JetRequest value_only() { return {}; }
    static JetRequest first_order() { return {true, {}}; }
    static JetRequest full(int dim);

    [[nodiscard]] bool any_derivative() const noexcept { return gradient || !hessian.empty(); }
};

/// Number of parameters of a dense network with the given layer widths:
/// sum over layers of (in + 1) * out.
std::size_t parameter_count(std::span<const int> widths);

/// Batched forward propagation of (value, gradient, selected Hessian entries)
/// through affine maps and tanh, with the matching adjoint for parameter
/// gradients. Channels of one layer are stored side by side in one matrix
/// (`width x channels*points`) so every affine map is a single GEMM.
class JetKernel {
  public:
    JetKernel(std::vector<int> widths, JetRequest request);

    [[nodiscard]] int input_dim() const noexcept { return widths_.front(); }
    [[nodiscard]] int output_dim() const noexcept { return widths_.back(); }
    [[nodiscard]] int channels() const noexcept { return channels_; }
    [[nodiscard]] const std::vector<int> &widths() const noexcept { return widths_; }
    [[nodiscard]] const JetRequest &request() const noexcept { return request_; }

    [[nodiscard]] static int grad_channel(int axis) noexcept { return 1 + axis; }
    /// Channel index of Hessian pair (i, j) in either order; -1 if absent.
    [[nodiscard]] int hess_channel(int i, int j) const noexcept;

    /// `points` is input_dim x N. After the call, output() holds
    /// output_dim x (channels * N).
    void forward(std::span<const double> params, const Eigen::MatrixXd &points);

    [[nodiscard]] const Eigen::MatrixXd &output() const noexcept { return z_.back(); }
    [[nodiscard]] Eigen::Index points() const noexcept { return n_; }

    /// `output_adjoint` has the shape of output(); parameter adjoints are
    /// accumulated (added) into `param_adjoint`. Requires a preceding forward().
    void backward(const Eigen::MatrixXd &output_adjoint, std::span<double> param_adjoint) const;

  private:
    std::vector<int> widths_;
    JetRequest request_;
    int channels_ = 1;
    int grads_ = 0;

    Eigen::Index n_ = 0;
    // Eigen-owned (aligned) so vectorised kernels take the same path every run.
    Eigen::VectorXd params_;
    Eigen::MatrixXd input_;
    std::vector<Eigen::MatrixXd> z_; // per layer pre-activation (output layer last)
    std::vector<Eigen::MatrixXd> a_; // per hidden layer post-activation
    std::vector<Eigen::ArrayXXd> s_, s1_, s2_;
};

/// Network output jet at a single point. The final layer must have width 1.
Jet2 forward_jet(std::span<const int> layer_sizes, std::span<const double> params,
                 std::span<const double> point);

class Tape;

/// Handle to one value recorded on a Tape.
class Var {
  public:
    Var() = default;
    Var(Tape *tape, std::int32_t index) : tape_(tape), index_(index) {}

    [[nodiscard]] double value() const;
    [[nodiscard]] std::int32_t index() const noexcept { return index_; }
    [[nodiscard]] Tape *tape() const noexcept { return tape_; }

  private:
    Tape *tape_ = nullptr;
    std::int32_t index_ = -1;
};

enum class Op : std::uint8_t {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale,
    Shift,
    Square,
    Sqrt,
    Exp,
    Log,
    Tanh,
    PowConst,
    Block,
    BlockOutput,
};

/// Multi-output operation with its own adjoint, recorded as one tape entry.
class BlockOp {
  public:
    virtual ~BlockOp() = default;
    virtual void forward(std::span<const double> inputs, std::span<double> outputs) = 0;
    virtual void backward(std::span<const double> inputs, std::span<const double> output_adjoints,
                          std::span<double> input_adjoints) const = 0;
};

/// Ordered record of elementary operations. Each worker owns its own tape.
class Tape {
  public:
    struct Record {
        Op op;
        std::int32_t a;
        std::int32_t b;
        double c;  // constant operand (Scale, Shift, PowConst) or block id
        double da; // partial w.r.t. a
        double db; // partial w.r.t. b
    };

    Tape() = default;
    Tape(const Tape &) = delete;
    Tape &operator=(const Tape &) = delete;

    Var variable(double value);
    std::vector<Var> variables(std::span<const double> values);

    [[nodiscard]] double value(std::int32_t index) const { return values_[static_cast<std::size_t>(index)]; }
    [[nodiscard]] std::size_t size() const noexcept { return records_.size(); }
    [[nodiscard]] const Record &record(std::size_t i) const { return records_[i]; }

    void reserve(std::size_t n);
    void clear();

    /// Adjoints of every record for d(output)/d(record). Throws Error naming
    /// the record index if a visited partial is not finite.
    [[nodiscard]] std::vector<double> adjoints(Var output) const;

    /// Overwrite a leaf value; call replay() to propagate.
    void set_leaf(Var leaf, double value);
    /// Recompute every value from the leaves in recording order.
    void replay();

    // Recording primitives used by the operator overloads.
    Var push_unary(Op op, Var a, double c, double value, double da);
    Var push_binary(Op op, Var a, Var b, double value, double da, double db);
    /// Records a block; returns the index of its first output. Outputs occupy
    /// the `n_outputs` records following the block record.
    std::int32_t push_block(std::unique_ptr<BlockOp> op, std::vector<std::int32_t> inputs,
                            std::span<const double> output_values);

  private:
    struct BlockEntry {
        std::unique_ptr<BlockOp> op;
        std::vector<std::int32_t> inputs;
        std::int32_t first_output;
        std::int32_t n_outputs;
    };

    std::vector<Record> records_;
    std::vector<double> values_;
    std::vector<BlockEntry> blocks_;
};

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);
Var operator-(Var a);
Var operator+(Var a, double c);
Var operator+(double c, Var a);
Var operator-(Var a, double c);
Var operator-(double c, Var a);
Var operator*(Var a, double c);
Var operator*(double c, Var a);
Var operator/(Var a, double c);
Var operator/(double c, Var a);
Var square(Var a);
Var sqrt(Var a);
Var exp(Var a);
Var log(Var a);
Var tanh(Var a);
Var pow(Var a, double p);

inline double square(double x) { return x * x; }
inline double value_of(double x) { return x; }
inline double value_of(Var x) { return x.value(); }

/// Jet outputs of a batched network evaluation recorded on a tape.
class JetBatch {
  public:
    JetBatch() = default;
    JetBatch(Tape *tape, std::int32_t first, int outputs, int channels, Eigen::Index points,
             std::vector<std::pair<int, int>> pairs);

    [[nodiscard]] Var at(Eigen::Index point, int output, int channel) const;
    [[nodiscard]] Var value(Eigen::Index point, int output = 0) const { return at(point, output, 0); }
    [[nodiscard]] Var grad(Eigen::Index point, int axis, int output = 0) const {
        return at(point, output, 1 + axis);
    }
    [[nodiscard]] Var hess(Eigen::Index point, int i, int j, int output = 0) const;
    [[nodiscard]] Eigen::Index points() const noexcept { return points_; }

  private:
    Tape *tape_ = nullptr;
    std::int32_t first_ = 0;
    int outputs_ = 0;
    int channels_ = 0;
    Eigen::Index points_ = 0;
    std::vector<std::pair<int, int>> pairs_;
};

/// Records a batched network jet evaluation. `points` is input_dim x N and
/// `params` must be leaves (or any vars) of length parameter_count(widths).
JetBatch mlp_jet_batch(Tape &tape, std::span<const int> widths, std::span<const Var> params,
                       const Eigen::MatrixXd &points, const JetRequest &request);

/// d(loss)/d(params) by one reverse sweep.
std::vector<double> loss_gradient(const Tape &tape, Var loss, std::span<const Var> params);

/// Scalar function recorded on a fresh tape from leaf variables.
using TapedFunction = std::function<Var(Tape &, std::span<const Var>)>;

/// Max over coordinates of |g_tape - g_fd| / max(1, |g_fd|) with central
/// differences of step h. Throws NonFiniteError naming the probe on NaN/Inf.
double fd_check(const TapedFunction &f, std::span<const double> x, double h);

/// Function returning its value and writing its gradient (e.g. a loss).
using GradientFunction = std::function<double(std::span<const double>, std::vector<double> &)>;

/// Same discrepancy measure for a function with its own gradient. Each
/// coordinate uses step h * max(1, |x_i|). `coords` limits the probed
/// coordinates (all when empty).
double fd_check_gradient(const GradientFunction &f, std::span<const double> x, double h,
                         std::span<const std::size_t> coords = {});

} // namespace selfsim
