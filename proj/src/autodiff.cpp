#include "selfsim/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>

#include "selfsim/error.hpp"

namespace selfsim {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Jet2::Jet2(int dim)
    : grad(static_cast<std::size_t>(dim), 0.0),
      hess_(static_cast<std::size_t>(dim * (dim + 1) / 2), 0.0) {}

std::size_t Jet2::packed_index(int i, int j) const {
    const int d = dim();
    if (i < 0 || j < 0 || i >= d || j >= d)
        throw DimensionError("Jet2: hessian index out of range");
    if (i > j)
        std::swap(i, j);
    return static_cast<std::size_t>(i * d - i * (i - 1) / 2 + (j - i));
}

double Jet2::hess(int i, int j) const { return hess_[packed_index(i, j)]; }

void Jet2::set_hess(int i, int j, double v) { hess_[packed_index(i, j)] = v; }

JetRequest JetRequest::full(int dim) {
    JetRequest r;
    r.gradient = true;
    for (int i = 0; i < dim; ++i)
        for (int j = i; j < dim; ++j)
            r.hessian.emplace_back(i, j);
    return r;
}

std::size_t parameter_count(std::span<const int> widths) {
    std::size_t n = 0;
    for (std::size_t k = 0; k + 1 < widths.size(); ++k)
        n += static_cast<std::size_t>(widths[k] + 1) * static_cast<std::size_t>(widths[k + 1]);
    return n;
}

// --------------------------------------------------------------------------
// JetKernel

JetKernel::JetKernel(std::vector<int> widths, JetRequest request)
    : widths_(std::move(widths)), request_(std::move(request)) {
    if (widths_.size() < 2)
        throw DimensionError("layer_sizes: need at least an input and an output width");
    for (std::size_t k = 0; k < widths_.size(); ++k)
        if (widths_[k] <= 0)
            throw DimensionError("layer_sizes[" + std::to_string(k) + "] must be positive");

    const int d = widths_.front();
    for (auto &[i, j] : request_.hessian) {
        if (i < 0 || j < 0 || i >= d || j >= d)
            throw DimensionError("hessian pair index exceeds input dimension " + std::to_string(d));
        if (i > j)
            std::swap(i, j);
    }
    grads_ = request_.any_derivative() ? d : 0;
    channels_ = 1 + grads_ + static_cast<int>(request_.hessian.size());
}

int JetKernel::hess_channel(int i, int j) const noexcept {
    if (i > j)
        std::swap(i, j);
    for (std::size_t p = 0; p < request_.hessian.size(); ++p)
        if (request_.hessian[p].first == i && request_.hessian[p].second == j)
            return 1 + grads_ + static_cast<int>(p);
    return -1;
}

void JetKernel::forward(std::span<const double> params, const Eigen::MatrixXd &points) {
    const auto expected = parameter_count(widths_);
    if (params.size() != expected)
        throw DimensionError("params: length " + std::to_string(params.size()) + " but layer_sizes need " +
                             std::to_string(expected));
    if (points.rows() != widths_.front())
        throw DimensionError("point: dimension " + std::to_string(points.rows()) + " but layer_sizes[0] is " +
                             std::to_string(widths_.front()));

    params_ = Eigen::Map<const Eigen::VectorXd>(params.data(), static_cast<Eigen::Index>(params.size()));
    const Eigen::Index n = points.cols();
    const int c = channels_;
    n_ = n;

    const int d = widths_.front();
    input_.setZero(d, c * n);
    input_.leftCols(n) = points;
    for (int i = 0; i < grads_; ++i)
        input_.block(i, (1 + i) * n, 1, n).setOnes();

    const std::size_t layers = widths_.size() - 1;
    z_.resize(layers);
    a_.resize(layers - 1);
    s_.resize(layers - 1);
    s1_.resize(layers - 1);
    s2_.resize(layers - 1);

    std::size_t off = 0;
    const Eigen::MatrixXd *prev = &input_;
    for (std::size_t k = 0; k < layers; ++k) {
        const int in = widths_[k];
        const int out = widths_[k + 1];
        Eigen::Map<const RowMajorMatrix> w(params_.data() + off, out, in);
        Eigen::Map<const Eigen::VectorXd> b(params_.data() + off + static_cast<std::size_t>(out * in), out);
        off += static_cast<std::size_t>((in + 1) * out);

        Eigen::MatrixXd &z = z_[k];
        z.noalias() = w * (*prev);
        z.leftCols(n).colwise() += b;
        if (k + 1 == layers)
            break;

        auto &s = s_[k];
        auto &s1 = s1_[k];
        auto &s2 = s2_[k];
        // 1 - 2 / (exp(2z) + 1): vectorises, saturates cleanly, absolute error ~1e-16.
        s = 1.0 - 2.0 / ((2.0 * z.leftCols(n).array()).exp() + 1.0);
        s1 = 1.0 - s.square();
        s2 = -2.0 * s * s1;

        Eigen::MatrixXd &a = a_[k];
        a.resize(out, c * n);
        a.leftCols(n) = s.matrix();
        for (int i = 0; i < grads_; ++i)
            a.middleCols((1 + i) * n, n).array() = s1 * z.middleCols((1 + i) * n, n).array();
        for (std::size_t p = 0; p < request_.hessian.size(); ++p) {
            const auto [i, j] = request_.hessian[p];
            const Eigen::Index col = (1 + grads_ + static_cast<Eigen::Index>(p)) * n;
            a.middleCols(col, n).array() = s2 * z.middleCols((1 + i) * n, n).array() *
                                               z.middleCols((1 + j) * n, n).array() +
                                           s1 * z.middleCols(col, n).array();
        }
        prev = &a;
    }
}

void JetKernel::backward(const Eigen::MatrixXd &output_adjoint, std::span<double> param_adjoint) const {
    const Eigen::Index n = n_;
    const int c = channels_;
    const std::size_t layers = widths_.size() - 1;
    if (output_adjoint.rows() != widths_.back() || output_adjoint.cols() != c * n)
        throw DimensionError("output adjoint shape does not match the last forward()");
    if (param_adjoint.size() != static_cast<std::size_t>(params_.size()))
        throw DimensionError("parameter adjoint length mismatch");

    std::vector<std::size_t> offsets(layers);
    std::size_t off = 0;
    for (std::size_t k = 0; k < layers; ++k) {
        offsets[k] = off;
        off += static_cast<std::size_t>((widths_[k] + 1) * widths_[k + 1]);
    }

    Eigen::MatrixXd zbar = output_adjoint;
    Eigen::MatrixXd abar;
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(params_.size());
    for (std::size_t k = layers; k-- > 0;) {
        const int in = widths_[k];
        const int out = widths_[k + 1];
        const Eigen::MatrixXd &prev = (k == 0) ? input_ : a_[k - 1];
        Eigen::Map<RowMajorMatrix> wbar(acc.data() + offsets[k], out, in);
        Eigen::Map<Eigen::VectorXd> bbar(acc.data() + offsets[k] + static_cast<std::size_t>(out * in), out);
        wbar.noalias() += zbar * prev.transpose();
        bbar += zbar.leftCols(n).rowwise().sum();
        if (k == 0)
            break;

        Eigen::Map<const RowMajorMatrix> w(params_.data() + offsets[k], out, in);
        abar.noalias() = w.transpose() * zbar;

        // Through tanh of layer k-1.
        const std::size_t h = k - 1;
        const auto &s = s_[h];
        const auto &s1 = s1_[h];
        const auto &s2 = s2_[h];
        const Eigen::MatrixXd &z = z_[h];
        zbar.resize(in, c * n);

        zbar.leftCols(n).array() = s1 * abar.leftCols(n).array();
        for (int i = 0; i < grads_; ++i) {
            const auto zg = z.middleCols((1 + i) * n, n).array();
            const auto ag = abar.middleCols((1 + i) * n, n).array();
            zbar.leftCols(n).array() += s2 * ag * zg;
            zbar.middleCols((1 + i) * n, n).array() = s1 * ag;
        }
        if (!request_.hessian.empty()) {
            const Eigen::ArrayXXd s3 = -2.0 * s1.square() + 4.0 * s.square() * s1;
            for (std::size_t p = 0; p < request_.hessian.size(); ++p) {
                const auto [i, j] = request_.hessian[p];
                const Eigen::Index col = (1 + grads_ + static_cast<Eigen::Index>(p)) * n;
                const auto ah = abar.middleCols(col, n).array();
                const auto zgi = z.middleCols((1 + i) * n, n).array();
                const auto zgj = z.middleCols((1 + j) * n, n).array();
                zbar.leftCols(n).array() += ah * (s3 * zgi * zgj + s2 * z.middleCols(col, n).array());
                zbar.middleCols((1 + i) * n, n).array() += s2 * ah * zgj;
                zbar.middleCols((1 + j) * n, n).array() += s2 * ah * zgi;
                zbar.middleCols(col, n).array() = s1 * ah;
            }
        }
    }
    for (std::size_t i = 0; i < param_adjoint.size(); ++i)
        param_adjoint[i] += acc[static_cast<Eigen::Index>(i)];
}

Jet2 forward_jet(std::span<const int> layer_sizes, std::span<const double> params, std::span<const double> point) {
    if (layer_sizes.empty())
        throw DimensionError("layer_sizes: empty");
    if (layer_sizes.back() != 1)
        throw DimensionError("layer_sizes: final width is " + std::to_string(layer_sizes.back()) + ", expected 1");
    const int d = layer_sizes.front();
    if (static_cast<int>(point.size()) != d)
        throw DimensionError("point: dimension " + std::to_string(point.size()) + " but layer_sizes[0] is " +
                             std::to_string(d));

    JetKernel kernel({layer_sizes.begin(), layer_sizes.end()}, JetRequest::full(d));
    const Eigen::MatrixXd x = Eigen::Map<const Eigen::VectorXd>(point.data(), d);
    kernel.forward(params, x);
    const Eigen::MatrixXd &out = kernel.output();

    Jet2 jet(d);
    jet.value = out(0, 0);
    for (int i = 0; i < d; ++i)
        jet.grad[static_cast<std::size_t>(i)] = out(0, JetKernel::grad_channel(i));
    for (int i = 0; i < d; ++i)
        for (int j = i; j < d; ++j)
            jet.set_hess(i, j, out(0, kernel.hess_channel(i, j)));
    return jet;
}

// --------------------------------------------------------------------------
// Tape

double Var::value() const { return tape_->value(index_); }

Var Tape::variable(double value) {
    records_.push_back({Op::Leaf, -1, -1, 0.0, 0.0, 0.0});
    values_.push_back(value);
    return {this, static_cast<std::int32_t>(records_.size() - 1)};
}

std::vector<Var> Tape::variables(std::span<const double> values) {
    std::vector<Var> out;
    out.reserve(values.size());
    for (double v : values)
        out.push_back(variable(v));
    return out;
}

void Tape::reserve(std::size_t n) {
    records_.reserve(n);
    values_.reserve(n);
}

void Tape::clear() {
    records_.clear();
    values_.clear();
    blocks_.clear();
}

Var Tape::push_unary(Op op, Var a, double c, double value, double da) {
    records_.push_back({op, a.index(), -1, c, da, 0.0});
    values_.push_back(value);
    return {this, static_cast<std::int32_t>(records_.size() - 1)};
}

Var Tape::push_binary(Op op, Var a, Var b, double value, double da, double db) {
    if (a.tape() != b.tape())
        throw Error("tape: operands recorded on different tapes");
    records_.push_back({op, a.index(), b.index(), 0.0, da, db});
    values_.push_back(value);
    return {this, static_cast<std::int32_t>(records_.size() - 1)};
}

std::int32_t Tape::push_block(std::unique_ptr<BlockOp> op, std::vector<std::int32_t> inputs,
                              std::span<const double> output_values) {
    const auto block_id = static_cast<double>(blocks_.size());
    const auto block_record = static_cast<std::int32_t>(records_.size());
    records_.push_back({Op::Block, static_cast<std::int32_t>(blocks_.size()), -1, block_id, 0.0, 0.0});
    values_.push_back(0.0);
    const auto first = static_cast<std::int32_t>(records_.size());
    for (double v : output_values) {
        records_.push_back({Op::BlockOutput, block_record, -1, 0.0, 0.0, 0.0});
        values_.push_back(v);
    }
    blocks_.push_back({std::move(op), std::move(inputs), first, static_cast<std::int32_t>(output_values.size())});
    return first;
}

void Tape::set_leaf(Var leaf, double value) {
    const auto i = static_cast<std::size_t>(leaf.index());
    if (records_.at(i).op != Op::Leaf)
        throw Error("tape: set_leaf on a non-leaf record");
    values_[i] = value;
}

namespace {

// Value and partials of a unary op; shared by recording and replay.
std::pair<double, double> eval_unary(Op op, double a, double c) {
    switch (op) {
    case Op::Neg:
        return {-a, -1.0};
    case Op::Scale:
        return {c * a, c};
    case Op::Shift:
        return {a + c, 1.0};
    case Op::Square:
        return {a * a, 2.0 * a};
    case Op::Sqrt: {
        const double v = std::sqrt(a);
        return {v, 0.5 / v};
    }
    case Op::Exp: {
        const double v = std::exp(a);
        return {v, v};
    }
    case Op::Log:
        return {std::log(a), 1.0 / a};
    case Op::Tanh: {
        const double v = std::tanh(a);
        return {v, 1.0 - v * v};
    }
    case Op::PowConst:
        return {std::pow(a, c), c * std::pow(a, c - 1.0)};
    default:
        throw Error("tape: not a unary op");
    }
}

struct BinaryResult {
    double value, da, db;
};

BinaryResult eval_binary(Op op, double a, double b) {
    switch (op) {
    case Op::Add:
        return {a + b, 1.0, 1.0};
    case Op::Sub:
        return {a - b, 1.0, -1.0};
    case Op::Mul:
        return {a * b, b, a};
    case Op::Div:
        return {a / b, 1.0 / b, -a / (b * b)};
    default:
        throw Error("tape: not a binary op");
    }
}

bool is_binary(Op op) { return op == Op::Add || op == Op::Sub || op == Op::Mul || op == Op::Div; }

[[noreturn]] void undefined_partial(std::size_t i) {
    throw Error("tape record " + std::to_string(i) + ": undefined partial at the evaluation point");
}

} // namespace

void Tape::replay() {
    std::vector<double> in, out;
    for (std::size_t i = 0; i < records_.size(); ++i) {
        Record &r = records_[i];
        switch (r.op) {
        case Op::Leaf:
        case Op::BlockOutput:
            break;
        case Op::Block: {
            BlockEntry &blk = blocks_[static_cast<std::size_t>(r.a)];
            in.resize(blk.inputs.size());
            for (std::size_t k = 0; k < in.size(); ++k)
                in[k] = values_[static_cast<std::size_t>(blk.inputs[k])];
            out.resize(static_cast<std::size_t>(blk.n_outputs));
            blk.op->forward(in, out);
            std::copy(out.begin(), out.end(), values_.begin() + blk.first_output);
            break;
        }
        default:
            if (is_binary(r.op)) {
                const auto res = eval_binary(r.op, values_[static_cast<std::size_t>(r.a)],
                                             values_[static_cast<std::size_t>(r.b)]);
                values_[i] = res.value;
                r.da = res.da;
                r.db = res.db;
            } else {
                const auto [v, da] = eval_unary(r.op, values_[static_cast<std::size_t>(r.a)], r.c);
                values_[i] = v;
                r.da = da;
            }
        }
    }
}

std::vector<double> Tape::adjoints(Var output) const {
    std::vector<double> adj(records_.size(), 0.0);
    const auto last = static_cast<std::size_t>(output.index());
    adj[last] = 1.0;
    std::vector<double> in_values, in_adj;
    for (std::size_t i = last + 1; i-- > 0;) {
        const Record &r = records_[i];
        const double g = adj[i];
        switch (r.op) {
        case Op::Leaf:
        case Op::BlockOutput:
            break;
        case Op::Block: {
            const BlockEntry &blk = blocks_[static_cast<std::size_t>(r.a)];
            const auto first = static_cast<std::size_t>(blk.first_output);
            const auto n = static_cast<std::size_t>(blk.n_outputs);
            if (first >= adj.size())
                break;
            const std::span<const double> out_adj(adj.data() + first, std::min(n, adj.size() - first));
            if (std::all_of(out_adj.begin(), out_adj.end(), [](double x) { return x == 0.0; }))
                break;
            std::vector<double> full_out_adj(n, 0.0);
            std::copy(out_adj.begin(), out_adj.end(), full_out_adj.begin());
            in_values.resize(blk.inputs.size());
            for (std::size_t k = 0; k < in_values.size(); ++k)
                in_values[k] = values_[static_cast<std::size_t>(blk.inputs[k])];
            in_adj.assign(blk.inputs.size(), 0.0);
            blk.op->backward(in_values, full_out_adj, in_adj);
            for (std::size_t k = 0; k < in_adj.size(); ++k) {
                if (!std::isfinite(in_adj[k]))
                    undefined_partial(i);
                adj[static_cast<std::size_t>(blk.inputs[k])] += in_adj[k];
            }
            break;
        }
        default:
            if (g == 0.0)
                break;
            if (!std::isfinite(r.da))
                undefined_partial(i);
            adj[static_cast<std::size_t>(r.a)] += g * r.da;
            if (r.b >= 0) {
                if (!std::isfinite(r.db))
                    undefined_partial(i);
                adj[static_cast<std::size_t>(r.b)] += g * r.db;
            }
        }
    }
    return adj;
}

// --------------------------------------------------------------------------
// Operators

namespace {
Var unary(Op op, Var a, double c = 0.0) {
    const auto [v, da] = eval_unary(op, a.value(), c);
    return a.tape()->push_unary(op, a, c, v, da);
}
Var binary(Op op, Var a, Var b) {
    const auto r = eval_binary(op, a.value(), b.value());
    return a.tape()->push_binary(op, a, b, r.value, r.da, r.db);
}
} // namespace

Var operator+(Var a, Var b) { return binary(Op::Add, a, b); }
Var operator-(Var a, Var b) { return binary(Op::Sub, a, b); }
Var operator*(Var a, Var b) { return binary(Op::Mul, a, b); }
Var operator/(Var a, Var b) { return binary(Op::Div, a, b); }
Var operator-(Var a) { return unary(Op::Neg, a); }
Var operator+(Var a, double c) { return unary(Op::Shift, a, c); }
Var operator+(double c, Var a) { return unary(Op::Shift, a, c); }
Var operator-(Var a, double c) { return unary(Op::Shift, a, -c); }
Var operator-(double c, Var a) { return unary(Op::Shift, unary(Op::Neg, a), c); }
Var operator*(Var a, double c) { return unary(Op::Scale, a, c); }
Var operator*(double c, Var a) { return unary(Op::Scale, a, c); }
Var operator/(Var a, double c) { return unary(Op::Scale, a, 1.0 / c); }
Var operator/(double c, Var a) { return unary(Op::Scale, unary(Op::PowConst, a, -1.0), c); }
Var square(Var a) { return unary(Op::Square, a); }
Var sqrt(Var a) { return unary(Op::Sqrt, a); }
Var exp(Var a) { return unary(Op::Exp, a); }
Var log(Var a) { return unary(Op::Log, a); }
Var tanh(Var a) { return unary(Op::Tanh, a); }
Var pow(Var a, double p) { return unary(Op::PowConst, a, p); }

// --------------------------------------------------------------------------
// Batched network block

namespace {

// Tape layout of outputs: index = (point * outputs + output) * channels + channel.
class MlpJetBlock final : public BlockOp {
  public:
    MlpJetBlock(std::vector<int> widths, JetRequest request, Eigen::MatrixXd points)
        : kernel_(std::move(widths), std::move(request)), points_(std::move(points)) {}

    JetKernel &kernel() { return kernel_; }
    const Eigen::MatrixXd &points() const { return points_; }

    void forward(std::span<const double> inputs, std::span<double> outputs) override {
        kernel_.forward(inputs, points_);
        scatter(kernel_.output(), outputs);
    }

    void backward(std::span<const double> /*inputs*/, std::span<const double> output_adjoints,
                  std::span<double> input_adjoints) const override {
        const Eigen::Index n = kernel_.points();
        const int c = kernel_.channels();
        const int o = kernel_.output_dim();
        Eigen::MatrixXd adj(o, c * n);
        for (Eigen::Index p = 0; p < n; ++p)
            for (int k = 0; k < o; ++k)
                for (int ch = 0; ch < c; ++ch)
                    adj(k, ch * n + p) = output_adjoints[static_cast<std::size_t>((p * o + k) * c + ch)];
        kernel_.backward(adj, input_adjoints);
    }

    void scatter(const Eigen::MatrixXd &out, std::span<double> flat) const {
        const Eigen::Index n = kernel_.points();
        const int c = kernel_.channels();
        const int o = kernel_.output_dim();
        for (Eigen::Index p = 0; p < n; ++p)
            for (int k = 0; k < o; ++k)
                for (int ch = 0; ch < c; ++ch)
                    flat[static_cast<std::size_t>((p * o + k) * c + ch)] = out(k, ch * n + p);
    }

  private:
    JetKernel kernel_;
    Eigen::MatrixXd points_;
};

} // namespace

JetBatch::JetBatch(Tape *tape, std::int32_t first, int outputs, int channels, Eigen::Index points,
                   std::vector<std::pair<int, int>> pairs)
    : tape_(tape), first_(first), outputs_(outputs), channels_(channels), points_(points), pairs_(std::move(pairs)) {}

Var JetBatch::at(Eigen::Index point, int output, int channel) const {
    const auto idx = first_ + static_cast<std::int32_t>((point * outputs_ + output) * channels_ + channel);
    return {tape_, idx};
}

Var JetBatch::hess(Eigen::Index point, int i, int j, int output) const {
    if (i > j)
        std::swap(i, j);
    const int grads = channels_ - 1 - static_cast<int>(pairs_.size());
    for (std::size_t p = 0; p < pairs_.size(); ++p)
        if (pairs_[p].first == i && pairs_[p].second == j)
            return at(point, output, 1 + grads + static_cast<int>(p));
    throw Error("JetBatch: hessian pair (" + std::to_string(i) + "," + std::to_string(j) + ") was not requested");
}

JetBatch mlp_jet_batch(Tape &tape, std::span<const int> widths, std::span<const Var> params,
                       const Eigen::MatrixXd &points, const JetRequest &request) {
    auto block = std::make_unique<MlpJetBlock>(std::vector<int>(widths.begin(), widths.end()), request, points);
    std::vector<double> pv(params.size());
    std::vector<std::int32_t> inputs(params.size());
    for (std::size_t k = 0; k < params.size(); ++k) {
        if (params[k].tape() != &tape)
            throw Error("mlp_jet_batch: parameter recorded on a different tape");
        pv[k] = params[k].value();
        inputs[k] = params[k].index();
    }
    const JetKernel &kernel = block->kernel();
    std::vector<double> flat(static_cast<std::size_t>(points.cols() * kernel.output_dim() * kernel.channels()));
    block->forward(pv, flat);

    const int outputs = kernel.output_dim();
    const int channels = kernel.channels();
    auto pairs = kernel.request().hessian;
    const std::int32_t first = tape.push_block(std::move(block), std::move(inputs), flat);
    return {&tape, first, outputs, channels, points.cols(), std::move(pairs)};
}

std::vector<double> loss_gradient(const Tape &tape, Var loss, std::span<const Var> params) {
    const auto adj = tape.adjoints(loss);
    std::vector<double> g(params.size());
    for (std::size_t k = 0; k < params.size(); ++k)
        g[k] = adj[static_cast<std::size_t>(params[k].index())];
    return g;
}

double fd_check(const TapedFunction &f, std::span<const double> x, double h) {
    auto probe = [&](std::span<const double> at, const std::string &where) {
        Tape t;
        auto leaves = t.variables(at);
        const double v = f(t, leaves).value();
        if (!std::isfinite(v))
            throw NonFiniteError("fd_check: non-finite value at " + where);
        return v;
    };

    Tape tape;
    auto leaves = tape.variables(x);
    const Var y = f(tape, leaves);
    if (!std::isfinite(y.value()))
        throw NonFiniteError("fd_check: non-finite value at the base point");
    const auto g = loss_gradient(tape, y, leaves);

    std::vector<double> xp(x.begin(), x.end());
    double worst = 0.0;
    for (std::size_t i = 0; i < xp.size(); ++i) {
        const double xi = xp[i];
        std::ostringstream where;
        xp[i] = xi + h;
        where << "x[" << i << "] + h (" << xp[i] << ")";
        const double fp = probe(xp, where.str());
        xp[i] = xi - h;
        where.str("");
        where << "x[" << i << "] - h (" << xp[i] << ")";
        const double fm = probe(xp, where.str());
        xp[i] = xi;
        const double fd = (fp - fm) / (2.0 * h);
        worst = std::max(worst, std::abs(g[i] - fd) / std::max(1.0, std::abs(fd)));
    }
    return worst;
}

double fd_check_gradient(const GradientFunction &f, std::span<const double> x, double h,
                         std::span<const std::size_t> coords) {
    std::vector<double> g, scratch;
    const double base = f(x, g);
    if (!std::isfinite(base))
        throw NonFiniteError("fd_check: non-finite value at the base point");
    if (g.size() != x.size())
        throw DimensionError("fd_check: gradient length " + std::to_string(g.size()) + " for " +
                             std::to_string(x.size()) + " inputs");
    std::vector<std::size_t> all;
    if (coords.empty()) {
        all.resize(x.size());
        for (std::size_t i = 0; i < x.size(); ++i)
            all[i] = i;
        coords = all;
    }
    std::vector<double> xp(x.begin(), x.end());
    double worst = 0.0;
    for (std::size_t i : coords) {
        if (i >= xp.size())
            throw DimensionError("fd_check: coordinate " + std::to_string(i) + " out of range");
        const double xi = xp[i];
        const double step = h * std::max(1.0, std::abs(xi));
        xp[i] = xi + step;
        const double fp = f(xp, scratch);
        xp[i] = xi - step;
        const double fm = f(xp, scratch);
        xp[i] = xi;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw NonFiniteError("fd_check: non-finite value at x[" + std::to_string(i) + "] +/- " +
                                 std::to_string(step));
        const double fd = (fp - fm) / (2.0 * step);
        worst = std::max(worst, std::abs(g[i] - fd) / std::max(1.0, std::abs(fd)));
    }
    return worst;
}

} // namespace selfsim
