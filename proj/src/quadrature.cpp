#include "selfsim/quadrature.hpp"

#include <string>

namespace selfsim {

namespace {
void require_length(std::size_t got, std::size_t want, const char *what) {
    if (got != want)
        throw DimensionError(std::string(what) + ": " + std::to_string(got) + " values for " + std::to_string(want) +
                             " nodes");
}
} // namespace

Grid1D::Grid1D(std::vector<double> nodes) : nodes_(std::move(nodes)) {
    if (nodes_.size() < 2)
        throw ConfigError("grid", "needs at least 2 nodes");
    for (std::size_t i = 1; i < nodes_.size(); ++i)
        if (!(nodes_[i] > nodes_[i - 1]))
            throw ConfigError("grid", "nodes must be strictly increasing (index " + std::to_string(i) + ")");
    weights_.assign(nodes_.size(), 0.0);
    for (std::size_t i = 1; i < nodes_.size(); ++i) {
        const double h = 0.5 * (nodes_[i] - nodes_[i - 1]);
        weights_[i - 1] += h;
        weights_[i] += h;
    }
}

Grid1D Grid1D::uniform(double lo, double hi, std::size_t count) {
    if (count < 2)
        throw ConfigError("grid", "needs at least 2 nodes");
    std::vector<double> nodes(count);
    const double h = (hi - lo) / static_cast<double>(count - 1);
    for (std::size_t i = 0; i < count; ++i)
        nodes[i] = lo + h * static_cast<double>(i);
    nodes.back() = hi;
    return Grid1D(std::move(nodes));
}

double trapezoid_1d(std::span<const double> values, const Grid1D &grid) {
    require_length(values.size(), grid.size(), "trapezoid_1d");
    double sum = 0.0;
    const auto &w = grid.weights();
    for (std::size_t i = 0; i < values.size(); ++i)
        sum += w[i] * values[i];
    return sum;
}

double trapezoid_2d(const Eigen::MatrixXd &values, const Grid2D &grid) {
    if (static_cast<std::size_t>(values.rows()) != grid.x.size() ||
        static_cast<std::size_t>(values.cols()) != grid.y.size())
        throw DimensionError("trapezoid_2d: values are " + std::to_string(values.rows()) + "x" +
                             std::to_string(values.cols()) + ", grid is " + std::to_string(grid.x.size()) + "x" +
                             std::to_string(grid.y.size()));
    // Iterated rule: integrate along y for every x node, then along x.
    std::vector<double> inner(grid.x.size());
    for (std::size_t ix = 0; ix < grid.x.size(); ++ix) {
        double s = 0.0;
        for (std::size_t iy = 0; iy < grid.y.size(); ++iy)
            s += grid.y.weights()[iy] * values(static_cast<Eigen::Index>(ix), static_cast<Eigen::Index>(iy));
        inner[ix] = s;
    }
    return trapezoid_1d(inner, grid.x);
}

double inner_product(std::span<const double> f, std::span<const double> g, const Grid1D &grid) {
    require_length(f.size(), grid.size(), "inner_product");
    require_length(g.size(), grid.size(), "inner_product");
    double sum = 0.0;
    const auto &w = grid.weights();
    for (std::size_t i = 0; i < f.size(); ++i)
        sum += w[i] * (f[i] * g[i]);
    return sum;
}

double inner_product(std::span<const double> f, std::span<const double> g, const Grid2D &grid) {
    require_length(f.size(), grid.size(), "inner_product");
    require_length(g.size(), grid.size(), "inner_product");
    Eigen::MatrixXd prod(grid.x.size(), grid.y.size());
    for (std::size_t ix = 0; ix < grid.x.size(); ++ix)
        for (std::size_t iy = 0; iy < grid.y.size(); ++iy) {
            const std::size_t k = ix * grid.y.size() + iy;
            prod(static_cast<Eigen::Index>(ix), static_cast<Eigen::Index>(iy)) = f[k] * g[k];
        }
    return trapezoid_2d(prod, grid);
}

Var inner_product(std::span<const Var> f, std::span<const double> g, std::span<const double> weights) {
    require_length(f.size(), weights.size(), "inner_product");
    require_length(g.size(), weights.size(), "inner_product");
    if (f.empty())
        throw DimensionError("inner_product: empty");
    Var sum = f[0] * (weights[0] * g[0]);
    for (std::size_t i = 1; i < f.size(); ++i)
        sum = sum + f[i] * (weights[i] * g[i]);
    return sum;
}

std::vector<double> cumulative_trapezoid(std::span<const double> values, const Grid1D &grid) {
    require_length(values.size(), grid.size(), "cumulative_trapezoid");
    std::vector<double> out(values.size(), 0.0);
    const auto &x = grid.nodes();
    for (std::size_t i = 1; i < values.size(); ++i)
        out[i] = out[i - 1] + 0.5 * (x[i] - x[i - 1]) * (values[i] + values[i - 1]);
    return out;
}

} // namespace selfsim
