#pragma once

// Composite trapezoid rules on collocation grids. All rules are linear in the
// sampled values, so they work unchanged on taped variables.

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "selfsim/autodiff.hpp"
#include "selfsim/error.hpp"

namespace selfsim {

class Grid1D {
  public:
    /// Throws ConfigError unless there are >= 2 strictly increasing nodes.
    explicit Grid1D(std::vector<double> nodes);
    /// `count` nodes from lo to hi inclusive.
    static Grid1D uniform(double lo, double hi, std::size_t count);

    [[nodiscard]] const std::vector<double> &nodes() const noexcept { return nodes_; }
    [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }
    [[nodiscard]] double front() const { return nodes_.front(); }
    [[nodiscard]] double back() const { return nodes_.back(); }
    /// Trapezoid weights: integral = sum_i weights[i] * f_i.
    [[nodiscard]] const std::vector<double> &weights() const noexcept { return weights_; }

  private:
    std::vector<double> nodes_;
    std::vector<double> weights_;
};

/// Tensor-product grid. Values are laid out x-major: index = ix * ny + iy.
struct Grid2D {
    Grid1D x;
    Grid1D y;

    [[nodiscard]] std::size_t size() const noexcept { return x.size() * y.size(); }
    [[nodiscard]] double weight(std::size_t ix, std::size_t iy) const { return x.weights()[ix] * y.weights()[iy]; }
};

double trapezoid_1d(std::span<const double> values, const Grid1D &grid);

/// `values` is nx x ny.
double trapezoid_2d(const Eigen::MatrixXd &values, const Grid2D &grid);

double inner_product(std::span<const double> f, std::span<const double> g, const Grid1D &grid);
double inner_product(std::span<const double> f, std::span<const double> g, const Grid2D &grid);

/// Weighted sum sum_i w_i * f_i * g_i recorded on the tape; w from the grid.
/// Summation is index-ascending.
Var inner_product(std::span<const Var> f, std::span<const double> g, std::span<const double> weights);

/// Running trapezoid integral starting at 0 on the first node.
std::vector<double> cumulative_trapezoid(std::span<const double> values, const Grid1D &grid);

} // namespace selfsim
