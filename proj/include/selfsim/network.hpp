#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "selfsim/autodiff.hpp"

namespace selfsim {

/// Dense network layout: input width first, output width last. Hidden
/// layers use tanh, the output layer is affine.
struct MlpSpec {
    std::vector<int> widths;

    /// Throws ConfigError unless there is at least one hidden layer and all
    /// widths are positive.
    void validate() const;
    [[nodiscard]] std::size_t parameter_count() const { return selfsim::parameter_count(widths); }
    [[nodiscard]] int input_dim() const { return widths.front(); }
    [[nodiscard]] int output_dim() const { return widths.back(); }

    bool operator==(const MlpSpec &) const = default;
};

/// Flattened weights and biases: per layer the weight matrix row-major
/// (out x in), then the bias vector.
using ParamVector = std::vector<double>;

struct Layer {
    Eigen::MatrixXd weight; // out x in
    Eigen::VectorXd bias;
};

std::vector<Layer> unpack(const MlpSpec &spec, std::span<const double> params);
ParamVector pack(const MlpSpec &spec, const std::vector<Layer> &layers);

/// Glorot-uniform weights, zero biases. Same seed, same vector.
ParamVector init_params(const MlpSpec &spec, std::uint64_t seed);

/// One Jet2 per network output at `point`.
std::vector<Jet2> eval(const MlpSpec &spec, std::span<const double> params, std::span<const double> point);

/// Plain (untaped) batched values: returns output_dim x N.
Eigen::MatrixXd eval_values(const MlpSpec &spec, std::span<const double> params, const Eigen::MatrixXd &points);

/// Checkpoint file: header line with the comma-separated widths, then one
/// parameter per line at round-trip precision.
void save_checkpoint(const std::filesystem::path &path, const MlpSpec &spec, std::span<const double> params);
std::pair<MlpSpec, ParamVector> load_checkpoint(const std::filesystem::path &path);

} // namespace selfsim
