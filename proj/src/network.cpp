#include "selfsim/network.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "selfsim/error.hpp"
#include "selfsim/format.hpp"

namespace selfsim {

void MlpSpec::validate() const {
    if (widths.size() < 3)
        throw ConfigError("widths", "need input, at least one hidden layer, and output");
    for (std::size_t k = 0; k < widths.size(); ++k)
        if (widths[k] <= 0)
            throw ConfigError("widths[" + std::to_string(k) + "]", "must be positive");
}

std::vector<Layer> unpack(const MlpSpec &spec, std::span<const double> params) {
    if (params.size() != spec.parameter_count())
        throw DimensionError("params: length " + std::to_string(params.size()) + ", spec needs " +
                             std::to_string(spec.parameter_count()));
    std::vector<Layer> layers;
    std::size_t off = 0;
    for (std::size_t k = 0; k + 1 < spec.widths.size(); ++k) {
        const int in = spec.widths[k];
        const int out = spec.widths[k + 1];
        Layer l{Eigen::MatrixXd(out, in), Eigen::VectorXd(out)};
        for (int r = 0; r < out; ++r)
            for (int c = 0; c < in; ++c)
                l.weight(r, c) = params[off++];
        for (int r = 0; r < out; ++r)
            l.bias(r) = params[off++];
        layers.push_back(std::move(l));
    }
    return layers;
}

ParamVector pack(const MlpSpec &spec, const std::vector<Layer> &layers) {
    if (layers.size() + 1 != spec.widths.size())
        throw DimensionError("pack: layer count does not match spec");
    ParamVector v;
    v.reserve(spec.parameter_count());
    for (std::size_t k = 0; k < layers.size(); ++k) {
        const Layer &l = layers[k];
        if (l.weight.rows() != spec.widths[k + 1] || l.weight.cols() != spec.widths[k] ||
            l.bias.size() != spec.widths[k + 1])
            throw DimensionError("pack: layer " + std::to_string(k) + " shape does not match spec");
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
            for (Eigen::Index c = 0; c < l.weight.cols(); ++c)
                v.push_back(l.weight(r, c));
        for (Eigen::Index r = 0; r < l.bias.size(); ++r)
            v.push_back(l.bias(r));
    }
    return v;
}

ParamVector init_params(const MlpSpec &spec, std::uint64_t seed) {
    spec.validate();
    std::mt19937_64 rng(seed);
    ParamVector v;
    v.reserve(spec.parameter_count());
    for (std::size_t k = 0; k + 1 < spec.widths.size(); ++k) {
        const int in = spec.widths[k];
        const int out = spec.widths[k + 1];
        const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
        std::uniform_real_distribution<double> dist(-limit, limit);
        for (int i = 0; i < in * out; ++i)
            v.push_back(dist(rng));
        v.insert(v.end(), static_cast<std::size_t>(out), 0.0);
    }
    return v;
}

std::vector<Jet2> eval(const MlpSpec &spec, std::span<const double> params, std::span<const double> point) {
    const int d = spec.input_dim();
    if (static_cast<int>(point.size()) != d)
        throw DimensionError("point: dimension " + std::to_string(point.size()) + " but widths[0] is " +
                             std::to_string(d));
    JetKernel kernel(spec.widths, JetRequest::full(d));
    const Eigen::MatrixXd x = Eigen::Map<const Eigen::VectorXd>(point.data(), d);
    kernel.forward(params, x);
    const Eigen::MatrixXd &out = kernel.output();

    std::vector<Jet2> jets;
    for (int o = 0; o < spec.output_dim(); ++o) {
        Jet2 jet(d);
        jet.value = out(o, 0);
        for (int i = 0; i < d; ++i)
            jet.grad[static_cast<std::size_t>(i)] = out(o, JetKernel::grad_channel(i));
        for (int i = 0; i < d; ++i)
            for (int j = i; j < d; ++j)
                jet.set_hess(i, j, out(o, kernel.hess_channel(i, j)));
        jets.push_back(std::move(jet));
    }
    return jets;
}

Eigen::MatrixXd eval_values(const MlpSpec &spec, std::span<const double> params, const Eigen::MatrixXd &points) {
    JetKernel kernel(spec.widths, JetRequest::value_only());
    kernel.forward(params, points);
    return kernel.output();
}

void save_checkpoint(const std::filesystem::path &path, const MlpSpec &spec, std::span<const double> params) {
    if (params.size() != spec.parameter_count())
        throw DimensionError("checkpoint: parameter length does not match spec");
    std::ofstream out(path);
    if (!out)
        throw Error("cannot write " + path.string());
    for (std::size_t k = 0; k < spec.widths.size(); ++k)
        out << (k ? "," : "") << spec.widths[k];
    out << '\n';
    for (double v : params)
        out << format_double(v) << '\n';
}

std::pair<MlpSpec, ParamVector> load_checkpoint(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in)
        throw Error("cannot read " + path.string());
    std::string line;
    std::getline(in, line);
    MlpSpec spec;
    std::stringstream header(line);
    std::string tok;
    while (std::getline(header, tok, ','))
        spec.widths.push_back(std::stoi(tok));
    spec.validate();
    ParamVector v;
    while (std::getline(in, line))
        if (!line.empty())
            v.push_back(std::stod(line));
    if (v.size() != spec.parameter_count())
        throw DimensionError("checkpoint " + path.string() + ": " + std::to_string(v.size()) +
                             " values but header needs " + std::to_string(spec.parameter_count()));
    return {spec, v};
}

} // namespace selfsim
