#include "uqtse/nn.hpp"

#include "uqtse/errors.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace uqtse {

Mlp::Mlp(std::vector<int> widths) : widths_(std::move(widths)) {
    if (widths_.size() < 2) throw std::invalid_argument("network needs at least input and output widths");
    std::size_t total = 0;
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
        if (widths_[l] < 1 || widths_[l + 1] < 1) throw std::invalid_argument("layer widths must be >= 1");
        offsets_.push_back(total);
        total += static_cast<std::size_t>(widths_[l]) * widths_[l + 1] + widths_[l + 1];
    }
    params_ = Vector::Zero(static_cast<Eigen::Index>(total));
}

Mlp Mlp::xavier(std::vector<int> widths, std::mt19937_64& rng) {
    Mlp net(std::move(widths));
    for (int l = 0; l < net.layer_count(); ++l) {
        const double limit = std::sqrt(6.0 / (net.widths_[l] + net.widths_[l + 1]));
        std::uniform_real_distribution<double> dist(-limit, limit);
        auto w = net.weight(l);
        for (Eigen::Index c = 0; c < w.cols(); ++c)
            for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = dist(rng);
    }
    return net;
}

void Mlp::set_parameters(const Vector& p) {
    if (p.size() != params_.size()) throw std::invalid_argument("parameter vector has wrong length");
    params_ = p;
}

Eigen::Map<const Matrix> Mlp::weight(int l) const {
    return {params_.data() + offsets_[l], widths_[l + 1], widths_[l]};
}

Eigen::Map<Matrix> Mlp::weight(int l) {
    return {params_.data() + offsets_[l], widths_[l + 1], widths_[l]};
}

Eigen::Map<const Vector> Mlp::bias(int l) const {
    return {params_.data() + offsets_[l] + static_cast<std::size_t>(widths_[l]) * widths_[l + 1], widths_[l + 1]};
}

Eigen::Map<Vector> Mlp::bias(int l) {
    return {params_.data() + offsets_[l] + static_cast<std::size_t>(widths_[l]) * widths_[l + 1], widths_[l + 1]};
}

Vector Mlp::forward(const Vector& input) const {
    if (input.size() != input_size())
        throw std::invalid_argument("input length " + std::to_string(input.size()) + " != network input width " +
                                    std::to_string(input_size()));
    Vector h = input;
    for (int l = 0; l < layer_count(); ++l) {
        Vector a = weight(l) * h + bias(l);
        h = (l + 1 < layer_count()) ? Vector(a.array().tanh()) : a;
    }
    return h;
}

Matrix Mlp::forward(const Matrix& inputs) const {
    if (inputs.rows() != input_size()) throw std::invalid_argument("input rows != network input width");
    Matrix h = inputs;
    for (int l = 0; l < layer_count(); ++l) {
        Matrix a = weight(l) * h;
        a.colwise() += bias(l);
        h = (l + 1 < layer_count()) ? Matrix(a.array().tanh()) : a;
    }
    return h;
}

EvalWithInputDerivs Mlp::forward_with_input_derivs(const Vector& input, int n_coords) const {
    if (input.size() != input_size()) throw std::invalid_argument("input length != network input width");
    if (n_coords < 0 || n_coords > input_size()) throw std::invalid_argument("bad coordinate count");
    const Tape tape = record(Matrix(input), n_coords);
    EvalWithInputDerivs out{tape.output().col(0), Matrix(output_size(), n_coords)};
    for (int d = 0; d < n_coords; ++d) out.jacobian.col(d) = tape.output_tangent(d).col(0);
    return out;
}

Mlp::Tape Mlp::record(const Matrix& inputs, int n_tangents) const {
    if (inputs.rows() != input_size()) throw std::invalid_argument("input rows != network input width");
    if (n_tangents < 0 || n_tangents > input_size()) throw std::invalid_argument("bad tangent count");
    const Eigen::Index batch = inputs.cols();
    const int layers = layer_count();
    Tape tape;
    tape.act.reserve(layers + 1);
    tape.act.push_back(inputs);
    tape.tangent.assign(n_tangents, {});
    tape.pre_tangent.assign(n_tangents, {});
    for (int d = 0; d < n_tangents; ++d) {
        Matrix seed = Matrix::Zero(input_size(), batch);
        seed.row(d).setOnes();
        tape.tangent[d].push_back(std::move(seed));
        tape.pre_tangent[d].push_back(Matrix()); // unused slot for layer 0
    }
    for (int l = 0; l < layers; ++l) {
        const bool hidden = l + 1 < layers;
        Matrix a = weight(l) * tape.act[l];
        a.colwise() += bias(l);
        Matrix h = hidden ? Matrix(a.array().tanh()) : std::move(a);
        for (int d = 0; d < n_tangents; ++d) {
            // The seed tangent is a unit row, so W * seed is a broadcast column.
            Matrix ta = (l == 0) ? Matrix(weight(0).col(d).replicate(1, batch)) : Matrix(weight(l) * tape.tangent[d][l]);
            Matrix t = hidden ? Matrix((1.0 - h.array().square()) * ta.array()) : ta;
            tape.pre_tangent[d].push_back(std::move(ta));
            tape.tangent[d].push_back(std::move(t));
        }
        tape.act.push_back(std::move(h));
    }
    return tape;
}

void Mlp::backward(const Tape& tape, const Matrix& output_adj, std::span<const Matrix> tangent_adj,
                   Vector* param_grad, Matrix* input_adj) const {
    const int layers = layer_count();
    const int n_t = tape.tangent_count();
    if (param_grad && param_grad->size() != params_.size()) throw std::invalid_argument("gradient buffer has wrong length");
    if (!tangent_adj.empty() && static_cast<int>(tangent_adj.size()) != n_t)
        throw std::invalid_argument("tangent adjoint count does not match tape");

    Matrix gh = output_adj;
    std::vector<Matrix> gt(n_t);
    const bool with_tangents = !tangent_adj.empty();
    if (with_tangents)
        for (int d = 0; d < n_t; ++d) gt[d] = tangent_adj[d];

    for (int l = layers - 1; l >= 0; --l) {
        const bool hidden = l + 1 < layers;
        const Matrix& h = tape.act[l + 1];
        const Matrix& h_prev = tape.act[l];
        Matrix ga;
        std::vector<Matrix> gta(with_tangents ? n_t : 0);
        if (hidden) {
            const Eigen::ArrayXXd s = 1.0 - h.array().square();
            ga = gh.array() * s;
            if (with_tangents) {
                const Eigen::ArrayXXd ds = -2.0 * h.array() * s; // d s / d a
                for (int d = 0; d < n_t; ++d) {
                    ga.array() += gt[d].array() * tape.pre_tangent[d][l + 1].array() * ds;
                    gta[d] = gt[d].array() * s;
                }
            }
        } else {
            ga = gh;
            if (with_tangents)
                for (int d = 0; d < n_t; ++d) gta[d] = gt[d];
        }

        if (param_grad) {
            double* base = param_grad->data() + offsets_[l];
            Eigen::Map<Matrix> gw(base, widths_[l + 1], widths_[l]);
            Eigen::Map<Vector> gb(base + static_cast<std::size_t>(widths_[l]) * widths_[l + 1], widths_[l + 1]);
            gw.noalias() += ga * h_prev.transpose();
            gb += ga.rowwise().sum();
            if (with_tangents)
                for (int d = 0; d < n_t; ++d) gw.noalias() += gta[d] * tape.tangent[d][l].transpose();
        }

        if (l > 0 || input_adj) {
            gh = weight(l).transpose() * ga;
            if (with_tangents && l > 0)
                for (int d = 0; d < n_t; ++d) gt[d] = weight(l).transpose() * gta[d];
        }
    }
    if (input_adj) *input_adj = gh;
}

nlohmann::json to_json(const Mlp& mlp) {
    const auto& p = mlp.parameters();
    return {{"widths", mlp.widths()}, {"parameters", std::vector<double>(p.data(), p.data() + p.size())}};
}

Mlp mlp_from_json(const nlohmann::json& j) {
    Mlp net(j.at("widths").get<std::vector<int>>());
    const auto p = j.at("parameters").get<std::vector<double>>();
    net.set_parameters(Eigen::Map<const Vector>(p.data(), static_cast<Eigen::Index>(p.size())));
    return net;
}

Adam::Adam(std::size_t n, AdamConfig config)
    : config_(config), m_(Vector::Zero(static_cast<Eigen::Index>(n))), v_(Vector::Zero(static_cast<Eigen::Index>(n))) {}

void Adam::step(Vector& params, const Vector& grad) {
    if (params.size() != m_.size() || grad.size() != m_.size())
        throw std::invalid_argument("Adam: parameter/gradient length mismatch");
    for (Eigen::Index i = 0; i < grad.size(); ++i)
        if (!std::isfinite(grad[i]))
            throw NumericalError("Adam: non-finite gradient at index " + std::to_string(i));
    ++t_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    m_ = b1 * m_ + (1.0 - b1) * grad;
    v_ = b2 * v_ + (1.0 - b2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    params.array() -= config_.learning_rate * (m_.array() / c1) / ((v_.array() / c2).sqrt() + config_.epsilon);
}

nlohmann::json Adam::to_json() const {
    return {{"learning_rate", config_.learning_rate},
            {"beta1", config_.beta1},
            {"beta2", config_.beta2},
            {"epsilon", config_.epsilon},
            {"step", t_},
            {"m", std::vector<double>(m_.data(), m_.data() + m_.size())},
            {"v", std::vector<double>(v_.data(), v_.data() + v_.size())}};
}

Adam Adam::from_json(const nlohmann::json& j) {
    AdamConfig c{j.at("learning_rate"), j.at("beta1"), j.at("beta2"), j.at("epsilon")};
    const auto m = j.at("m").get<std::vector<double>>();
    const auto v = j.at("v").get<std::vector<double>>();
    Adam a(m.size(), c);
    a.m_ = Eigen::Map<const Vector>(m.data(), static_cast<Eigen::Index>(m.size()));
    a.v_ = Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
    a.t_ = j.at("step");
    return a;
}

}  // namespace uqtse
