#pragma once

// Fully connected tanh networks with exact input derivatives, and gradients of
// losses that consume those derivatives.
//
// The batched tape propagates, alongside the activations, forward-mode tangents
// with respect to the leading input coordinates. `backward` then runs reverse
// mode through both the activations and the tangents, which yields exact
// parameter gradients of losses built from d(output)/d(input), including the
// second-order paths through tanh''.

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace uqtse {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

struct EvalWithInputDerivs {
    Vector output;
    Matrix jacobian; // rows: outputs, cols: coordinate inputs
};

class Mlp {
public:
    Mlp() = default;
    // Zero-initialized parameters.
    explicit Mlp(std::vector<int> widths);

    static Mlp xavier(std::vector<int> widths, std::mt19937_64& rng);

    const std::vector<int>& widths() const { return widths_; }
    int input_size() const { return widths_.front(); }
    int output_size() const { return widths_.back(); }
    int layer_count() const { return static_cast<int>(widths_.size()) - 1; }
    std::size_t parameter_count() const { return static_cast<std::size_t>(params_.size()); }

    const Vector& parameters() const { return params_; }
    Vector& parameters() { return params_; }
    void set_parameters(const Vector& p);

    // Layer l in [0, layer_count): weight is out x in, column-major in the flat vector.
    Eigen::Map<const Matrix> weight(int l) const;
    Eigen::Map<Matrix> weight(int l);
    Eigen::Map<const Vector> bias(int l) const;
    Eigen::Map<Vector> bias(int l);

    Vector forward(const Vector& input) const;
    Matrix forward(const Matrix& inputs) const; // one sample per column

    /// Output and Jacobian with respect to the first `n_coords` inputs.
    EvalWithInputDerivs forward_with_input_derivs(const Vector& input, int n_coords = 2) const;

    struct Tape {
        std::vector<Matrix> act;                    // act[l]: layer l output, act[0] = inputs
        std::vector<std::vector<Matrix>> tangent;   // tangent[d][l]: d act[l] / d input_d
        std::vector<std::vector<Matrix>> pre_tangent; // pre_tangent[d][l]: d pre-activation / d input_d

        const Matrix& output() const { return act.back(); }
        const Matrix& output_tangent(int d) const { return tangent[d].back(); }
        int tangent_count() const { return static_cast<int>(tangent.size()); }
    };

    Tape record(const Matrix& inputs, int n_tangents = 0) const;

    /// Accumulates into `param_grad` (if non-null) the gradient of a scalar
    /// whose adjoints with respect to the outputs and output tangents are
    /// given. An empty tangent adjoint span means "zero". If `input_adj` is
    /// non-null it receives the adjoint of the inputs (tangent paths excluded).
    void backward(const Tape& tape, const Matrix& output_adj, std::span<const Matrix> tangent_adj,
                  Vector* param_grad, Matrix* input_adj = nullptr) const;

private:
    std::vector<int> widths_;
    std::vector<std::size_t> offsets_; // start of each layer's weights
    Vector params_;
};

nlohmann::json to_json(const Mlp& mlp);
Mlp mlp_from_json(const nlohmann::json& j);

struct AdamConfig {
    double learning_rate = 0.0005;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Bias-corrected Adam.
class Adam {
public:
    Adam() = default;
    Adam(std::size_t n, AdamConfig config = {});

    // params <- params - lr * m_hat / (sqrt(v_hat) + eps). Throws
    // NumericalError naming the first non-finite gradient entry.
    void step(Vector& params, const Vector& grad);

    const AdamConfig& config() const { return config_; }
    long step_count() const { return t_; }
    const Vector& first_moment() const { return m_; }
    const Vector& second_moment() const { return v_; }

    nlohmann::json to_json() const;
    static Adam from_json(const nlohmann::json& j);

private:
    AdamConfig config_;
    Vector m_;
    Vector v_;
    long t_ = 0;
};

}  // namespace uqtse
