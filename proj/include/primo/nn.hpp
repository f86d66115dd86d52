#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "primo/ops.hpp"
#include "primo/rng.hpp"

namespace primo {

enum class Mode { train, eval };

/// Affine map y = x W + b with W stored [in x out].
class Linear {
public:
    Linear() = default;

    /// Uniform(-1/sqrt(in), 1/sqrt(in)) initialisation for weight and bias.
    Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng)
    {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        std::vector<double> w(in * out), b(out);
        for (double& v : w)
            v = (2.0 * rng.uniform() - 1.0) * bound;
        for (double& v : b)
            v = (2.0 * rng.uniform() - 1.0) * bound;
        weight_ = Parameter(name + ".weight", {in, out}, std::move(w));
        bias_ = Parameter(name + ".bias", {1, out}, std::move(b));
    }

    [[nodiscard]] Tensor operator()(const Tensor& x) const { return add(matmul(x, weight_.tensor()), bias_.tensor()); }

    [[nodiscard]] std::size_t in_features() const { return weight_.shape()[0]; }
    [[nodiscard]] std::size_t out_features() const { return weight_.shape()[1]; }

    Parameter& weight() { return weight_; }
    Parameter& bias() { return bias_; }
    [[nodiscard]] const Parameter& weight() const { return weight_; }
    [[nodiscard]] const Parameter& bias() const { return bias_; }

    void collect(std::vector<Parameter*>& out)
    {
        out.push_back(&weight_);
        out.push_back(&bias_);
    }

    void collect(std::vector<const Parameter*>& out) const
    {
        out.push_back(&weight_);
        out.push_back(&bias_);
    }

private:
    Parameter weight_;
    Parameter bias_;
};

/// Two-layer perceptron: Linear -> ReLU -> Linear.
class Mlp {
public:
    Mlp() = default;

    Mlp(const std::string& name, std::size_t in, std::size_t hidden, std::size_t out, Rng& rng)
        : hidden_(name + ".0", in, hidden, rng), output_(name + ".1", hidden, out, rng)
    {
    }

    [[nodiscard]] Tensor operator()(const Tensor& x) const { return output_(relu(hidden_(x))); }

    [[nodiscard]] std::size_t in_features() const { return hidden_.in_features(); }
    [[nodiscard]] std::size_t out_features() const { return output_.out_features(); }

    Linear& hidden_layer() { return hidden_; }
    Linear& output_layer() { return output_; }

    void collect(std::vector<Parameter*>& out)
    {
        hidden_.collect(out);
        output_.collect(out);
    }

    void collect(std::vector<const Parameter*>& out) const
    {
        hidden_.collect(out);
        output_.collect(out);
    }

private:
    Linear hidden_;
    Linear output_;
};

/// Batch-norm with a fixed scale and a learnable offset.
struct BatchNormState {
    double gamma = 1.0; // not trained
    Parameter beta;
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double momentum = 0.1;
    double epsilon = 1e-5;

    BatchNormState() = default;

    BatchNormState(const std::string& name, std::size_t width, double gamma_value = 1.0, double momentum_value = 0.1,
                   double epsilon_value = 1e-5)
        : gamma(gamma_value), beta(name + ".beta", {1, width}, std::vector<double>(width, 0.0)),
          running_mean(width, 0.0), running_var(width, 1.0), momentum(momentum_value), epsilon(epsilon_value)
    {
        if (!(gamma > 0.0))
            throw ContractError("batch-norm gamma must be positive");
        if (!(momentum > 0.0 && momentum < 1.0))
            throw ContractError("batch-norm momentum must lie in (0, 1)");
        if (!(epsilon > 0.0))
            throw ContractError("batch-norm epsilon must be positive");
    }

    [[nodiscard]] std::size_t width() const { return running_mean.size(); }
};

/// Normalises each column of x. Train mode uses batch statistics and folds
/// them into the running estimates; eval mode uses the running estimates.
inline Tensor batch_norm_mean(const Tensor& x, BatchNormState& state, Mode mode)
{
    detail::require_rank2(x, "batch_norm_mean");
    const std::size_t batch = x.rows();
    const std::size_t width = x.cols();
    if (width != state.width())
        throw DimensionError("batch_norm_mean: input " + shape_str(x.shape()) + " vs state width " +
                             std::to_string(state.width()));

    if (mode == Mode::eval) {
        std::vector<double> shift(width), inv_std(width);
        for (std::size_t j = 0; j < width; ++j) {
            shift[j] = state.running_mean[j];
            inv_std[j] = state.gamma / std::sqrt(state.running_var[j] + state.epsilon);
        }
        const Tensor centred = sub(x, Tensor({1, width}, std::move(shift)));
        return add(mul(centred, Tensor({1, width}, std::move(inv_std))), state.beta.tensor());
    }

    if (batch < 2)
        throw BatchTooSmallError("batch_norm_mean: training mode needs at least 2 rows, got " +
                                 std::to_string(batch));
    const Tensor batch_mean = mean_axis(x, 0);
    const Tensor centred = sub(x, batch_mean);
    const Tensor batch_var = mean_axis(square(centred), 0);
    const Tensor normalised = div(centred, sqrt(add_scalar(batch_var, state.epsilon)));
    const Tensor out = add(scale(normalised, state.gamma), state.beta.tensor());

    const double unbias = static_cast<double>(batch) / static_cast<double>(batch - 1);
    for (std::size_t j = 0; j < width; ++j) {
        state.running_mean[j] = (1.0 - state.momentum) * state.running_mean[j] + state.momentum * batch_mean.data()[j];
        state.running_var[j] =
            (1.0 - state.momentum) * state.running_var[j] + state.momentum * batch_var.data()[j] * unbias;
    }
    return out;
}

} // namespace primo
