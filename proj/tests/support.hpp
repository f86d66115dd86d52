#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "primo/ops.hpp"
#include "primo/rng.hpp"

namespace primo::support {

/// Autodiff and central-difference gradients for one input of a scalar function.
struct GradComparison {
    std::vector<double> analytic;
    std::vector<double> numeric;

    /// ||analytic - numeric|| / max(||analytic||, ||numeric||), 0 when both vanish.
    [[nodiscard]] double relative_error() const
    {
        double diff = 0.0, a = 0.0, n = 0.0;
        for (std::size_t i = 0; i < analytic.size(); ++i) {
            diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
            a += analytic[i] * analytic[i];
            n += numeric[i] * numeric[i];
        }
        const double scale = std::max(std::sqrt(a), std::sqrt(n));
        return scale < 1e-14 ? std::sqrt(diff) : std::sqrt(diff) / scale;
    }
};

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

/// Compares gradients of f with respect to every input. Inputs are perturbed in place and restored.
inline std::vector<GradComparison> check_gradients(const ScalarFn& f, std::vector<Tensor> inputs, double h = 1e-6)
{
    std::vector<Tensor> leaves;
    for (const Tensor& t : inputs)
        leaves.push_back(Tensor(t.shape(), t.values(), true));
    backward(f(leaves));

    std::vector<GradComparison> out(leaves.size());
    NoGradGuard no_grad;
    for (std::size_t k = 0; k < leaves.size(); ++k) {
        out[k].analytic = leaves[k].grad();
        auto data = leaves[k].mutable_data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double saved = data[i];
            data[i] = saved + h;
            const double up = f(leaves).item();
            data[i] = saved - h;
            const double down = f(leaves).item();
            data[i] = saved;
            out[k].numeric.push_back((up - down) / (2.0 * h));
        }
    }
    return out;
}

inline double worst_error(const std::vector<GradComparison>& cmp)
{
    double worst = 0.0;
    for (const auto& c : cmp)
        worst = std::max(worst, c.relative_error());
    return worst;
}

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0)
{
    std::vector<double> v(shape_size(shape));
    for (double& x : v)
        x = lo + (hi - lo) * rng.uniform();
    return Tensor(std::move(shape), std::move(v));
}

/// Weighted sum with fixed random weights, so every output element reaches the loss differently.
inline Tensor probe(const Tensor& t, std::uint64_t seed = 99)
{
    Rng rng(seed);
    return sum(mul(t, random_tensor(t.shape(), rng)));
}

} // namespace primo::support
