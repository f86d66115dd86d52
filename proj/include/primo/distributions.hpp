#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "primo/ops.hpp"
#include "primo/rng.hpp"

namespace primo {

/// Lower bound added to softplus outputs so every standard deviation is positive.
inline constexpr double kSigmaFloor = 1e-4;

/// Factorised Gaussian over the latent space, one row per example.
struct DiagGaussian {
    Tensor mu;    // [B x d]
    Tensor sigma; // [B x d], strictly positive

    DiagGaussian() = default;
    DiagGaussian(Tensor mean, Tensor stddev) : mu(std::move(mean)), sigma(std::move(stddev))
    {
        if (mu.shape() != sigma.shape())
            throw DimensionError("DiagGaussian: mean " + shape_str(mu.shape()) + " vs std " +
                                 shape_str(sigma.shape()));
        for (double s : sigma.data())
            if (!(s > 0.0))
                throw DomainError("DiagGaussian: standard deviation must be positive");
    }

    /// Splits a [B x 2d] head output into mean and softplus(raw) + floor.
    static DiagGaussian from_head(const Tensor& head, double floor = kSigmaFloor)
    {
        const std::size_t d2 = head.cols();
        if (d2 % 2 != 0)
            throw DimensionError("DiagGaussian::from_head: odd width " + std::to_string(d2));
        return {slice_cols(head, 0, d2 / 2), add_scalar(softplus(slice_cols(head, d2 / 2, d2)), floor)};
    }

    static DiagGaussian standard(std::size_t rows, std::size_t dim)
    {
        return {Tensor::zeros({rows, dim}), Tensor::full({rows, dim}, 1.0)};
    }

    [[nodiscard]] std::size_t rows() const { return mu.rows(); }
    [[nodiscard]] std::size_t dim() const { return mu.cols(); }

    [[nodiscard]] DiagGaussian detach() const { return {mu.detach(), sigma.detach()}; }
};

/// Per-row KL(q || p) as a [B x 1] column.
inline Tensor kl_diag_gaussian(const DiagGaussian& q, const DiagGaussian& p)
{
    if (q.mu.shape() != p.mu.shape())
        throw DimensionError("kl_diag_gaussian: q " + shape_str(q.mu.shape()) + " vs p " + shape_str(p.mu.shape()));
    const Tensor log_ratio = sub(log(p.sigma), log(q.sigma));
    const Tensor spread = add(square(q.sigma), square(sub(q.mu, p.mu)));
    const Tensor quad = div(spread, scale(square(p.sigma), 2.0));
    return sum_axis(add_scalar(add(log_ratio, quad), -0.5), 1);
}

/// z = mu + sigma * eps with externally drawn standard-normal eps.
inline Tensor reparam_sample(const DiagGaussian& g, const Tensor& eps)
{
    if (eps.shape() != g.mu.shape())
        throw DimensionError("reparam_sample: eps " + shape_str(eps.shape()) + " vs mean " + shape_str(g.mu.shape()));
    return add(g.mu, mul(g.sigma, eps));
}

/// Standard-normal noise tensor.
inline Tensor standard_normal(Shape shape, Rng& rng)
{
    std::vector<double> v(shape_size(shape));
    for (double& x : v)
        x = rng.normal();
    return Tensor(std::move(shape), std::move(v));
}

/// Witness that KL between location-family members ignores a common shift.
/// True when every per-row KL agrees within 1e-12 (relative to max(1, |KL|)).
inline bool kl_translation_invariance_check(const DiagGaussian& q, const DiagGaussian& p, std::span<const double> shift)
{
    if (shift.size() != q.dim())
        throw DimensionError("kl_translation_invariance_check: shift length " + std::to_string(shift.size()) +
                             " vs latent dim " + std::to_string(q.dim()));
    NoGradGuard no_grad;
    const Tensor offset({1, shift.size()}, std::vector<double>(shift.begin(), shift.end()));
    const Tensor base = kl_diag_gaussian(q, p);
    const Tensor moved = kl_diag_gaussian({add(q.mu, offset), q.sigma}, {add(p.mu, offset), p.sigma});
    for (std::size_t i = 0; i < base.size(); ++i) {
        const double a = base.data()[i], b = moved.data()[i];
        if (std::abs(a - b) > 1e-12 * std::max(1.0, std::abs(a)))
            return false;
    }
    return true;
}

/// A categorical distribution: non-negative entries summing to one.
class ProbVector {
public:
    static constexpr double kTolerance = 1e-6;

    ProbVector() = default;

    explicit ProbVector(std::vector<double> probs) : probs_(std::move(probs))
    {
        double total = 0.0;
        for (double p : probs_) {
            if (!(p >= 0.0))
                throw ContractError("ProbVector: negative or NaN entry");
            total += p;
        }
        if (std::abs(total - 1.0) > kTolerance)
            throw ContractError("ProbVector: entries sum to " + std::to_string(total));
    }

    /// Uniform over `classes`.
    static ProbVector uniform(std::size_t classes) { return ProbVector(std::vector<double>(classes, 1.0 / classes)); }

    /// Row-wise softmax of raw scores.
    static ProbVector from_logits(std::span<const double> logits)
    {
        const double top = *std::max_element(logits.begin(), logits.end());
        std::vector<double> p(logits.size());
        double total = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i)
            total += p[i] = std::exp(logits[i] - top);
        for (double& v : p)
            v /= total;
        return ProbVector(std::move(p));
    }

    [[nodiscard]] std::size_t size() const noexcept { return probs_.size(); }
    [[nodiscard]] double operator[](std::size_t i) const { return probs_[i]; }
    [[nodiscard]] const std::vector<double>& values() const noexcept { return probs_; }
    [[nodiscard]] std::size_t argmax() const
    {
        return static_cast<std::size_t>(std::max_element(probs_.begin(), probs_.end()) - probs_.begin());
    }

private:
    std::vector<double> probs_;
};

/// Total variation distance, half the L1 distance.
inline double tvd(const ProbVector& p, const ProbVector& q)
{
    if (p.size() != q.size())
        throw DimensionError("tvd: lengths " + std::to_string(p.size()) + " and " + std::to_string(q.size()));
    double acc = 0.0;
    for (std::size_t c = 0; c < p.size(); ++c)
        acc += std::abs(p[c] - q[c]);
    return 0.5 * acc;
}

} // namespace primo
