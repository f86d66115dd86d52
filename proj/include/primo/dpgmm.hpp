#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include <boost/math/special_functions/digamma.hpp>

#include "primo/distributions.hpp"
#include "primo/errors.hpp"
#include "primo/inference.hpp"
#include "primo/rng.hpp"

namespace primo {

struct DpgmmConfig {
    std::size_t truncation = 10;
    double alpha = 1.0;
    std::size_t max_iterations = 200;
    double tolerance = 1e-6; // relative ELBO change
    double prune_threshold = 0.01;
    std::uint64_t seed = 0;
    bool merge_moves = true;

    void check() const
    {
        if (truncation < 1)
            throw ContractError("DpgmmConfig: truncation must be at least 1");
        if (!(alpha > 0.0))
            throw ContractError("DpgmmConfig: alpha must be positive");
        if (max_iterations < 1)
            throw ContractError("DpgmmConfig: max_iterations must be at least 1");
        if (!(tolerance > 0.0))
            throw ContractError("DpgmmConfig: tolerance must be positive");
        if (!(prune_threshold >= 0.0 && prune_threshold < 1.0))
            throw ContractError("DpgmmConfig: prune_threshold must lie in [0, 1)");
    }
};

/// Result of a variational fit over N rows of dimension D.
struct DpgmmFit {
    std::size_t components = 0;              // truncation level actually used
    std::vector<double> soft_weights;        // N_t / N per component
    std::vector<std::size_t> assignment;     // argmax responsibility per row
    std::vector<std::vector<double>> means;  // posterior means, per component
    std::vector<double> elbo_trace;          // coordinate-ascent run from the k-means++ start
    double elbo = 0.0;                       // final bound, after any merges
    std::size_t iterations = 0;
    std::size_t merges = 0;
};

namespace detail {

// Truncated stick-breaking DP mixture of diagonal Gaussians with a
// Normal-Gamma prior per dimension, fitted by coordinate ascent.
class DpgmmSolver {
public:
    DpgmmSolver(const std::vector<double>& x, std::size_t n, std::size_t d, std::size_t t, const DpgmmConfig& cfg)
        : x_(x), n_(n), d_(d), t_(t), cfg_(cfg), m0_(d, 0.0), b0_(d, 0.0)
    {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j)
                m0_[j] += x[i * d + j];
        for (double& v : m0_)
            v /= static_cast<double>(n);
        for (std::size_t j = 0; j < d; ++j) {
            double var = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                var += (x[i * d + j] - m0_[j]) * (x[i * d + j] - m0_[j]);
            var /= static_cast<double>(n);
            b0_[j] = a0_ * std::max(var, 1e-6);
        }
    }

    [[nodiscard]] std::size_t rows() const { return n_; }
    [[nodiscard]] std::size_t components() const { return t_; }

    // Responsibilities [N x T].
    std::vector<double> r;

    void update_parameters()
    {
        nk_.assign(t_, 0.0);
        std::vector<double> xbar(t_ * d_, 0.0), s(t_ * d_, 0.0);
        for (std::size_t i = 0; i < n_; ++i)
            for (std::size_t k = 0; k < t_; ++k) {
                const double w = r[i * t_ + k];
                nk_[k] += w;
                for (std::size_t j = 0; j < d_; ++j)
                    xbar[k * d_ + j] += w * x_[i * d_ + j];
            }
        for (std::size_t k = 0; k < t_; ++k)
            for (std::size_t j = 0; j < d_; ++j)
                xbar[k * d_ + j] = nk_[k] > 1e-12 ? xbar[k * d_ + j] / nk_[k] : m0_[j];
        for (std::size_t i = 0; i < n_; ++i)
            for (std::size_t k = 0; k < t_; ++k) {
                const double w = r[i * t_ + k];
                for (std::size_t j = 0; j < d_; ++j) {
                    const double dev = x_[i * d_ + j] - xbar[k * d_ + j];
                    s[k * d_ + j] += w * dev * dev;
                }
            }

        kappa_.resize(t_);
        a_.resize(t_);
        m_.assign(t_ * d_, 0.0);
        b_.assign(t_ * d_, 0.0);
        g1_.resize(t_);
        g2_.resize(t_);
        double tail = std::accumulate(nk_.begin(), nk_.end(), 0.0);
        for (std::size_t k = 0; k < t_; ++k) {
            kappa_[k] = kappa0_ + nk_[k];
            a_[k] = a0_ + 0.5 * nk_[k];
            for (std::size_t j = 0; j < d_; ++j) {
                const double xb = xbar[k * d_ + j];
                m_[k * d_ + j] = (kappa0_ * m0_[j] + nk_[k] * xb) / kappa_[k];
                b_[k * d_ + j] = b0_[j] + 0.5 * s[k * d_ + j] +
                                 kappa0_ * nk_[k] * (xb - m0_[j]) * (xb - m0_[j]) / (2.0 * kappa_[k]);
            }
            tail -= nk_[k];
            g1_[k] = 1.0 + nk_[k];
            g2_[k] = cfg_.alpha + std::max(tail, 0.0);
        }
    }

    // Recomputes responsibilities from the current parameters and returns
    // the evidence lower bound at the new responsibilities.
    double update_responsibilities()
    {
        using boost::math::digamma;
        std::vector<double> log_pi(t_);
        double stick = 0.0;
        for (std::size_t k = 0; k < t_; ++k) {
            if (k + 1 == t_) {
                log_pi[k] = stick;
            } else {
                const double dsum = digamma(g1_[k] + g2_[k]);
                log_pi[k] = stick + digamma(g1_[k]) - dsum;
                stick += digamma(g2_[k]) - dsum;
            }
        }
        std::vector<double> const_term(t_);
        for (std::size_t k = 0; k < t_; ++k) {
            double c = log_pi[k];
            for (std::size_t j = 0; j < d_; ++j)
                c += 0.5 * (digamma(a_[k]) - std::log(b_[k * d_ + j])) - 0.5 * std::log(2.0 * std::numbers::pi) -
                     0.5 / kappa_[k];
            const_term[k] = c;
        }

        double bound = 0.0;
        r.assign(n_ * t_, 0.0);
        std::vector<double> lr(t_);
        for (std::size_t i = 0; i < n_; ++i) {
            double top = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < t_; ++k) {
                double quad = 0.0;
                for (std::size_t j = 0; j < d_; ++j) {
                    const double dev = x_[i * d_ + j] - m_[k * d_ + j];
                    quad += a_[k] / b_[k * d_ + j] * dev * dev;
                }
                lr[k] = const_term[k] - 0.5 * quad;
                top = std::max(top, lr[k]);
            }
            double total = 0.0;
            for (std::size_t k = 0; k < t_; ++k)
                total += std::exp(lr[k] - top);
            const double lse = top + std::log(total);
            bound += lse;
            for (std::size_t k = 0; k < t_; ++k)
                r[i * t_ + k] = std::exp(lr[k] - lse);
        }
        return bound - kl_sticks() - kl_components();
    }

    // Runs coordinate ascent from the current responsibilities.
    double run(std::vector<double>* trace, std::size_t* iterations)
    {
        double prev = std::numeric_limits<double>::quiet_NaN();
        double bound = 0.0;
        for (std::size_t it = 0; it < cfg_.max_iterations; ++it) {
            update_parameters();
            bound = update_responsibilities();
            if (trace)
                trace->push_back(bound);
            if (iterations)
                *iterations = it + 1;
            if (!std::isfinite(bound))
                throw NonFiniteError("dpgmm: non-finite bound at iteration " + std::to_string(it));
            if (std::isfinite(prev) && std::abs(bound - prev) <= cfg_.tolerance * std::abs(prev))
                break;
            prev = bound;
        }
        update_parameters();
        return bound;
    }

    // Reorders components by decreasing mass so the stick-breaking prior sees
    // large clusters first.
    void sort_components()
    {
        std::vector<double> mass(t_, 0.0);
        for (std::size_t i = 0; i < n_; ++i)
            for (std::size_t k = 0; k < t_; ++k)
                mass[k] += r[i * t_ + k];
        std::vector<std::size_t> order(t_);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return mass[a] > mass[b]; });
        std::vector<double> next(r.size());
        for (std::size_t i = 0; i < n_; ++i)
            for (std::size_t k = 0; k < t_; ++k)
                next[i * t_ + k] = r[i * t_ + order[k]];
        r = std::move(next);
    }

    [[nodiscard]] const std::vector<double>& mass() const { return nk_; }
    [[nodiscard]] std::vector<double> mean(std::size_t k) const
    {
        return std::vector<double>(m_.begin() + static_cast<std::ptrdiff_t>(k * d_),
                                   m_.begin() + static_cast<std::ptrdiff_t>((k + 1) * d_));
    }

private:
    static double log_beta(double a, double b) { return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b); }

    [[nodiscard]] double kl_sticks() const
    {
        using boost::math::digamma;
        double kl = 0.0;
        for (std::size_t k = 0; k + 1 < t_; ++k) {
            const double dsum = digamma(g1_[k] + g2_[k]);
            kl += log_beta(1.0, cfg_.alpha) - log_beta(g1_[k], g2_[k]) + (g1_[k] - 1.0) * (digamma(g1_[k]) - dsum) +
                  (g2_[k] - cfg_.alpha) * (digamma(g2_[k]) - dsum);
        }
        return kl;
    }

    [[nodiscard]] double kl_components() const
    {
        using boost::math::digamma;
        double kl = 0.0;
        for (std::size_t k = 0; k < t_; ++k) {
            const double a = a_[k];
            const double ratio = kappa0_ / kappa_[k];
            for (std::size_t j = 0; j < d_; ++j) {
                const double b = b_[k * d_ + j];
                const double gamma_kl = (a - a0_) * digamma(a) - std::lgamma(a) + std::lgamma(a0_) +
                                        a0_ * (std::log(b) - std::log(b0_[j])) + a * (b0_[j] - b) / b;
                const double dm = m_[k * d_ + j] - m0_[j];
                const double normal_kl = 0.5 * (ratio - 1.0 - std::log(ratio) + kappa0_ * (a / b) * dm * dm);
                kl += gamma_kl + normal_kl;
            }
        }
        return kl;
    }

    const std::vector<double>& x_;
    std::size_t n_, d_, t_;
    DpgmmConfig cfg_;
    double kappa0_ = 0.01;
    double a0_ = 1.0;
    std::vector<double> m0_, b0_;
    std::vector<double> nk_, kappa_, a_, m_, b_, g1_, g2_;
};

// k-means++ seeding followed by hard assignment to the nearest seed.
inline std::vector<double> kmeanspp_responsibilities(const std::vector<double>& x, std::size_t n, std::size_t d,
                                                     std::size_t t, Rng& rng)
{
    auto dist2 = [&](std::size_t i, std::size_t c) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double dev = x[i * d + j] - x[c * d + j];
            s += dev * dev;
        }
        return s;
    };
    std::vector<std::size_t> seeds{static_cast<std::size_t>(rng.below(n))};
    std::vector<double> best(n);
    for (std::size_t i = 0; i < n; ++i)
        best[i] = dist2(i, seeds[0]);
    while (seeds.size() < t) {
        const double total = std::accumulate(best.begin(), best.end(), 0.0);
        if (!(total > 0.0))
            break;
        const std::size_t next = rng.categorical(best);
        seeds.push_back(next);
        for (std::size_t i = 0; i < n; ++i)
            best[i] = std::min(best[i], dist2(i, next));
    }
    std::vector<double> r(n * t, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t arg = 0;
        double low = std::numeric_limits<double>::infinity();
        for (std::size_t s = 0; s < seeds.size(); ++s) {
            const double v = dist2(i, seeds[s]);
            if (v < low) {
                low = v;
                arg = s;
            }
        }
        r[i * t + arg] = 1.0;
    }
    return r;
}

} // namespace detail

/// Variational DP Gaussian mixture over row-major data [n x d].
inline DpgmmFit fit_dpgmm(const std::vector<double>& x, std::size_t n, std::size_t d, const DpgmmConfig& cfg)
{
    cfg.check();
    if (n == 0 || d == 0 || x.size() != n * d)
        throw DimensionError("fit_dpgmm: " + std::to_string(x.size()) + " values for " + std::to_string(n) + " x " +
                             std::to_string(d));
    for (double v : x)
        if (!std::isfinite(v))
            throw NonFiniteError("fit_dpgmm: non-finite input");

    DpgmmFit fit;
    bool identical = true;
    for (std::size_t i = 1; i < n && identical; ++i)
        for (std::size_t j = 0; j < d; ++j)
            identical = identical && x[i * d + j] == x[j];
    if (identical) {
        fit.components = 1;
        fit.soft_weights = {1.0};
        fit.assignment.assign(n, 0);
        fit.means = {std::vector<double>(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(d))};
        return fit;
    }

    const std::size_t t = std::min(cfg.truncation, n);
    detail::DpgmmSolver solver(x, n, d, t, cfg);
    Rng rng = Rng(cfg.seed).fork(stream::cluster);
    solver.r = detail::kmeanspp_responsibilities(x, n, d, t, rng);
    solver.sort_components();
    double bound = solver.run(&fit.elbo_trace, &fit.iterations);

    if (cfg.merge_moves) {
        bool improved = true;
        while (improved) {
            improved = false;
            const std::vector<double> mass = solver.mass();
            std::vector<std::size_t> active;
            for (std::size_t k = 0; k < t; ++k)
                if (mass[k] > 0.5)
                    active.push_back(k);
            const std::vector<double> current = solver.r;
            for (std::size_t ia = 0; ia < active.size() && !improved; ++ia)
                for (std::size_t ib = ia + 1; ib < active.size() && !improved; ++ib) {
                    const std::size_t ka = active[ia], kb = active[ib];
                    solver.r = current;
                    for (std::size_t i = 0; i < n; ++i) {
                        solver.r[i * t + ka] += solver.r[i * t + kb];
                        solver.r[i * t + kb] = 0.0;
                    }
                    solver.sort_components();
                    const double candidate = solver.run(nullptr, nullptr);
                    if (candidate > bound + 1e-9 * std::abs(bound)) {
                        bound = candidate;
                        improved = true;
                        ++fit.merges;
                    }
                }
            if (!improved) {
                solver.r = current;
                solver.update_parameters();
            }
        }
    }

    fit.components = t;
    fit.elbo = bound;
    fit.soft_weights.resize(t);
    for (std::size_t k = 0; k < t; ++k) {
        fit.soft_weights[k] = solver.mass()[k] / static_cast<double>(n);
        fit.means.push_back(solver.mean(k));
    }
    fit.assignment.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = std::span<const double>(solver.r).subspan(i * t, t);
        fit.assignment[i] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    return fit;
}

struct ClusterSummary {
    std::size_t cluster_id = 0;
    double weight = 0.0; // fraction of retained draws assigned
    ProbVector mean_class_distribution;
    std::size_t dominant_label = 0;
};

/// Groups hard cluster assignments of logit rows into summaries, dropping
/// clusters lighter than `prune_threshold` and renormalising the rest.
inline std::vector<ClusterSummary> summarize_clusters(const PredictionSet& pred,
                                                      const std::vector<std::size_t>& assignment,
                                                      double prune_threshold)
{
    std::size_t groups = 0;
    for (std::size_t a : assignment)
        groups = std::max(groups, a + 1);
    std::vector<std::size_t> counts(groups, 0);
    std::vector<std::vector<double>> prob_sums(groups, std::vector<double>(pred.classes, 0.0));
    for (std::size_t k = 0; k < pred.samples; ++k) {
        const std::size_t g = assignment[k];
        ++counts[g];
        for (std::size_t c = 0; c < pred.classes; ++c)
            prob_sums[g][c] += pred.probs[k * pred.classes + c];
    }
    std::size_t kept = 0;
    for (std::size_t g = 0; g < groups; ++g)
        if (counts[g] > 0 && static_cast<double>(counts[g]) / static_cast<double>(pred.samples) >= prune_threshold)
            kept += counts[g];

    std::vector<ClusterSummary> out;
    for (std::size_t g = 0; g < groups; ++g) {
        if (counts[g] == 0 || static_cast<double>(counts[g]) / static_cast<double>(pred.samples) < prune_threshold)
            continue;
        ClusterSummary s;
        s.cluster_id = g;
        s.weight = static_cast<double>(counts[g]) / static_cast<double>(kept);
        for (double& v : prob_sums[g])
            v /= static_cast<double>(counts[g]);
        s.mean_class_distribution = ProbVector(prob_sums[g]);
        s.dominant_label = s.mean_class_distribution.argmax();
        out.push_back(std::move(s));
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const ClusterSummary& a, const ClusterSummary& b) { return a.weight > b.weight; });
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i].cluster_id = i;
    return out;
}

/// Clusters the K logit rows of a prediction and summarises each cluster by
/// its mean softmax and argmax label, heaviest first.
inline std::vector<ClusterSummary> cluster_logits(const PredictionSet& pred, const DpgmmConfig& cfg)
{
    if (pred.samples < 10)
        throw ContractError("cluster_logits: K must be at least 10, got " + std::to_string(pred.samples));
    const DpgmmFit fit = fit_dpgmm(pred.logits, pred.samples, pred.classes, cfg);
    return summarize_clusters(pred, fit.assignment, cfg.prune_threshold);
}

} // namespace primo
