#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "primo/data.hpp"
#include "primo/distributions.hpp"
#include "primo/model.hpp"

namespace primo {

/// A class-probability predictor evaluated per example and availability scenario.
struct Predictor {
    std::size_t classes = 0;
    std::function<ProbVector(const Example&, Scenario)> predict;
};

namespace detail {

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

} // namespace detail

/// Exact p(y | x_o) for the XOR mixture: component responsibilities given x_o
/// times the probability that x_m lands on the opposite sign.
inline ProbVector xor_oracle_unimodal(double x_o, const XorConfig& cfg)
{
    cfg.check();
    if (x_o == 0.0)
        return ProbVector({1.0, 0.0});
    std::vector<double> log_w(cfg.centers.size());
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < cfg.centers.size(); ++k) {
        const double u = (x_o - cfg.centers[k].x) / cfg.sigma;
        log_w[k] = cfg.weights[k] > 0.0 ? std::log(cfg.weights[k]) - 0.5 * u * u
                                        : -std::numeric_limits<double>::infinity();
        top = std::max(top, log_w[k]);
    }
    double total = 0.0, p1 = 0.0;
    for (std::size_t k = 0; k < cfg.centers.size(); ++k) {
        const double r = std::exp(log_w[k] - top);
        const double below = detail::normal_cdf(-cfg.centers[k].y / cfg.sigma); // P(x_m < 0 | k)
        p1 += r * (x_o > 0.0 ? below : 1.0 - below);
        total += r;
    }
    p1 /= total;
    return ProbVector({1.0 - p1, p1});
}

/// Exact p(y | x_o, x_m): labels are a deterministic function of the signs.
inline ProbVector xor_oracle_multimodal(double x_o, double x_m)
{
    return xor_label(x_o, x_m) == 1 ? ProbVector({0.0, 1.0}) : ProbVector({1.0, 0.0});
}

/// Analytic oracle for one example; x_m is used only when supplied.
inline ProbVector analytic_bayes_oracle_xor(double x_o, std::optional<double> x_m, const XorConfig& cfg)
{
    return x_m ? xor_oracle_multimodal(x_o, *x_m) : xor_oracle_unimodal(x_o, cfg);
}

/// The analytic oracle as a Predictor: the missing scenario ignores x_m.
inline Predictor xor_oracle_predictor(const XorConfig& cfg)
{
    return {2, [cfg](const Example& e, Scenario s) {
                if (e.x_o.size() != 1)
                    throw DimensionError("xor oracle: x_o must be one-dimensional");
                if (s == Scenario::complete) {
                    if (!e.x_m || e.x_m->size() != 1)
                        throw ContractError("xor oracle: complete scenario needs a scalar x_m in record id " +
                                            std::to_string(e.id));
                    return xor_oracle_multimodal(e.x_o[0], (*e.x_m)[0]);
                }
                return xor_oracle_unimodal(e.x_o[0], cfg);
            }};
}

/// Population accuracy of the Bayes-optimal XOR classifier, E[max_y p*(y | inputs)],
/// by Monte-Carlo integration over the mixture.
inline double xor_bayes_accuracy(const XorConfig& cfg, Scenario scenario, std::size_t samples, std::uint64_t seed)
{
    cfg.check();
    if (samples == 0)
        throw ContractError("xor_bayes_accuracy: need at least one sample");
    Rng rng = Rng(seed).fork(stream::data);
    double acc = 0.0;
    for (std::size_t i = 0; i < samples; ++i) {
        const Point2& c = cfg.centers[rng.categorical(cfg.weights)];
        const double x_o = rng.normal(c.x, cfg.sigma);
        const double x_m = rng.normal(c.y, cfg.sigma);
        const ProbVector p = scenario == Scenario::complete ? xor_oracle_multimodal(x_o, x_m)
                                                            : xor_oracle_unimodal(x_o, cfg);
        acc += std::max(p[0], p[1]);
    }
    return acc / static_cast<double>(samples);
}

/// Fraction of labelled examples whose argmax prediction matches the label.
inline double accuracy(const Predictor& p, const std::vector<Example>& examples, Scenario scenario)
{
    std::size_t hits = 0, total = 0;
    for (const auto& e : examples) {
        if (!e.y || (scenario == Scenario::complete && !e.x_m))
            continue;
        hits += p.predict(e, scenario).argmax() == *e.y;
        ++total;
    }
    if (total == 0)
        throw ContractError("accuracy: no labelled examples for the " + std::string(to_string(scenario)) +
                            " scenario");
    return static_cast<double>(hits) / static_cast<double>(total);
}

} // namespace primo
