#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "primo/model.hpp"

namespace primo {

/// K latent draws for one example under one availability scenario.
struct PredictionSet {
    std::uint64_t example_id = 0;
    Scenario scenario = Scenario::missing;
    std::size_t samples = 0; // K
    std::size_t classes = 0; // C
    std::vector<double> logits; // K x C, row-major
    std::vector<double> probs;  // K x C, row softmax of logits
    ProbVector mean_prob;

    [[nodiscard]] std::span<const double> logit_row(std::size_t k) const
    {
        return std::span<const double>(logits).subspan(k * classes, classes);
    }
    [[nodiscard]] ProbVector prob_row(std::size_t k) const
    {
        return ProbVector(std::vector<double>(probs.begin() + static_cast<std::ptrdiff_t>(k * classes),
                                              probs.begin() + static_cast<std::ptrdiff_t>((k + 1) * classes)));
    }
};

/// Seed for one (example, scenario) pair, independent of evaluation order.
inline std::uint64_t prediction_seed(std::uint64_t base, std::uint64_t example_id, Scenario scenario) noexcept
{
    std::uint64_t sm = base ^ (example_id * 0x9e3779b97f4a7c15ULL);
    const std::uint64_t a = splitmix64(sm);
    sm = a ^ (scenario == Scenario::complete ? 0x636f6d70ULL : 0x6d697373ULL);
    return splitmix64(sm);
}

/// Packs the raw class scores [K x C] into a PredictionSet, averaging probabilities.
inline PredictionSet prediction_from_logits(std::uint64_t example_id, Scenario scenario, std::size_t samples,
                                            std::size_t classes, std::vector<double> logits)
{
    if (samples == 0 || classes == 0 || logits.size() != samples * classes)
        throw DimensionError("prediction_from_logits: " + std::to_string(logits.size()) + " scores for K=" +
                             std::to_string(samples) + ", C=" + std::to_string(classes));
    PredictionSet out;
    out.example_id = example_id;
    out.scenario = scenario;
    out.samples = samples;
    out.classes = classes;
    out.logits = std::move(logits);
    out.probs.resize(out.logits.size());
    std::vector<double> mean(classes, 0.0);
    for (std::size_t k = 0; k < samples; ++k) {
        const ProbVector row = ProbVector::from_logits(out.logit_row(k));
        for (std::size_t c = 0; c < classes; ++c) {
            out.probs[k * classes + c] = row[c];
            mean[c] += row[c];
        }
    }
    for (double& v : mean)
        v /= static_cast<double>(samples);
    out.mean_prob = ProbVector(std::move(mean));
    return out;
}

/// Draws z ~ p(z | x_o) or p(z | x_o, x_m), classifies each draw and averages
/// the class probabilities.
inline PredictionSet mc_predict(const PrimoModel& model, const Example& example, Scenario scenario, std::size_t samples,
                                std::uint64_t seed)
{
    if (samples < 1)
        throw ContractError("mc_predict: K must be at least 1");
    if (scenario == Scenario::complete && !example.x_m)
        throw ContractError("mc_predict: complete scenario for record id " + std::to_string(example.id) +
                            " which has no x_m");
    const ModelConfig& cfg = model.config();
    if (example.x_o.size() != cfg.dim_o)
        throw DimensionError("mc_predict: x_o length mismatch in record id " + std::to_string(example.id));

    NoGradGuard no_grad;
    const Tensor features = model.encode_o(Tensor({1, cfg.dim_o}, example.x_o));
    Tensor fused;
    if (scenario == Scenario::complete) {
        if (example.x_m->size() != cfg.dim_m)
            throw DimensionError("mc_predict: x_m length mismatch in record id " + std::to_string(example.id));
        fused = concat_cols({features, model.encode_m(Tensor({1, cfg.dim_m}, *example.x_m))});
    } else {
        fused = model.fuse_missing(features);
    }
    const DiagGaussian prior = model.prior(fused);

    Rng rng = Rng(seed).fork(stream::predict);
    const Tensor eps = standard_normal({samples, cfg.latent}, rng);
    const Tensor z = add(prior.mu, mul(prior.sigma, eps));
    const Tensor scores = model.classify(features, z);
    return prediction_from_logits(example.id, scenario, samples, cfg.classes, scores.values());
}

/// Averaged class probabilities for many examples at once, drawing K latent
/// samples per example from `rng`. Intended for monitoring; unlike mc_predict
/// the draws depend on the batch composition.
inline std::vector<ProbVector> mc_mean_probs(const PrimoModel& model, const std::vector<Example>& examples,
                                             Scenario scenario, std::size_t samples, Rng& rng)
{
    if (samples < 1)
        throw ContractError("mc_mean_probs: K must be at least 1");
    if (examples.empty())
        return {};
    const ModelConfig& cfg = model.config();
    NoGradGuard no_grad;
    const Batch batch = make_batch(examples, cfg, scenario == Scenario::missing);
    if (scenario == Scenario::complete && batch.missing_count() != 0)
        throw ContractError("mc_mean_probs: complete scenario needs x_m for every example");
    const Tensor features = model.encode_o(batch.x_o);
    const DiagGaussian prior = model.prior(model.fuse(features, batch.x_m, batch.mask));
    const std::size_t n = examples.size();
    std::vector<double> acc(n * cfg.classes, 0.0);
    for (std::size_t k = 0; k < samples; ++k) {
        const Tensor eps = standard_normal({n, cfg.latent}, rng);
        const Tensor probs = softmax(model.classify(features, add(prior.mu, mul(prior.sigma, eps))));
        for (std::size_t i = 0; i < acc.size(); ++i)
            acc[i] += probs.data()[i];
    }
    std::vector<ProbVector> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> row(acc.begin() + static_cast<std::ptrdiff_t>(i * cfg.classes),
                                acc.begin() + static_cast<std::ptrdiff_t>((i + 1) * cfg.classes));
        for (double& v : row)
            v /= static_cast<double>(samples);
        out.emplace_back(std::move(row));
    }
    return out;
}

/// Mean TVD between each draw's prediction and the averaged prediction.
inline double impact_v(const PredictionSet& pred)
{
    if (pred.samples < 2)
        throw ContractError("impact_v: K must be at least 2, got " + std::to_string(pred.samples));
    double acc = 0.0;
    for (std::size_t k = 0; k < pred.samples; ++k)
        acc += tvd(pred.prob_row(k), pred.mean_prob);
    return acc / static_cast<double>(pred.samples);
}

struct ImpactReport {
    std::uint64_t example_id = 0;
    double v_missing = 0.0;
    std::optional<double> v_complete;

    [[nodiscard]] std::optional<double> gap() const
    {
        if (!v_complete)
            return std::nullopt;
        return v_missing - *v_complete;
    }
};

inline ImpactReport impact_report(const PredictionSet& missing, const PredictionSet* complete = nullptr)
{
    if (missing.scenario != Scenario::missing)
        throw ContractError("impact_report: first prediction must use the missing scenario");
    ImpactReport r;
    r.example_id = missing.example_id;
    r.v_missing = impact_v(missing);
    if (complete) {
        if (complete->scenario != Scenario::complete || complete->example_id != missing.example_id)
            throw ContractError("impact_report: second prediction must be the same example's complete scenario");
        r.v_complete = impact_v(*complete);
    }
    return r;
}

/// Empirical CDF as sorted (value, rank / N) pairs.
inline std::vector<std::pair<double, double>> ecdf(std::vector<double> values)
{
    std::sort(values.begin(), values.end());
    std::vector<std::pair<double, double>> out;
    out.reserve(values.size());
    const double n = static_cast<double>(values.size());
    for (std::size_t i = 0; i < values.size(); ++i)
        out.emplace_back(values[i], static_cast<double>(i + 1) / n);
    return out;
}

} // namespace primo
