#pragma once

#include <string>
#include <vector>

#include "primo/oracle.hpp"

namespace primo {

/// Test-mean TVDs between a model's two scenario predictions and the two oracles.
struct BiasReport {
    double b_missing = 0.0;      // TVD(unimodal oracle, model missing)
    double b_complete = 0.0;     // TVD(multimodal oracle, model complete)
    double oracle_gap = 0.0;     // TVD(unimodal oracle, multimodal oracle)
    double cross_missing = 0.0;  // TVD(multimodal oracle, model missing)
    double cross_complete = 0.0; // TVD(unimodal oracle, model complete)
    std::size_t examples = 0;

    /// Both scenario predictions sit nearer their own oracle than the other one.
    [[nodiscard]] bool correct_sides() const { return b_missing < cross_missing && b_complete < cross_complete; }
};

/// Bias from per-example predictions aligned by index.
inline BiasReport bias_from_predictions(const std::vector<ProbVector>& model_missing,
                                        const std::vector<ProbVector>& model_complete,
                                        const std::vector<ProbVector>& oracle_uni,
                                        const std::vector<ProbVector>& oracle_multi)
{
    const std::size_t n = model_missing.size();
    if (n == 0)
        throw ContractError("bias analysis: no examples");
    if (model_complete.size() != n || oracle_uni.size() != n || oracle_multi.size() != n)
        throw DimensionError("bias analysis: prediction lists differ in length");
    BiasReport r;
    r.examples = n;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = oracle_uni[i].size();
        if (model_missing[i].size() != c || model_complete[i].size() != c || oracle_multi[i].size() != c)
            throw DimensionError("bias analysis: class-count mismatch at example " + std::to_string(i));
        r.b_missing += tvd(oracle_uni[i], model_missing[i]);
        r.b_complete += tvd(oracle_multi[i], model_complete[i]);
        r.oracle_gap += tvd(oracle_uni[i], oracle_multi[i]);
        r.cross_missing += tvd(oracle_multi[i], model_missing[i]);
        r.cross_complete += tvd(oracle_uni[i], model_complete[i]);
    }
    const double inv = 1.0 / static_cast<double>(n);
    r.b_missing *= inv;
    r.b_complete *= inv;
    r.oracle_gap *= inv;
    r.cross_missing *= inv;
    r.cross_complete *= inv;
    return r;
}

/// Bias of `model` against a unimodal and a multimodal oracle over the
/// complete examples of `test`.
inline BiasReport bias_analysis(const Predictor& model, const Predictor& oracle_uni, const Predictor& oracle_multi,
                                const std::vector<Example>& test)
{
    if (model.classes != oracle_uni.classes || model.classes != oracle_multi.classes)
        throw DimensionError("bias analysis: model has " + std::to_string(model.classes) + " classes, oracles " +
                             std::to_string(oracle_uni.classes) + " and " + std::to_string(oracle_multi.classes));
    std::vector<ProbVector> mm, mc, ou, om;
    for (const auto& e : test) {
        if (!e.x_m)
            continue;
        mm.push_back(model.predict(e, Scenario::missing));
        mc.push_back(model.predict(e, Scenario::complete));
        ou.push_back(oracle_uni.predict(e, Scenario::missing));
        om.push_back(oracle_multi.predict(e, Scenario::complete));
    }
    return bias_from_predictions(mm, mc, ou, om);
}

} // namespace primo
