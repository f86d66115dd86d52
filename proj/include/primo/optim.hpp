#pragma once

#include <cmath>
#include <span>
#include <string>

#include "primo/tensor.hpp"

namespace primo {

struct AdamWConfig {
    double lr = 1e-3;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One AdamW step over every parameter, then clears their gradients.
///
/// Weight decay is decoupled: p <- p - lr*wd*p happens before the
/// bias-corrected Adam update and never enters the moment estimates.
/// All gradients are checked first so a non-finite value leaves every
/// parameter untouched.
inline void adamw_step(std::span<Parameter* const> params, const AdamWConfig& cfg)
{
    for (const Parameter* p : params) {
        for (double g : p->tensor().grad_view())
            if (!std::isfinite(g))
                throw NonFiniteError("non-finite gradient in parameter '" + p->name() + "'");
    }

    for (Parameter* p : params) {
        p->increment_steps();
        const auto t = static_cast<double>(p->steps());
        const double correction1 = 1.0 - std::pow(cfg.beta1, t);
        const double correction2 = 1.0 - std::pow(cfg.beta2, t);

        auto values = p->values();
        const auto grad = p->tensor().grad_view();
        auto& m = p->first_moment();
        auto& v = p->second_moment();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double g = grad.empty() ? 0.0 : grad[i];
            values[i] -= cfg.lr * cfg.weight_decay * values[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            const double m_hat = m[i] / correction1;
            const double v_hat = v[i] / correction2;
            values[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
        }
        p->tensor().zero_grad();
    }
}

inline void zero_grads(std::span<Parameter* const> params)
{
    for (Parameter* p : params)
        p->tensor().zero_grad();
}

} // namespace primo
