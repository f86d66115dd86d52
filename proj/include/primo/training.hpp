#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "primo/model.hpp"
#include "primo/optim.hpp"

namespace primo {

struct TrainConfig {
    double lr = 1e-3;
    double weight_decay = 1e-4;
    std::size_t batch_size = 256;
    std::size_t epochs = 50;
    std::uint64_t seed = 0;
    std::size_t mc_train_samples = 1; // z draws per example per step
    double reg_weight = 1.0;
};

/// Per-example averages over a batch (or epoch). `total` is the maximised objective:
/// (recon_complete - kl_complete) + (recon_missing - kl_missing) - reg_weight * (reg_anchor + reg_tie).
struct LossBreakdown {
    double recon_complete = 0.0;
    double kl_complete = 0.0;
    double recon_missing = 0.0;
    double kl_missing = 0.0;
    double reg_anchor = 0.0;
    double reg_tie = 0.0;
    double total = 0.0;
    std::size_t n_complete = 0;
    std::size_t n_missing = 0;

    [[nodiscard]] double decomposition_residual(double reg_weight = 1.0) const
    {
        return total - ((recon_complete - kl_complete) + (recon_missing - kl_missing) -
                        reg_weight * (reg_anchor + reg_tie));
    }
};

struct Objective {
    Tensor value; // scalar, to be maximised
    LossBreakdown parts;
};

/// Standard-normal noise for `draws` reparameterised samples of a [rows x latent] Gaussian.
inline std::vector<Tensor> draw_noise(std::size_t draws, std::size_t rows, std::size_t latent, Rng& rng)
{
    std::vector<Tensor> out;
    out.reserve(draws);
    for (std::size_t s = 0; s < draws; ++s)
        out.push_back(standard_normal({rows, latent}, rng));
    return out;
}

namespace detail {

// Monte-Carlo estimate of E_q[log p_theta(y | x_o, z)] per row, [B x 1].
inline Tensor expected_log_likelihood(const PrimoModel& model, const Tensor& features_o, const DiagGaussian& q,
                                      const Tensor& y_onehot, std::span<const Tensor> eps_draws)
{
    if (eps_draws.empty())
        throw ContractError("at least one noise draw is required");
    Tensor acc;
    for (const Tensor& eps : eps_draws) {
        const Tensor z = reparam_sample(q, eps);
        const Tensor ll = sum_axis(mul(log_softmax(model.classify(features_o, z)), y_onehot), 1);
        acc = acc.defined() ? add(acc, ll) : ll;
    }
    return eps_draws.size() == 1 ? acc : scale(acc, 1.0 / static_cast<double>(eps_draws.size()));
}

} // namespace detail

/// Mean over the batch of E_q[log p(y|x_o,z)] - KL(q(z|x_o,x_m,y) || p(z|x_o,x_m)).
inline Tensor elbo_complete(PrimoModel& model, const Batch& batch, std::span<const Tensor> eps_draws, Mode mode)
{
    if (batch.complete_count != batch.size())
        throw ContractError("elbo_complete: every example needs x_m (" + std::to_string(batch.missing_count()) +
                            " missing)");
    const Tensor features = model.encode_o(batch.x_o);
    const Tensor fused = model.fuse(features, batch.x_m, batch.mask);
    const DiagGaussian p = model.prior(fused);
    const DiagGaussian q = model.posterior(fused, batch.y_onehot, mode);
    const Tensor ll = detail::expected_log_likelihood(model, features, q, batch.y_onehot, eps_draws);
    return mean(sub(ll, kl_diag_gaussian(q, p)));
}

/// Mean over the batch of E_q[log p(y|x_o,z)] - KL(q(z|x_o,y) || p(z|x_o)); x_m is never read.
inline Tensor elbo_missing(PrimoModel& model, const Batch& batch, std::span<const Tensor> eps_draws, Mode mode)
{
    const Tensor features = model.encode_o(batch.x_o);
    const Tensor fused = model.fuse_missing(features);
    const DiagGaussian p = model.prior(fused);
    const DiagGaussian q = model.posterior(fused, batch.y_onehot, mode);
    const Tensor ll = detail::expected_log_likelihood(model, features, q, batch.y_onehot, eps_draws);
    return mean(sub(ll, kl_diag_gaussian(q, p)));
}

/// Sum over rows of KL(p(z|x_o) || N(0,I)) plus, over complete rows,
/// KL(p(z|x_o,x_m) || p(z|x_o)). Both arguments of the tie term carry gradients.
inline Tensor regularizer(const PrimoModel& model, const Batch& batch)
{
    const Tensor features = model.encode_o(batch.x_o);
    const DiagGaussian unimodal = model.prior(model.fuse_missing(features));
    const Tensor anchor = kl_diag_gaussian(unimodal, DiagGaussian::standard(batch.size(), model.config().latent));
    if (batch.complete_count == 0)
        return sum(anchor);
    const DiagGaussian multimodal = model.prior(model.fuse(features, batch.x_m, batch.mask));
    const Tensor tie = mul(kl_diag_gaussian(multimodal, unimodal), batch.mask);
    return add(sum(anchor), sum(tie));
}

/// Full training objective on a mixed batch, averaged per example.
///
/// Complete and missing rows share one posterior call so batch-norm sees
/// the whole batch; masks route each row's terms to its ELBO.
inline Objective primo_objective(PrimoModel& model, const Batch& batch, std::span<const Tensor> eps_draws, Mode mode,
                                 double reg_weight = 1.0)
{
    const std::size_t n = batch.size();
    const double inv_n = 1.0 / static_cast<double>(n);
    const std::size_t latent = model.config().latent;

    const Tensor features = model.encode_o(batch.x_o);
    const Tensor fused = model.fuse(features, batch.x_m, batch.mask);
    const Tensor fused_missing = model.fuse_missing(features);

    const DiagGaussian prior_observed = model.prior(fused);        // p(z|x_o,x_m) or p(z|x_o) per row
    const DiagGaussian prior_unimodal = model.prior(fused_missing); // p(z|x_o) for every row
    const DiagGaussian q = model.posterior(fused, batch.y_onehot, mode);

    const Tensor ll = detail::expected_log_likelihood(model, features, q, batch.y_onehot, eps_draws);
    const Tensor kl = kl_diag_gaussian(q, prior_observed);
    const Tensor anchor = kl_diag_gaussian(prior_unimodal, DiagGaussian::standard(n, latent));
    const Tensor tie = mul(kl_diag_gaussian(prior_observed, prior_unimodal), batch.mask);

    const Tensor present = batch.mask;
    const Tensor absent = add_scalar(neg(batch.mask), 1.0);

    const Tensor recon_c = scale(sum(mul(ll, present)), inv_n);
    const Tensor kl_c = scale(sum(mul(kl, present)), inv_n);
    const Tensor recon_m = scale(sum(mul(ll, absent)), inv_n);
    const Tensor kl_m = scale(sum(mul(kl, absent)), inv_n);
    const Tensor reg_a = scale(sum(anchor), inv_n);
    const Tensor reg_t = scale(sum(tie), inv_n);

    const Tensor elbo_terms = add(sub(recon_c, kl_c), sub(recon_m, kl_m));
    const Tensor total = sub(elbo_terms, scale(add(reg_a, reg_t), reg_weight));

    Objective out;
    out.value = total;
    out.parts.recon_complete = recon_c.item();
    out.parts.kl_complete = kl_c.item();
    out.parts.recon_missing = recon_m.item();
    out.parts.kl_missing = kl_m.item();
    out.parts.reg_anchor = reg_a.item();
    out.parts.reg_tie = reg_t.item();
    out.parts.total = total.item();
    out.parts.n_complete = batch.complete_count;
    out.parts.n_missing = batch.missing_count();
    return out;
}

/// Mean KL(q(z|.,y) || p(z|.)) per example with the posterior in eval mode;
/// each example uses the prior of its own availability scenario.
inline double mean_posterior_prior_kl(PrimoModel& model, const std::vector<Example>& examples,
                                      std::size_t chunk = 4096)
{
    if (examples.empty())
        throw ContractError("mean_posterior_prior_kl: no examples");
    NoGradGuard no_grad;
    double total = 0.0;
    for (std::size_t start = 0; start < examples.size(); start += chunk) {
        const std::size_t end = std::min(examples.size(), start + chunk);
        const Batch b = make_batch(std::span<const Example>(examples).subspan(start, end - start), model.config());
        const Tensor fused = model.fuse(b);
        const Tensor kl = kl_diag_gaussian(model.posterior(fused, b.y_onehot, Mode::eval), model.prior(fused));
        total += sum(kl).item();
    }
    return total / static_cast<double>(examples.size());
}

struct EpochRecord {
    std::size_t epoch = 0;
    LossBreakdown loss; // example-weighted mean over the epoch's batches
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Consecutive mini-batches of a shuffled index order; a trailing batch with
/// fewer than two rows joins its predecessor so batch-norm always has statistics.
inline std::vector<std::vector<std::size_t>> make_minibatches(const std::vector<std::size_t>& order,
                                                              std::size_t batch_size)
{
    if (batch_size == 0)
        throw ContractError("batch size must be positive");
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::size_t end = std::min(order.size(), start + batch_size);
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    if (out.size() > 1 && out.back().size() < 2) {
        auto tail = std::move(out.back());
        out.pop_back();
        out.back().insert(out.back().end(), tail.begin(), tail.end());
    }
    return out;
}

inline std::vector<Example> gather(const std::vector<Example>& all, const std::vector<std::size_t>& idx)
{
    std::vector<Example> out;
    out.reserve(idx.size());
    for (std::size_t i : idx)
        out.push_back(all[i]);
    return out;
}

/// Maximises the joint objective with AdamW. Deterministic given cfg.seed.
inline std::vector<EpochRecord> train_primo(PrimoModel& model, const std::vector<Example>& examples,
                                            const TrainConfig& cfg, const EpochCallback& on_epoch = {})
{
    if (examples.size() < 2)
        throw ContractError("train_primo: need at least two training examples");
    for (const auto& e : examples)
        if (!e.y)
            throw ContractError("train_primo: record id " + std::to_string(e.id) + " is unlabelled");

    Rng rng = Rng(cfg.seed).fork(stream::train);
    const AdamWConfig opt{cfg.lr, cfg.weight_decay};
    auto params = model.parameters();
    std::vector<std::size_t> order(examples.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        order[i] = i;

    std::vector<EpochRecord> log;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        rng.shuffle(order);
        const auto batches = make_minibatches(order, cfg.batch_size);
        EpochRecord record;
        record.epoch = epoch;
        for (std::size_t b = 0; b < batches.size(); ++b) {
            const auto rows = gather(examples, batches[b]);
            const Batch batch = make_batch(rows, model.config());
            const auto eps = draw_noise(std::max<std::size_t>(1, cfg.mc_train_samples), batch.size(),
                                        model.config().latent, rng);
            Objective obj = primo_objective(model, batch, eps, Mode::train, cfg.reg_weight);
            if (!std::isfinite(obj.parts.total))
                throw NonFiniteError("non-finite objective at epoch " + std::to_string(epoch) + ", batch " +
                                     std::to_string(b));
            backward(neg(obj.value));
            adamw_step(params, opt);

            const double w = static_cast<double>(batch.size());
            auto& acc = record.loss;
            acc.recon_complete += w * obj.parts.recon_complete;
            acc.kl_complete += w * obj.parts.kl_complete;
            acc.recon_missing += w * obj.parts.recon_missing;
            acc.kl_missing += w * obj.parts.kl_missing;
            acc.reg_anchor += w * obj.parts.reg_anchor;
            acc.reg_tie += w * obj.parts.reg_tie;
            acc.total += w * obj.parts.total;
            acc.n_complete += obj.parts.n_complete;
            acc.n_missing += obj.parts.n_missing;
        }
        const double inv = 1.0 / static_cast<double>(examples.size());
        auto& acc = record.loss;
        acc.recon_complete *= inv;
        acc.kl_complete *= inv;
        acc.recon_missing *= inv;
        acc.kl_missing *= inv;
        acc.reg_anchor *= inv;
        acc.reg_tie *= inv;
        acc.total *= inv;
        log.push_back(record);
        if (on_epoch)
            on_epoch(record);
    }
    return log;
}

} // namespace primo
