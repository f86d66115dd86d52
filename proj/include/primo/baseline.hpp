#pragma once

#include <string>
#include <vector>

#include "primo/model.hpp"
#include "primo/training.hpp"

namespace primo {

enum class BaselineKind { unimodal, multimodal };

inline const char* to_string(BaselineKind k) noexcept { return k == BaselineKind::unimodal ? "unimodal" : "multimodal"; }

/// Plain supervised classifier with PRIMO's encoder widths and no latent.
/// The unimodal kind reads x_o only; the multimodal kind reads both modalities.
class BaselineModel {
public:
    BaselineModel() = default;

    BaselineModel(BaselineKind kind, const ModelConfig& cfg, std::uint64_t seed) : kind_(kind), cfg_(cfg)
    {
        Rng rng = Rng(seed).fork(stream::init);
        encoder_o_ = Mlp("encoder_o", cfg.dim_o, cfg.hidden, cfg.feature, rng);
        std::size_t head_in = cfg.feature;
        if (kind == BaselineKind::multimodal) {
            encoder_m_ = Mlp("encoder_m", cfg.dim_m, cfg.hidden, cfg.feature, rng);
            head_in += cfg.feature;
        }
        head_ = Mlp("head", head_in, cfg.hidden, cfg.classes, rng);
    }

    [[nodiscard]] BaselineKind kind() const noexcept { return kind_; }
    [[nodiscard]] const ModelConfig& config() const noexcept { return cfg_; }

    /// Class scores; the multimodal kind requires every row to carry x_m.
    [[nodiscard]] Tensor logits(const Batch& b) const
    {
        const Tensor features = encoder_o_(b.x_o);
        if (kind_ == BaselineKind::unimodal)
            return head_(features);
        if (b.complete_count != b.size())
            throw ContractError("multimodal baseline needs x_m for every example");
        return head_(concat_cols({features, encoder_m_(b.x_m)}));
    }

    [[nodiscard]] ProbVector predict(const Example& e) const
    {
        NoGradGuard no_grad;
        const Batch b = make_batch(std::span<const Example>(&e, 1), cfg_);
        return ProbVector::from_logits(logits(b).data());
    }

    std::vector<Parameter*> parameters()
    {
        std::vector<Parameter*> out;
        collect_all(*this, out);
        return out;
    }

    [[nodiscard]] std::vector<const Parameter*> parameters() const
    {
        std::vector<const Parameter*> out;
        collect_all(*this, out);
        return out;
    }

    [[nodiscard]] Checkpoint to_checkpoint() const
    {
        Checkpoint ckpt;
        ckpt.header["kind"] = std::string("baseline-") + to_string(kind_);
        ckpt.header["model"] = cfg_;
        for (const Parameter* p : parameters())
            ckpt.arrays.push_back({p->name(), p->shape(), std::vector<double>(p->values().begin(), p->values().end())});
        return ckpt;
    }

    static BaselineModel from_checkpoint(const Checkpoint& ckpt)
    {
        const auto kind_text = ckpt.header.value("kind", std::string{});
        BaselineKind kind;
        if (kind_text == "baseline-unimodal")
            kind = BaselineKind::unimodal;
        else if (kind_text == "baseline-multimodal")
            kind = BaselineKind::multimodal;
        else
            throw SchemaError("checkpoint does not hold a baseline model");
        BaselineModel model(kind, ckpt.header.at("model").get<ModelConfig>(), 0);
        for (Parameter* p : model.parameters())
            restore_parameter(*p, ckpt);
        return model;
    }

private:
    template <class Self, class Out>
    static void collect_all(Self& self, Out& out)
    {
        self.encoder_o_.collect(out);
        if (self.kind_ == BaselineKind::multimodal)
            self.encoder_m_.collect(out);
        self.head_.collect(out);
    }

    BaselineKind kind_ = BaselineKind::unimodal;
    ModelConfig cfg_;
    Mlp encoder_o_;
    Mlp encoder_m_;
    Mlp head_;
};

/// Mean cross-entropy of a batch.
inline Tensor cross_entropy(const Tensor& logits, const Tensor& y_onehot)
{
    return neg(mean(sum_axis(mul(log_softmax(logits), y_onehot), 1)));
}

/// Trains a baseline with cross-entropy and AdamW. The multimodal kind uses
/// only complete examples.
inline BaselineModel train_baseline(BaselineKind kind, const std::vector<Example>& examples, const ModelConfig& model_cfg,
                                    const TrainConfig& cfg)
{
    std::vector<Example> usable;
    for (const auto& e : examples) {
        if (!e.y)
            throw ContractError("train_baseline: record id " + std::to_string(e.id) + " is unlabelled");
        if (kind == BaselineKind::unimodal || e.complete())
            usable.push_back(e);
    }
    if (usable.empty())
        throw ContractError(std::string("train_baseline: no usable examples for the ") + to_string(kind) +
                            " baseline");

    BaselineModel model(kind, model_cfg, cfg.seed);
    Rng rng = Rng(cfg.seed).fork(stream::train);
    const AdamWConfig opt{cfg.lr, cfg.weight_decay};
    auto params = model.parameters();
    std::vector<std::size_t> order(usable.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        order[i] = i;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        rng.shuffle(order);
        for (const auto& idx : make_minibatches(order, cfg.batch_size)) {
            const auto rows = gather(usable, idx);
            const Batch batch = make_batch(rows, model_cfg, kind == BaselineKind::unimodal);
            const Tensor loss = cross_entropy(model.logits(batch), batch.y_onehot);
            if (!std::isfinite(loss.item()))
                throw NonFiniteError("non-finite baseline loss at epoch " + std::to_string(epoch));
            backward(loss);
            adamw_step(params, opt);
        }
    }
    return model;
}

} // namespace primo
