#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "primo/checkpoint.hpp"
#include "primo/data.hpp"
#include "primo/distributions.hpp"
#include "primo/nn.hpp"

namespace primo {

/// Which conditional prior serves an example.
enum class Scenario { complete, missing };

inline const char* to_string(Scenario s) noexcept { return s == Scenario::complete ? "complete" : "missing"; }

struct ModelConfig {
    std::size_t dim_o = 1;
    std::size_t dim_m = 1;
    std::size_t classes = 2;
    std::size_t hidden = 128;
    std::size_t feature = 32; // encoder output width per modality
    std::size_t latent = 2;
    double bn_gamma = 1.0;
    double bn_momentum = 0.1;
    double bn_epsilon = 1e-5;
    bool posterior_batch_norm = true;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c)
{
    j = {{"dim_o", c.dim_o},       {"dim_m", c.dim_m},
         {"classes", c.classes},   {"hidden", c.hidden},
         {"feature", c.feature},   {"latent", c.latent},
         {"bn_gamma", c.bn_gamma}, {"bn_momentum", c.bn_momentum},
         {"bn_epsilon", c.bn_epsilon}, {"posterior_batch_norm", c.posterior_batch_norm}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c)
{
    c.dim_o = j.at("dim_o").get<std::size_t>();
    c.dim_m = j.at("dim_m").get<std::size_t>();
    c.classes = j.at("classes").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.feature = j.at("feature").get<std::size_t>();
    c.latent = j.at("latent").get<std::size_t>();
    c.bn_gamma = j.at("bn_gamma").get<double>();
    c.bn_momentum = j.at("bn_momentum").get<double>();
    c.bn_epsilon = j.at("bn_epsilon").get<double>();
    c.posterior_batch_norm = j.at("posterior_batch_norm").get<bool>();
}

/// Mini-batch in tensor form. Absent x_m rows hold zeros and mask 0.
struct Batch {
    Tensor x_o;      // [B x dim_o]
    Tensor x_m;      // [B x dim_m]
    Tensor mask;     // [B x 1]
    Tensor y_onehot; // [B x C]; all-zero rows for unlabelled examples
    std::vector<std::size_t> labels;
    std::size_t complete_count = 0;

    [[nodiscard]] std::size_t size() const { return x_o.rows(); }
    [[nodiscard]] std::size_t missing_count() const { return size() - complete_count; }
};

/// Builds a batch. With `drop_x_m`, every row is presented as missing.
inline Batch make_batch(std::span<const Example> examples, const ModelConfig& cfg, bool drop_x_m = false)
{
    const std::size_t n = examples.size();
    std::vector<double> xo(n * cfg.dim_o), xm(n * cfg.dim_m, 0.0), mask(n, 0.0), onehot(n * cfg.classes, 0.0);
    Batch b;
    b.labels.resize(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const Example& e = examples[i];
        if (e.x_o.size() != cfg.dim_o)
            throw DimensionError("make_batch: x_o length mismatch in record id " + std::to_string(e.id));
        std::copy(e.x_o.begin(), e.x_o.end(), xo.begin() + static_cast<std::ptrdiff_t>(i * cfg.dim_o));
        if (e.x_m && !drop_x_m) {
            if (e.x_m->size() != cfg.dim_m)
                throw DimensionError("make_batch: x_m length mismatch in record id " + std::to_string(e.id));
            std::copy(e.x_m->begin(), e.x_m->end(), xm.begin() + static_cast<std::ptrdiff_t>(i * cfg.dim_m));
            mask[i] = 1.0;
            ++b.complete_count;
        }
        if (e.y) {
            if (*e.y >= cfg.classes)
                throw DimensionError("make_batch: label out of range in record id " + std::to_string(e.id));
            onehot[i * cfg.classes + *e.y] = 1.0;
            b.labels[i] = *e.y;
        }
    }
    b.x_o = Tensor({n, cfg.dim_o}, std::move(xo));
    b.x_m = Tensor({n, cfg.dim_m}, std::move(xm));
    b.mask = Tensor({n, 1}, std::move(mask));
    b.y_onehot = Tensor({n, cfg.classes}, std::move(onehot));
    return b;
}

/// Latent-variable classifier for a possibly-missing second modality.
///
/// One prior network and one posterior network serve both availability
/// scenarios; an absent x_m contributes a zero feature block to the fused
/// representation. The classifier sees encoded x_o and z only.
class PrimoModel {
public:
    PrimoModel() = default;

    PrimoModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg)
    {
        if (cfg.dim_o == 0 || cfg.dim_m == 0 || cfg.classes < 2 || cfg.hidden == 0 || cfg.feature == 0 ||
            cfg.latent == 0)
            throw ContractError("ModelConfig: all widths must be positive and classes >= 2");
        Rng rng = Rng(seed).fork(stream::init);
        const std::size_t fused = 2 * cfg.feature;
        encoder_o_ = Mlp("encoder_o", cfg.dim_o, cfg.hidden, cfg.feature, rng);
        encoder_m_ = Mlp("encoder_m", cfg.dim_m, cfg.hidden, cfg.feature, rng);
        prior_net_ = Mlp("prior", fused, cfg.hidden, 2 * cfg.latent, rng);
        posterior_net_ = Mlp("posterior", fused + cfg.classes, cfg.hidden, 2 * cfg.latent, rng);

        // First classifier layer acts on concat(features, z); its weight is
        // stored as two blocks so a single x_o row can broadcast against K draws.
        classifier_in_ = Linear("classifier.0", cfg.feature + cfg.latent, cfg.hidden, rng);
        {
            auto& w = classifier_in_.weight();
            const auto& full = w.values();
            std::vector<double> top(full.begin(), full.begin() + static_cast<std::ptrdiff_t>(cfg.feature * cfg.hidden));
            std::vector<double> bottom(full.begin() + static_cast<std::ptrdiff_t>(cfg.feature * cfg.hidden), full.end());
            classifier_latent_ = Parameter("classifier.0.latent_weight", {cfg.latent, cfg.hidden}, std::move(bottom));
            w = Parameter("classifier.0.weight", {cfg.feature, cfg.hidden}, std::move(top));
        }
        classifier_out_ = Linear("classifier.1", cfg.hidden, cfg.classes, rng);
        posterior_bn_ = BatchNormState("posterior_bn", cfg.latent, cfg.bn_gamma, cfg.bn_momentum, cfg.bn_epsilon);
    }

    [[nodiscard]] const ModelConfig& config() const noexcept { return cfg_; }

    [[nodiscard]] Tensor encode_o(const Tensor& x_o) const { return encoder_o_(x_o); }
    [[nodiscard]] Tensor encode_m(const Tensor& x_m) const { return encoder_m_(x_m); }

    /// concat(encode_o(x_o), mask * encode_m(x_m)); rows with mask 0 get an exact zero block.
    [[nodiscard]] Tensor fuse(const Tensor& features_o, const Tensor& x_m, const Tensor& mask) const
    {
        const std::size_t rows = features_o.rows();
        bool any_present = false;
        for (double v : mask.data())
            any_present = any_present || v != 0.0;
        if (!any_present)
            return concat_cols({features_o, Tensor::zeros({rows, cfg_.feature})});
        return concat_cols({features_o, mul(encode_m(x_m), mask)});
    }

    /// Fused features with x_m treated as absent for every row.
    [[nodiscard]] Tensor fuse_missing(const Tensor& features_o) const
    {
        return concat_cols({features_o, Tensor::zeros({features_o.rows(), cfg_.feature})});
    }

    [[nodiscard]] Tensor fuse(const Batch& b) const { return fuse(encode_o(b.x_o), b.x_m, b.mask); }

    /// p_omega(z | fused features).
    [[nodiscard]] DiagGaussian prior(const Tensor& fused) const { return DiagGaussian::from_head(prior_net_(fused)); }

    /// q_phi(z | fused features, y) with batch-normalised mean.
    DiagGaussian posterior(const Tensor& fused, const Tensor& y_onehot, Mode mode)
    {
        if (y_onehot.cols() != cfg_.classes)
            throw DimensionError("posterior: label width " + std::to_string(y_onehot.cols()) + " vs classes " +
                                 std::to_string(cfg_.classes));
        DiagGaussian g = DiagGaussian::from_head(posterior_net_(concat_cols({fused, y_onehot})));
        if (cfg_.posterior_batch_norm)
            g.mu = batch_norm_mean(g.mu, posterior_bn_, mode);
        return g;
    }

    /// Raw class scores from encoded x_o and z. A single feature row
    /// broadcasts against many z rows.
    [[nodiscard]] Tensor classify(const Tensor& features_o, const Tensor& z) const
    {
        if (z.rank() != 2 || z.cols() != cfg_.latent)
            throw DimensionError("classify: z has shape " + shape_str(z.shape()) + ", latent dim is " +
                                 std::to_string(cfg_.latent));
        const Tensor hidden =
            relu(add(classifier_in_(features_o), matmul(z, classifier_latent_.tensor())));
        return classifier_out_(hidden);
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

    /// Parameters of encoder_m only.
    std::vector<Parameter*> encoder_m_parameters()
    {
        std::vector<Parameter*> out;
        encoder_m_.collect(out);
        return out;
    }

    std::vector<Parameter*> prior_parameters()
    {
        std::vector<Parameter*> out;
        prior_net_.collect(out);
        return out;
    }

    BatchNormState& posterior_bn() noexcept { return posterior_bn_; }
    [[nodiscard]] const BatchNormState& posterior_bn() const noexcept { return posterior_bn_; }
    Mlp& prior_net() noexcept { return prior_net_; }

    [[nodiscard]] Checkpoint to_checkpoint() const
    {
        Checkpoint ckpt;
        ckpt.header["kind"] = "primo";
        ckpt.header["model"] = cfg_;
        for (const Parameter* p : parameters())
            ckpt.arrays.push_back({p->name(), p->shape(), std::vector<double>(p->values().begin(), p->values().end())});
        ckpt.arrays.push_back({"posterior_bn.running_mean", {cfg_.latent}, posterior_bn_.running_mean});
        ckpt.arrays.push_back({"posterior_bn.running_var", {cfg_.latent}, posterior_bn_.running_var});
        return ckpt;
    }

    static PrimoModel from_checkpoint(const Checkpoint& ckpt)
    {
        if (ckpt.header.value("kind", std::string{}) != "primo")
            throw SchemaError("checkpoint does not hold a PRIMO model");
        PrimoModel model(ckpt.header.at("model").get<ModelConfig>(), 0);
        for (Parameter* p : model.parameters())
            restore_parameter(*p, ckpt);
        model.posterior_bn_.running_mean = ckpt.find("posterior_bn.running_mean").values;
        model.posterior_bn_.running_var = ckpt.find("posterior_bn.running_var").values;
        return model;
    }

private:
    template <class Self, class Out>
    static void collect_all(Self& self, Out& out)
    {
        self.encoder_o_.collect(out);
        self.encoder_m_.collect(out);
        self.prior_net_.collect(out);
        self.posterior_net_.collect(out);
        self.classifier_in_.collect(out);
        out.push_back(&self.classifier_latent_);
        self.classifier_out_.collect(out);
        out.push_back(&self.posterior_bn_.beta);
    }

    ModelConfig cfg_;
    Mlp encoder_o_;
    Mlp encoder_m_;
    Mlp prior_net_;
    Mlp posterior_net_;
    Linear classifier_in_;
    Parameter classifier_latent_;
    Linear classifier_out_;
    BatchNormState posterior_bn_;
};

} // namespace primo
