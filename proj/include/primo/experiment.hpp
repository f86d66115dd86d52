#pragma once

// Run-directory layout (version 1):
//
//   <out>/config.json            resolved configuration
//   <out>/STATUS                 "complete", or "incomplete" plus the failing stage
//   <out>/run.log                stage log
//   <out>/results.csv            method,scenario,seed,accuracy,examples
//   <out>/report.md              human-readable summary
//   <out>/seed-<s>/train.primo   training split after masking (dataset format v1)
//   <out>/seed-<s>/test.primo    test split after masking
//   <out>/seed-<s>/checkpoints/  primo.ckpt, baseline-unimodal.ckpt, baseline-multimodal.ckpt
//   <out>/seed-<s>/train_log.csv per-epoch loss breakdown and monitoring accuracies
//   <out>/seed-<s>/records.csv   one row per (example, method, scenario)
//   <out>/seed-<s>/ecdf_v_missing.csv, ecdf_v_complete.csv, ecdf_v_gap.csv
//   <out>/seed-<s>/clusters.csv  DPGMM summaries for the highest- and lowest-V examples
//   <out>/seed-<s>/summary.json  diagnostics (posterior KL, Bayes accuracies, V by x_o sign)
//   <out>/seed-<s>/bias.json     disjoint-halves bias analysis
//
// Numbers in CSV and JSON outputs are written with 9 significant digits.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "primo/baseline.hpp"
#include "primo/bias.hpp"
#include "primo/dpgmm.hpp"
#include "primo/inference.hpp"
#include "primo/oracle.hpp"
#include "primo/training.hpp"

namespace primo {

inline constexpr int kConfigVersion = 1;
inline constexpr const char* kRunLayout = "primo-run v1";

/// Defaults for every configuration key; user files may only override these.
inline nlohmann::json default_config_json()
{
    return nlohmann::json::parse(R"({
  "version": 1,
  "data": {
    "kind": "xor",
    "xor": {
      "n_samples": 40000,
      "centers": [[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0]],
      "sigma": 0.5,
      "weights": [0.3333333333333333, 0.3333333333333333, 0.3333333333333334]
    },
    "path": "",
    "test_path": "",
    "train_frac": 0.7,
    "mask_prob": 0.5,
    "test_mask_prob": 0.0
  },
  "model": {
    "hidden": 128,
    "feature": 32,
    "latent": 2,
    "bn_gamma": 1.0,
    "bn_momentum": 0.1,
    "bn_epsilon": 1e-05,
    "posterior_batch_norm": true
  },
  "train": {
    "lr": 0.001,
    "weight_decay": 0.0001,
    "batch_size": 256,
    "epochs": 50,
    "mc_train_samples": 1,
    "reg_weight": 1.0
  },
  "baselines": true,
  "analysis": {
    "mc_samples": 200,
    "cluster_examples": 5,
    "bias": true,
    "monitor_examples": 1000,
    "monitor_samples": 20,
    "bayes_samples": 1000000,
    "dpgmm": {
      "truncation": 10,
      "alpha": 1.0,
      "max_iterations": 200,
      "tolerance": 1e-06,
      "prune_threshold": 0.01,
      "merge_moves": true
    }
  },
  "output_dir": "runs/xor",
  "seeds": [0, 1, 2, 3]
})");
}

namespace detail {

inline bool same_kind(const nlohmann::json& a, const nlohmann::json& b)
{
    if (a.is_number() && b.is_number())
        return !(a.is_number_integer() && b.is_number_float());
    return a.type() == b.type();
}

inline void merge_strict(nlohmann::json& base, const nlohmann::json& patch, const std::string& where)
{
    if (!patch.is_object())
        throw SchemaError("config: " + (where.empty() ? std::string("top level") : where) + " must be an object");
    for (const auto& [key, value] : patch.items()) {
        const std::string path = where.empty() ? key : where + "." + key;
        if (!base.contains(key))
            throw SchemaError("config: unknown key '" + path + "'");
        auto& slot = base[key];
        if (slot.is_object())
            merge_strict(slot, value, path);
        else if (!same_kind(slot, value))
            throw SchemaError("config: '" + path + "' expects " + std::string(slot.type_name()) + ", got " +
                              value.type_name());
        else
            slot = value;
    }
}

} // namespace detail

struct ExperimentConfig {
    std::string data_kind = "xor"; // "xor" or "file"
    XorConfig xor_cfg;
    std::string data_path;
    std::string test_path;
    ModelConfig model;
    TrainConfig train;
    bool baselines = true;
    std::size_t mc_samples = 200;
    std::size_t cluster_examples = 5;
    bool bias = true;
    std::size_t monitor_examples = 1000;
    std::size_t monitor_samples = 20;
    std::size_t bayes_samples = 1000000;
    DpgmmConfig dpgmm;
    std::string output_dir = "runs/xor";
    std::vector<std::uint64_t> seeds;
    nlohmann::json resolved; // full JSON form after defaults and overrides

    void check() const
    {
        if (data_kind != "xor" && data_kind != "file")
            throw SchemaError("config: data.kind must be 'xor' or 'file'");
        if (data_kind == "xor")
            xor_cfg.check();
        if (data_kind == "file" && data_path.empty())
            throw SchemaError("config: data.path is required when data.kind is 'file'");
        if (train.lr < 0.0 || train.weight_decay < 0.0 || train.batch_size < 2 || train.mc_train_samples < 1 ||
            train.reg_weight < 0.0)
            throw SchemaError("config: train section out of range (batch_size >= 2, mc_train_samples >= 1, "
                              "non-negative lr, weight_decay, reg_weight)");
        if (model.hidden == 0 || model.feature == 0 || model.latent == 0)
            throw SchemaError("config: model widths must be positive");
        if (mc_samples < 10)
            throw SchemaError("config: analysis.mc_samples must be at least 10");
        if (monitor_samples < 1)
            throw SchemaError("config: analysis.monitor_samples must be at least 1");
        dpgmm.check();
        if (seeds.empty())
            throw SchemaError("config: at least one seed is required");
        if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
            throw SchemaError("config: seeds must be distinct");
        if (output_dir.empty())
            throw SchemaError("config: output_dir must be set");
    }
};

/// Builds a validated configuration from user JSON layered over the defaults,
/// then `overrides` given as dotted-path assignments.
inline ExperimentConfig parse_experiment_config(const nlohmann::json& user,
                                                const std::vector<std::pair<std::string, nlohmann::json>>& overrides = {},
                                                const std::vector<std::uint64_t>& extra_seeds = {})
{
    nlohmann::json j = default_config_json();
    if (!user.is_null()) {
        if (!user.is_object())
            throw SchemaError("config: top level must be an object");
        if (user.contains("version") && user.at("version") != kConfigVersion)
            throw SchemaError("config: unsupported version " + user.at("version").dump());
        if (user.contains("seeds"))
            j["seeds"] = nlohmann::json::array();
        detail::merge_strict(j, user, "");
    }
    for (const auto& [path, value] : overrides) {
        nlohmann::json patch = value;
        std::string rest = path;
        std::vector<std::string> parts;
        for (std::size_t pos; (pos = rest.find('.')) != std::string::npos; rest = rest.substr(pos + 1))
            parts.push_back(rest.substr(0, pos));
        parts.push_back(rest);
        for (auto it = parts.rbegin(); it != parts.rend(); ++it)
            patch = nlohmann::json{{*it, patch}};
        if (parts.front() == "seeds")
            j["seeds"] = nlohmann::json::array();
        detail::merge_strict(j, patch, "");
    }
    for (std::uint64_t s : extra_seeds)
        j["seeds"].push_back(s);

    ExperimentConfig c;
    try {
        const auto& d = j.at("data");
        c.data_kind = d.at("kind").get<std::string>();
        const auto& x = d.at("xor");
        c.xor_cfg.n_samples = x.at("n_samples").get<std::size_t>();
        c.xor_cfg.centers.clear();
        for (const auto& p : x.at("centers")) {
            if (!p.is_array() || p.size() != 2)
                throw SchemaError("config: data.xor.centers entries must be [x, y] pairs");
            c.xor_cfg.centers.push_back({p[0].get<double>(), p[1].get<double>()});
        }
        c.xor_cfg.sigma = x.at("sigma").get<double>();
        c.xor_cfg.weights = x.at("weights").get<std::vector<double>>();
        c.xor_cfg.train_frac = d.at("train_frac").get<double>();
        c.xor_cfg.mask_prob = d.at("mask_prob").get<double>();
        c.xor_cfg.test_mask_prob = d.at("test_mask_prob").get<double>();
        c.data_path = d.at("path").get<std::string>();
        c.test_path = d.at("test_path").get<std::string>();

        const auto& m = j.at("model");
        c.model.hidden = m.at("hidden").get<std::size_t>();
        c.model.feature = m.at("feature").get<std::size_t>();
        c.model.latent = m.at("latent").get<std::size_t>();
        c.model.bn_gamma = m.at("bn_gamma").get<double>();
        c.model.bn_momentum = m.at("bn_momentum").get<double>();
        c.model.bn_epsilon = m.at("bn_epsilon").get<double>();
        c.model.posterior_batch_norm = m.at("posterior_batch_norm").get<bool>();

        const auto& t = j.at("train");
        c.train.lr = t.at("lr").get<double>();
        c.train.weight_decay = t.at("weight_decay").get<double>();
        c.train.batch_size = t.at("batch_size").get<std::size_t>();
        c.train.epochs = t.at("epochs").get<std::size_t>();
        c.train.mc_train_samples = t.at("mc_train_samples").get<std::size_t>();
        c.train.reg_weight = t.at("reg_weight").get<double>();

        c.baselines = j.at("baselines").get<bool>();
        const auto& a = j.at("analysis");
        c.mc_samples = a.at("mc_samples").get<std::size_t>();
        c.cluster_examples = a.at("cluster_examples").get<std::size_t>();
        c.bias = a.at("bias").get<bool>();
        c.monitor_examples = a.at("monitor_examples").get<std::size_t>();
        c.monitor_samples = a.at("monitor_samples").get<std::size_t>();
        c.bayes_samples = a.at("bayes_samples").get<std::size_t>();
        const auto& g = a.at("dpgmm");
        c.dpgmm.truncation = g.at("truncation").get<std::size_t>();
        c.dpgmm.alpha = g.at("alpha").get<double>();
        c.dpgmm.max_iterations = g.at("max_iterations").get<std::size_t>();
        c.dpgmm.tolerance = g.at("tolerance").get<double>();
        c.dpgmm.prune_threshold = g.at("prune_threshold").get<double>();
        c.dpgmm.merge_moves = g.at("merge_moves").get<bool>();

        c.output_dir = j.at("output_dir").get<std::string>();
        c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("config: ") + e.what());
    }
    c.check();
    c.resolved = j;
    return c;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path,
                                               const std::vector<std::pair<std::string, nlohmann::json>>& overrides = {},
                                               const std::vector<std::uint64_t>& extra_seeds = {})
{
    std::ifstream is(path);
    if (!is)
        throw IoError("cannot open config " + path.string());
    nlohmann::json user;
    try {
        user = nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
        throw SchemaError("config " + path.string() + ": " + e.what());
    }
    return parse_experiment_config(user, overrides, extra_seeds);
}

// ---------------------------------------------------------------------------
// Output helpers

/// Nine significant digits, the precision of every emitted number.
inline std::string fmt_num(double v)
{
    if (std::isnan(v))
        return "nan";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

inline nlohmann::json num_json(double v) { return nlohmann::json(std::stod(fmt_num(v))); }

inline void write_text(const std::filesystem::path& path, const std::string& text)
{
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw IoError("cannot write " + path.string());
    os << text;
    if (!os)
        throw IoError("write failed for " + path.string());
}

inline std::string read_text(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw IoError("cannot read " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag)
{
    return Rng(seed).fork(tag).next_u64();
}

namespace tag {
inline constexpr std::uint64_t train_mask = 0x6d74726e;  // "mtrn"
inline constexpr std::uint64_t test_mask = 0x6d747374;   // "mtst"
inline constexpr std::uint64_t halves = 0x68616c66;      // "half"
inline constexpr std::uint64_t half_mask = 0x686d736b;   // "hmsk"
inline constexpr std::uint64_t monitor = 0x6d6f6e69;     // "moni"
inline constexpr std::uint64_t bayes = 0x62617973;       // "bays"
inline constexpr std::uint64_t oracle = 0x6f72636c;      // "orcl"
} // namespace tag

inline std::filesystem::path seed_dir(const std::filesystem::path& out, std::uint64_t seed)
{
    return out / ("seed-" + std::to_string(seed));
}

// ---------------------------------------------------------------------------
// Stages

struct SeedData {
    DatasetSchema schema;
    std::vector<Example> train; // after masking
    std::vector<Example> test;  // after masking
    std::vector<Example> train_unmasked;
};

inline ModelConfig model_config_for(const ExperimentConfig& cfg, const DatasetSchema& schema)
{
    ModelConfig m = cfg.model;
    m.dim_o = schema.dim_o;
    m.dim_m = schema.dim_m;
    m.classes = schema.classes;
    return m;
}

inline TrainConfig train_config_for(const ExperimentConfig& cfg, std::uint64_t seed)
{
    TrainConfig t = cfg.train;
    t.seed = seed;
    return t;
}

/// Generates (or loads) the data for one seed, splits it and applies masking.
inline SeedData prepare_data(const ExperimentConfig& cfg, std::uint64_t seed)
{
    Dataset train, test;
    if (cfg.data_kind == "xor") {
        XorConfig x = cfg.xor_cfg;
        x.seed = seed;
        const Dataset all = generate_xor(x);
        auto parts = split(all, {x.train_frac, 1.0 - x.train_frac}, seed);
        train = std::move(parts.train);
        test = std::move(parts.test);
    } else {
        const Dataset all = load(cfg.data_path);
        if (!cfg.test_path.empty()) {
            train = all;
            test = load(cfg.test_path);
            if (test.schema.dim_o != train.schema.dim_o || test.schema.dim_m != train.schema.dim_m ||
                test.schema.classes != train.schema.classes)
                throw SchemaError("test dataset schema differs from training dataset schema");
        } else {
            auto parts = split(all, {cfg.xor_cfg.train_frac, 1.0 - cfg.xor_cfg.train_frac}, seed);
            train = std::move(parts.train);
            test = std::move(parts.test);
        }
    }
    SeedData out;
    out.schema = train.schema;
    out.train_unmasked = train.examples;
    out.train = apply_missingness(train, cfg.xor_cfg.mask_prob, derive_seed(seed, tag::train_mask)).examples;
    out.test = apply_missingness(test, cfg.xor_cfg.test_mask_prob, derive_seed(seed, tag::test_mask)).examples;
    return out;
}

inline void save_seed_data(const SeedData& data, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    save(Dataset{data.schema, data.train}, dir / "train.primo");
    save(Dataset{data.schema, data.test}, dir / "test.primo");
}

inline SeedData load_seed_data(const std::filesystem::path& dir)
{
    SeedData data;
    const Dataset train = load(dir / "train.primo");
    const Dataset test = load(dir / "test.primo");
    data.schema = train.schema;
    data.train = train.examples;
    data.test = test.examples;
    return data;
}

struct TrainedModels {
    PrimoModel primo;
    std::optional<BaselineModel> unimodal;
    std::optional<BaselineModel> multimodal;
    std::vector<EpochRecord> log;
};

namespace detail {

inline double monitor_accuracy(const PrimoModel& model, const std::vector<Example>& examples, Scenario s,
                               std::size_t samples, Rng& rng)
{
    std::vector<Example> usable;
    for (const auto& e : examples)
        if (e.y && (s == Scenario::missing || e.x_m))
            usable.push_back(e);
    if (usable.empty())
        return std::numeric_limits<double>::quiet_NaN();
    const auto probs = mc_mean_probs(model, usable, s, samples, rng);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < usable.size(); ++i)
        hits += probs[i].argmax() == *usable[i].y;
    return static_cast<double>(hits) / static_cast<double>(usable.size());
}

inline std::vector<Example> head(const std::vector<Example>& v, std::size_t n)
{
    return std::vector<Example>(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(std::min(n, v.size())));
}

inline std::vector<Example> labelled_only(const std::vector<Example>& v)
{
    std::vector<Example> out;
    for (const auto& e : v)
        if (e.y)
            out.push_back(e);
    return out;
}

} // namespace detail

/// Trains PRIMO (and the baselines when enabled) and writes checkpoints plus
/// the per-epoch log into `dir`.
inline TrainedModels train_stage(const ExperimentConfig& cfg, const SeedData& data, std::uint64_t seed,
                                 const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir / "checkpoints");
    const ModelConfig mcfg = model_config_for(cfg, data.schema);
    const TrainConfig tcfg = train_config_for(cfg, seed);
    const auto train = detail::labelled_only(data.train);

    TrainedModels out{PrimoModel(mcfg, seed), std::nullopt, std::nullopt, {}};
    const auto train_probe = detail::head(train, cfg.monitor_examples);
    const auto test_probe = detail::head(data.test, cfg.monitor_examples);
    Rng monitor_rng = Rng(derive_seed(seed, tag::monitor));

    std::ostringstream csv;
    csv << "epoch,recon_complete,kl_complete,recon_missing,kl_missing,reg_anchor,reg_tie,total,"
           "acc_train_missing,acc_train_complete,acc_test_missing,acc_test_complete\n";
    out.log = train_primo(out.primo, train, tcfg, [&](const EpochRecord& r) {
        const auto& l = r.loss;
        csv << r.epoch << ',' << fmt_num(l.recon_complete) << ',' << fmt_num(l.kl_complete) << ','
            << fmt_num(l.recon_missing) << ',' << fmt_num(l.kl_missing) << ',' << fmt_num(l.reg_anchor) << ','
            << fmt_num(l.reg_tie) << ',' << fmt_num(l.total);
        for (const auto* probe : {&train_probe, &test_probe})
            for (Scenario s : {Scenario::missing, Scenario::complete})
                csv << ',' << fmt_num(detail::monitor_accuracy(out.primo, *probe, s, cfg.monitor_samples, monitor_rng));
        csv << '\n';
    });
    write_text(dir / "train_log.csv", csv.str());
    save_checkpoint(dir / "checkpoints" / "primo.ckpt", out.primo.to_checkpoint());

    if (cfg.baselines) {
        out.unimodal = train_baseline(BaselineKind::unimodal, train, mcfg, tcfg);
        save_checkpoint(dir / "checkpoints" / "baseline-unimodal.ckpt", out.unimodal->to_checkpoint());
        out.multimodal = train_baseline(BaselineKind::multimodal, train, mcfg, tcfg);
        save_checkpoint(dir / "checkpoints" / "baseline-multimodal.ckpt", out.multimodal->to_checkpoint());
    }
    return out;
}

inline TrainedModels load_trained_models(const std::filesystem::path& dir)
{
    TrainedModels m{PrimoModel::from_checkpoint(load_checkpoint(dir / "checkpoints" / "primo.ckpt")), std::nullopt,
                    std::nullopt, {}};
    if (std::filesystem::exists(dir / "checkpoints" / "baseline-unimodal.ckpt"))
        m.unimodal = BaselineModel::from_checkpoint(load_checkpoint(dir / "checkpoints" / "baseline-unimodal.ckpt"));
    if (std::filesystem::exists(dir / "checkpoints" / "baseline-multimodal.ckpt"))
        m.multimodal =
            BaselineModel::from_checkpoint(load_checkpoint(dir / "checkpoints" / "baseline-multimodal.ckpt"));
    return m;
}

/// One row of records.csv.
struct PredictionRecord {
    std::uint64_t id = 0;
    std::optional<std::size_t> label;
    bool complete = false;
    std::vector<double> x_o;
    std::string method;
    Scenario scenario = Scenario::missing;
    ProbVector probs;
    std::optional<double> v;
};

inline std::string records_header(std::size_t dim_o, std::size_t classes)
{
    std::string h = "id,label,complete";
    for (std::size_t k = 0; k < dim_o; ++k)
        h += ",x_o_" + std::to_string(k);
    h += ",method,scenario,prediction";
    for (std::size_t c = 0; c < classes; ++c)
        h += ",p_" + std::to_string(c);
    h += ",v\n";
    return h;
}

inline std::string format_record_row(const PredictionRecord& r)
{
    std::string s = std::to_string(r.id) + ',' + (r.label ? std::to_string(*r.label) : std::string()) + ',' +
                    (r.complete ? "1" : "0");
    for (double v : r.x_o)
        s += ',' + fmt_num(v);
    s += ',' + r.method + ',' + to_string(r.scenario) + ',' + std::to_string(r.probs.argmax());
    for (double p : r.probs.values())
        s += ',' + fmt_num(p);
    s += ',' + (r.v ? fmt_num(*r.v) : std::string());
    return s + '\n';
}

/// Parsed records.csv, enough to recompute every reported number.
struct RecordTable {
    std::size_t dim_o = 0;
    std::size_t classes = 0;
    std::vector<PredictionRecord> rows;
};

inline RecordTable read_records(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is)
        throw IoError("cannot read " + path.string());
    RecordTable t;
    std::string line;
    if (!std::getline(is, line))
        throw SchemaError(path.string() + ": empty records file");
    {
        std::vector<std::string> cols;
        std::stringstream ss(line);
        for (std::string c; std::getline(ss, c, ',');)
            cols.push_back(c);
        for (const auto& c : cols) {
            t.dim_o += c.rfind("x_o_", 0) == 0;
            t.classes += c.rfind("p_", 0) == 0;
        }
    }
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty())
            continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string c; std::getline(ss, c, ',');)
            f.push_back(c);
        if (!line.empty() && line.back() == ',')
            f.emplace_back();
        const std::size_t expected = 3 + t.dim_o + 3 + t.classes + 1;
        if (f.size() != expected)
            throw SchemaError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                              std::to_string(expected) + " fields");
        PredictionRecord r;
        try {
            std::size_t i = 0;
            r.id = std::stoull(f[i++]);
            if (!f[i].empty())
                r.label = std::stoull(f[i]);
            ++i;
            r.complete = f[i++] == "1";
            for (std::size_t k = 0; k < t.dim_o; ++k)
                r.x_o.push_back(std::stod(f[i++]));
            r.method = f[i++];
            r.scenario = f[i++] == "complete" ? Scenario::complete : Scenario::missing;
            ++i; // prediction, recomputed from the probabilities
            std::vector<double> p;
            for (std::size_t c = 0; c < t.classes; ++c)
                p.push_back(std::stod(f[i++]));
            // Rounded to 9 digits, so renormalise before validating.
            double total = 0.0;
            for (double v : p)
                total += v;
            for (double& v : p)
                v /= total;
            r.probs = ProbVector(std::move(p));
            if (!f[i].empty())
                r.v = std::stod(f[i]);
        } catch (const std::logic_error& e) {
            throw SchemaError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        t.rows.push_back(std::move(r));
    }
    return t;
}

struct AccuracyCell {
    std::string method;
    Scenario scenario = Scenario::missing;
    std::uint64_t seed = 0;
    std::optional<double> accuracy; // empty when no labelled rows exist
    std::size_t examples = 0;
};

/// Accuracy per (method, scenario) recomputed from records, in a stable order.
inline std::vector<AccuracyCell> accuracy_cells(const RecordTable& t, std::uint64_t seed)
{
    std::map<std::pair<std::string, int>, std::pair<std::size_t, std::size_t>> tally; // hits, labelled
    std::map<std::pair<std::string, int>, std::size_t> totals;
    for (const auto& r : t.rows) {
        const auto key = std::make_pair(r.method, static_cast<int>(r.scenario));
        ++totals[key];
        if (r.label) {
            auto& [hits, n] = tally[key];
            hits += r.probs.argmax() == *r.label;
            ++n;
        }
    }
    std::vector<AccuracyCell> out;
    for (const auto& [key, total] : totals) {
        AccuracyCell c;
        c.method = key.first;
        c.scenario = static_cast<Scenario>(key.second);
        c.seed = seed;
        c.examples = total;
        const auto it = tally.find(key);
        if (it != tally.end() && it->second.second > 0)
            c.accuracy = static_cast<double>(it->second.first) / static_cast<double>(it->second.second);
        out.push_back(c);
    }
    return out;
}

/// Mean of (V_missing - V_complete) over PRIMO rows with x_o[0] below `lo`
/// and above `hi`; either entry is NaN when the region is empty.
inline std::pair<double, double> impact_gap_by_region(const RecordTable& t, double lo, double hi)
{
    std::map<std::uint64_t, std::pair<std::optional<double>, std::optional<double>>> v;
    std::map<std::uint64_t, double> x;
    for (const auto& r : t.rows) {
        if (r.method != "primo" || !r.v || r.x_o.empty())
            continue;
        auto& slot = v[r.id];
        (r.scenario == Scenario::missing ? slot.first : slot.second) = r.v;
        x[r.id] = r.x_o[0];
    }
    double s_lo = 0.0, s_hi = 0.0;
    std::size_t n_lo = 0, n_hi = 0;
    for (const auto& [id, pair] : v) {
        if (!pair.first || !pair.second)
            continue;
        const double gap = *pair.first - *pair.second;
        if (x[id] < lo) {
            s_lo += gap;
            ++n_lo;
        } else if (x[id] > hi) {
            s_hi += gap;
            ++n_hi;
        }
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    return {n_lo ? s_lo / static_cast<double>(n_lo) : nan, n_hi ? s_hi / static_cast<double>(n_hi) : nan};
}

struct AnalysisOutput {
    std::vector<PredictionRecord> records;
    std::vector<ImpactReport> impacts;
    nlohmann::json summary;
};

/// Evaluates every method on the test split and writes records, ECDF files,
/// cluster summaries and the diagnostic summary into `dir`.
inline AnalysisOutput analyze_stage(const ExperimentConfig& cfg, TrainedModels& models, const SeedData& data,
                                    std::uint64_t seed, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    const std::size_t classes = data.schema.classes;
    const bool is_xor = cfg.data_kind == "xor";
    XorConfig xor_cfg = cfg.xor_cfg;
    xor_cfg.seed = seed;
    const Predictor oracle = xor_oracle_predictor(xor_cfg);

    AnalysisOutput out;
    std::vector<PredictionSet> missing_preds;
    std::vector<std::optional<PredictionSet>> complete_preds;
    for (const auto& e : data.test) {
        auto add = [&](const std::string& method, Scenario s, const ProbVector& p, std::optional<double> v) {
            out.records.push_back({e.id, e.y, e.x_m.has_value(), e.x_o, method, s, p, v});
        };
        PredictionSet pm = mc_predict(models.primo, e, Scenario::missing, cfg.mc_samples,
                                      prediction_seed(seed, e.id, Scenario::missing));
        std::optional<PredictionSet> pc;
        if (e.x_m)
            pc = mc_predict(models.primo, e, Scenario::complete, cfg.mc_samples,
                            prediction_seed(seed, e.id, Scenario::complete));
        const ImpactReport impact = impact_report(pm, pc ? &*pc : nullptr);
        add("primo", Scenario::missing, pm.mean_prob, impact.v_missing);
        if (pc)
            add("primo", Scenario::complete, pc->mean_prob, impact.v_complete);
        if (models.unimodal)
            add("baseline-unimodal", Scenario::missing, models.unimodal->predict(e), std::nullopt);
        if (models.multimodal && e.x_m)
            add("baseline-multimodal", Scenario::complete, models.multimodal->predict(e), std::nullopt);
        if (is_xor) {
            add("oracle-analytic", Scenario::missing, oracle.predict(e, Scenario::missing), std::nullopt);
            if (e.x_m)
                add("oracle-analytic", Scenario::complete, oracle.predict(e, Scenario::complete), std::nullopt);
        }
        out.impacts.push_back(impact);
        missing_preds.push_back(std::move(pm));
        complete_preds.push_back(std::move(pc));
    }

    std::string rec = records_header(data.schema.dim_o, classes);
    for (const auto& r : out.records)
        rec += format_record_row(r);
    write_text(dir / "records.csv", rec);

    std::vector<double> v_missing, v_complete, v_gap;
    for (const auto& i : out.impacts) {
        v_missing.push_back(i.v_missing);
        if (i.v_complete) {
            v_complete.push_back(*i.v_complete);
            v_gap.push_back(*i.gap());
        }
    }
    const auto write_ecdf = [&](const std::string& name, const std::vector<double>& values) {
        std::string s = "value,cdf\n";
        for (const auto& [v, p] : ecdf(values))
            s += fmt_num(v) + ',' + fmt_num(p) + '\n';
        write_text(dir / name, s);
    };
    write_ecdf("ecdf_v_missing.csv", v_missing);
    write_ecdf("ecdf_v_complete.csv", v_complete);
    write_ecdf("ecdf_v_gap.csv", v_gap);

    // Clusters for the examples with the highest and lowest missing-scenario V.
    std::vector<std::size_t> order(out.impacts.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return out.impacts[a].v_missing > out.impacts[b].v_missing;
    });
    std::vector<std::pair<std::size_t, std::string>> chosen;
    const std::size_t pick = std::min(cfg.cluster_examples, order.size() / 2);
    for (std::size_t i = 0; i < pick; ++i)
        chosen.emplace_back(order[i], "high");
    for (std::size_t i = 0; i < pick; ++i)
        chosen.emplace_back(order[order.size() - 1 - i], "low");
    std::string cl = "id,selection,scenario,v,cluster,weight,dominant_label";
    for (std::size_t c = 0; c < classes; ++c)
        cl += ",p_" + std::to_string(c);
    cl += '\n';
    for (const auto& [idx, selection] : chosen) {
        std::vector<const PredictionSet*> preds{&missing_preds[idx]};
        if (complete_preds[idx])
            preds.push_back(&*complete_preds[idx]);
        for (const PredictionSet* p : preds) {
            DpgmmConfig dc = cfg.dpgmm;
            dc.seed = prediction_seed(seed, p->example_id, p->scenario);
            const auto clusters = cluster_logits(*p, dc);
            const double v = impact_v(*p);
            for (const auto& c : clusters) {
                cl += std::to_string(p->example_id) + ',' + selection + ',' + to_string(p->scenario) + ',' +
                      fmt_num(v) + ',' + std::to_string(c.cluster_id) + ',' + fmt_num(c.weight) + ',' +
                      std::to_string(c.dominant_label);
                for (double q : c.mean_class_distribution.values())
                    cl += ',' + fmt_num(q);
                cl += '\n';
            }
        }
    }
    write_text(dir / "clusters.csv", cl);

    nlohmann::json s;
    s["seed"] = seed;
    s["test_examples"] = data.test.size();
    s["mc_samples"] = cfg.mc_samples;
    const auto labelled = detail::labelled_only(data.train);
    if (!labelled.empty())
        s["posterior_prior_kl"] = num_json(mean_posterior_prior_kl(models.primo, labelled));
    if (is_xor) {
        s["bayes_accuracy"] = {
            {"missing", num_json(xor_bayes_accuracy(xor_cfg, Scenario::missing, cfg.bayes_samples,
                                                    derive_seed(seed, tag::bayes)))},
            {"complete", num_json(xor_bayes_accuracy(xor_cfg, Scenario::complete, cfg.bayes_samples,
                                                     derive_seed(seed, tag::bayes)))}};
    }
    double vm = 0.0, vc = 0.0;
    for (double v : v_missing)
        vm += v;
    for (double v : v_complete)
        vc += v;
    s["mean_v_missing"] = num_json(v_missing.empty() ? 0.0 : vm / static_cast<double>(v_missing.size()));
    if (!v_complete.empty())
        s["mean_v_complete"] = num_json(vc / static_cast<double>(v_complete.size()));
    out.summary = s;
    write_text(dir / "summary.json", s.dump(2) + "\n");
    return out;
}

struct BiasOutput {
    std::optional<BiasReport> trained;  // oracles trained on the disjoint half
    std::optional<BiasReport> analytic; // exact XOR oracle
};

inline nlohmann::json bias_json(const BiasReport& r)
{
    return {{"b_missing", num_json(r.b_missing)},
            {"b_complete", num_json(r.b_complete)},
            {"oracle_gap", num_json(r.oracle_gap)},
            {"cross_missing", num_json(r.cross_missing)},
            {"cross_complete", num_json(r.cross_complete)},
            {"examples", r.examples}};
}

/// Disjoint-halves protocol: PRIMO on half A with the configured masking,
/// trained oracles on the unmasked half B, evaluation on complete test examples.
inline BiasOutput bias_stage(const ExperimentConfig& cfg, const SeedData& data, std::uint64_t seed,
                             const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir / "checkpoints");
    const std::vector<Example>& source = data.train_unmasked.empty() ? data.train : data.train_unmasked;
    const auto halves = split(Dataset{data.schema, detail::labelled_only(source)}, {0.5, 0.5},
                              derive_seed(seed, tag::halves));
    const Dataset half_a =
        apply_missingness(halves.train, cfg.xor_cfg.mask_prob, derive_seed(seed, tag::half_mask));
    const std::vector<Example>& half_b = halves.test.examples;

    const ModelConfig mcfg = model_config_for(cfg, data.schema);
    const TrainConfig tcfg = train_config_for(cfg, seed);
    PrimoModel primo(mcfg, seed);
    train_primo(primo, half_a.examples, tcfg);
    save_checkpoint(dir / "checkpoints" / "bias-primo-half-a.ckpt", primo.to_checkpoint());
    const TrainConfig ocfg = train_config_for(cfg, derive_seed(seed, tag::oracle));
    const BaselineModel uni = train_baseline(BaselineKind::unimodal, half_b, mcfg, ocfg);
    const BaselineModel multi = train_baseline(BaselineKind::multimodal, half_b, mcfg, ocfg);
    save_checkpoint(dir / "checkpoints" / "bias-oracle-unimodal-half-b.ckpt", uni.to_checkpoint());
    save_checkpoint(dir / "checkpoints" / "bias-oracle-multimodal-half-b.ckpt", multi.to_checkpoint());

    std::vector<ProbVector> mm, mc, tu, tm, au, am;
    XorConfig xor_cfg = cfg.xor_cfg;
    for (const auto& e : data.test) {
        if (!e.x_m)
            continue;
        mm.push_back(mc_predict(primo, e, Scenario::missing, cfg.mc_samples,
                                prediction_seed(seed, e.id, Scenario::missing))
                         .mean_prob);
        mc.push_back(mc_predict(primo, e, Scenario::complete, cfg.mc_samples,
                                prediction_seed(seed, e.id, Scenario::complete))
                         .mean_prob);
        tu.push_back(uni.predict(e));
        tm.push_back(multi.predict(e));
        if (cfg.data_kind == "xor") {
            au.push_back(xor_oracle_unimodal(e.x_o[0], xor_cfg));
            am.push_back(xor_oracle_multimodal(e.x_o[0], (*e.x_m)[0]));
        }
    }
    BiasOutput out;
    nlohmann::json j;
    j["protocol"] = "disjoint-halves";
    j["half_a_examples"] = half_a.examples.size();
    j["half_b_examples"] = half_b.size();
    if (!mm.empty()) {
        out.trained = bias_from_predictions(mm, mc, tu, tm);
        j["trained_oracles"] = bias_json(*out.trained);
        if (!au.empty()) {
            out.analytic = bias_from_predictions(mm, mc, au, am);
            j["analytic_oracle"] = bias_json(*out.analytic);
        }
    }
    write_text(dir / "bias.json", j.dump(2) + "\n");
    return out;
}

// ---------------------------------------------------------------------------
// Orchestration and reporting

struct SeedResult {
    std::uint64_t seed = 0;
    std::vector<AccuracyCell> cells;
    nlohmann::json summary;
    BiasOutput bias;
    std::pair<double, double> v_gap_by_region; // x_o < -0.25, x_o > +0.25
};

struct RunResult {
    std::filesystem::path dir;
    std::vector<SeedResult> seeds;
};

inline void write_status(const std::filesystem::path& out, const std::string& text)
{
    write_text(out / "STATUS", text + "\n");
}

struct RunLog {
    std::filesystem::path path;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

    void line(const std::string& msg) const
    {
        std::ofstream os(path, std::ios::app);
        const double t = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        char stamp[32];
        std::snprintf(stamp, sizeof stamp, "[%8.1fs] ", t);
        os << stamp << msg << '\n';
    }
};

inline std::string emit_report(const std::filesystem::path& run_dir);

/// Full protocol for every configured seed. Any stage failure marks the run
/// incomplete and rethrows with the stage name.
inline RunResult run_experiment(const ExperimentConfig& cfg)
{
    const std::filesystem::path out = cfg.output_dir;
    std::filesystem::create_directories(out);
    write_status(out, "incomplete\nstage: setup");
    write_text(out / "config.json", cfg.resolved.dump(2) + "\n");
    write_text(out / "run.log", std::string(kRunLayout) + "\n");
    const RunLog log{out / "run.log"};

    RunResult result;
    result.dir = out;
    std::string stage = "setup";
    try {
        for (std::uint64_t seed : cfg.seeds) {
            const auto dir = seed_dir(out, seed);
            SeedResult sr;
            sr.seed = seed;

            stage = "data (seed " + std::to_string(seed) + ")";
            write_status(out, "incomplete\nstage: " + stage);
            const SeedData data = prepare_data(cfg, seed);
            save_seed_data(data, dir);
            log.line(stage + ": " + std::to_string(data.train.size()) + " train, " +
                     std::to_string(data.test.size()) + " test");

            stage = "train (seed " + std::to_string(seed) + ")";
            write_status(out, "incomplete\nstage: " + stage);
            TrainedModels models = train_stage(cfg, data, seed, dir);
            log.line(stage + ": done");

            stage = "analyze (seed " + std::to_string(seed) + ")";
            write_status(out, "incomplete\nstage: " + stage);
            const AnalysisOutput analysis = analyze_stage(cfg, models, data, seed, dir);
            sr.summary = analysis.summary;
            log.line(stage + ": done");

            if (cfg.bias) {
                stage = "bias (seed " + std::to_string(seed) + ")";
                write_status(out, "incomplete\nstage: " + stage);
                sr.bias = bias_stage(cfg, data, seed, dir);
                log.line(stage + ": done");
            }

            const RecordTable table = read_records(dir / "records.csv");
            sr.cells = accuracy_cells(table, seed);
            sr.v_gap_by_region = impact_gap_by_region(table, -0.25, 0.25);
            result.seeds.push_back(std::move(sr));
        }

        stage = "report";
        write_status(out, "incomplete\nstage: " + stage);
        std::string csv = "method,scenario,seed,accuracy,examples\n";
        for (const auto& sr : result.seeds)
            for (const auto& c : sr.cells)
                csv += c.method + ',' + to_string(c.scenario) + ',' + std::to_string(c.seed) + ',' +
                       (c.accuracy ? fmt_num(*c.accuracy) : std::string("unavailable")) + ',' +
                       std::to_string(c.examples) + '\n';
        write_text(out / "results.csv", csv);
        write_status(out, "complete");
        emit_report(out);
        log.line("run complete");
    } catch (const std::exception& e) {
        write_status(out, "incomplete\nstage: " + stage + "\nerror: " + e.what());
        log.line("failed in " + stage + ": " + e.what());
        throw Error("stage " + stage + ": " + e.what());
    }
    return result;
}

/// Builds report.md from the per-seed records; every accuracy is recomputed.
/// An incomplete run yields a report headed by a warning.
inline std::string emit_report(const std::filesystem::path& run_dir)
{
    if (!std::filesystem::exists(run_dir / "config.json"))
        throw IoError("no run found in " + run_dir.string());
    const std::string status = std::filesystem::exists(run_dir / "STATUS") ? read_text(run_dir / "STATUS") : "";
    const bool complete = status.rfind("complete", 0) == 0;

    std::vector<std::uint64_t> seeds;
    for (const auto& entry : std::filesystem::directory_iterator(run_dir)) {
        const std::string name = entry.path().filename().string();
        if (entry.is_directory() && name.rfind("seed-", 0) == 0 &&
            std::filesystem::exists(entry.path() / "records.csv"))
            seeds.push_back(std::stoull(name.substr(5)));
    }
    std::sort(seeds.begin(), seeds.end());

    std::map<std::pair<std::string, std::string>, std::map<std::uint64_t, std::optional<double>>> cells;
    std::set<std::string> methods;
    std::map<std::uint64_t, std::pair<double, double>> gaps;
    std::map<std::uint64_t, std::pair<double, double>> mean_v;
    for (std::uint64_t s : seeds) {
        const RecordTable t = read_records(seed_dir(run_dir, s) / "records.csv");
        for (const auto& c : accuracy_cells(t, s)) {
            cells[{c.method, to_string(c.scenario)}][s] = c.accuracy;
            methods.insert(c.method);
        }
        gaps[s] = impact_gap_by_region(t, -0.25, 0.25);
        double vm = 0.0, vc = 0.0;
        std::size_t nm = 0, nc = 0;
        for (const auto& r : t.rows) {
            if (r.method != "primo" || !r.v)
                continue;
            (r.scenario == Scenario::missing ? vm : vc) += *r.v;
            ++(r.scenario == Scenario::missing ? nm : nc);
        }
        const double nan = std::numeric_limits<double>::quiet_NaN();
        mean_v[s] = {nm ? vm / static_cast<double>(nm) : nan, nc ? vc / static_cast<double>(nc) : nan};
    }

    std::ostringstream md;
    md << "# PRIMO run report\n\n";
    if (!complete)
        md << "> WARNING: partial report; the run is incomplete (" << status.substr(0, status.find('\n', 11))
           << ").\n\n";
    md << "Run directory layout: " << kRunLayout << ". Seeds: ";
    for (std::size_t i = 0; i < seeds.size(); ++i)
        md << (i ? ", " : "") << seeds[i];
    md << ".\n\n## Accuracy\n\n";
    md << "Mean and sample standard deviation over seeds; per-seed values follow.\n\n";
    md << "| method | scenario | mean | std |";
    for (std::uint64_t s : seeds)
        md << " seed " << s << " |";
    md << "\n|---|---|---|---|";
    for (std::size_t i = 0; i < seeds.size(); ++i)
        md << "---|";
    md << '\n';
    for (const std::string& m : methods) {
        for (const char* sc : {"missing", "complete"}) {
            const auto it = cells.find({m, sc});
            md << "| " << m << " | " << sc << " | ";
            if (it == cells.end()) {
                md << "not evaluated | |";
                for (std::size_t i = 0; i < seeds.size(); ++i)
                    md << " |";
                md << '\n';
                continue;
            }
            std::vector<double> vals;
            for (std::uint64_t s : seeds) {
                const auto jt = it->second.find(s);
                if (jt != it->second.end() && jt->second)
                    vals.push_back(*jt->second);
            }
            if (vals.empty()) {
                md << "unavailable | |";
            } else {
                double mean = 0.0;
                for (double v : vals)
                    mean += v;
                mean /= static_cast<double>(vals.size());
                double var = 0.0;
                for (double v : vals)
                    var += (v - mean) * (v - mean);
                const std::string sd =
                    vals.size() > 1 ? fmt_num(std::sqrt(var / static_cast<double>(vals.size() - 1))) : "n/a";
                md << fmt_num(mean) << " | " << sd << " |";
            }
            for (std::uint64_t s : seeds) {
                const auto jt = it->second.find(s);
                md << ' '
                   << (jt == it->second.end() ? std::string("not evaluated")
                                              : (jt->second ? fmt_num(*jt->second) : std::string("unavailable")))
                   << " |";
            }
            md << '\n';
        }
    }

    md << "\n## Predictive impact\n\n| seed | mean V missing | mean V complete | mean gap, x_o < -0.25 | mean gap, "
          "x_o > 0.25 |\n|---|---|---|---|---|\n";
    for (std::uint64_t s : seeds)
        md << "| " << s << " | " << fmt_num(mean_v[s].first) << " | " << fmt_num(mean_v[s].second) << " | "
           << fmt_num(gaps[s].first) << " | " << fmt_num(gaps[s].second) << " |\n";

    md << "\n## Bias analysis\n\n";
    bool any_bias = false;
    for (std::uint64_t s : seeds) {
        const auto path = seed_dir(run_dir, s) / "bias.json";
        if (!std::filesystem::exists(path))
            continue;
        if (!any_bias)
            md << "| seed | oracle | B missing | B complete | oracle gap | TVD(missing, multimodal oracle) | "
                  "TVD(complete, unimodal oracle) |\n|---|---|---|---|---|---|---|\n";
        any_bias = true;
        const auto j = nlohmann::json::parse(read_text(path));
        for (const char* key : {"trained_oracles", "analytic_oracle"}) {
            if (!j.contains(key))
                continue;
            const auto& b = j[key];
            md << "| " << s << " | " << key << " | " << fmt_num(b["b_missing"].get<double>()) << " | "
               << fmt_num(b["b_complete"].get<double>()) << " | " << fmt_num(b["oracle_gap"].get<double>()) << " | "
               << fmt_num(b["cross_missing"].get<double>()) << " | " << fmt_num(b["cross_complete"].get<double>())
               << " |\n";
        }
    }
    if (!any_bias)
        md << "No bias analysis in this run.\n";

    md << "\n## Data files\n\nPer seed under `seed-<s>/`: `records.csv` (per-example predictions and V), "
          "`ecdf_v_missing.csv`, `ecdf_v_complete.csv`, `ecdf_v_gap.csv`, `clusters.csv`, `train_log.csv`, "
          "`summary.json`, `bias.json`. Aggregate accuracies: `results.csv`.\n";
    const std::string text = md.str();
    write_text(run_dir / "report.md", text);
    return text;
}

} // namespace primo
