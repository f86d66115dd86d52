#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "primo/experiment.hpp"

using namespace primo;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

fs::path scratch(const std::string& name)
{
    const fs::path p = fs::temp_directory_path() / ("primo-test-" + name);
    fs::remove_all(p);
    return p;
}

ExperimentConfig tiny(const fs::path& out, json seeds = json::array({0}))
{
    return parse_experiment_config(json::object(), {{"data.xor.n_samples", 2000},
                                                    {"model.hidden", 16},
                                                    {"model.feature", 8},
                                                    {"train.epochs", 2},
                                                    {"analysis.mc_samples", 20},
                                                    {"analysis.bayes_samples", 10000},
                                                    {"analysis.monitor_examples", 100},
                                                    {"analysis.cluster_examples", 2},
                                                    {"output_dir", out.string()},
                                                    {"seeds", seeds}});
}

} // namespace

TEST(Config, DefaultsMatchTheExperimentalSetup)
{
    const ExperimentConfig c = parse_experiment_config(json(), {});
    EXPECT_EQ(c.xor_cfg.n_samples, 40000u);
    EXPECT_EQ(c.xor_cfg.sigma, 0.5);
    EXPECT_EQ(c.xor_cfg.centers.size(), 3u);
    EXPECT_EQ(c.model.hidden, 128u);
    EXPECT_EQ(c.model.latent, 2u);
    EXPECT_EQ(c.train.lr, 1e-3);
    EXPECT_EQ(c.train.weight_decay, 1e-4);
    EXPECT_EQ(c.train.batch_size, 256u);
    EXPECT_EQ(c.train.epochs, 50u);
    EXPECT_EQ(c.train.reg_weight, 1.0);
    EXPECT_EQ(c.mc_samples, 200u);
    EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{0, 1, 2, 3}));
    EXPECT_EQ(c.resolved.at("version"), kConfigVersion);
}

TEST(Config, RejectsUnknownKeysTypesAndVersions)
{
    EXPECT_THROW(parse_experiment_config(json{{"trian", {{"lr", 0.1}}}}, {}), SchemaError);
    EXPECT_THROW(parse_experiment_config(json{{"train", {{"learning_rate", 0.1}}}}, {}), SchemaError);
    EXPECT_THROW(parse_experiment_config(json{{"train", {{"lr", "fast"}}}}, {}), SchemaError);
    EXPECT_THROW(parse_experiment_config(json{{"version", 2}}, {}), SchemaError);
    EXPECT_THROW(parse_experiment_config(json::array(), {}), SchemaError);
    EXPECT_THROW(parse_experiment_config(json(), {{"train.nope", 1}}), SchemaError);
    EXPECT_THROW(parse_experiment_config(json(), {{"train.batch_size", 1}}), SchemaError);
    EXPECT_THROW(parse_experiment_config(json(), {{"analysis.mc_samples", 5}}), SchemaError);
    EXPECT_THROW(parse_experiment_config(json(), {{"data.kind", "file"}}), SchemaError);
    EXPECT_THROW(parse_experiment_config(json{{"seeds", {1, 1}}}, {}), SchemaError);
}

TEST(Config, OverridesAndSeeds)
{
    const auto c = parse_experiment_config(json{{"train", {{"epochs", 7}}}, {"seeds", {5}}},
                                           {{"train.lr", 0.01}, {"model.bn_gamma", 2.0}}, {9});
    EXPECT_EQ(c.train.epochs, 7u);
    EXPECT_EQ(c.train.lr, 0.01);
    EXPECT_EQ(c.model.bn_gamma, 2.0);
    EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{5, 9}));
    EXPECT_EQ(c.resolved["train"]["lr"], 0.01);

    const auto appended = parse_experiment_config(json(), {}, {7});
    EXPECT_EQ(appended.seeds, (std::vector<std::uint64_t>{0, 1, 2, 3, 7}));
}

TEST(Config, LoadsFromFile)
{
    const fs::path dir = scratch("config");
    fs::create_directories(dir);
    write_text(dir / "c.json", R"({"version": 1, "train": {"epochs": 3}})");
    EXPECT_EQ(load_experiment_config(dir / "c.json").train.epochs, 3u);
    write_text(dir / "bad.json", "{ not json");
    EXPECT_THROW(load_experiment_config(dir / "bad.json"), SchemaError);
    EXPECT_THROW(load_experiment_config(dir / "absent.json"), IoError);
}

TEST(Run, TinyExperimentWritesARecomputableRun)
{
    const fs::path out = scratch("tiny");
    const ExperimentConfig cfg = tiny(out);
    const RunResult r = run_experiment(cfg);
    ASSERT_EQ(r.seeds.size(), 1u);
    EXPECT_EQ(read_text(out / "STATUS"), "complete\n");
    for (const char* f : {"config.json", "run.log", "results.csv", "report.md"})
        EXPECT_TRUE(fs::exists(out / f)) << f;
    const fs::path sd = seed_dir(out, 0);
    for (const char* f : {"train.primo", "test.primo", "records.csv", "ecdf_v_missing.csv", "ecdf_v_complete.csv",
                          "ecdf_v_gap.csv", "clusters.csv", "train_log.csv", "summary.json", "bias.json",
                          "checkpoints/primo.ckpt"})
        EXPECT_TRUE(fs::exists(sd / f)) << f;

    // Every reported accuracy follows from records.csv.
    const RecordTable t = read_records(sd / "records.csv");
    const auto cells = accuracy_cells(t, 0);
    const std::string results = read_text(out / "results.csv");
    for (const auto& c : cells) {
        ASSERT_TRUE(c.accuracy);
        const std::string row =
            c.method + ',' + to_string(c.scenario) + ",0," + fmt_num(*c.accuracy) + ',' + std::to_string(c.examples);
        EXPECT_NE(results.find(row), std::string::npos) << row;
    }
    bool saw_oracle = false;
    for (const auto& c : cells)
        if (c.method == "oracle-analytic" && c.scenario == Scenario::complete) {
            saw_oracle = true;
            EXPECT_EQ(*c.accuracy, 1.0);
        }
    EXPECT_TRUE(saw_oracle);

    const json summary = json::parse(read_text(sd / "summary.json"));
    for (const char* k : {"posterior_prior_kl", "bayes_accuracy", "mean_v_missing", "mean_v_complete"})
        EXPECT_TRUE(summary.contains(k)) << k;
    const json bias = json::parse(read_text(sd / "bias.json"));
    EXPECT_TRUE(bias.contains("trained_oracles"));
    EXPECT_TRUE(bias.contains("analytic_oracle"));
    ASSERT_TRUE(r.seeds[0].bias.analytic);
    EXPECT_GT(r.seeds[0].bias.analytic->examples, 0u);

    // The report reproduces from disk alone.
    const std::string report = read_text(out / "report.md");
    EXPECT_EQ(emit_report(out), report);
    EXPECT_EQ(report.find("WARNING"), std::string::npos);
}

TEST(Run, RecordsAreByteIdenticalAcrossRuns)
{
    const fs::path a = scratch("repeat-a"), b = scratch("repeat-b");
    auto ca = tiny(a), cb = tiny(b);
    ca.bias = cb.bias = false;
    run_experiment(ca);
    run_experiment(cb);
    EXPECT_EQ(read_text(seed_dir(a, 0) / "records.csv"), read_text(seed_dir(b, 0) / "records.csv"));
    EXPECT_EQ(read_text(seed_dir(a, 0) / "clusters.csv"), read_text(seed_dir(b, 0) / "clusters.csv"));
    EXPECT_EQ(read_text(a / "results.csv"), read_text(b / "results.csv"));
}

TEST(Run, StagesComposeLikeTheFullRun)
{
    const fs::path out = scratch("stages");
    auto cfg = tiny(out, json::array({3}));
    cfg.bias = false;
    const auto dir = seed_dir(out, 3);
    const SeedData data = prepare_data(cfg, 3);
    save_seed_data(data, dir);
    train_stage(cfg, data, 3, dir);
    auto loaded = load_trained_models(dir);
    const auto reloaded = load_seed_data(dir);
    ASSERT_EQ(reloaded.test.size(), data.test.size());
    analyze_stage(cfg, loaded, reloaded, 3, dir);
    const std::string staged = read_text(dir / "records.csv");

    const fs::path full = scratch("stages-full");
    auto fcfg = tiny(full, json::array({3}));
    fcfg.bias = false;
    run_experiment(fcfg);
    EXPECT_EQ(staged, read_text(seed_dir(full, 3) / "records.csv"));
}

TEST(Run, UnlabelledTestRowsReportAccuracyUnavailable)
{
    const fs::path dir = scratch("unlabelled");
    fs::create_directories(dir);
    XorConfig x;
    x.n_samples = 1500;
    x.seed = 4;
    Dataset train = generate_xor(x);
    x.n_samples = 60;
    x.seed = 5;
    Dataset test = generate_xor(x);
    for (auto& e : test.examples) {
        e.y.reset();
        e.id += 100000;
    }
    save(train, dir / "train.primo");
    save(test, dir / "test.primo");

    auto cfg = tiny(dir / "run");
    cfg = parse_experiment_config(cfg.resolved, {{"data.kind", "file"},
                                                 {"data.path", (dir / "train.primo").string()},
                                                 {"data.test_path", (dir / "test.primo").string()},
                                                 {"analysis.bias", false}});
    run_experiment(cfg);
    const RecordTable t = read_records(seed_dir(dir / "run", 0) / "records.csv");
    bool saw_v = false;
    for (const auto& row : t.rows) {
        EXPECT_FALSE(row.label);
        saw_v = saw_v || (row.method == "primo" && row.v);
    }
    EXPECT_TRUE(saw_v);
    for (const auto& c : accuracy_cells(t, 0))
        EXPECT_FALSE(c.accuracy) << c.method;
    EXPECT_NE(read_text(dir / "run" / "results.csv").find("unavailable"), std::string::npos);
    EXPECT_NE(read_text(dir / "run" / "report.md").find("unavailable"), std::string::npos);
}

TEST(Run, FailedStageMarksTheRunIncomplete)
{
    const fs::path dir = scratch("failing");
    auto cfg = tiny(dir / "run");
    cfg.data_kind = "file";
    cfg.data_path = (dir / "missing.primo").string();
    EXPECT_THROW(run_experiment(cfg), Error);
    const std::string status = read_text(dir / "run" / "STATUS");
    EXPECT_EQ(status.rfind("incomplete", 0), 0u);
    EXPECT_NE(status.find("data (seed 0)"), std::string::npos);
    const std::string report = emit_report(dir / "run");
    EXPECT_NE(report.find("WARNING"), std::string::npos);
    EXPECT_THROW(emit_report(dir / "nowhere"), IoError);
}

TEST(Records, RoundTripAndRegions)
{
    const fs::path dir = scratch("records");
    fs::create_directories(dir);
    std::vector<PredictionRecord> rows{
        {1, 0, true, {-1.0}, "primo", Scenario::missing, ProbVector({0.8, 0.2}), 0.3},
        {1, 0, true, {-1.0}, "primo", Scenario::complete, ProbVector({0.9, 0.1}), 0.1},
        {2, std::nullopt, false, {1.0}, "primo", Scenario::missing, ProbVector({0.4, 0.6}), 0.05},
        {3, 1, true, {0.5}, "primo", Scenario::missing, ProbVector({0.3, 0.7}), 0.2},
        {3, 1, true, {0.5}, "primo", Scenario::complete, ProbVector({0.1, 0.9}), 0.25},
    };
    std::string text = records_header(1, 2);
    for (const auto& r : rows)
        text += format_record_row(r);
    write_text(dir / "records.csv", text);
    const RecordTable t = read_records(dir / "records.csv");
    ASSERT_EQ(t.rows.size(), rows.size());
    EXPECT_EQ(t.dim_o, 1u);
    EXPECT_EQ(t.classes, 2u);
    EXPECT_FALSE(t.rows[2].label);
    EXPECT_NEAR(*t.rows[2].v, 0.05, 1e-12);

    const auto cells = accuracy_cells(t, 0);
    ASSERT_EQ(cells.size(), 2u);
    const auto& missing = cells[0].scenario == Scenario::missing ? cells[0] : cells[1];
    EXPECT_EQ(missing.examples, 3u);
    EXPECT_EQ(*missing.accuracy, 1.0); // ids 1 and 3 are labelled and correct
    const auto [lo, hi] = impact_gap_by_region(t, -0.25, 0.25);
    EXPECT_NEAR(lo, 0.2, 1e-12);
    EXPECT_NEAR(hi, -0.05, 1e-12);

    write_text(dir / "short.csv", records_header(1, 2) + "1,0,1\n");
    EXPECT_THROW(read_records(dir / "short.csv"), SchemaError);
}
