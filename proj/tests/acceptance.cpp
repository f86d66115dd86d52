// Runs every acceptance criterion and prints one PASS/FAIL line per criterion.
// Usage: acceptance [work_dir]   (default: ./acceptance-run)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "criteria.hpp"
#include "primo/experiment.hpp"

using namespace primo;
using namespace primo::support;
namespace fs = std::filesystem;
using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
    int id;
    std::string name;
    bool pass;
    std::string detail;
};

std::vector<Verdict> verdicts;

void report(int id, const std::string& name, bool pass, const std::string& detail)
{
    verdicts.push_back({id, name, pass, detail});
    std::cout << "criterion " << id << " [" << (pass ? "PASS" : "FAIL") << "] " << name << ": " << detail << std::endl;
}

void note(const std::string& text) { std::cout << "  " << text << std::endl; }

std::string num(double v, int digits = 4)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return buf;
}

void criterion_gradients()
{
    const auto start = Clock::now();
    double worst_op = 0.0;
    std::string worst_name;
    for (const auto& r : op_gradient_errors())
        if (r.rel_error >= worst_op) {
            worst_op = r.rel_error;
            worst_name = r.name;
        }
    MicroProblem mixed = micro_problem(3);
    const double full = full_loss_gradient_error(mixed);
    const auto graphs = random_graph_errors(100, 11);
    const double worst_graph = *std::max_element(graphs.begin(), graphs.end());
    const double secs = seconds_since(start);
    const bool pass = worst_op <= 1e-4 && worst_graph <= 1e-4 && full <= 1e-3 && secs < 30.0;
    report(1, "gradient suite", pass,
           "worst op rel err " + num(worst_op) + " (" + worst_name + ", tol 1e-4), random graphs " + num(worst_graph) +
               ", full loss " + num(full) + " (tol 1e-3), " + num(secs, 3) + " s (limit 30 s)");
}

void criterion_closed_form()
{
    const ClosedFormResult r = closed_form_suite();
    const bool pass = r.hand_case_error <= 1e-9 && r.isotropic_error <= 1e-9 && r.tvd_error <= 1e-9 &&
                      r.invariance_failures == 0 && r.invariance_trials == 1000;
    report(2, "closed-form KL and TVD", pass,
           "hand case err " + num(r.hand_case_error) + ", isotropic err " + num(r.isotropic_error) + ", TVD err " +
               num(r.tvd_error) + ", translation invariance " +
               std::to_string(r.invariance_trials - r.invariance_failures) + "/" +
               std::to_string(r.invariance_trials) + " (tol 1e-9)");
}

void criterion_elbo_bound()
{
    const auto checks = elbo_bound_suite(50, 10000, 17);
    double worst = -std::numeric_limits<double>::infinity();
    std::size_t missing = 0, complete = 0;
    for (const auto& c : checks) {
        worst = std::max(worst, c.violation());
        (c.scenario == Scenario::missing ? missing : complete) += 1;
    }
    const bool pass = missing == 50 && complete == 50 && worst <= 1e-3;
    report(3, "ELBO below importance-sampled log-marginal", pass,
           std::to_string(missing) + " missing + " + std::to_string(complete) +
               " complete checks, 10^4 samples, max(ELBO - log p) = " + num(worst) + " nats (tol 1e-3)");
}

double cell_mean(const RunResult& r, const std::string& method, Scenario s, std::vector<double>* per_seed)
{
    double total = 0.0;
    for (const auto& sr : r.seeds)
        for (const auto& c : sr.cells)
            if (c.method == method && c.scenario == s && c.accuracy) {
                total += *c.accuracy;
                per_seed->push_back(*c.accuracy);
            }
    return total / static_cast<double>(r.seeds.size());
}

std::string list(const std::vector<double>& v)
{
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i)
        s += (i ? " " : "") + num(v[i]);
    return s;
}

void criteria_reproduction(const fs::path& work)
{
    const ExperimentConfig cfg = parse_experiment_config(json(), {{"output_dir", (work / "xor").string()}});
    note("running the XOR protocol: seeds 0-3, " + std::to_string(cfg.train.epochs) + " epochs, n = " +
         std::to_string(cfg.xor_cfg.n_samples));
    const auto start = Clock::now();
    RunResult run;
    try {
        run = run_experiment(cfg);
    } catch (const std::exception& e) {
        for (int id : {4, 5, 6, 8})
            report(id, "XOR protocol", false, std::string("run failed: ") + e.what());
        return;
    }
    const double secs = seconds_since(start);
    note("run time " + num(secs, 4) + " s (includes the bias stage)");

    // 4: accuracy against baselines and the analytic Bayes accuracy.
    std::vector<double> pm, pc, um, mc;
    const double primo_m = cell_mean(run, "primo", Scenario::missing, &pm);
    const double primo_c = cell_mean(run, "primo", Scenario::complete, &pc);
    const double uni = cell_mean(run, "baseline-unimodal", Scenario::missing, &um);
    const double multi = cell_mean(run, "baseline-multimodal", Scenario::complete, &mc);
    double bayes_m = 0.0, bayes_c = 0.0;
    for (const auto& sr : run.seeds) {
        bayes_m += sr.summary["bayes_accuracy"]["missing"].get<double>();
        bayes_c += sr.summary["bayes_accuracy"]["complete"].get<double>();
    }
    bayes_m /= static_cast<double>(run.seeds.size());
    bayes_c /= static_cast<double>(run.seeds.size());
    const bool pass4 = std::abs(primo_m - uni) <= 0.02 && std::abs(primo_c - multi) <= 0.02 &&
                       std::abs(uni - bayes_m) <= 0.01 && std::abs(multi - bayes_c) <= 0.01 && secs < 600.0;
    report(4, "accuracy parity over 4 seeds", pass4,
           "PRIMO missing " + num(primo_m) + " vs unimodal " + num(uni) + ", PRIMO complete " + num(primo_c) +
               " vs multimodal " + num(multi) + " (tol 0.02); Bayes " + num(bayes_m) + " / " + num(bayes_c) +
               " (baseline tol 0.01); " + num(secs, 4) + " s (limit 600 s)");
    note("per seed: PRIMO missing [" + list(pm) + "], PRIMO complete [" + list(pc) + "], unimodal [" + list(um) +
         "], multimodal [" + list(mc) + "]");

    // 5: predictive impact by region.
    bool pass5 = true;
    std::string detail5;
    for (const auto& sr : run.seeds) {
        const auto [lo, hi] = sr.v_gap_by_region;
        const bool ok = std::isfinite(lo) && std::isfinite(hi) && lo > 0.0 && lo >= 2.0 * std::max(hi, 0.0);
        pass5 = pass5 && ok;
        detail5 += (detail5.empty() ? "" : "; ") + std::string("seed ") + std::to_string(sr.seed) + " " + num(lo) +
                   " vs " + num(hi);
    }
    report(5, "V gap, x_o < -0.25 vs x_o > 0.25, factor 2", pass5, detail5);

    // 6: posterior collapse guard, plus the BN-off ablation.
    bool pass6 = true;
    std::vector<double> kls;
    for (const auto& sr : run.seeds) {
        const double kl = sr.summary["posterior_prior_kl"].get<double>();
        kls.push_back(kl);
        pass6 = pass6 && kl > 0.01;
    }
    report(6, "posterior-to-prior KL with BN", pass6, "per seed [" + list(kls) + "] nats (threshold 0.01)");
    {
        ExperimentConfig ablation = cfg;
        ablation.model.posterior_batch_norm = false;
        const SeedData data = prepare_data(ablation, 0);
        PrimoModel model(model_config_for(ablation, data.schema), 0);
        const auto train = data.train;
        train_primo(model, train, train_config_for(ablation, 0));
        note("ablation, BN disabled (seed 0, diagnostic only): posterior-to-prior KL " +
             num(mean_posterior_prior_kl(model, train)) + " nats");
    }

    // 8: bias on the correct sides of the oracle gap.
    bool pass8 = true;
    std::string detail8;
    for (const auto& sr : run.seeds) {
        for (const auto& [label, b] : {std::pair{"trained", sr.bias.trained}, std::pair{"analytic", sr.bias.analytic}}) {
            if (!b) {
                pass8 = false;
                detail8 += "; seed " + std::to_string(sr.seed) + " " + label + " missing";
                continue;
            }
            pass8 = pass8 && b->correct_sides();
            note(std::string("seed ") + std::to_string(sr.seed) + ", " + label + " oracles: B_missing " +
                 num(b->b_missing) + " < " + num(b->cross_missing) + " " + (b->b_missing < b->cross_missing ? "yes" : "no") +
                 ", B_complete " + num(b->b_complete) + " < " + num(b->cross_complete) + " " +
                 (b->b_complete < b->cross_complete ? "yes" : "no") + ", oracle gap " + num(b->oracle_gap));
        }
    }
    report(8, "bias on the correct sides of the oracle gap, every seed", pass8,
           pass8 ? "all seeds, trained and analytic oracles" : "see the per-seed lines above" + detail8);
}

void bias_diagnostic(const fs::path& work)
{
    // Same protocol for seed 0 with the anchoring/tie regularizer down-weighted.
    const ExperimentConfig cfg = parse_experiment_config(
        json(), {{"train.reg_weight", 0.3}, {"output_dir", (work / "reg-0.3").string()}, {"seeds", json{0}}});
    const SeedData data = prepare_data(cfg, 0);
    const BiasOutput b = bias_stage(cfg, data, 0, seed_dir(cfg.output_dir, 0));
    if (b.analytic)
        note("diagnostic, reg_weight 0.3, seed 0, analytic oracles: B_missing " + num(b.analytic->b_missing) +
             " vs " + num(b.analytic->cross_missing) + ", B_complete " + num(b.analytic->b_complete) + " vs " +
             num(b.analytic->cross_complete));
}

void criterion_dpgmm()
{
    const auto trials = dpgmm_recovery_trials(20, 5);
    std::size_t ok = 0;
    double worst = 0.0;
    for (const auto& t : trials) {
        ok += t.ok(0.05);
        worst = std::max(worst, t.max_weight_error);
    }
    report(7, "DPGMM recovery", ok == trials.size() && trials.size() == 20,
           std::to_string(ok) + "/" + std::to_string(trials.size()) + " trials exact count, worst weight err " +
               num(worst) + " (tol 0.05)");
}

void criterion_determinism(const fs::path& work)
{
    const auto make = [&](const std::string& name) {
        return parse_experiment_config(json(), {{"data.xor.n_samples", 6000},
                                                {"train.epochs", 3},
                                                {"analysis.bayes_samples", 100000},
                                                {"output_dir", (work / name).string()},
                                                {"seeds", json{0, 1}}});
    };
    std::size_t compared = 0, identical = 0;
    try {
        const auto a = make("determinism-a"), b = make("determinism-b");
        run_experiment(a);
        run_experiment(b);
        for (std::uint64_t s : a.seeds)
            for (const char* f : {"records.csv", "clusters.csv", "summary.json", "bias.json"}) {
                ++compared;
                identical += read_text(seed_dir(a.output_dir, s) / f) == read_text(seed_dir(b.output_dir, s) / f);
            }
    } catch (const std::exception& e) {
        report(9, "determinism", false, std::string("run failed: ") + e.what());
        return;
    }
    report(9, "determinism", compared > 0 && identical == compared,
           std::to_string(identical) + "/" + std::to_string(compared) +
               " per-seed output files byte-identical across two runs (2 seeds, reduced size)");
}

} // namespace

int main(int argc, char** argv)
{
    const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance-run");
    fs::remove_all(work);
    fs::create_directories(work);
    const auto start = Clock::now();

    const auto guarded = [](int id, const std::string& name, const auto& fn) {
        try {
            fn();
        } catch (const std::exception& e) {
            report(id, name, false, std::string("threw: ") + e.what());
        }
    };
    guarded(1, "gradient suite", criterion_gradients);
    guarded(2, "closed-form KL and TVD", criterion_closed_form);
    guarded(3, "ELBO bound", criterion_elbo_bound);
    guarded(7, "DPGMM recovery", criterion_dpgmm);
    guarded(9, "determinism", [&] { criterion_determinism(work); });
    guarded(4, "XOR protocol", [&] { criteria_reproduction(work); });
    try {
        bias_diagnostic(work);
    } catch (const std::exception& e) {
        note(std::string("diagnostic failed: ") + e.what());
    }

    std::sort(verdicts.begin(), verdicts.end(), [](const Verdict& a, const Verdict& b) { return a.id < b.id; });
    std::size_t failed = 0;
    std::cout << "\nsummary (" << num(seconds_since(start), 4) << " s)\n";
    for (const auto& v : verdicts) {
        std::cout << "criterion " << v.id << ": " << (v.pass ? "PASS" : "FAIL") << "  " << v.name << '\n';
        failed += !v.pass;
    }
    std::cout << (failed ? std::to_string(failed) + " criterion(s) failed" : std::string("all criteria passed"))
              << std::endl;
    return failed ? 1 : 0;
}
