// Command-line front end: synth, train, calibrate, evaluate, run, report.

#include "uac/harness.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using namespace uac;
using nlohmann::json;

json read_json_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot open config " + path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(path + ": " + e.what());
    }
}

std::string read_text(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Flags that override fields of the JSON config.
struct Overrides {
    std::string config_path;
    std::string csv, wisdm;
    std::vector<std::string> methods, scenarios, aggregators;
    std::vector<std::uint64_t> seeds;
    std::optional<std::size_t> window, stride, epochs, batch, mc_samples, bins;
    std::optional<double> lr, lambda, tau;
    std::optional<std::string> checkpoint_dir;

    void attach(CLI::App* app)
    {
        app->add_option("-c,--config", config_path, "JSON experiment config");
        app->add_option("--csv-data", csv, "canonical CSV data file");
        app->add_option("--wisdm", wisdm, "WISDM raw data directory");
        app->add_option("--method", methods, "uac, uac_no_sigma, em, temp_scaling, laplace");
        app->add_option("--scenario", scenarios, "ood or id");
        app->add_option("--aggregator", aggregators, "entropy_weighted, mean, sum_argmax, none");
        app->add_option("--seed", seeds, "run seeds");
        app->add_option("--window", window, "window length m");
        app->add_option("--stride", stride, "window stride");
        app->add_option("--epochs", epochs, "maximum epochs");
        app->add_option("--batch-size", batch, "mini-batch size");
        app->add_option("--lr", lr, "initial learning rate");
        app->add_option("--mc-samples", mc_samples, "Monte Carlo samples T");
        app->add_option("--bins", bins, "ECE bin count");
        app->add_option("--em-lambda", lambda, "entropy-maximization weight");
        app->add_option("--laplace-tau", tau, "Laplace prior precision");
        app->add_option("--checkpoint-dir", checkpoint_dir, "write per-run checkpoints here");
    }

    harness::ExperimentConfig build() const
    {
        json j = config_path.empty() ? json::object() : read_json_file(config_path);
        if (!csv.empty())
            j["data"] = {{"kind", "csv"}, {"path", csv}};
        if (!wisdm.empty())
            j["data"] = {{"kind", "wisdm"}, {"path", wisdm}};
        if (!methods.empty())
            j["methods"] = methods;
        if (!scenarios.empty())
            j["scenarios"] = scenarios;
        if (!aggregators.empty())
            j["aggregators"] = aggregators;
        if (!seeds.empty())
            j["seeds"] = seeds;
        if (window)
            j["window"]["length"] = *window;
        if (stride)
            j["window"]["stride"] = *stride;
        if (epochs)
            j["train"]["max_epochs"] = *epochs;
        if (batch)
            j["train"]["batch_size"] = *batch;
        if (lr)
            j["train"]["learning_rate"] = *lr;
        if (mc_samples)
            j["train"]["mc_samples"] = *mc_samples;
        if (bins)
            j["bins"] = *bins;
        if (lambda)
            j["em"]["lambda"] = *lambda;
        if (tau)
            j["laplace"]["tau"] = *tau;
        if (checkpoint_dir)
            j["checkpoint_dir"] = *checkpoint_dir;
        return harness::experiment_config_from_json(j);
    }
};

// Rebuilds the split an artifact was trained on and checks it still matches.
harness::PreparedSplit rebuild_split(const harness::Artifact& art, harness::ExperimentConfig& config,
                                     datasets::Corpus& corpus, Warnings* w)
{
    config = harness::experiment_config_from_json(art.config);
    corpus = harness::load_corpus(config.data, w);
    auto data = harness::prepare_split(corpus, config, datasets::scenario_from_string(art.scenario), art.seed, w);
    if (!(data.norm == art.norm))
        throw std::runtime_error("normalization statistics differ from the checkpoint; the data has changed");
    return data;
}

void print_summary(const harness::CalibrationReport& report)
{
    for (const auto& s : report.summary) {
        if (s.level == "none")
            continue;
        std::cout << harness::to_string(s.method) << " " << datasets::to_string(s.scenario) << " " << s.level << " "
                  << s.metric << " " << s.stat.mean;
        if (s.stat.std)
            std::cout << " +- " << *s.stat.std;
        std::cout << " (n=" << s.stat.n << ")\n";
    }
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Uncertainty-aware calibrated IMU classification"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "write a synthetic corpus as canonical CSV");
    datasets::SynthConfig sc;
    std::string synth_out;
    synth->add_option("-o,--out", synth_out, "output CSV")->required();
    synth->add_option("--classes", sc.classes);
    synth->add_option("--subjects", sc.subjects);
    synth->add_option("--sequences", sc.sequences_per_subject, "sequences per subject");
    synth->add_option("--length", sc.length, "samples per sequence");
    synth->add_option("--channels", sc.channels);
    synth->add_option("--noise", sc.noise);
    synth->add_option("--subject-shift", sc.subject_shift);
    synth->add_option("--seed", sc.seed);

    // train
    Overrides train_ov;
    std::string train_out;
    auto* train = app.add_subcommand("train", "train one step-1 model and write a checkpoint");
    train_ov.attach(train);
    train->add_option("-o,--out", train_out, "checkpoint path")->required();

    // calibrate
    std::string cal_in, cal_out;
    std::optional<double> cal_tau;
    auto* cal = app.add_subcommand("calibrate", "fit the temperature or Laplace posterior of a checkpoint");
    cal->add_option("-i,--in", cal_in, "checkpoint")->required();
    cal->add_option("-o,--out", cal_out, "output checkpoint (default: overwrite)");
    cal->add_option("--laplace-tau", cal_tau, "Laplace prior precision");

    // evaluate
    std::string eval_in, eval_out;
    auto* eval = app.add_subcommand("evaluate", "score a checkpoint on its test partition");
    eval->add_option("-i,--in", eval_in, "checkpoint")->required();
    eval->add_option("-o,--out", eval_out, "json-lines report (default: stdout)");

    // run
    Overrides run_ov;
    std::string run_out, run_csv;
    auto* run = app.add_subcommand("run", "run the full experiment grid");
    run_ov.attach(run);
    run->add_option("-o,--out", run_out, "json-lines report")->required();
    run->add_option("--csv", run_csv, "csv summary");

    // report
    std::string rep_in, rep_csv;
    auto* rep = app.add_subcommand("report", "summarize a json-lines report");
    rep->add_option("-i,--in", rep_in, "json-lines report")->required();
    rep->add_option("--csv", rep_csv, "write the csv summary here");

    std::string command = "uac";
    try {
        app.parse(argc, argv);
        command = app.get_subcommands().front()->get_name();

        if (*synth) {
            datasets::save_canonical_csv(datasets::synth_generate(sc), synth_out);
        } else if (*train) {
            auto config = train_ov.build();
            if (config.methods.size() != 1 || config.scenarios.size() != 1 || config.seeds.size() != 1)
                throw std::invalid_argument("train needs exactly one method, scenario and seed");
            Warnings w;
            const auto corpus = harness::load_corpus(config.data, &w);
            const auto data = harness::prepare_split(corpus, config, config.scenarios[0], config.seeds[0], &w);
            const auto art =
                harness::train_method(config, corpus, data, config.methods[0], config.seeds[0], &w, false);
            harness::save_checkpoint(art, train_out);
            std::cout << json{{"checkpoint", train_out}, {"history", model::to_json(*art.history)},
                              {"warnings", w.counts()}}
                             .dump()
                      << "\n";
        } else if (*cal) {
            auto art = harness::load_checkpoint(cal_in);
            harness::ExperimentConfig config;
            datasets::Corpus corpus;
            Warnings w;
            const auto data = rebuild_split(art, config, corpus, &w);
            if (cal_tau) {
                config.laplace_tau = *cal_tau;
                art.config = harness::to_json(config);
            }
            harness::calibrate(art, config, data.split, &w);
            harness::save_checkpoint(art, cal_out.empty() ? cal_in : cal_out);
            json out = {{"method", harness::to_string(art.method)}, {"warnings", w.counts()}};
            if (art.temperature)
                out["temperature"] = *art.temperature;
            std::cout << out.dump() << "\n";
        } else if (*eval) {
            const auto art = harness::load_checkpoint(eval_in);
            harness::ExperimentConfig config;
            datasets::Corpus corpus;
            harness::CalibrationReport report;
            harness::RunResult r;
            r.method = art.method;
            r.scenario = datasets::scenario_from_string(art.scenario);
            r.seed = art.seed;
            const auto data = rebuild_split(art, config, corpus, &r.warnings);
            for (const auto& win : data.split.train)
                r.train_subjects.push_back(win.subject_id);
            std::sort(r.train_subjects.begin(), r.train_subjects.end());
            r.train_subjects.erase(std::unique(r.train_subjects.begin(), r.train_subjects.end()),
                                   r.train_subjects.end());
            for (const auto& win : data.split.test)
                r.test_subjects.push_back(win.subject_id);
            std::sort(r.test_subjects.begin(), r.test_subjects.end());
            r.test_subjects.erase(std::unique(r.test_subjects.begin(), r.test_subjects.end()), r.test_subjects.end());
            r.train_windows = data.split.train.size();
            r.test_windows = data.split.test.size();
            r.history = art.history;
            r.temperature = art.temperature;
            const auto preds = harness::predict(art, data.split.test,
                                                diffcore::RngStream(art.seed, diffcore::hash_name("evaluate")),
                                                &r.warnings);
            harness::score(r, data.split.test, preds, config.aggregators, config.bins);
            report.config = art.config;
            report.class_names = art.class_names;
            report.runs.push_back(r);
            report.summary = harness::summarize(report.runs, config.aggregators);
            if (eval_out.empty()) {
                harness::check_subject_disjointness(report);
                std::cout << harness::to_json_lines(report);
            } else {
                harness::emit_report(report, eval_out, harness::ReportFormat::json_lines);
            }
        } else if (*run) {
            const auto config = run_ov.build();
            const auto report = harness::run_experiment(config);
            harness::emit_report(report, run_out, harness::ReportFormat::json_lines);
            if (!run_csv.empty())
                harness::emit_report(report, run_csv, harness::ReportFormat::csv_summary);
            print_summary(report);
            for (const auto& r : report.runs)
                if (!r.ok)
                    std::cerr << json{{"failed_run",
                                       {{"method", harness::to_string(r.method)},
                                        {"scenario", datasets::to_string(r.scenario)},
                                        {"seed", r.seed},
                                        {"error", r.error}}}}
                                     .dump()
                              << "\n";
        } else if (*rep) {
            const auto report = harness::parse_json_lines(read_text(rep_in));
            if (!rep_csv.empty())
                harness::emit_report(report, rep_csv, harness::ReportFormat::csv_summary);
            print_summary(report);
        }
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << json{{"error", {{"command", command}, {"message", e.what()}}}}.dump() << "\n";
        return 1;
    }
    return 0;
}
