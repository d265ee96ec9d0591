#include "uac/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>
#include <stdexcept>

namespace uac::harness {

using datasets::LabeledWindow;
using datasets::Scenario;
using diffcore::RngStream;
using nlohmann::json;

datasets::Corpus load_corpus(const DataSource& source, Warnings* warnings)
{
    switch (source.kind) {
    case DataSource::Kind::synthetic: return datasets::synth_generate(source.synth);
    case DataSource::Kind::csv: return datasets::load_canonical_csv(source.path);
    case DataSource::Kind::wisdm: return datasets::load_wisdm(source.path, warnings, source.wisdm_device);
    }
    throw std::logic_error("unhandled data source");
}

PreparedSplit prepare_split(const datasets::Corpus& corpus, const ExperimentConfig& config, Scenario scenario,
                            std::uint64_t seed, Warnings* warnings)
{
    PreparedSplit out;
    out.split = scenario == Scenario::ood ? datasets::split_by_subject(corpus.recordings, config.window, seed, warnings)
                                          : datasets::split_mixed(corpus.recordings, config.window, seed, warnings);
    if (out.split.train.empty() || out.split.validation.empty() || out.split.test.empty())
        throw datasets::DataError("split has an empty partition; sequences may be shorter than the window");
    out.norm = datasets::normalize_split(out.split, config.per_channel_norm);
    return out;
}

model::Architecture architecture_for(const ExperimentConfig& config, const datasets::Corpus& corpus, Method method)
{
    model::Architecture a = config.architecture;
    a.channels = corpus.channel_count();
    a.window = config.window.length;
    a.classes = corpus.class_count();
    a.variance_head = method == Method::uac;
    return a;
}

namespace {

model::TrainConfig run_train_config(const ExperimentConfig& config, std::uint64_t seed)
{
    model::TrainConfig t = config.train;
    t.seed = seed;
    return t;
}

RngStream calibration_stream(std::uint64_t seed)
{
    return RngStream(seed, diffcore::hash_name("calibrate"));
}

RngStream evaluation_stream(std::uint64_t seed)
{
    return RngStream(seed, diffcore::hash_name("evaluate"));
}

bool uses_plain_classifier(Method m)
{
    return m == Method::uac_no_sigma || m == Method::temp_scaling || m == Method::laplace;
}

}  // namespace

Artifact train_method(const ExperimentConfig& config, const datasets::Corpus& corpus, const PreparedSplit& data,
                      Method method, std::uint64_t seed, Warnings* warnings, bool fit_calibrator)
{
    Artifact art{method,
                 model::UacModel(architecture_for(config, corpus, method), seed, config.train.mc_samples),
                 data.norm,
                 corpus.class_names,
                 std::nullopt,
                 std::nullopt,
                 std::nullopt,
                 to_json(config),
                 datasets::to_string(data.split.scenario),
                 seed};
    const auto tc = run_train_config(config, seed);
    if (method == Method::em)
        art.history = baselines::train_em(art.model, data.split, tc, config.em_lambda, config.em_sign, warnings);
    else
        art.history = model::train(art.model, data.split, tc, warnings);
    if (fit_calibrator)
        calibrate(art, config, data.split, warnings);
    return art;
}

void calibrate(Artifact& art, const ExperimentConfig& config, const datasets::DatasetSplit& split, Warnings* warnings)
{
    art.temperature.reset();
    art.posterior.reset();
    if (art.method == Method::temp_scaling) {
        const auto preds = model::predict_windows(art.model, split.validation, calibration_stream(art.seed));
        const std::size_t c = art.model.class_count();
        diffcore::Tensor logits({preds.size(), c});
        std::vector<int> labels;
        for (std::size_t i = 0; i < preds.size(); ++i) {
            std::copy(preds[i].logits.begin(), preds[i].logits.end(), logits.values().begin() + i * c);
            labels.push_back(split.validation[i].label);
        }
        art.temperature = baselines::fit_temperature(logits, labels, warnings).temperature;
    } else if (art.method == Method::laplace) {
        art.posterior =
            baselines::laplace_fit_last_layer(art.model, split.train, config.laplace_tau, config.laplace_samples);
    }
}

std::vector<Prediction> predict(const Artifact& art, const std::vector<LabeledWindow>& windows, const RngStream& rng,
                                Warnings* warnings)
{
    if (art.method == Method::laplace) {
        if (!art.posterior)
            throw std::logic_error("laplace artifact has no posterior; run calibrate first");
        return baselines::laplace_predict_windows(art.model, *art.posterior, windows, rng, warnings);
    }
    auto preds = model::predict_windows(art.model, windows, rng);
    if (art.method == Method::temp_scaling) {
        if (!art.temperature)
            throw std::logic_error("temperature artifact has no temperature; run calibrate first");
        for (auto& p : preds) {
            p.probs = baselines::apply_temperature(p.logits, *art.temperature);
            p.entropy = 0.0;
            for (double v : p.probs)
                if (v > 0.0)
                    p.entropy -= v * std::log(v);
        }
    }
    return preds;
}

namespace {

MetricSet calibrated_metrics(const std::vector<metrics::EvalRecord>& records, std::size_t bins, Warnings* warnings)
{
    MetricSet m;
    m.count = records.size();
    m.accuracy = metrics::accuracy(records);
    m.reliability = metrics::reliability_bins(records, bins);
    m.ece = metrics::ece_from_bins(*m.reliability);
    m.nll = metrics::nll(records, warnings);
    return m;
}

}  // namespace

void score(RunResult& result, const std::vector<LabeledWindow>& windows, const std::vector<Prediction>& preds,
           const std::vector<AggregatorChoice>& aggregators, std::size_t bins)
{
    if (windows.size() != preds.size() || windows.empty())
        throw std::invalid_argument("score: need one prediction per window and at least one window");
    std::vector<metrics::EvalRecord> records;
    for (std::size_t i = 0; i < preds.size(); ++i)
        records.push_back(metrics::EvalRecord::make(preds[i].probs, windows[i].label));
    result.window = calibrated_metrics(records, bins, &result.warnings);

    std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < windows.size(); ++i)
        groups[{windows[i].subject_id, windows[i].sequence_id}].push_back(i);

    for (AggregatorChoice choice : aggregators) {
        const std::string name = to_string(choice);
        if (choice == AggregatorChoice::none) {
            result.sequence[name] = result.window;
            continue;
        }
        const auto mode = aggregation::aggregator_from_string(name);
        std::vector<metrics::EvalRecord> seq;
        std::size_t hits = 0;
        for (const auto& [key, idx] : groups) {
            std::vector<Prediction> members;
            for (std::size_t i : idx) {
                if (windows[i].label != windows[idx[0]].label)
                    throw datasets::DataError("sequence " + key.second + " mixes labels");
                members.push_back(preds[i]);
            }
            const auto sp = aggregation::aggregate(mode, members, &result.warnings);
            const int label = windows[idx[0]].label;
            hits += sp.predicted_label == label;
            if (sp.calibrated)
                seq.push_back(metrics::EvalRecord::make(sp.probs, label));
        }
        if (mode == aggregation::Aggregator::sum_argmax) {
            MetricSet m;
            m.count = groups.size();
            m.accuracy = static_cast<double>(hits) / static_cast<double>(groups.size());
            result.sequence[name] = m;
        } else {
            result.sequence[name] = calibrated_metrics(seq, bins, &result.warnings);
        }
    }
}

void save_checkpoint(const Artifact& art, const std::filesystem::path& path)
{
    diffcore::CheckpointWriter w;
    model::add_to_checkpoint(w, art.model);
    json meta = {{"method", to_string(art.method)},
                 {"class_names", art.class_names},
                 {"norm", {{"mu", art.norm.mu}, {"sigma", art.norm.sigma}}},
                 {"config", art.config},
                 {"scenario", art.scenario},
                 {"seed", art.seed},
                 {"temperature", art.temperature ? json(*art.temperature) : json(nullptr)},
                 {"history", art.history ? model::to_json(*art.history) : json(nullptr)}};
    w.set_meta("artifact", meta);
    if (art.posterior)
        baselines::add_to_checkpoint(w, *art.posterior);
    w.write(path);
}

Artifact load_checkpoint(const std::filesystem::path& path)
{
    const auto ckpt = diffcore::Checkpoint::read(path);
    if (!ckpt.meta().contains("artifact"))
        throw diffcore::CheckpointError(path.string() + ": not an experiment checkpoint (no artifact metadata)");
    const json& m = ckpt.meta().at("artifact");
    Artifact art{method_from_string(m.at("method").get<std::string>()),
                 model::model_from_checkpoint(ckpt),
                 {m.at("norm").at("mu").get<std::vector<double>>(), m.at("norm").at("sigma").get<std::vector<double>>()},
                 m.at("class_names").get<std::vector<std::string>>(),
                 std::nullopt,
                 std::nullopt,
                 std::nullopt,
                 m.at("config"),
                 m.at("scenario").get<std::string>(),
                 m.at("seed").get<std::uint64_t>()};
    if (!m.at("temperature").is_null())
        art.temperature = m.at("temperature").get<double>();
    if (!m.at("history").is_null())
        art.history = model::train_history_from_json(m.at("history"));
    if (ckpt.meta().contains("laplace"))
        art.posterior = baselines::posterior_from_checkpoint(ckpt);
    return art;
}

namespace {

std::vector<std::string> subjects_of(const std::vector<LabeledWindow>& windows)
{
    std::set<std::string> s;
    for (const auto& w : windows)
        s.insert(w.subject_id);
    return {s.begin(), s.end()};
}

void require_disjoint(const RunResult& r)
{
    if (r.scenario != Scenario::ood)
        return;
    std::vector<std::string> shared;
    std::set_intersection(r.train_subjects.begin(), r.train_subjects.end(), r.test_subjects.begin(),
                          r.test_subjects.end(), std::back_inserter(shared));
    if (!shared.empty())
        throw std::logic_error("OOD run (" + to_string(r.method) + ", seed " + std::to_string(r.seed) +
                               ") shares subject " + shared.front() + " between train and test");
}

}  // namespace

void check_subject_disjointness(const CalibrationReport& report)
{
    for (const auto& r : report.runs)
        if (r.ok)
            require_disjoint(r);
}

CalibrationReport run_experiment(const ExperimentConfig& config)
{
    using clock = std::chrono::steady_clock;
    config.validate();
    CalibrationReport report;
    report.config = to_json(config);

    Warnings load_warnings;
    const auto corpus = load_corpus(config.data, &load_warnings);
    report.class_names = corpus.class_names;
    if (!config.checkpoint_dir.empty())
        std::filesystem::create_directories(config.checkpoint_dir);

    for (Scenario scenario : config.scenarios) {
        for (std::uint64_t seed : config.seeds) {
            Warnings split_warnings = load_warnings;
            std::optional<PreparedSplit> data;
            std::string split_error;
            try {
                data = prepare_split(corpus, config, scenario, seed, &split_warnings);
            } catch (const std::exception& e) {
                split_error = std::string("split: ") + e.what();
            }

            // One plain classifier serves uac_no_sigma, temp_scaling and laplace.
            std::optional<Artifact> plain;
            Warnings plain_warnings;
            std::string plain_error;
            for (Method method : config.methods) {
                const auto start = clock::now();
                RunResult r;
                r.method = method;
                r.scenario = scenario;
                r.seed = seed;
                r.warnings = split_warnings;
                try {
                    if (!data)
                        throw std::runtime_error(split_error);
                    r.train_subjects = subjects_of(data->split.train);
                    r.test_subjects = subjects_of(data->split.test);
                    r.train_windows = data->split.train.size();
                    r.test_windows = data->split.test.size();
                    require_disjoint(r);

                    std::optional<Artifact> art;
                    if (uses_plain_classifier(method)) {
                        if (!plain && plain_error.empty()) {
                            try {
                                plain = train_method(config, corpus, *data, Method::uac_no_sigma, seed,
                                                     &plain_warnings);
                            } catch (const std::exception& e) {
                                plain_error = e.what();
                            }
                        }
                        if (!plain)
                            throw std::runtime_error(plain_error);
                        art = *plain;
                        art->method = method;
                        calibrate(*art, config, data->split, &r.warnings);
                        r.warnings.merge(plain_warnings);
                    } else {
                        art = train_method(config, corpus, *data, method, seed, &r.warnings);
                    }
                    r.history = art->history;
                    r.temperature = art->temperature;
                    const auto preds = predict(*art, data->split.test, evaluation_stream(seed), &r.warnings);
                    score(r, data->split.test, preds, config.aggregators, config.bins);
                    if (!config.checkpoint_dir.empty())
                        save_checkpoint(*art, std::filesystem::path(config.checkpoint_dir) /
                                                  (to_string(method) + "_" + datasets::to_string(scenario) +
                                                   "_seed" + std::to_string(seed) + ".uacckpt"));
                } catch (const std::exception& e) {
                    r.ok = false;
                    r.error = e.what();
                    r.window = {};
                    r.sequence.clear();
                }
                r.wall_seconds = std::chrono::duration<double>(clock::now() - start).count();
                report.runs.push_back(std::move(r));
            }
        }
    }
    report.summary = summarize(report.runs, config.aggregators);
    return report;
}

}  // namespace uac::harness
