#pragma once

#include "uac/aggregation.hpp"
#include "uac/baselines.hpp"
#include "uac/datasets.hpp"
#include "uac/metrics.hpp"
#include "uac/model.hpp"
#include "uac/warnings.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace uac::harness {

enum class Method { uac, uac_no_sigma, em, temp_scaling, laplace };
std::string to_string(Method m);
Method method_from_string(const std::string& s);

// Sequence-level prediction rule. `none` scores the per-window predictions
// directly.
enum class AggregatorChoice { entropy_weighted, mean, sum_argmax, none };
std::string to_string(AggregatorChoice a);
AggregatorChoice aggregator_choice_from_string(const std::string& s);

struct DataSource {
    enum class Kind { synthetic, csv, wisdm };
    Kind kind = Kind::synthetic;
    std::string path;  // csv file or wisdm directory
    std::string wisdm_device = "watch";
    datasets::SynthConfig synth;
};

struct ExperimentConfig {
    DataSource data;
    std::vector<datasets::Scenario> scenarios{datasets::Scenario::ood};
    std::vector<Method> methods{Method::uac};
    std::vector<AggregatorChoice> aggregators{AggregatorChoice::entropy_weighted};
    datasets::WindowConfig window;
    bool per_channel_norm = false;
    // channels, window and classes are taken from the data.
    model::Architecture architecture;
    // The seed field is replaced by each run's seed.
    model::TrainConfig train;
    std::size_t bins = metrics::kDefaultBins;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    double em_lambda = 0.2;
    baselines::EmSign em_sign = baselines::EmSign::subtract;
    double laplace_tau = 1.0;
    std::size_t laplace_samples = 100;
    // When set, one checkpoint per (method, scenario, seed) is written here.
    std::string checkpoint_dir;

    // Throws std::invalid_argument.
    void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& c);
// Missing keys keep their defaults; unknown keys are rejected.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);

struct MetricSet {
    std::size_t count = 0;
    double accuracy = 0.0;
    // Absent for scores that are not probabilities (sum_argmax).
    std::optional<double> ece;
    std::optional<double> nll;
    std::optional<metrics::ReliabilityBins> reliability;

    friend bool operator==(const MetricSet&, const MetricSet&) = default;
};

struct RunResult {
    Method method = Method::uac;
    datasets::Scenario scenario = datasets::Scenario::ood;
    std::uint64_t seed = 0;
    bool ok = true;
    std::string error;
    MetricSet window;
    // Keyed by aggregator name, including "none".
    std::map<std::string, MetricSet> sequence;
    std::vector<std::string> train_subjects;
    std::vector<std::string> test_subjects;
    std::size_t train_windows = 0;
    std::size_t test_windows = 0;
    std::optional<model::TrainHistory> history;
    std::optional<double> temperature;
    Warnings warnings;
    // Kept out of the report body so that reports are reproducible byte for byte.
    double wall_seconds = 0.0;
};

struct SummaryStat {
    std::size_t n = 0;
    double mean = 0.0;
    // Sample standard deviation; present with two or more seeds.
    std::optional<double> std;

    friend bool operator==(const SummaryStat&, const SummaryStat&) = default;
};

struct SummaryRow {
    Method method = Method::uac;
    datasets::Scenario scenario = datasets::Scenario::ood;
    std::string level;   // "window" or an aggregator name
    std::string metric;  // accuracy, ece or nll
    SummaryStat stat;
    std::size_t failed_seeds = 0;

    friend bool operator==(const SummaryRow&, const SummaryRow&) = default;
};

struct CalibrationReport {
    nlohmann::json config;
    std::vector<std::string> class_names;
    std::vector<RunResult> runs;
    std::vector<SummaryRow> summary;
};

SummaryStat summarize_values(const std::vector<double>& values);
std::vector<SummaryRow> summarize(const std::vector<RunResult>& runs, const std::vector<AggregatorChoice>& aggregators);

datasets::Corpus load_corpus(const DataSource& source, Warnings* warnings = nullptr);

struct PreparedSplit {
    datasets::DatasetSplit split;
    datasets::NormStats norm;
};

PreparedSplit prepare_split(const datasets::Corpus& corpus, const ExperimentConfig& config,
                            datasets::Scenario scenario, std::uint64_t seed, Warnings* warnings = nullptr);

// A trained step-1 model plus whatever calibrator its method needs.
struct Artifact {
    Method method = Method::uac;
    model::UacModel model;
    datasets::NormStats norm;
    std::vector<std::string> class_names;
    std::optional<double> temperature;
    std::optional<baselines::LaplacePosterior> posterior;
    std::optional<model::TrainHistory> history;
    nlohmann::json config;
    std::string scenario;
    std::uint64_t seed = 0;
};

model::Architecture architecture_for(const ExperimentConfig& config, const datasets::Corpus& corpus, Method method);

// Step 1 for one method on a prepared split. With fit_calibrator set, the
// temperature or Laplace posterior is fitted as well.
Artifact train_method(const ExperimentConfig& config, const datasets::Corpus& corpus, const PreparedSplit& data,
                      Method method, std::uint64_t seed, Warnings* warnings = nullptr, bool fit_calibrator = true);
// Fits the method's calibrator on an artifact whose model is already trained.
void calibrate(Artifact& artifact, const ExperimentConfig& config, const datasets::DatasetSplit& split,
               Warnings* warnings = nullptr);

// Per-window predictions on normalized windows; window i draws from rng.fork(i).
std::vector<Prediction> predict(const Artifact& artifact, const std::vector<datasets::LabeledWindow>& windows,
                                const diffcore::RngStream& rng, Warnings* warnings = nullptr);

// Window metrics and one sequence-level metric set per aggregator.
void score(RunResult& result, const std::vector<datasets::LabeledWindow>& windows,
           const std::vector<Prediction>& predictions, const std::vector<AggregatorChoice>& aggregators,
           std::size_t bins);

void save_checkpoint(const Artifact& artifact, const std::filesystem::path& path);
Artifact load_checkpoint(const std::filesystem::path& path);

// Runs every (scenario, seed, method). A failing run is recorded with its
// error and left out of the summary.
CalibrationReport run_experiment(const ExperimentConfig& config);

// Throws if an OOD run shares a subject between train and test.
void check_subject_disjointness(const CalibrationReport& report);

// One JSON object per line: a "config" record, one "seed_result" per run and
// one "summary" per summary row.
std::string to_json_lines(const CalibrationReport& report);
CalibrationReport parse_json_lines(const std::string& text);
// One row per (method, scenario) with <level>_<metric>_{mean,std} columns.
std::string to_csv_summary(const CalibrationReport& report);

enum class ReportFormat { json_lines, csv_summary };
// Also writes "<path>.timing.json" with per-run wall-clock seconds.
void emit_report(const CalibrationReport& report, const std::filesystem::path& path, ReportFormat format);

bool same_report(const CalibrationReport& a, const CalibrationReport& b);

}  // namespace uac::harness
