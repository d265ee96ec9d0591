#include "fixtures.hpp"
#include "uac/harness.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace uac;
using namespace uac::harness;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_config()
{
    ExperimentConfig c;
    c.data.synth = fixture::small_synth(2);
    c.scenarios = {datasets::Scenario::ood, datasets::Scenario::id};
    c.methods = {Method::uac, Method::uac_no_sigma, Method::em, Method::temp_scaling, Method::laplace};
    c.aggregators = {AggregatorChoice::entropy_weighted, AggregatorChoice::mean, AggregatorChoice::sum_argmax,
                     AggregatorChoice::none};
    c.window = {20, 5};
    c.architecture = fixture::small_arch();
    c.train.learning_rate = 3e-3;
    c.train.max_epochs = 3;
    c.train.batch_size = 16;
    c.train.mc_samples = 10;
    c.laplace_samples = 20;
    c.seeds = {1, 2};
    return c;
}

fs::path temp_dir(const std::string& name)
{
    auto p = fs::temp_directory_path() / ("uac_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("experiment config round trip")
{
    const auto c = tiny_config();
    const auto back = experiment_config_from_json(to_json(c));
    CHECK(to_json(back) == to_json(c));
    CHECK(back.methods == c.methods);
    CHECK(back.architecture == c.architecture);

    auto j = to_json(c);
    j["colour"] = 1;
    CHECK_THROWS_AS(experiment_config_from_json(j), std::invalid_argument);
    j = to_json(c);
    j["seeds"] = nlohmann::json::array();
    CHECK_THROWS_AS(experiment_config_from_json(j), std::invalid_argument);
    j = to_json(c);
    j["methods"] = {"focal"};
    CHECK_THROWS_AS(experiment_config_from_json(j), std::invalid_argument);
    CHECK(experiment_config_from_json(nlohmann::json::object()).seeds.size() == 5);
}

TEST_CASE("mean and sample std across seeds")
{
    const auto s = summarize_values({0.7, 0.8, 0.9});
    CHECK(s.n == 3);
    CHECK(s.mean == doctest::Approx(0.8).epsilon(1e-15));
    REQUIRE(s.std.has_value());
    CHECK(*s.std == doctest::Approx(0.1).epsilon(1e-12));
    CHECK_FALSE(summarize_values({0.5}).std.has_value());
    const auto t = summarize_values({0.75, 0.66, 0.84});
    CHECK(t.mean == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(*t.std == doctest::Approx(0.09).epsilon(1e-12));
}

TEST_CASE("full grid on a tiny synthetic corpus")
{
    const auto config = tiny_config();
    const auto report = run_experiment(config);
    REQUIRE(report.runs.size() == 2 * 2 * 5);
    CHECK(report.class_names.size() == 3);
    for (const auto& r : report.runs) {
        CAPTURE(to_string(r.method));
        CHECK(r.ok);
        CHECK(r.error.empty());
        CHECK(r.window.count == r.test_windows);
        CHECK(r.window.ece.has_value());
        CHECK(r.window.nll.has_value());
        REQUIRE(r.window.reliability.has_value());
        CHECK(r.window.reliability->bins.size() == 15);
        CHECK(r.sequence.at("none") == r.window);
        CHECK(r.sequence.at("entropy_weighted").ece.has_value());
        CHECK_FALSE(r.sequence.at("sum_argmax").ece.has_value());
        CHECK_FALSE(r.sequence.at("sum_argmax").nll.has_value());
        CHECK(r.history.has_value());
        CHECK(r.temperature.has_value() == (r.method == Method::temp_scaling));
        if (r.scenario == datasets::Scenario::ood)
            for (const auto& s : r.test_subjects)
                CHECK(std::find(r.train_subjects.begin(), r.train_subjects.end(), s) == r.train_subjects.end());
    }

    // uac_no_sigma is the plain classifier the post-hoc baselines calibrate.
    auto find = [&](Method m, std::uint64_t seed) -> const RunResult& {
        for (const auto& r : report.runs)
            if (r.method == m && r.seed == seed && r.scenario == datasets::Scenario::ood)
                return r;
        throw std::logic_error("missing run");
    };
    CHECK(*find(Method::uac_no_sigma, 1).history == *find(Method::temp_scaling, 1).history);
    CHECK(*find(Method::uac_no_sigma, 1).history == *find(Method::laplace, 1).history);

    // Summary arithmetic matches the per-seed values.
    for (const auto& row : report.summary) {
        std::vector<double> values;
        for (const auto& r : report.runs) {
            if (r.method != row.method || r.scenario != row.scenario)
                continue;
            const MetricSet& m = row.level == "window" ? r.window : r.sequence.at(row.level);
            const auto v = row.metric == "accuracy" ? std::optional<double>(m.accuracy)
                                                    : (row.metric == "ece" ? m.ece : m.nll);
            values.push_back(*v);
        }
        REQUIRE(values.size() == 2);
        const double mean = (values[0] + values[1]) / 2;
        CHECK(row.stat.mean == doctest::Approx(mean).epsilon(1e-12));
        CHECK(*row.stat.std == doctest::Approx(std::abs(values[0] - values[1]) / std::sqrt(2.0)).epsilon(1e-9));
    }

    SUBCASE("reports are reproducible and round-trip")
    {
        const auto again = run_experiment(config);
        CHECK(to_json_lines(again) == to_json_lines(report));
        const auto parsed = parse_json_lines(to_json_lines(report));
        CHECK(same_report(parsed, report));
        CHECK(parsed.runs.size() == report.runs.size());
        CHECK(parsed.summary == report.summary);
        CHECK(parsed.runs[3].window == report.runs[3].window);
    }
    SUBCASE("csv summary has one row per method and scenario")
    {
        const std::string csv = to_csv_summary(report);
        CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 5 * 2);
        CHECK(csv.rfind("method,scenario,seeds,failed_seeds,window_accuracy_mean,window_accuracy_std", 0) == 0);
    }
    SUBCASE("emit writes the report and a timing sidecar")
    {
        const auto dir = temp_dir("emit");
        emit_report(report, dir / "r.jsonl", ReportFormat::json_lines);
        emit_report(report, dir / "r.csv", ReportFormat::csv_summary);
        CHECK(slurp(dir / "r.jsonl") == to_json_lines(report));
        CHECK(slurp(dir / "r.csv") == to_csv_summary(report));
        const auto timing = nlohmann::json::parse(slurp(dir / "r.jsonl.timing.json"));
        CHECK(timing.at("runs").size() == report.runs.size());
        CHECK_THROWS(emit_report(report, dir / "missing" / "r.jsonl", ReportFormat::json_lines));
    }
    SUBCASE("subject overlap is caught when the report is written")
    {
        auto bad = report;
        for (auto& r : bad.runs)
            if (r.scenario == datasets::Scenario::ood) {
                r.test_subjects.push_back(r.train_subjects.front());
                std::sort(r.test_subjects.begin(), r.test_subjects.end());
                break;
            }
        CHECK_THROWS(check_subject_disjointness(bad));
        CHECK_THROWS(emit_report(bad, temp_dir("overlap") / "r.jsonl", ReportFormat::json_lines));
    }
}

TEST_CASE("failed seeds are recorded, not fatal")
{
    auto config = tiny_config();
    config.methods = {Method::uac};
    config.scenarios = {datasets::Scenario::ood};
    config.window = {1000, 5};
    const auto report = run_experiment(config);
    REQUIRE(report.runs.size() == 2);
    for (const auto& r : report.runs) {
        CHECK_FALSE(r.ok);
        CHECK(r.error.find("split") != std::string::npos);
    }
    CHECK(report.summary.empty());
    CHECK(to_csv_summary(report).find("uac,ood,2,2") != std::string::npos);

    config.data.kind = DataSource::Kind::csv;
    config.data.path = "/nonexistent/corpus.csv";
    CHECK_THROWS(run_experiment(config));
}

TEST_CASE("artifact checkpoints")
{
    auto config = tiny_config();
    config.seeds = {3};
    config.scenarios = {datasets::Scenario::ood};
    const auto corpus = load_corpus(config.data);
    const auto data = prepare_split(corpus, config, datasets::Scenario::ood, 3);
    const auto dir = temp_dir("ckpt");
    for (Method m : config.methods) {
        CAPTURE(to_string(m));
        const auto art = train_method(config, corpus, data, m, 3);
        const auto path = dir / (to_string(m) + ".uacckpt");
        save_checkpoint(art, path);
        const auto back = load_checkpoint(path);
        save_checkpoint(back, dir / "again.uacckpt");
        CHECK(slurp(path) == slurp(dir / "again.uacckpt"));
        CHECK(back.norm == art.norm);
        CHECK(back.class_names == art.class_names);
        CHECK(back.temperature == art.temperature);
        CHECK(*back.history == *art.history);

        const diffcore::RngStream rng(5);
        const auto p1 = predict(art, data.split.test, rng), p2 = predict(back, data.split.test, rng);
        for (std::size_t i = 0; i < p1.size(); ++i)
            CHECK(p1[i].probs == p2[i].probs);

        const std::string bytes = slurp(path);
        std::ofstream(dir / "cut.uacckpt", std::ios::binary) << bytes.substr(0, bytes.size() - 9);
        CHECK_THROWS_AS(load_checkpoint(dir / "cut.uacckpt"), diffcore::CheckpointError);
    }
}

TEST_CASE("the no-sigma ablation shares initialization and draws with UAC")
{
    const auto config = tiny_config();
    const auto corpus = load_corpus(config.data);
    const model::UacModel with(architecture_for(config, corpus, Method::uac), 9);
    const model::UacModel without(architecture_for(config, corpus, Method::uac_no_sigma), 9);
    CHECK(with.has_variance_head());
    CHECK_FALSE(without.has_variance_head());
    const auto a = with.encoder().parameters(), b = without.encoder().parameters();
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(a[i]->value == b[i]->value);
    const auto c = with.classifier().parameters(), d = without.classifier().parameters();
    for (std::size_t i = 0; i < c.size(); ++i)
        CHECK(c[i]->value == d[i]->value);

    // With the variance head silenced, UAC's training path is the ablation's.
    auto data = prepare_split(corpus, config, datasets::Scenario::ood, 9);
    model::UacModel forced = with;
    const model::BatchObjective sigma_zero = [&](model::UacModel& m, const diffcore::Tensor& x,
                                                 std::span<const int> y, diffcore::RngStream& r, Warnings* w) {
        model::UacModel view(without.architecture(), m.encoder(), m.classifier(), diffcore::Network{},
                             m.mc_samples());
        const double loss = model::uac_loss(view, x, y, r, w);
        m.encoder() = view.encoder();
        m.classifier() = view.classifier();
        return loss;
    };
    model::TrainConfig tc = config.train;
    tc.seed = 9;
    model::UacModel plain = without;
    const auto h1 = model::train(forced, data.split, tc, nullptr, sigma_zero);
    const auto h2 = model::train(plain, data.split, tc);
    CHECK(h1.epochs.size() == h2.epochs.size());
    for (std::size_t i = 0; i < h1.epochs.size(); ++i)
        CHECK(h1.epochs[i].train_loss == h2.epochs[i].train_loss);
}
