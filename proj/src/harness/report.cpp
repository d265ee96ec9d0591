#include "uac/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace uac::harness {

using nlohmann::json;

SummaryStat summarize_values(const std::vector<double>& values)
{
    SummaryStat s;
    s.n = values.size();
    if (values.empty())
        return s;
    double sum = 0.0;
    for (double v : values)
        sum += v;
    s.mean = sum / static_cast<double>(values.size());
    if (values.size() >= 2) {
        double ss = 0.0;
        for (double v : values)
            ss += (v - s.mean) * (v - s.mean);
        s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return s;
}

namespace {

std::vector<std::string> levels_for(const std::vector<AggregatorChoice>& aggregators)
{
    std::vector<std::string> out{"window"};
    for (auto a : aggregators)
        out.push_back(to_string(a));
    return out;
}

const MetricSet* level_of(const RunResult& r, const std::string& level)
{
    if (level == "window")
        return &r.window;
    auto it = r.sequence.find(level);
    return it == r.sequence.end() ? nullptr : &it->second;
}

std::optional<double> metric_of(const MetricSet& m, const std::string& metric)
{
    if (metric == "accuracy")
        return m.accuracy;
    if (metric == "ece")
        return m.ece;
    return m.nll;
}

template <class T>
std::vector<T> unique_in_order(const std::vector<RunResult>& runs, T RunResult::*field)
{
    std::vector<T> out;
    for (const auto& r : runs)
        if (std::find(out.begin(), out.end(), r.*field) == out.end())
            out.push_back(r.*field);
    return out;
}

}  // namespace

std::vector<SummaryRow> summarize(const std::vector<RunResult>& runs, const std::vector<AggregatorChoice>& aggregators)
{
    std::vector<SummaryRow> rows;
    for (Method method : unique_in_order(runs, &RunResult::method)) {
        for (datasets::Scenario scenario : unique_in_order(runs, &RunResult::scenario)) {
            std::size_t failed = 0;
            bool any = false;
            for (const auto& r : runs)
                if (r.method == method && r.scenario == scenario) {
                    any = true;
                    failed += !r.ok;
                }
            if (!any)
                continue;
            for (const auto& level : levels_for(aggregators)) {
                for (const char* metric : {"accuracy", "ece", "nll"}) {
                    std::vector<double> values;
                    for (const auto& r : runs) {
                        if (r.method != method || r.scenario != scenario || !r.ok)
                            continue;
                        if (const MetricSet* m = level_of(r, level))
                            if (auto v = metric_of(*m, metric))
                                values.push_back(*v);
                    }
                    if (values.empty())
                        continue;
                    rows.push_back({method, scenario, level, metric, summarize_values(values), failed});
                }
            }
        }
    }
    return rows;
}

namespace {

json opt(const std::optional<double>& v)
{
    return v ? json(*v) : json(nullptr);
}

std::optional<double> opt_from(const json& j)
{
    if (j.is_null())
        return std::nullopt;
    return j.get<double>();
}

json metric_json(const MetricSet& m)
{
    json rel = nullptr;
    if (m.reliability) {
        json bins = json::array();
        for (const auto& b : m.reliability->bins)
            bins.push_back({{"count", b.count}, {"confidence", b.confidence}, {"accuracy", b.accuracy}});
        rel = {{"total", m.reliability->total}, {"bins", bins}};
    }
    return {{"count", m.count}, {"accuracy", m.accuracy}, {"ece", opt(m.ece)}, {"nll", opt(m.nll)}, {"reliability", rel}};
}

MetricSet metric_from(const json& j)
{
    MetricSet m;
    m.count = j.at("count").get<std::size_t>();
    m.accuracy = j.at("accuracy").get<double>();
    m.ece = opt_from(j.at("ece"));
    m.nll = opt_from(j.at("nll"));
    if (!j.at("reliability").is_null()) {
        metrics::ReliabilityBins rb;
        rb.total = j.at("reliability").at("total").get<std::size_t>();
        for (const auto& b : j.at("reliability").at("bins"))
            rb.bins.push_back({b.at("count").get<std::size_t>(), b.at("confidence").get<double>(),
                               b.at("accuracy").get<double>()});
        m.reliability = rb;
    }
    return m;
}

json run_json(const RunResult& r)
{
    json seq = json::object();
    for (const auto& [k, m] : r.sequence)
        seq[k] = metric_json(m);
    return {{"record", "seed_result"},
            {"method", to_string(r.method)},
            {"scenario", datasets::to_string(r.scenario)},
            {"seed", r.seed},
            {"ok", r.ok},
            {"error", r.error},
            {"window", metric_json(r.window)},
            {"sequence", seq},
            {"train_subjects", r.train_subjects},
            {"test_subjects", r.test_subjects},
            {"train_windows", r.train_windows},
            {"test_windows", r.test_windows},
            {"history", r.history ? model::to_json(*r.history) : json(nullptr)},
            {"temperature", opt(r.temperature)},
            {"warnings", r.warnings.counts()}};
}

RunResult run_from(const json& j)
{
    RunResult r;
    r.method = method_from_string(j.at("method").get<std::string>());
    r.scenario = datasets::scenario_from_string(j.at("scenario").get<std::string>());
    r.seed = j.at("seed").get<std::uint64_t>();
    r.ok = j.at("ok").get<bool>();
    r.error = j.at("error").get<std::string>();
    r.window = metric_from(j.at("window"));
    for (const auto& [k, m] : j.at("sequence").items())
        r.sequence[k] = metric_from(m);
    r.train_subjects = j.at("train_subjects").get<std::vector<std::string>>();
    r.test_subjects = j.at("test_subjects").get<std::vector<std::string>>();
    r.train_windows = j.at("train_windows").get<std::size_t>();
    r.test_windows = j.at("test_windows").get<std::size_t>();
    if (!j.at("history").is_null())
        r.history = model::train_history_from_json(j.at("history"));
    r.temperature = opt_from(j.at("temperature"));
    for (const auto& [k, n] : j.at("warnings").items())
        r.warnings.add(k, n.get<std::size_t>());
    return r;
}

json summary_json(const SummaryRow& s)
{
    return {{"record", "summary"},
            {"method", to_string(s.method)},
            {"scenario", datasets::to_string(s.scenario)},
            {"level", s.level},
            {"metric", s.metric},
            {"n", s.stat.n},
            {"mean", s.stat.mean},
            {"std", opt(s.stat.std)},
            {"failed_seeds", s.failed_seeds}};
}

SummaryRow summary_from(const json& j)
{
    SummaryRow s;
    s.method = method_from_string(j.at("method").get<std::string>());
    s.scenario = datasets::scenario_from_string(j.at("scenario").get<std::string>());
    s.level = j.at("level").get<std::string>();
    s.metric = j.at("metric").get<std::string>();
    s.stat.n = j.at("n").get<std::size_t>();
    s.stat.mean = j.at("mean").get<double>();
    s.stat.std = opt_from(j.at("std"));
    s.failed_seeds = j.at("failed_seeds").get<std::size_t>();
    return s;
}

std::string number(double v)
{
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

void write_file(const std::filesystem::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error("cannot write report to " + path.string());
    out << text;
    if (!out)
        throw std::runtime_error("failed while writing " + path.string());
}

}  // namespace

std::string to_json_lines(const CalibrationReport& report)
{
    std::string out = json{{"record", "config"},
                           {"config", report.config},
                           {"class_names", report.class_names},
                           {"run_count", report.runs.size()}}
                          .dump() +
                      "\n";
    for (const auto& r : report.runs)
        out += run_json(r).dump() + "\n";
    for (const auto& s : report.summary)
        out += summary_json(s).dump() + "\n";
    return out;
}

CalibrationReport parse_json_lines(const std::string& text)
{
    CalibrationReport report;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    bool seen_config = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty())
            continue;
        try {
            const json j = json::parse(line);
            const std::string kind = j.at("record").get<std::string>();
            if (kind == "config") {
                report.config = j.at("config");
                report.class_names = j.at("class_names").get<std::vector<std::string>>();
                seen_config = true;
            } else if (kind == "seed_result") {
                report.runs.push_back(run_from(j));
            } else if (kind == "summary") {
                report.summary.push_back(summary_from(j));
            } else {
                throw std::invalid_argument("unknown record type '" + kind + "'");
            }
        } catch (const std::exception& e) {
            throw std::invalid_argument("report line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (!seen_config)
        throw std::invalid_argument("report has no config record");
    return report;
}

std::string to_csv_summary(const CalibrationReport& report)
{
    std::vector<AggregatorChoice> aggregators;
    if (report.config.contains("aggregators"))
        for (const auto& a : report.config.at("aggregators"))
            aggregators.push_back(aggregator_choice_from_string(a.get<std::string>()));
    const auto levels = levels_for(aggregators);
    const char* metrics[] = {"accuracy", "ece", "nll"};

    std::string out = "method,scenario,seeds,failed_seeds";
    for (const auto& level : levels)
        for (const char* m : metrics)
            out += "," + level + "_" + m + "_mean," + level + "_" + m + "_std";
    out += "\n";

    std::vector<std::pair<Method, datasets::Scenario>> keys;
    for (const auto& r : report.runs)
        if (std::find(keys.begin(), keys.end(), std::pair{r.method, r.scenario}) == keys.end())
            keys.emplace_back(r.method, r.scenario);
    for (const auto& [method, scenario] : keys) {
        std::size_t seeds = 0, failed = 0;
        for (const auto& r : report.runs)
            if (r.method == method && r.scenario == scenario) {
                ++seeds;
                failed += !r.ok;
            }
        out += to_string(method) + "," + datasets::to_string(scenario) + "," + std::to_string(seeds) + "," +
               std::to_string(failed);
        for (const auto& level : levels) {
            for (const char* m : metrics) {
                const SummaryRow* row = nullptr;
                for (const auto& s : report.summary)
                    if (s.method == method && s.scenario == scenario && s.level == level && s.metric == m)
                        row = &s;
                out += ",";
                if (row)
                    out += number(row->stat.mean);
                out += ",";
                if (row && row->stat.std)
                    out += number(*row->stat.std);
            }
        }
        out += "\n";
    }
    return out;
}

void emit_report(const CalibrationReport& report, const std::filesystem::path& path, ReportFormat format)
{
    check_subject_disjointness(report);
    write_file(path, format == ReportFormat::json_lines ? to_json_lines(report) : to_csv_summary(report));

    json runs = json::array();
    double total = 0.0;
    for (const auto& r : report.runs) {
        runs.push_back({{"method", to_string(r.method)},
                        {"scenario", datasets::to_string(r.scenario)},
                        {"seed", r.seed},
                        {"wall_seconds", r.wall_seconds}});
        total += r.wall_seconds;
    }
    write_file(path.string() + ".timing.json", json{{"runs", runs}, {"total_seconds", total}}.dump(1) + "\n");
}

bool same_report(const CalibrationReport& a, const CalibrationReport& b)
{
    return to_json_lines(a) == to_json_lines(b);
}

}  // namespace uac::harness
