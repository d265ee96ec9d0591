#include "uac/harness.hpp"

#include <set>
#include <stdexcept>

namespace uac::harness {

using nlohmann::json;

std::string to_string(Method m)
{
    switch (m) {
    case Method::uac: return "uac";
    case Method::uac_no_sigma: return "uac_no_sigma";
    case Method::em: return "em";
    case Method::temp_scaling: return "temp_scaling";
    case Method::laplace: return "laplace";
    }
    return "?";
}

Method method_from_string(const std::string& s)
{
    for (Method m : {Method::uac, Method::uac_no_sigma, Method::em, Method::temp_scaling, Method::laplace})
        if (to_string(m) == s)
            return m;
    throw std::invalid_argument("unknown method '" + s +
                                "' (expected uac, uac_no_sigma, em, temp_scaling or laplace)");
}

std::string to_string(AggregatorChoice a)
{
    switch (a) {
    case AggregatorChoice::entropy_weighted: return "entropy_weighted";
    case AggregatorChoice::mean: return "mean";
    case AggregatorChoice::sum_argmax: return "sum_argmax";
    case AggregatorChoice::none: return "none";
    }
    return "?";
}

AggregatorChoice aggregator_choice_from_string(const std::string& s)
{
    for (auto a : {AggregatorChoice::entropy_weighted, AggregatorChoice::mean, AggregatorChoice::sum_argmax,
                   AggregatorChoice::none})
        if (to_string(a) == s)
            return a;
    throw std::invalid_argument("unknown aggregator '" + s +
                                "' (expected entropy_weighted, mean, sum_argmax or none)");
}

namespace {

std::string kind_name(DataSource::Kind k)
{
    switch (k) {
    case DataSource::Kind::synthetic: return "synthetic";
    case DataSource::Kind::csv: return "csv";
    case DataSource::Kind::wisdm: return "wisdm";
    }
    return "?";
}

DataSource::Kind kind_from_name(const std::string& s)
{
    if (s == "synthetic")
        return DataSource::Kind::synthetic;
    if (s == "csv")
        return DataSource::Kind::csv;
    if (s == "wisdm")
        return DataSource::Kind::wisdm;
    throw std::invalid_argument("unknown data kind '" + s + "' (expected synthetic, csv or wisdm)");
}

json synth_to_json(const datasets::SynthConfig& c)
{
    return {{"classes", c.classes},       {"subjects", c.subjects}, {"sequences_per_subject", c.sequences_per_subject},
            {"length", c.length},         {"channels", c.channels}, {"noise", c.noise},
            {"subject_shift", c.subject_shift}, {"seed", c.seed}};
}

datasets::SynthConfig synth_from_json(const json& j)
{
    datasets::SynthConfig c;
    c.classes = j.value("classes", c.classes);
    c.subjects = j.value("subjects", c.subjects);
    c.sequences_per_subject = j.value("sequences_per_subject", c.sequences_per_subject);
    c.length = j.value("length", c.length);
    c.channels = j.value("channels", c.channels);
    c.noise = j.value("noise", c.noise);
    c.subject_shift = j.value("subject_shift", c.subject_shift);
    c.seed = j.value("seed", c.seed);
    return c;
}

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where)
{
    if (!j.is_object())
        throw std::invalid_argument(where + " must be an object");
    for (const auto& [k, v] : j.items())
        if (!known.count(k))
            throw std::invalid_argument("unknown key '" + k + "' in " + where);
}

template <class T, class F>
std::vector<T> list_from(const json& j, F parse)
{
    std::vector<T> out;
    for (const auto& e : j)
        out.push_back(parse(e.get<std::string>()));
    return out;
}

}  // namespace

void ExperimentConfig::validate() const
{
    if (seeds.empty())
        throw std::invalid_argument("config needs at least one seed");
    if (methods.empty() || scenarios.empty() || aggregators.empty())
        throw std::invalid_argument("config needs at least one method, scenario and aggregator");
    if (window.length == 0 || window.stride == 0)
        throw std::invalid_argument("window length and stride must be positive");
    if (bins == 0)
        throw std::invalid_argument("bin count must be positive");
    if (!(em_lambda >= 0.0))
        throw std::invalid_argument("EM lambda must be non-negative");
    if (!(laplace_tau > 0.0) || laplace_samples == 0)
        throw std::invalid_argument("Laplace prior precision and sample count must be positive");
    if (data.kind != DataSource::Kind::synthetic && data.path.empty())
        throw std::invalid_argument("csv and wisdm data sources need a path");
    train.validate();
}

json to_json(const ExperimentConfig& c)
{
    json scenarios = json::array(), methods = json::array(), aggregators = json::array();
    for (auto s : c.scenarios)
        scenarios.push_back(datasets::to_string(s));
    for (auto m : c.methods)
        methods.push_back(to_string(m));
    for (auto a : c.aggregators)
        aggregators.push_back(to_string(a));
    return {{"data",
             {{"kind", kind_name(c.data.kind)},
              {"path", c.data.path},
              {"wisdm_device", c.data.wisdm_device},
              {"synth", synth_to_json(c.data.synth)}}},
            {"scenarios", scenarios},
            {"methods", methods},
            {"aggregators", aggregators},
            {"window", {{"length", c.window.length}, {"stride", c.window.stride}}},
            {"per_channel_norm", c.per_channel_norm},
            {"architecture", model::to_json(c.architecture)},
            {"train", model::to_json(c.train)},
            {"bins", c.bins},
            {"seeds", c.seeds},
            {"em", {{"lambda", c.em_lambda}, {"sign", baselines::to_string(c.em_sign)}}},
            {"laplace", {{"tau", c.laplace_tau}, {"samples", c.laplace_samples}}},
            {"checkpoint_dir", c.checkpoint_dir}};
}

ExperimentConfig experiment_config_from_json(const json& j)
{
    reject_unknown(j,
                   {"data", "scenarios", "methods", "aggregators", "window", "per_channel_norm", "architecture",
                    "train", "bins", "seeds", "em", "laplace", "checkpoint_dir"},
                   "config");
    ExperimentConfig c;
    if (j.contains("data")) {
        const auto& d = j.at("data");
        reject_unknown(d, {"kind", "path", "wisdm_device", "synth"}, "data");
        c.data.kind = kind_from_name(d.value("kind", std::string("synthetic")));
        c.data.path = d.value("path", c.data.path);
        c.data.wisdm_device = d.value("wisdm_device", c.data.wisdm_device);
        if (d.contains("synth"))
            c.data.synth = synth_from_json(d.at("synth"));
    }
    if (j.contains("scenarios"))
        c.scenarios = list_from<datasets::Scenario>(j.at("scenarios"), datasets::scenario_from_string);
    if (j.contains("methods"))
        c.methods = list_from<Method>(j.at("methods"), method_from_string);
    if (j.contains("aggregators"))
        c.aggregators = list_from<AggregatorChoice>(j.at("aggregators"), aggregator_choice_from_string);
    if (j.contains("window")) {
        c.window.length = j.at("window").value("length", c.window.length);
        c.window.stride = j.at("window").value("stride", c.window.stride);
    }
    c.per_channel_norm = j.value("per_channel_norm", c.per_channel_norm);
    if (j.contains("architecture"))
        c.architecture = model::architecture_from_json(j.at("architecture"));
    if (j.contains("train"))
        c.train = model::train_config_from_json(j.at("train"));
    c.bins = j.value("bins", c.bins);
    if (j.contains("seeds"))
        c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("em")) {
        c.em_lambda = j.at("em").value("lambda", c.em_lambda);
        c.em_sign = baselines::em_sign_from_string(j.at("em").value("sign", std::string("subtract")));
    }
    if (j.contains("laplace")) {
        c.laplace_tau = j.at("laplace").value("tau", c.laplace_tau);
        c.laplace_samples = j.at("laplace").value("samples", c.laplace_samples);
    }
    c.checkpoint_dir = j.value("checkpoint_dir", c.checkpoint_dir);
    c.validate();
    return c;
}

}  // namespace uac::harness
