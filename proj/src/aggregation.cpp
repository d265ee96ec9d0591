#include "uac/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace uac::aggregation {

std::string to_string(Aggregator a)
{
    switch (a) {
    case Aggregator::entropy_weighted: return "entropy_weighted";
    case Aggregator::mean: return "mean";
    case Aggregator::sum_argmax: return "sum_argmax";
    }
    return "unknown";
}

Aggregator aggregator_from_string(const std::string& s)
{
    for (auto a : {Aggregator::entropy_weighted, Aggregator::mean, Aggregator::sum_argmax})
        if (to_string(a) == s)
            return a;
    throw std::invalid_argument("unknown aggregator '" + s + "'");
}

double entropy(std::span<const double> p)
{
    if (p.empty())
        throw std::invalid_argument("entropy of an empty distribution");
    double sum = 0.0, h = 0.0;
    for (double v : p) {
        if (!(v >= -1e-6) || !std::isfinite(v))
            throw std::domain_error("entropy: probability outside the simplex");
        sum += v;
        if (v > 0.0)
            h -= v * std::log(v);
    }
    if (std::abs(sum - 1.0) > 1e-6)
        throw std::domain_error("entropy: probabilities sum to " + std::to_string(sum));
    return h;
}

double entropy_weight(double entropy_value, std::size_t class_count)
{
    if (class_count < 2)
        throw std::invalid_argument("entropy weight needs at least 2 classes");
    const double log_c = std::log(static_cast<double>(class_count));
    if (!(entropy_value >= -1e-9 && entropy_value <= log_c + 1e-9))
        throw std::domain_error("entropy " + std::to_string(entropy_value) + " outside [0, log C]");
    const double w = (log_c - entropy_value) / log_c;
    return std::min(1.0, std::max(0.0, w));
}

namespace {

std::size_t common_class_count(std::span<const Prediction> preds)
{
    if (preds.empty())
        throw std::invalid_argument("cannot aggregate an empty prediction list");
    const std::size_t c = preds.front().probs.size();
    for (const auto& p : preds)
        if (p.probs.size() != c)
            throw std::invalid_argument("predictions disagree on class count");
    return c;
}

int argmax_label(const std::vector<double>& v)
{
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best])
            best = i;
    return static_cast<int>(best);
}

std::vector<double> weighted_sum(std::span<const Prediction> preds, const std::vector<double>& weights)
{
    std::vector<double> out(preds.front().probs.size(), 0.0);
    for (std::size_t i = 0; i < preds.size(); ++i)
        for (std::size_t c = 0; c < out.size(); ++c)
            out[c] += weights[i] * preds[i].probs[c];
    return out;
}

}  // namespace

SequencePrediction aggregate_mean(std::span<const Prediction> preds)
{
    common_class_count(preds);
    SequencePrediction out;
    out.mode = Aggregator::mean;
    out.window_count = preds.size();
    out.weights.assign(preds.size(), 1.0);
    out.probs = weighted_sum(preds, out.weights);
    const double k = static_cast<double>(preds.size());
    for (auto& v : out.probs)
        v /= k;
    out.predicted_label = argmax_label(out.probs);
    return out;
}

SequencePrediction aggregate_entropy_weighted(std::span<const Prediction> preds, Warnings* warnings,
                                              const EntropyWeightedOptions& options)
{
    const std::size_t c = common_class_count(preds);
    std::vector<double> weights;
    double weight_sum = 0.0;
    for (const auto& p : preds) {
        weights.push_back(entropy_weight(entropy(p.probs), c));
        weight_sum += weights.back();
    }
    if (weight_sum <= 0.0) {
        warn(warnings, "aggregate_all_weights_zero");
        SequencePrediction out = aggregate_mean(preds);
        out.mode = Aggregator::entropy_weighted;
        out.weights = weights;
        return out;
    }
    SequencePrediction out;
    out.mode = Aggregator::entropy_weighted;
    out.window_count = preds.size();
    out.probs = weighted_sum(preds, weights);
    const double k = static_cast<double>(preds.size());
    for (auto& v : out.probs)
        v /= k;
    if (options.normalize) {
        const double mean_weight = weight_sum / k;
        for (auto& v : out.probs)
            v /= mean_weight;
    }
    else {
        out.calibrated = false;
    }
    out.weights = std::move(weights);
    out.predicted_label = argmax_label(out.probs);
    return out;
}

SequencePrediction aggregate_sum_argmax(std::span<const Prediction> preds)
{
    common_class_count(preds);
    SequencePrediction out;
    out.mode = Aggregator::sum_argmax;
    out.window_count = preds.size();
    out.weights.assign(preds.size(), 1.0);
    out.probs = weighted_sum(preds, out.weights);
    out.predicted_label = argmax_label(out.probs);
    out.calibrated = false;
    return out;
}

SequencePrediction aggregate(Aggregator mode, std::span<const Prediction> preds, Warnings* warnings)
{
    switch (mode) {
    case Aggregator::entropy_weighted: return aggregate_entropy_weighted(preds, warnings);
    case Aggregator::mean: return aggregate_mean(preds);
    case Aggregator::sum_argmax: return aggregate_sum_argmax(preds);
    }
    throw std::invalid_argument("unknown aggregator");
}

}  // namespace uac::aggregation
