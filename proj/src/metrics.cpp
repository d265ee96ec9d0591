#include "uac/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace uac::metrics {

namespace {

void require_records(std::span<const EvalRecord> records, const char* what)
{
    if (records.empty())
        throw std::invalid_argument(std::string(what) + " of an empty record set");
}

}  // namespace

EvalRecord EvalRecord::make(std::vector<double> probs, int label)
{
    if (probs.empty())
        throw std::invalid_argument("evaluation record needs a non-empty probability vector");
    EvalRecord r;
    std::size_t best = 0;
    for (std::size_t i = 1; i < probs.size(); ++i)
        if (probs[i] > probs[best])
            best = i;
    r.confidence = probs[best];
    r.correct = static_cast<int>(best) == label;
    r.label = label;
    r.probs = std::move(probs);
    return r;
}

std::size_t bin_index(double confidence, std::size_t bin_count)
{
    if (bin_count < 1)
        throw std::invalid_argument("bin count must be >= 1");
    const double m = static_cast<double>(bin_count);
    auto upper = [&](std::size_t b) { return static_cast<double>(b + 1) / m; };
    std::size_t b = confidence <= 0.0 ? 0 : static_cast<std::size_t>(std::ceil(confidence * m)) - 1;
    b = std::min(b, bin_count - 1);
    // Settle on the exact edge comparison in case the product rounded.
    while (b > 0 && confidence <= upper(b - 1))
        --b;
    while (b + 1 < bin_count && confidence > upper(b))
        ++b;
    return b;
}

double accuracy(std::span<const EvalRecord> records)
{
    require_records(records, "accuracy");
    std::size_t correct = 0;
    for (const auto& r : records)
        correct += r.correct ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(records.size());
}

ReliabilityBins reliability_bins(std::span<const EvalRecord> records, std::size_t bin_count)
{
    require_records(records, "reliability bins");
    ReliabilityBins out;
    out.total = records.size();
    out.bins.assign(bin_count, {});
    std::vector<double> conf_sum(bin_count, 0.0), correct(bin_count, 0.0);
    for (const auto& r : records) {
        const auto b = bin_index(r.confidence, bin_count);
        ++out.bins[b].count;
        conf_sum[b] += r.confidence;
        correct[b] += r.correct ? 1.0 : 0.0;
    }
    for (std::size_t b = 0; b < bin_count; ++b) {
        if (out.bins[b].count == 0)
            continue;
        const double n = static_cast<double>(out.bins[b].count);
        out.bins[b].confidence = conf_sum[b] / n;
        out.bins[b].accuracy = correct[b] / n;
    }
    return out;
}

double ece_from_bins(const ReliabilityBins& bins)
{
    double total = 0.0;
    const double n = static_cast<double>(bins.total);
    for (const auto& b : bins.bins)
        if (b.count)
            total += static_cast<double>(b.count) / n * std::abs(b.accuracy - b.confidence);
    return total;
}

double ece(std::span<const EvalRecord> records, std::size_t bin_count)
{
    return ece_from_bins(reliability_bins(records, bin_count));
}

double nll(std::span<const EvalRecord> records, Warnings* warnings)
{
    require_records(records, "nll");
    double total = 0.0;
    for (const auto& r : records) {
        if (r.label < 0 || static_cast<std::size_t>(r.label) >= r.probs.size())
            throw std::out_of_range("record label outside its probability vector");
        double p = r.probs[static_cast<std::size_t>(r.label)];
        if (p < kProbabilityFloor) {
            p = kProbabilityFloor;
            warn(warnings, "nll_probability_clamped");
        }
        total -= std::log(p);
    }
    return total / static_cast<double>(records.size());
}

}  // namespace uac::metrics
