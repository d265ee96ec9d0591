#include "uac/datasets.hpp"

#include <cmath>

namespace uac::datasets {

std::vector<LabeledWindow> window(const RawRecording& recording, const WindowConfig& config, Warnings* warnings)
{
    if (config.length < 1 || config.stride < 1)
        throw std::invalid_argument("window length and stride must be >= 1");
    std::vector<LabeledWindow> out;
    const std::size_t m = config.length, d = recording.channels;
    if (recording.length() < m) {
        warn(warnings, "sequence_shorter_than_window");
        return out;
    }
    for (std::size_t offset = 0; offset + m <= recording.length(); offset += config.stride) {
        LabeledWindow w;
        w.data = diffcore::Tensor({d, m});
        for (std::size_t c = 0; c < d; ++c)
            for (std::size_t t = 0; t < m; ++t)
                w.data[c * m + t] = recording.at(offset + t, c);
        w.label = recording.label;
        w.subject_id = recording.subject_id;
        w.sequence_id = recording.sequence_id;
        w.offset = offset;
        out.push_back(std::move(w));
    }
    return out;
}

NormStats compute_norm_stats(const std::vector<LabeledWindow>& train_windows, bool per_channel)
{
    if (train_windows.empty())
        throw DataError("cannot compute normalization statistics from an empty training set");
    const std::size_t d = train_windows.front().data.dim(0);
    const std::size_t groups = per_channel ? d : 1;
    std::vector<double> sum(groups, 0.0), count(groups, 0.0);
    auto group_of = [&](std::size_t index, std::size_t m) { return per_channel ? index / m : 0; };
    for (const auto& w : train_windows) {
        if (w.data.dim(0) != d)
            throw DataError("training windows disagree on channel count");
        const std::size_t m = w.data.dim(1);
        for (std::size_t i = 0; i < w.data.size(); ++i) {
            sum[group_of(i, m)] += w.data[i];
            count[group_of(i, m)] += 1.0;
        }
    }
    NormStats stats;
    stats.mu.resize(groups);
    for (std::size_t g = 0; g < groups; ++g)
        stats.mu[g] = sum[g] / count[g];
    std::vector<double> sq(groups, 0.0);
    for (const auto& w : train_windows) {
        const std::size_t m = w.data.dim(1);
        for (std::size_t i = 0; i < w.data.size(); ++i) {
            const double dev = w.data[i] - stats.mu[group_of(i, m)];
            sq[group_of(i, m)] += dev * dev;
        }
    }
    stats.sigma.resize(groups);
    for (std::size_t g = 0; g < groups; ++g) {
        stats.sigma[g] = std::sqrt(sq[g] / count[g]);
        if (!(stats.sigma[g] > 0.0))
            throw DataError("training data has zero standard deviation" +
                            (per_channel ? " on channel " + std::to_string(g) : std::string()));
    }
    return stats;
}

LabeledWindow normalize(const LabeledWindow& window, const NormStats& stats)
{
    LabeledWindow out = window;
    const std::size_t m = window.data.dim(1);
    const bool per_channel = stats.per_channel();
    if (per_channel && stats.mu.size() != window.data.dim(0))
        throw DataError("per-channel statistics do not match the window channel count");
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        const std::size_t g = per_channel ? i / m : 0;
        out.data[i] = (out.data[i] - stats.mu[g]) / stats.sigma[g];
    }
    return out;
}

}  // namespace uac::datasets
