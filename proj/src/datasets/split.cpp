#include "uac/datasets.hpp"
#include "uac/diffcore/rng.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace uac::datasets {

std::string to_string(Scenario s)
{
    return s == Scenario::ood ? "ood" : "id";
}

Scenario scenario_from_string(const std::string& s)
{
    if (s == "ood" || s == "OOD")
        return Scenario::ood;
    if (s == "id" || s == "ID")
        return Scenario::id;
    throw std::invalid_argument("unknown scenario '" + s + "' (expected ood or id)");
}

std::vector<std::size_t> apportion(std::size_t n, const SplitRatios& ratios)
{
    const std::array<double, 3> r{ratios.train, ratios.validation, ratios.test};
    const double total = r[0] + r[1] + r[2];
    if (!(r[0] >= 0 && r[1] >= 0 && r[2] >= 0 && total > 0))
        throw std::invalid_argument("split ratios must be non-negative with a positive sum");
    std::vector<std::size_t> counts(3);
    std::array<double, 3> rem{};
    std::size_t assigned = 0;
    for (int i = 0; i < 3; ++i) {
        const double quota = static_cast<double>(n) * r[i] / total;
        counts[i] = static_cast<std::size_t>(std::floor(quota));
        rem[i] = quota - static_cast<double>(counts[i]);
        assigned += counts[i];
    }
    while (assigned < n) {
        // Largest remainder first; ties go to the earlier partition.
        int best = 0;
        for (int i = 1; i < 3; ++i)
            if (rem[i] > rem[best])
                best = i;
        ++counts[best];
        rem[best] = -1.0;
        ++assigned;
    }
    if (n >= 3) {
        for (int i = 0; i < 3; ++i) {
            if (counts[i] == 0) {
                const auto donor = std::max_element(counts.begin(), counts.end()) - counts.begin();
                --counts[donor];
                ++counts[i];
            }
        }
    }
    return counts;
}

namespace {

template <typename T>
void shuffle(std::vector<T>& items, diffcore::RngStream rng)
{
    for (std::size_t i = items.size(); i > 1; --i)
        std::swap(items[i - 1], items[rng.below(i)]);
}

void append_windows(std::vector<LabeledWindow>& dst, const RawRecording& rec, const WindowConfig& cfg, Warnings* w)
{
    auto ws = window(rec, cfg, w);
    std::move(ws.begin(), ws.end(), std::back_inserter(dst));
}

void require_nonempty(const DatasetSplit& split)
{
    if (split.train.empty() || split.validation.empty() || split.test.empty())
        throw DataError("split produced an empty partition (train " + std::to_string(split.train.size()) +
                        ", validation " + std::to_string(split.validation.size()) + ", test " +
                        std::to_string(split.test.size()) + " windows)");
}

}  // namespace

DatasetSplit split_by_subject(const std::vector<RawRecording>& recordings, const WindowConfig& windows,
                              std::uint64_t seed, Warnings* warnings, const SplitRatios& ratios)
{
    std::set<std::string> unique;
    for (const auto& r : recordings)
        unique.insert(r.subject_id);
    if (unique.size() < 3)
        throw DataError("subject-disjoint split needs at least 3 subjects, found " + std::to_string(unique.size()));
    std::vector<std::string> subjects(unique.begin(), unique.end());
    shuffle(subjects, diffcore::RngStream(seed, diffcore::hash_name("split_by_subject")));
    const auto counts = apportion(subjects.size(), ratios);

    std::map<std::string, int> part;
    for (std::size_t i = 0; i < subjects.size(); ++i)
        part[subjects[i]] = i < counts[0] ? 0 : (i < counts[0] + counts[1] ? 1 : 2);

    DatasetSplit split;
    split.scenario = Scenario::ood;
    split.seed = seed;
    std::array<std::vector<LabeledWindow>*, 3> dst{&split.train, &split.validation, &split.test};
    for (const auto& rec : recordings)
        append_windows(*dst[part.at(rec.subject_id)], rec, windows, warnings);
    require_nonempty(split);
    return split;
}

DatasetSplit split_mixed(const std::vector<RawRecording>& recordings, const WindowConfig& windows,
                         std::uint64_t seed, Warnings* warnings, const SplitRatios& ratios)
{
    if (recordings.empty())
        throw DataError("cannot split an empty corpus");
    std::map<std::string, std::vector<std::size_t>> by_subject;
    for (std::size_t i = 0; i < recordings.size(); ++i)
        by_subject[recordings[i].subject_id].push_back(i);

    DatasetSplit split;
    split.scenario = Scenario::id;
    split.seed = seed;
    std::array<std::vector<LabeledWindow>*, 3> dst{&split.train, &split.validation, &split.test};
    const diffcore::RngStream root(seed, diffcore::hash_name("split_mixed"));
    for (auto& [subject, idx] : by_subject) {
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
            return recordings[a].sequence_id < recordings[b].sequence_id;
        });
        shuffle(idx, root.fork(subject));
        std::vector<std::size_t> counts;
        if (idx.size() < 3) {
            warn(warnings, "split_mixed_subject_under_3_sequences");
            counts = {1, idx.size() > 1 ? 1u : 0u, 0};
        }
        else {
            counts = apportion(idx.size(), ratios);
        }
        for (std::size_t k = 0; k < idx.size(); ++k) {
            const int p = k < counts[0] ? 0 : (k < counts[0] + counts[1] ? 1 : 2);
            append_windows(*dst[p], recordings[idx[k]], windows, warnings);
        }
    }
    require_nonempty(split);
    return split;
}

NormStats normalize_split(DatasetSplit& split, bool per_channel)
{
    const NormStats stats = compute_norm_stats(split.train, per_channel);
    for (auto* part : {&split.train, &split.validation, &split.test})
        for (auto& w : *part)
            w = normalize(w, stats);
    return stats;
}

}  // namespace uac::datasets
