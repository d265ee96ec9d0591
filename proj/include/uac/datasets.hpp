#pragma once

#include "uac/diffcore/tensor.hpp"
#include "uac/warnings.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace uac::datasets {

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// One gesture sequence: rows of `channels` values with strictly increasing
// millisecond timestamps.
struct RawRecording {
    std::string subject_id;
    std::string sequence_id;
    int label = 0;
    std::size_t channels = 0;
    std::vector<std::int64_t> timestamps;
    std::vector<double> values;  // row-major [length x channels]

    std::size_t length() const { return timestamps.size(); }
    double at(std::size_t row, std::size_t channel) const { return values[row * channels + channel]; }
};

struct LabeledWindow {
    diffcore::Tensor data;  // [channels, length]
    int label = 0;
    std::string subject_id;
    std::string sequence_id;
    std::size_t offset = 0;
};

struct Corpus {
    std::vector<RawRecording> recordings;
    // class_names[id] is the source label of dense class id `id`.
    std::vector<std::string> class_names;

    std::size_t class_count() const { return class_names.size(); }
    std::size_t channel_count() const { return recordings.empty() ? 0 : recordings.front().channels; }
};

// Header: subject,label,sequence,timestamp_ms,ch0,...,ch{d-1}. Rows are grouped
// by (subject, sequence); the result is ordered by that key.
Corpus load_canonical_csv(const std::filesystem::path& path);
void save_canonical_csv(const Corpus& corpus, const std::filesystem::path& path);

// WISDM raw smartwatch/phone files `data_<subject>_{accel,gyro}_<device>.txt`
// with lines `subject,activity_code,timestamp,x,y,z;`. Accelerometer and
// gyroscope rows are joined on exact timestamp equality per activity.
Corpus load_wisdm(const std::filesystem::path& dir, Warnings* warnings = nullptr, const std::string& device = "watch");

struct WindowConfig {
    std::size_t length = 100;
    std::size_t stride = 10;
};

// Windows at offsets 0, stride, 2*stride, ... while offset + length fits.
std::vector<LabeledWindow> window(const RawRecording& recording, const WindowConfig& config,
                                  Warnings* warnings = nullptr);

// Pooled (one entry) or per-channel normalization statistics.
struct NormStats {
    std::vector<double> mu;
    std::vector<double> sigma;

    bool per_channel() const { return mu.size() > 1; }
    friend bool operator==(const NormStats&, const NormStats&) = default;
};

NormStats compute_norm_stats(const std::vector<LabeledWindow>& train_windows, bool per_channel = false);
LabeledWindow normalize(const LabeledWindow& window, const NormStats& stats);

enum class Scenario { ood, id };
std::string to_string(Scenario s);
Scenario scenario_from_string(const std::string& s);

struct SplitRatios {
    double train = 0.6;
    double validation = 0.2;
    double test = 0.2;
};

struct DatasetSplit {
    std::vector<LabeledWindow> train;
    std::vector<LabeledWindow> validation;
    std::vector<LabeledWindow> test;
    Scenario scenario = Scenario::ood;
    std::uint64_t seed = 0;
};

// Largest-remainder apportionment of n items; when n >= 3 every part gets at
// least one item.
std::vector<std::size_t> apportion(std::size_t n, const SplitRatios& ratios);

// Subject-disjoint split: subjects shuffled by seed and apportioned.
DatasetSplit split_by_subject(const std::vector<RawRecording>& recordings, const WindowConfig& windows,
                              std::uint64_t seed, Warnings* warnings = nullptr, const SplitRatios& ratios = {});

// Per-subject split of whole sequences, so every subject with >= 3 sequences
// appears in all partitions.
DatasetSplit split_mixed(const std::vector<RawRecording>& recordings, const WindowConfig& windows,
                         std::uint64_t seed, Warnings* warnings = nullptr, const SplitRatios& ratios = {});

// Normalizes all partitions in place with statistics from the train partition.
NormStats normalize_split(DatasetSplit& split, bool per_channel = false);

struct SynthConfig {
    int classes = 3;
    std::size_t subjects = 12;
    std::size_t sequences_per_subject = 20;
    std::size_t length = 200;
    std::size_t channels = 6;
    double noise = 0.3;
    double subject_shift = 0.5;
    std::uint64_t seed = 0;
};

// Class waveform templates plus a persistent per-subject channel bias and
// amplitude scale, with per-timestep Gaussian noise.
Corpus synth_generate(const SynthConfig& config);

}  // namespace uac::datasets
