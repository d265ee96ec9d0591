#pragma once

#include "uac/warnings.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace uac::metrics {

inline constexpr std::size_t kDefaultBins = 15;
inline constexpr double kProbabilityFloor = 1e-12;

struct EvalRecord {
    std::vector<double> probs;
    int label = 0;
    double confidence = 0.0;  // max(probs)
    bool correct = false;     // argmax(probs) == label, ties to the lowest class

    static EvalRecord make(std::vector<double> probs, int label);
};

struct ReliabilityBin {
    std::size_t count = 0;
    double confidence = 0.0;  // mean confidence of members, 0 when empty
    double accuracy = 0.0;    // fraction correct, 0 when empty

    friend bool operator==(const ReliabilityBin&, const ReliabilityBin&) = default;
};

struct ReliabilityBins {
    std::size_t total = 0;
    std::vector<ReliabilityBin> bins;

    friend bool operator==(const ReliabilityBins&, const ReliabilityBins&) = default;
};

// 0-based bin of a confidence: bin m (1-based) covers ((m-1)/M, m/M]; a
// confidence of exactly 0 falls in the first bin.
std::size_t bin_index(double confidence, std::size_t bin_count);

double accuracy(std::span<const EvalRecord> records);
double ece(std::span<const EvalRecord> records, std::size_t bin_count = kDefaultBins);
// Probabilities below kProbabilityFloor are clamped and counted as "nll_probability_clamped".
double nll(std::span<const EvalRecord> records, Warnings* warnings = nullptr);
ReliabilityBins reliability_bins(std::span<const EvalRecord> records, std::size_t bin_count = kDefaultBins);
double ece_from_bins(const ReliabilityBins& bins);

}  // namespace uac::metrics
