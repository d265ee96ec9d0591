#pragma once

#include "uac/prediction.hpp"
#include "uac/warnings.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace uac::aggregation {

enum class Aggregator { entropy_weighted, mean, sum_argmax };
std::string to_string(Aggregator a);
Aggregator aggregator_from_string(const std::string& s);

struct SequencePrediction {
    std::vector<double> probs;
    int predicted_label = 0;
    std::size_t window_count = 0;
    std::vector<double> weights;  // per-window weight in [0, 1]
    Aggregator mode = Aggregator::entropy_weighted;
    // False for sum_argmax, whose scores are not probabilities.
    bool calibrated = true;
};

// H = -sum p log p with 0 log 0 = 0. Throws if p leaves the simplex by more than 1e-6.
double entropy(std::span<const double> p);

// (log C - H) / log C, clamped to [0, 1]. Throws if H lies outside [0, log C] by more than 1e-9.
double entropy_weight(double entropy_value, std::size_t class_count);

struct EntropyWeightedOptions {
    // Divide (1/K) sum W_i p_i by (1/K) sum W_i so the result is a distribution.
    bool normalize = true;
};

// Expectation of window predictions weighted by their rescaled entropy. When
// every weight is 0 the arithmetic mean is returned and
// "aggregate_all_weights_zero" is counted.
SequencePrediction aggregate_entropy_weighted(std::span<const Prediction> preds, Warnings* warnings = nullptr,
                                              const EntropyWeightedOptions& options = {});
SequencePrediction aggregate_mean(std::span<const Prediction> preds);
SequencePrediction aggregate_sum_argmax(std::span<const Prediction> preds);

SequencePrediction aggregate(Aggregator mode, std::span<const Prediction> preds, Warnings* warnings = nullptr);

}  // namespace uac::aggregation
