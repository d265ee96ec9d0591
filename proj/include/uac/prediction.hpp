#pragma once

#include <vector>

namespace uac {

// Per-window output of a calibrated classifier.
struct Prediction {
    std::vector<double> probs;
    double entropy = 0.0;
    // Predicted log-variance of the logit noise; 0 for methods without one.
    // In per-class variance mode this is the mean over classes.
    double log_variance = 0.0;
    std::vector<double> logits;
};

}  // namespace uac
