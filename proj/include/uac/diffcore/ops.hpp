#pragma once

#include "uac/diffcore/tensor.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace uac::diffcore {

// Max-subtracted softmax of one logit vector.
std::vector<double> softmax(std::span<const double> logits);
void softmax_into(std::span<const double> logits, std::span<double> out);
std::vector<double> log_softmax(std::span<const double> logits);

// Row-wise over a [B, C] tensor.
Tensor softmax_rows(const Tensor& logits);
Tensor log_softmax_rows(const Tensor& logits);

// Vector-Jacobian products: gradient w.r.t. logits given the forward output
// and the gradient w.r.t. that output.
std::vector<double> softmax_backward(std::span<const double> probs, std::span<const double> grad_probs);
std::vector<double> log_softmax_backward(std::span<const double> log_probs, std::span<const double> grad_log_probs);

// Index of the largest value; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

struct LossAndGrad {
    double loss = 0.0;
    Tensor grad;  // same shape as the logits
};

// Mean cross-entropy of softmax(logits) over a [B, C] batch; grad = (softmax - onehot) / B.
LossAndGrad softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace uac::diffcore
