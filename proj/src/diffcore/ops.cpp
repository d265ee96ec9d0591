#include "uac/diffcore/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace uac::diffcore {

void softmax_into(std::span<const double> logits, std::span<double> out)
{
    if (logits.empty() || out.size() != logits.size())
        throw std::invalid_argument("softmax: empty input or size mismatch");
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - mx);
        sum += out[i];
    }
    for (auto& v : out)
        v /= sum;
}

std::vector<double> softmax(std::span<const double> logits)
{
    std::vector<double> out(logits.size());
    softmax_into(logits, out);
    return out;
}

std::vector<double> log_softmax(std::span<const double> logits)
{
    if (logits.empty())
        throw std::invalid_argument("log_softmax: empty input");
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double z : logits)
        sum += std::exp(z - mx);
    const double lse = mx + std::log(sum);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i)
        out[i] = logits[i] - lse;
    return out;
}

namespace {

template <typename F>
Tensor rowwise(const Tensor& logits, F&& f)
{
    if (logits.rank() != 2)
        throw ShapeError("expected [B, C] logits, got " + shape_to_string(logits.shape()));
    Tensor out(logits.shape());
    const std::size_t c = logits.dim(1);
    for (std::size_t b = 0; b < logits.dim(0); ++b) {
        auto row = f(logits.values().subspan(b * c, c));
        std::copy(row.begin(), row.end(), out.data() + b * c);
    }
    return out;
}

}  // namespace

Tensor softmax_rows(const Tensor& logits)
{
    return rowwise(logits, [](std::span<const double> r) { return softmax(r); });
}

Tensor log_softmax_rows(const Tensor& logits)
{
    return rowwise(logits, [](std::span<const double> r) { return log_softmax(r); });
}

std::vector<double> softmax_backward(std::span<const double> probs, std::span<const double> grad_probs)
{
    double dot = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i)
        dot += probs[i] * grad_probs[i];
    std::vector<double> g(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i)
        g[i] = probs[i] * (grad_probs[i] - dot);
    return g;
}

std::vector<double> log_softmax_backward(std::span<const double> log_probs, std::span<const double> grad_log_probs)
{
    double total = 0.0;
    for (double v : grad_log_probs)
        total += v;
    std::vector<double> g(log_probs.size());
    for (std::size_t i = 0; i < log_probs.size(); ++i)
        g[i] = grad_log_probs[i] - std::exp(log_probs[i]) * total;
    return g;
}

std::size_t argmax(std::span<const double> values)
{
    if (values.empty())
        throw std::invalid_argument("argmax of an empty vector");
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (values[i] > values[best])
            best = i;
    return best;
}

LossAndGrad softmax_cross_entropy(const Tensor& logits, std::span<const int> labels)
{
    if (logits.rank() != 2 || logits.dim(0) != labels.size())
        throw ShapeError("softmax_cross_entropy: logits " + shape_to_string(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
    const std::size_t batch = logits.dim(0), c = logits.dim(1);
    LossAndGrad out{0.0, Tensor(logits.shape())};
    for (std::size_t b = 0; b < batch; ++b) {
        const auto row = logits.values().subspan(b * c, c);
        const auto lp = log_softmax(row);
        const auto y = static_cast<std::size_t>(labels[b]);
        if (labels[b] < 0 || y >= c)
            throw std::out_of_range("label " + std::to_string(labels[b]) + " outside [0, " + std::to_string(c) + ")");
        out.loss -= lp[y];
        for (std::size_t k = 0; k < c; ++k)
            out.grad[b * c + k] = (std::exp(lp[k]) - (k == y ? 1.0 : 0.0)) / static_cast<double>(batch);
    }
    out.loss /= static_cast<double>(batch);
    return out;
}

}  // namespace uac::diffcore
