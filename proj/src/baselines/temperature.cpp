#include "uac/baselines.hpp"

#include <cmath>
#include <stdexcept>

namespace uac::baselines {

using diffcore::Tensor;

double temperature_nll(const Tensor& logits, std::span<const int> labels, double temperature)
{
    if (logits.rank() != 2 || logits.dim(0) != labels.size() || labels.empty())
        throw std::invalid_argument("temperature_nll: logits must be [N, C] with N labels, N >= 1");
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    std::vector<double> scaled(c);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < c; ++j)
            scaled[j] = logits[i * c + j] / temperature;
        total -= diffcore::log_softmax(scaled)[static_cast<std::size_t>(labels[i])];
    }
    return total / static_cast<double>(n);
}

TemperatureModel fit_temperature(const Tensor& logits, std::span<const int> labels, Warnings* warnings,
                                 const TemperatureOptions& options)
{
    if (!logits.all_finite())
        throw std::invalid_argument("fit_temperature: non-finite logits");
    if (!(options.lower > 0.0 && options.lower < 1.0 && options.upper >= 1.0 && options.tolerance > 0.0))
        throw std::invalid_argument("fit_temperature: bounds must bracket T = 1");

    TemperatureModel out;
    out.nll_at_one = temperature_nll(logits, labels, 1.0);
    out.validation_nll = out.nll_at_one;

    bool single_class = true;
    for (int y : labels)
        single_class = single_class && y == labels[0];
    if (single_class) {
        warn(warnings, "temperature_single_class_validation");
        return out;
    }

    auto f = [&](double u) { return temperature_nll(logits, labels, std::exp(u)); };
    const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = std::log(options.lower), b = std::log(options.upper);
    double c = b - invphi * (b - a), d = a + invphi * (b - a);
    double fc = f(c), fd = f(d);
    while (b - a > options.tolerance) {
        ++out.iterations;
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - invphi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + invphi * (b - a);
            fd = f(d);
        }
    }
    const double u = 0.5 * (a + b);
    const double fu = f(u);
    if (fu < out.nll_at_one) {
        out.temperature = std::exp(u);
        out.validation_nll = fu;
    }
    return out;
}

std::vector<double> apply_temperature(std::span<const double> logits, double temperature)
{
    if (!(temperature > 0.0) || !std::isfinite(temperature))
        throw std::invalid_argument("temperature must be positive and finite");
    std::vector<double> scaled(logits.begin(), logits.end());
    for (auto& v : scaled)
        v /= temperature;
    return diffcore::softmax(scaled);
}

}  // namespace uac::baselines
