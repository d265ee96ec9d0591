#include "uac/diffcore/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace uac::diffcore {

double relative_error(double analytic, double numeric, double floor)
{
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

namespace {

struct Probe {
    double* value;
    double analytic;
};

double run_probes(std::vector<Probe> probes, const std::function<double()>& f, const GradCheckOptions& options)
{
    double worst = 0.0;
    for (auto& p : probes) {
        const double saved = *p.value;
        *p.value = saved + options.step;
        const double up = f();
        *p.value = saved - options.step;
        const double down = f();
        *p.value = saved;
        const double numeric = (up - down) / (2.0 * options.step);
        worst = std::max(worst, relative_error(p.analytic, numeric, options.floor));
    }
    return worst;
}

}  // namespace

double check_gradients(std::span<Parameter* const> params, const LossFn& loss_fn, std::size_t probe_count,
                       RngStream& rng, const GradCheckOptions& options)
{
    if (probe_count == 0)
        return 0.0;
    for (auto* p : params)
        p->grad.fill(0.0);
    loss_fn(true);

    std::size_t total = 0;
    for (auto* p : params)
        total += p->value.size();
    if (total == 0)
        return 0.0;

    std::vector<Probe> probes;
    probes.reserve(probe_count);
    for (std::size_t k = 0; k < probe_count; ++k) {
        std::size_t flat = rng.below(total);
        for (auto* p : params) {
            if (flat < p->value.size()) {
                probes.push_back({p->value.data() + flat, p->grad[flat]});
                break;
            }
            flat -= p->value.size();
        }
    }
    return run_probes(std::move(probes), [&] { return loss_fn(false); }, options);
}

double check_gradients(Network& net, const LossFn& loss_fn, std::size_t probe_count, RngStream& rng,
                       const GradCheckOptions& options)
{
    std::vector<Tensor> saved;
    for (auto& b : net.buffers())
        saved.push_back(*b.tensor);
    auto params = net.parameters();
    const double err = check_gradients(params, loss_fn, probe_count, rng, options);
    std::size_t i = 0;
    for (auto& b : net.buffers())
        *b.tensor = saved[i++];
    return err;
}

double check_input_gradient(std::span<double> values, std::span<const double> analytic,
                            const std::function<double()>& f, std::size_t probe_count, RngStream& rng,
                            const GradCheckOptions& options)
{
    if (probe_count == 0 || values.empty())
        return 0.0;
    std::vector<Probe> probes;
    for (std::size_t k = 0; k < probe_count; ++k) {
        const std::size_t i = rng.below(values.size());
        probes.push_back({values.data() + i, analytic[i]});
    }
    return run_probes(std::move(probes), f, options);
}

}  // namespace uac::diffcore
