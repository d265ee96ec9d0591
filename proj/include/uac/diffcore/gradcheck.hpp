#pragma once

#include "uac/diffcore/network.hpp"

#include <functional>
#include <span>
#include <vector>

namespace uac::diffcore {

// Relative error |a - n| / max(|a|, |n|, floor). The floor turns the comparison
// absolute for gradients that vanish.
double relative_error(double analytic, double numeric, double floor = 1e-6);

struct GradCheckOptions {
    double step = 1e-5;
    double floor = 1e-6;
};

// Scalar loss at the current parameter values. With compute_grad set, the
// function also accumulates analytic gradients into Parameter::grad. Every call
// must replay the same stochastic draws (copy the RngStream it uses).
using LossFn = std::function<double(bool compute_grad)>;

// Compares analytic gradients of probe_count randomly chosen scalar parameters
// against central differences. Returns the maximum relative error; 0 when
// probe_count is 0.
double check_gradients(std::span<Parameter* const> params, const LossFn& loss_fn, std::size_t probe_count,
                       RngStream& rng, const GradCheckOptions& options = {});

// Network form: probes the network's parameters and restores its batch-norm
// running statistics afterwards.
double check_gradients(Network& net, const LossFn& loss_fn, std::size_t probe_count, RngStream& rng,
                       const GradCheckOptions& options = {});

// Same comparison for a gradient w.r.t. an arbitrary input vector. f reads the
// values in place.
double check_input_gradient(std::span<double> values, std::span<const double> analytic,
                            const std::function<double()>& f, std::size_t probe_count, RngStream& rng,
                            const GradCheckOptions& options = {});

}  // namespace uac::diffcore
