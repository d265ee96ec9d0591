#include "uac/model.hpp"

#include "uac/diffcore/ops.hpp"

#include <cmath>
#include <string>

namespace uac::model {

using diffcore::Mode;
using diffcore::RngStream;
using diffcore::Tensor;

namespace {

// Sigma per logit; a single entry is shared by all of them.
double sigma_at(std::span<const double> sigma, std::size_t c)
{
    return sigma.size() == 1 ? sigma[0] : sigma[c];
}

void check_sigma(std::span<const double> sigma, std::size_t classes)
{
    if (sigma.size() != 1 && sigma.size() != classes)
        throw std::invalid_argument("sigma must have 1 or C entries");
    for (double s : sigma)
        if (!(s >= 0.0) || !std::isfinite(s))
            throw std::invalid_argument("sigma must be finite and non-negative, got " + std::to_string(s));
}

}  // namespace

std::vector<double> mc_probabilities(std::span<const double> logits, double sigma, std::size_t samples,
                                     RngStream& rng)
{
    return mc_probabilities(logits, std::span<const double>(&sigma, 1), samples, rng);
}

std::vector<double> mc_probabilities(std::span<const double> logits, std::span<const double> sigma,
                                     std::size_t samples, RngStream& rng)
{
    const std::size_t c = logits.size();
    check_sigma(sigma, c);
    if (samples < 1)
        throw std::invalid_argument("Monte Carlo sample count must be at least 1");
    bool all_zero = true;
    for (double s : sigma)
        all_zero = all_zero && s == 0.0;
    if (all_zero)
        return diffcore::softmax(logits);

    std::vector<double> sum(c, 0.0), zhat(c), p(c);
    for (std::size_t t = 0; t < samples; ++t) {
        for (std::size_t j = 0; j < c; ++j)
            zhat[j] = logits[j] + sigma_at(sigma, j) * rng.normal();
        diffcore::softmax_into(zhat, p);
        for (std::size_t j = 0; j < c; ++j)
            sum[j] += p[j];
    }
    for (auto& v : sum)
        v /= static_cast<double>(samples);
    return sum;
}

McLoss mc_cross_entropy(std::span<const double> logits, std::span<const double> log_variance, int label,
                        std::size_t samples, RngStream& rng, Warnings* warnings)
{
    const std::size_t c = logits.size();
    if (label < 0 || static_cast<std::size_t>(label) >= c)
        throw std::invalid_argument("label " + std::to_string(label) + " outside [0, " + std::to_string(c) + ")");
    if (!log_variance.empty() && log_variance.size() != 1 && log_variance.size() != c)
        throw std::invalid_argument("log-variance must have 0, 1 or C entries");
    if (samples < 1)
        throw std::invalid_argument("Monte Carlo sample count must be at least 1");
    const auto y = static_cast<std::size_t>(label);

    McLoss out;
    out.grad_logits.assign(c, 0.0);
    out.grad_log_variance.assign(log_variance.size(), 0.0);

    if (log_variance.empty()) {
        const auto lp = diffcore::log_softmax(logits);
        out.loss = -lp[y];
        for (std::size_t j = 0; j < c; ++j)
            out.grad_logits[j] = std::exp(lp[j]) - (j == y ? 1.0 : 0.0);
    } else {
        std::vector<double> sigma(log_variance.size());
        for (std::size_t k = 0; k < sigma.size(); ++k)
            sigma[k] = std::exp(0.5 * log_variance[k]);

        // Row t of eps and probs belongs to draw t.
        std::vector<double> eps(samples * c), probs(samples * c), log_py(samples), zhat(c);
        for (std::size_t t = 0; t < samples; ++t) {
            for (std::size_t j = 0; j < c; ++j) {
                eps[t * c + j] = rng.normal();
                zhat[j] = logits[j] + sigma_at(sigma, j) * eps[t * c + j];
            }
            const auto lp = diffcore::log_softmax(zhat);
            log_py[t] = lp[y];
            for (std::size_t j = 0; j < c; ++j)
                probs[t * c + j] = std::exp(lp[j]);
        }
        // log p_hat = logsumexp_t(log p_t[y]) - log T, kept in the log domain.
        double mx = log_py[0];
        for (double v : log_py)
            mx = std::max(mx, v);
        double acc = 0.0;
        for (double v : log_py)
            acc += std::exp(v - mx);
        const double lse = mx + std::log(acc);
        out.loss = std::log(static_cast<double>(samples)) - lse;

        std::vector<double> grad_sigma(sigma.size(), 0.0);
        for (std::size_t t = 0; t < samples; ++t) {
            // Share of draw t in p_hat[y].
            const double w = std::exp(log_py[t] - lse);
            for (std::size_t j = 0; j < c; ++j) {
                const double g = w * (probs[t * c + j] - (j == y ? 1.0 : 0.0));
                out.grad_logits[j] += g;
                grad_sigma[sigma.size() == 1 ? 0 : j] += g * eps[t * c + j];
            }
        }
        for (std::size_t k = 0; k < sigma.size(); ++k)
            out.grad_log_variance[k] = grad_sigma[k] * 0.5 * sigma[k];
    }

    const double ceiling = -std::log(kProbabilityFloor);
    if (out.loss > ceiling) {
        out.loss = ceiling;
        warn(warnings, "loss_probability_clamped");
    }
    return out;
}

double uac_loss(UacModel& model, const Tensor& batch, std::span<const int> labels, RngStream& rng,
                Warnings* warnings)
{
    if (batch.rank() != 3)
        throw diffcore::ShapeError("uac_loss expects a batch [B, d, m], got " + diffcore::shape_to_string(batch.shape()));
    const std::size_t b = batch.dim(0);
    if (labels.size() != b)
        throw std::invalid_argument("uac_loss: " + std::to_string(labels.size()) + " labels for a batch of " +
                                    std::to_string(b));

    RngStream enc_rng = rng.fork("encoder_dropout");
    RngStream cls_rng = rng.fork("classifier_dropout");
    RngStream var_rng = rng.fork("variance_dropout");
    const RngStream noise = rng.fork("noise");

    const Tensor h = model.encoder().forward(batch, Mode::train, enc_rng);
    const Tensor z = model.classifier().forward(h, Mode::train, cls_rng);
    Tensor s;
    if (model.has_variance_head())
        s = model.variance().forward(h, Mode::train, var_rng);

    const std::size_t c = z.dim(1);
    const std::size_t k = s.empty() ? 0 : s.dim(1);
    Tensor gz(z.shape());
    Tensor gs(s.shape());
    const double scale = 1.0 / static_cast<double>(b);
    double total = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        RngStream r = noise.fork(i);
        const McLoss m = mc_cross_entropy(z.values().subspan(i * c, c),
                                          k ? s.values().subspan(i * k, k) : std::span<const double>{}, labels[i],
                                          model.mc_samples(), r, warnings);
        total += m.loss;
        for (std::size_t j = 0; j < c; ++j)
            gz[i * c + j] = m.grad_logits[j] * scale;
        for (std::size_t j = 0; j < k; ++j)
            gs[i * k + j] = m.grad_log_variance[j] * scale;
    }

    Tensor gh = model.classifier().backward(gz);
    if (k) {
        const Tensor gv = model.variance().backward(gs);
        for (std::size_t i = 0; i < gh.size(); ++i)
            gh[i] += gv[i];
    }
    model.encoder().backward(gh);
    return total * scale;
}

}  // namespace uac::model
