#include "uac/baselines.hpp"

#include <cmath>
#include <stdexcept>

namespace uac::baselines {

using diffcore::Mode;
using diffcore::RngStream;
using diffcore::Tensor;

std::string to_string(EmSign s)
{
    return s == EmSign::subtract ? "subtract" : "add";
}

EmSign em_sign_from_string(const std::string& s)
{
    if (s == "subtract")
        return EmSign::subtract;
    if (s == "add")
        return EmSign::add;
    throw std::invalid_argument("unknown entropy-term sign '" + s + "' (expected subtract or add)");
}

namespace {

double signed_lambda(double lambda, EmSign sign)
{
    if (!(lambda >= 0.0) || !std::isfinite(lambda))
        throw std::invalid_argument("lambda must be finite and non-negative");
    return sign == EmSign::subtract ? -lambda : lambda;
}

}  // namespace

double em_loss(std::span<const double> probs, int label, double lambda, EmSign sign)
{
    const double sl = signed_lambda(lambda, sign);
    if (label < 0 || static_cast<std::size_t>(label) >= probs.size())
        throw std::invalid_argument("em_loss: label out of range");
    double sum = 0.0;
    for (double p : probs) {
        if (!(p >= 0.0))
            throw std::invalid_argument("em_loss: probabilities must be non-negative");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6)
        throw std::invalid_argument("em_loss: probabilities do not sum to 1");

    const double ce = -std::log(std::max(probs[static_cast<std::size_t>(label)], model::kProbabilityFloor));
    if (static_cast<int>(diffcore::argmax(probs)) == label || lambda == 0.0)
        return ce;
    double h = 0.0;
    for (double p : probs)
        if (p > 0.0)
            h -= p * std::log(p);
    return ce + sl * h;
}

diffcore::LossAndGrad em_loss_logits(const Tensor& logits, std::span<const int> labels, double lambda, EmSign sign,
                                     Warnings* warnings)
{
    const double sl = signed_lambda(lambda, sign);
    if (logits.rank() != 2 || logits.dim(0) != labels.size() || labels.empty())
        throw std::invalid_argument("em_loss_logits: logits must be [B, C] with B labels");
    const std::size_t b = logits.dim(0), c = logits.dim(1);
    const double ceiling = -std::log(model::kProbabilityFloor);
    const double scale = 1.0 / static_cast<double>(b);

    diffcore::LossAndGrad out{0.0, Tensor(logits.shape())};
    std::vector<double> p(c);
    double total = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        const auto y = static_cast<std::size_t>(labels[i]);
        if (y >= c)
            throw std::invalid_argument("em_loss_logits: label out of range");
        const auto lp = diffcore::log_softmax(logits.values().subspan(i * c, c));
        double loss = -lp[y];
        if (loss > ceiling) {
            loss = ceiling;
            warn(warnings, "loss_probability_clamped");
        }
        for (std::size_t j = 0; j < c; ++j)
            p[j] = std::exp(lp[j]);
        std::vector<double> g(c);
        for (std::size_t j = 0; j < c; ++j)
            g[j] = p[j] - (j == y ? 1.0 : 0.0);
        if (lambda != 0.0 && diffcore::argmax(p) != y) {
            double h = 0.0;
            for (std::size_t j = 0; j < c; ++j)
                if (p[j] > 0.0)
                    h -= p[j] * lp[j];
            loss += sl * h;
            // dH/dz_j = -p_j (log p_j + H)
            for (std::size_t j = 0; j < c; ++j)
                g[j] += sl * (p[j] > 0.0 ? -p[j] * (lp[j] + h) : 0.0);
        }
        total += loss;
        for (std::size_t j = 0; j < c; ++j)
            out.grad[i * c + j] = g[j] * scale;
    }
    out.loss = total * scale;
    return out;
}

model::BatchObjective em_objective(double lambda, EmSign sign)
{
    signed_lambda(lambda, sign);
    return [lambda, sign](model::UacModel& m, const Tensor& batch, std::span<const int> labels, RngStream& rng,
                          Warnings* warnings) {
        RngStream enc_rng = rng.fork("encoder_dropout");
        RngStream cls_rng = rng.fork("classifier_dropout");
        const Tensor h = m.encoder().forward(batch, Mode::train, enc_rng);
        const Tensor z = m.classifier().forward(h, Mode::train, cls_rng);
        const auto lg = em_loss_logits(z, labels, lambda, sign, warnings);
        m.encoder().backward(m.classifier().backward(lg.grad));
        return lg.loss;
    };
}

model::TrainHistory train_em(model::UacModel& m, const datasets::DatasetSplit& split, const model::TrainConfig& config,
                             double lambda, EmSign sign, Warnings* warnings)
{
    if (m.has_variance_head())
        throw std::invalid_argument("train_em expects a model without a variance head");
    return model::train(m, split, config, warnings, em_objective(lambda, sign));
}

}  // namespace uac::baselines
