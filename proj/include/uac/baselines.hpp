#pragma once

#include "uac/datasets.hpp"
#include "uac/diffcore/checkpoint.hpp"
#include "uac/diffcore/ops.hpp"
#include "uac/model.hpp"
#include "uac/prediction.hpp"
#include "uac/warnings.hpp"

#include <span>
#include <string>
#include <vector>

namespace uac::baselines {

// ---- temperature scaling ----

struct TemperatureOptions {
    double lower = 1e-3;  // exclusive
    double upper = 5.0;   // inclusive
    double tolerance = 1e-4;  // on log T
};

struct TemperatureModel {
    double temperature = 1.0;
    std::size_t iterations = 0;
    double validation_nll = 0.0;
    double nll_at_one = 0.0;
};

// Mean -log softmax(z / T)[y] over rows of logits [N, C].
double temperature_nll(const diffcore::Tensor& logits, std::span<const int> labels, double temperature);

// Golden-section search on log T. Keeps T = 1 when that scores at least as well.
TemperatureModel fit_temperature(const diffcore::Tensor& logits, std::span<const int> labels,
                                 Warnings* warnings = nullptr, const TemperatureOptions& options = {});

std::vector<double> apply_temperature(std::span<const double> logits, double temperature);

// ---- entropy maximization ----

enum class EmSign {
    subtract,  // CE - lambda * I_m * H: minimizing raises the entropy of wrong predictions
    add,       // CE + lambda * I_m * H, the literal printed form
};

std::string to_string(EmSign s);
EmSign em_sign_from_string(const std::string& s);

// I_m = 1 when argmax(probs) != label.
double em_loss(std::span<const double> probs, int label, double lambda, EmSign sign = EmSign::subtract);

// Batch mean of em_loss on softmax(logits) with its gradient w.r.t. logits [B, C].
// The misclassification indicator is held constant.
diffcore::LossAndGrad em_loss_logits(const diffcore::Tensor& logits, std::span<const int> labels, double lambda,
                                     EmSign sign = EmSign::subtract, Warnings* warnings = nullptr);

model::BatchObjective em_objective(double lambda, EmSign sign = EmSign::subtract);

// model::train with the EM objective; the model must have no variance head.
model::TrainHistory train_em(model::UacModel& model, const datasets::DatasetSplit& split,
                             const model::TrainConfig& config, double lambda = 0.2, EmSign sign = EmSign::subtract,
                             Warnings* warnings = nullptr);

// ---- last-layer Laplace ----

// Gaussian over the last affine layer of the classifier. Parameters are
// flattened class-major: index c * (F + 1) + f, with f = F the bias.
struct LaplacePosterior {
    diffcore::Tensor theta_map;   // [C, F + 1]
    diffcore::Tensor covariance;  // [P, P], P = C * (F + 1)
    double prior_precision = 1.0;
    std::size_t samples = 100;

    std::size_t classes() const { return theta_map.dim(0); }
    std::size_t features() const { return theta_map.dim(1) - 1; }
};

// Exact Hessian of the negative log-posterior of a softmax-affine layer:
// sum_n (diag(p_n) - p_n p_n^T) kron phi_n phi_n^T + tau I, phi_n = [features_n, 1].
// features is [N, F]; an empty tensor stands for N = 0.
diffcore::Tensor last_layer_hessian(const diffcore::Tensor& theta, const diffcore::Tensor& features, double tau);

// Throws std::domain_error when the Hessian is not positive definite.
LaplacePosterior laplace_fit(const diffcore::Tensor& theta_map, const diffcore::Tensor& features, double tau,
                             std::size_t samples = 100);

// Inputs to the classifier's final linear layer, eval mode, [N, F].
diffcore::Tensor penultimate_features(const model::UacModel& model,
                                      const std::vector<datasets::LabeledWindow>& windows);
diffcore::Tensor last_layer_theta(const model::UacModel& model);

LaplacePosterior laplace_fit_last_layer(const model::UacModel& model,
                                        const std::vector<datasets::LabeledWindow>& train, double tau = 1.0,
                                        std::size_t samples = 100);

// Mean softmax over S parameter draws. Draws are taken in logit space,
// z ~ N(theta_map phi, J Sigma J^T), which has the same law as mapping
// weight draws through the layer.
std::vector<double> laplace_predict(const LaplacePosterior& posterior, std::span<const double> features,
                                    std::size_t samples, diffcore::RngStream& rng, Warnings* warnings = nullptr);
// Same with caller-supplied standard-normal draws, S rows of C.
std::vector<double> laplace_predict_from_draws(const LaplacePosterior& posterior, std::span<const double> features,
                                               std::span<const double> draws, Warnings* warnings = nullptr);

std::vector<Prediction> laplace_predict_windows(const model::UacModel& model, const LaplacePosterior& posterior,
                                                const std::vector<datasets::LabeledWindow>& windows,
                                                const diffcore::RngStream& rng, Warnings* warnings = nullptr);

void add_to_checkpoint(diffcore::CheckpointWriter& writer, const LaplacePosterior& posterior);
LaplacePosterior posterior_from_checkpoint(const diffcore::Checkpoint& checkpoint);

}  // namespace uac::baselines
