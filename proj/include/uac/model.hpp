#pragma once

#include "uac/datasets.hpp"
#include "uac/diffcore/checkpoint.hpp"
#include "uac/diffcore/network.hpp"
#include "uac/prediction.hpp"
#include "uac/warnings.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace uac::model {

inline constexpr double kProbabilityFloor = 1e-12;

// Layer sizes of the step-1 classifier. The defaults are the full-size network;
// tests and quick runs shrink the convolution widths.
struct Architecture {
    std::size_t channels = 6;  // d
    std::size_t window = 100;  // m
    std::size_t classes = 3;   // C
    std::array<std::size_t, 3> conv_channels{128, 128, 256};
    std::size_t kernel = 10;
    std::size_t pool = 2;
    double conv_dropout = 0.25;
    std::size_t head_hidden = 256;
    double head_dropout = 0.5;
    std::size_t variance_hidden = 64;
    // One log-variance per class instead of a single shared one.
    bool per_class_variance = false;
    // Without the variance head the logit noise is fixed at sigma = 0.
    bool variance_head = true;

    friend bool operator==(const Architecture&, const Architecture&) = default;
};

nlohmann::json to_json(const Architecture& arch);
Architecture architecture_from_json(const nlohmann::json& j);

std::vector<diffcore::LayerSpec> encoder_specs(const Architecture& arch);
std::vector<diffcore::LayerSpec> classifier_specs(const Architecture& arch, std::size_t features);
std::vector<diffcore::LayerSpec> variance_specs(const Architecture& arch, std::size_t features);

class UacModel {
public:
    UacModel(const Architecture& arch, std::uint64_t seed, std::size_t mc_samples = 100);
    UacModel(const Architecture& arch, diffcore::Network encoder, diffcore::Network classifier,
             diffcore::Network variance, std::size_t mc_samples);

    const Architecture& architecture() const { return arch_; }
    std::size_t class_count() const { return arch_.classes; }
    std::size_t feature_size() const { return encoder_.output_shape().at(0); }
    std::size_t mc_samples() const { return mc_samples_; }
    void set_mc_samples(std::size_t t);
    bool has_variance_head() const { return arch_.variance_head; }

    diffcore::Network& encoder() { return encoder_; }
    diffcore::Network& classifier() { return classifier_; }
    // Empty network when has_variance_head() is false.
    diffcore::Network& variance() { return variance_; }
    const diffcore::Network& encoder() const { return encoder_; }
    const diffcore::Network& classifier() const { return classifier_; }
    const diffcore::Network& variance() const { return variance_; }

    std::vector<diffcore::Parameter*> parameters();
    void zero_grad();
    void adam_step(double lr, const diffcore::AdamConfig& config = {});

private:
    Architecture arch_;
    diffcore::Network encoder_;
    diffcore::Network classifier_;
    diffcore::Network variance_;
    std::size_t mc_samples_ = 100;
};

// Eval-mode features of one window [d, m] or a batch [B, d, m].
diffcore::Tensor encode(const UacModel& model, const diffcore::Tensor& windows);

struct HeadOutput {
    diffcore::Tensor logits;        // [C] or [B, C]
    diffcore::Tensor log_variance;  // [1] / [C], batched likewise; empty without a variance head
};

// Eval-mode heads on features from encode. Throws std::domain_error on non-finite output.
HeadOutput heads(const UacModel& model, const diffcore::Tensor& features);

// Mean of softmax(logits + sigma * eps_t) over t = 1..T, eps_t ~ N(0, I).
// sigma = 0 returns softmax(logits) without drawing.
std::vector<double> mc_probabilities(std::span<const double> logits, double sigma, std::size_t samples,
                                     diffcore::RngStream& rng);
// Per-class noise scales; the draws match the scalar form.
std::vector<double> mc_probabilities(std::span<const double> logits, std::span<const double> sigma,
                                     std::size_t samples, diffcore::RngStream& rng);

struct McLoss {
    double loss = 0.0;
    std::vector<double> grad_logits;
    std::vector<double> grad_log_variance;  // same arity as the log_variance input
};

// -log p_hat[label] for one sample, with p_hat the Monte Carlo mean under
// sigma = exp(s / 2), and its gradient through the reparameterized draws.
// An empty log_variance means sigma = 0. The loss value is clamped at
// -log(1e-12); the gradient is that of the unclamped loss.
McLoss mc_cross_entropy(std::span<const double> logits, std::span<const double> log_variance, int label,
                        std::size_t samples, diffcore::RngStream& rng, Warnings* warnings = nullptr);

// Train-mode forward and backward on a batch [B, d, m]: mean Monte Carlo
// cross-entropy, gradients accumulated into all three networks. Dropout masks
// and noise draws are pure functions of rng, so a copy of rng replays them.
double uac_loss(UacModel& model, const diffcore::Tensor& batch, std::span<const int> labels, diffcore::RngStream& rng,
                Warnings* warnings = nullptr);

struct TrainConfig {
    std::size_t batch_size = 64;
    double learning_rate = 1e-6;
    double plateau_factor = 0.1;
    std::size_t plateau_patience = 10;
    std::size_t max_epochs = 100;
    std::size_t early_stop_patience = 25;
    std::uint64_t seed = 0;
    std::size_t mc_samples = 100;
    diffcore::AdamConfig adam;

    // Throws std::invalid_argument.
    void validate() const;
};

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Multiplies the rate by factor once `patience` consecutive observations fail
// to beat the best one.
class PlateauScheduler {
public:
    PlateauScheduler(double rate, double factor, std::size_t patience);

    // Returns true when this observation reduced the rate.
    bool observe(double metric);
    double rate() const { return rate_; }
    std::size_t reductions() const { return reductions_; }

private:
    double rate_;
    double factor_;
    std::size_t patience_;
    double best_ = -std::numeric_limits<double>::infinity();
    std::size_t bad_ = 0;
    std::size_t reductions_ = 0;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double validation_accuracy = 0.0;
    double learning_rate = 0.0;

    friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    double best_validation_accuracy = 0.0;
    bool stopped_early = false;

    friend bool operator==(const TrainHistory&, const TrainHistory&) = default;
};

nlohmann::json to_json(const TrainHistory& history);
TrainHistory train_history_from_json(const nlohmann::json& j);

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Accumulates gradients for one batch into the model and returns its mean loss.
using BatchObjective = std::function<double(UacModel&, const diffcore::Tensor&, std::span<const int>,
                                            diffcore::RngStream&, Warnings*)>;

// Adam over shuffled mini-batches; validation accuracy after every epoch
// drives the plateau schedule and early stopping. The model ends up holding
// the parameters of the best validation epoch.
TrainHistory train(UacModel& model, const datasets::DatasetSplit& split, const TrainConfig& config,
                   Warnings* warnings = nullptr, const BatchObjective& objective = uac_loss);

// Stacks windows [d, m] into a batch [B, d, m].
diffcore::Tensor stack_windows(const std::vector<datasets::LabeledWindow>& windows,
                               std::span<const std::size_t> indices);

// encode -> heads -> mc_probabilities with the model's T.
Prediction predict_sample(const UacModel& model, const diffcore::Tensor& window, diffcore::RngStream& rng);

// predict_sample for every window, window i drawing from rng.fork(i).
std::vector<Prediction> predict_windows(const UacModel& model, const std::vector<datasets::LabeledWindow>& windows,
                                        const diffcore::RngStream& rng);

// Networks "encoder", "classifier" and optionally "variance", plus the
// architecture and T under meta key "model".
void add_to_checkpoint(diffcore::CheckpointWriter& writer, const UacModel& model);
UacModel model_from_checkpoint(const diffcore::Checkpoint& checkpoint);

}  // namespace uac::model
