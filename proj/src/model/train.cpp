#include "uac/model.hpp"

#include "uac/diffcore/ops.hpp"

#include <cmath>
#include <numeric>
#include <string>

namespace uac::model {

using diffcore::RngStream;

void TrainConfig::validate() const
{
    if (batch_size == 0)
        throw std::invalid_argument("batch size must be positive");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
        throw std::invalid_argument("learning rate must be positive");
    if (!(plateau_factor > 0.0 && plateau_factor < 1.0))
        throw std::invalid_argument("plateau factor must lie in (0, 1)");
    if (plateau_patience == 0 || early_stop_patience == 0)
        throw std::invalid_argument("patience must be positive");
    if (max_epochs == 0)
        throw std::invalid_argument("max epochs must be positive");
    if (mc_samples == 0)
        throw std::invalid_argument("Monte Carlo sample count must be at least 1");
}

nlohmann::json to_json(const TrainConfig& c)
{
    return {{"batch_size", c.batch_size},
            {"learning_rate", c.learning_rate},
            {"plateau_factor", c.plateau_factor},
            {"plateau_patience", c.plateau_patience},
            {"max_epochs", c.max_epochs},
            {"early_stop_patience", c.early_stop_patience},
            {"seed", c.seed},
            {"mc_samples", c.mc_samples},
            {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}}};
}

TrainConfig train_config_from_json(const nlohmann::json& j)
{
    TrainConfig c;
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.plateau_factor = j.value("plateau_factor", c.plateau_factor);
    c.plateau_patience = j.value("plateau_patience", c.plateau_patience);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
    c.seed = j.value("seed", c.seed);
    c.mc_samples = j.value("mc_samples", c.mc_samples);
    if (j.contains("adam")) {
        const auto& a = j.at("adam");
        c.adam.beta1 = a.value("beta1", c.adam.beta1);
        c.adam.beta2 = a.value("beta2", c.adam.beta2);
        c.adam.eps = a.value("eps", c.adam.eps);
    }
    c.validate();
    return c;
}

nlohmann::json to_json(const TrainHistory& h)
{
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& e : h.epochs)
        epochs.push_back({{"epoch", e.epoch},
                          {"train_loss", e.train_loss},
                          {"validation_accuracy", e.validation_accuracy},
                          {"learning_rate", e.learning_rate}});
    return {{"epochs", epochs},
            {"best_epoch", h.best_epoch},
            {"best_validation_accuracy", h.best_validation_accuracy},
            {"stopped_early", h.stopped_early}};
}

TrainHistory train_history_from_json(const nlohmann::json& j)
{
    TrainHistory h;
    for (const auto& e : j.at("epochs"))
        h.epochs.push_back({e.at("epoch").get<std::size_t>(), e.at("train_loss").get<double>(),
                            e.at("validation_accuracy").get<double>(), e.at("learning_rate").get<double>()});
    h.best_epoch = j.at("best_epoch").get<std::size_t>();
    h.best_validation_accuracy = j.at("best_validation_accuracy").get<double>();
    h.stopped_early = j.at("stopped_early").get<bool>();
    return h;
}

PlateauScheduler::PlateauScheduler(double rate, double factor, std::size_t patience)
    : rate_(rate), factor_(factor), patience_(patience)
{
    if (!(rate > 0.0) || !(factor > 0.0 && factor < 1.0) || patience == 0)
        throw std::invalid_argument("invalid plateau schedule");
}

bool PlateauScheduler::observe(double metric)
{
    if (metric > best_) {
        best_ = metric;
        bad_ = 0;
        return false;
    }
    if (++bad_ < patience_)
        return false;
    rate_ *= factor_;
    bad_ = 0;
    ++reductions_;
    return true;
}

TrainHistory train(UacModel& model, const datasets::DatasetSplit& split, const TrainConfig& config,
                   Warnings* warnings, const BatchObjective& objective)
{
    config.validate();
    if (split.train.empty() || split.validation.empty())
        throw std::invalid_argument("training needs non-empty train and validation partitions");
    model.set_mc_samples(config.mc_samples);

    const RngStream root(config.seed, diffcore::hash_name("train"));
    const std::size_t n = split.train.size();
    PlateauScheduler schedule(config.learning_rate, config.plateau_factor, config.plateau_patience);
    TrainHistory history;
    UacModel best = model;
    double best_acc = -1.0;
    std::size_t since_best = 0;

    std::vector<std::size_t> order(n);
    std::vector<int> labels;
    for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        RngStream shuffle = root.fork("shuffle").fork(epoch);
        for (std::size_t i = n - 1; i > 0; --i)
            std::swap(order[i], order[shuffle.below(i + 1)]);

        const double lr = schedule.rate();
        double loss_sum = 0.0;
        const RngStream epoch_rng = root.fork("batch").fork(epoch);
        for (std::size_t start = 0, b = 0; start < n; start += config.batch_size, ++b) {
            const auto idx = std::span<const std::size_t>(order).subspan(start, std::min(config.batch_size, n - start));
            labels.clear();
            for (std::size_t i : idx)
                labels.push_back(split.train[i].label);
            RngStream r = epoch_rng.fork(b);
            const std::string where = "epoch " + std::to_string(epoch + 1) + " batch " + std::to_string(b + 1);
            const double loss = objective(model, stack_windows(split.train, idx), labels, r, warnings);
            if (!std::isfinite(loss))
                throw TrainingError("non-finite training loss at " + where);
            try {
                model.adam_step(lr, config.adam);
            } catch (const std::domain_error& e) {
                throw TrainingError(std::string(e.what()) + " at " + where);
            }
            loss_sum += loss * static_cast<double>(idx.size());
        }

        const auto preds = predict_windows(model, split.validation, root.fork("validation").fork(epoch));
        std::size_t hits = 0;
        for (std::size_t i = 0; i < preds.size(); ++i)
            if (static_cast<int>(diffcore::argmax(preds[i].probs)) == split.validation[i].label)
                ++hits;
        const double acc = static_cast<double>(hits) / static_cast<double>(preds.size());
        history.epochs.push_back({epoch + 1, loss_sum / static_cast<double>(n), acc, lr});

        if (acc > best_acc) {
            best_acc = acc;
            best = model;
            history.best_epoch = epoch + 1;
            since_best = 0;
        } else {
            ++since_best;
        }
        schedule.observe(acc);
        if (since_best >= config.early_stop_patience) {
            history.stopped_early = true;
            break;
        }
    }
    history.best_validation_accuracy = best_acc;
    model = std::move(best);
    return history;
}

}  // namespace uac::model
