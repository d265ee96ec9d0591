#include "uac/model.hpp"

#include "uac/diffcore/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace uac::model {

using diffcore::LayerSpec;
using diffcore::Network;
using diffcore::RngStream;
using diffcore::Shape;
using diffcore::Tensor;

nlohmann::json to_json(const Architecture& a)
{
    return {{"channels", a.channels},
            {"window", a.window},
            {"classes", a.classes},
            {"conv_channels", a.conv_channels},
            {"kernel", a.kernel},
            {"pool", a.pool},
            {"conv_dropout", a.conv_dropout},
            {"head_hidden", a.head_hidden},
            {"head_dropout", a.head_dropout},
            {"variance_hidden", a.variance_hidden},
            {"per_class_variance", a.per_class_variance},
            {"variance_head", a.variance_head}};
}

Architecture architecture_from_json(const nlohmann::json& j)
{
    Architecture a;
    a.channels = j.value("channels", a.channels);
    a.window = j.value("window", a.window);
    a.classes = j.value("classes", a.classes);
    a.conv_channels = j.value("conv_channels", a.conv_channels);
    a.kernel = j.value("kernel", a.kernel);
    a.pool = j.value("pool", a.pool);
    a.conv_dropout = j.value("conv_dropout", a.conv_dropout);
    a.head_hidden = j.value("head_hidden", a.head_hidden);
    a.head_dropout = j.value("head_dropout", a.head_dropout);
    a.variance_hidden = j.value("variance_hidden", a.variance_hidden);
    a.per_class_variance = j.value("per_class_variance", a.per_class_variance);
    a.variance_head = j.value("variance_head", a.variance_head);
    return a;
}

std::vector<LayerSpec> encoder_specs(const Architecture& a)
{
    const auto [c1, c2, c3] = a.conv_channels;
    return {LayerSpec::conv1d(a.channels, c1, a.kernel),
            LayerSpec::relu(),
            LayerSpec::batchnorm1d(c1),
            LayerSpec::conv1d(c1, c2, a.kernel),
            LayerSpec::relu(),
            LayerSpec::batchnorm1d(c2),
            LayerSpec::dropout(a.conv_dropout),
            LayerSpec::maxpool1d(a.pool),
            LayerSpec::conv1d(c2, c3, a.kernel),
            LayerSpec::relu(),
            LayerSpec::batchnorm1d(c3),
            LayerSpec::dropout(a.conv_dropout),
            LayerSpec::maxpool1d(a.pool),
            LayerSpec::flatten()};
}

std::vector<LayerSpec> classifier_specs(const Architecture& a, std::size_t features)
{
    return {LayerSpec::linear(features, a.head_hidden), LayerSpec::relu(), LayerSpec::dropout(a.head_dropout),
            LayerSpec::linear(a.head_hidden, a.classes)};
}

std::vector<LayerSpec> variance_specs(const Architecture& a, std::size_t features)
{
    return {LayerSpec::linear(features, a.variance_hidden), LayerSpec::relu(),
            LayerSpec::linear(a.variance_hidden, a.per_class_variance ? a.classes : 1)};
}

namespace {

std::uint64_t init_seed(std::uint64_t seed, const char* name)
{
    return RngStream(seed).fork(name).next_u64();
}

void check_arch(const Architecture& a)
{
    if (a.classes < 2)
        throw std::invalid_argument("model needs at least 2 classes");
}

}  // namespace

UacModel::UacModel(const Architecture& arch, std::uint64_t seed, std::size_t mc_samples) : arch_(arch)
{
    check_arch(arch);
    set_mc_samples(mc_samples);
    encoder_ = Network(encoder_specs(arch), {arch.channels, arch.window}, init_seed(seed, "encoder"));
    const std::size_t f = feature_size();
    classifier_ = Network(classifier_specs(arch, f), {f}, init_seed(seed, "classifier"));
    if (arch.variance_head)
        variance_ = Network(variance_specs(arch, f), {f}, init_seed(seed, "variance"));
}

UacModel::UacModel(const Architecture& arch, Network encoder, Network classifier, Network variance,
                   std::size_t mc_samples)
    : arch_(arch), encoder_(std::move(encoder)), classifier_(std::move(classifier)), variance_(std::move(variance))
{
    check_arch(arch);
    set_mc_samples(mc_samples);
    const std::size_t f = feature_size();
    if (encoder_.specs() != encoder_specs(arch) || classifier_.specs() != classifier_specs(arch, f) ||
        (arch.variance_head && variance_.specs() != variance_specs(arch, f)))
        throw diffcore::ShapeError("networks do not match the model architecture");
}

void UacModel::set_mc_samples(std::size_t t)
{
    if (t < 1)
        throw std::invalid_argument("Monte Carlo sample count must be at least 1");
    mc_samples_ = t;
}

std::vector<diffcore::Parameter*> UacModel::parameters()
{
    auto out = encoder_.parameters();
    for (auto* p : classifier_.parameters())
        out.push_back(p);
    if (has_variance_head())
        for (auto* p : variance_.parameters())
            out.push_back(p);
    return out;
}

void UacModel::zero_grad()
{
    encoder_.zero_grad();
    classifier_.zero_grad();
    if (has_variance_head())
        variance_.zero_grad();
}

void UacModel::adam_step(double lr, const diffcore::AdamConfig& config)
{
    encoder_.adam_step(lr, config);
    classifier_.adam_step(lr, config);
    if (has_variance_head())
        variance_.adam_step(lr, config);
}

Tensor encode(const UacModel& model, const Tensor& windows)
{
    return model.encoder().infer(windows);
}

HeadOutput heads(const UacModel& model, const Tensor& features)
{
    HeadOutput out;
    out.logits = model.classifier().infer(features);
    if (!out.logits.all_finite())
        throw std::domain_error("classifier head produced non-finite logits");
    if (model.has_variance_head()) {
        out.log_variance = model.variance().infer(features);
        if (!out.log_variance.all_finite())
            throw std::domain_error("variance head produced a non-finite log-variance");
    }
    return out;
}

namespace {

double entropy_of(const std::vector<double>& p)
{
    double h = 0.0;
    for (double v : p)
        if (v > 0.0)
            h -= v * std::log(v);
    return h;
}

Prediction finish(std::span<const double> logits, std::span<const double> log_variance, std::size_t samples,
                  RngStream& rng)
{
    Prediction p;
    p.logits.assign(logits.begin(), logits.end());
    std::vector<double> sigma;
    for (double s : log_variance)
        sigma.push_back(std::exp(0.5 * s));
    if (sigma.empty())
        p.probs = diffcore::softmax(logits);
    else if (sigma.size() == 1)
        p.probs = mc_probabilities(logits, sigma[0], samples, rng);
    else
        p.probs = mc_probabilities(logits, sigma, samples, rng);
    if (!log_variance.empty())
        p.log_variance = std::accumulate(log_variance.begin(), log_variance.end(), 0.0) /
                         static_cast<double>(log_variance.size());
    p.entropy = entropy_of(p.probs);
    return p;
}

}  // namespace

Prediction predict_sample(const UacModel& model, const Tensor& window, RngStream& rng)
{
    if (window.shape() != model.encoder().input_shape())
        throw diffcore::ShapeError("predict_sample: window shape " + diffcore::shape_to_string(window.shape()) +
                                   " does not match model input " +
                                   diffcore::shape_to_string(model.encoder().input_shape()));
    const HeadOutput h = heads(model, encode(model, window));
    return finish(h.logits.values(), h.log_variance.values(), model.mc_samples(), rng);
}

Tensor stack_windows(const std::vector<datasets::LabeledWindow>& windows, std::span<const std::size_t> indices)
{
    if (indices.empty())
        throw std::invalid_argument("stack_windows: no windows");
    const Shape& per = windows.at(indices[0]).data.shape();
    Shape shape{indices.size()};
    shape.insert(shape.end(), per.begin(), per.end());
    Tensor out(shape);
    const std::size_t n = diffcore::shape_size(per);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const Tensor& w = windows.at(indices[i]).data;
        if (w.shape() != per)
            throw diffcore::ShapeError("stack_windows: windows differ in shape");
        std::copy(w.values().begin(), w.values().end(), out.values().begin() + i * n);
    }
    return out;
}

std::vector<Prediction> predict_windows(const UacModel& model, const std::vector<datasets::LabeledWindow>& windows,
                                        const RngStream& rng)
{
    constexpr std::size_t chunk = 256;
    std::vector<Prediction> out;
    out.reserve(windows.size());
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < windows.size(); start += chunk) {
        idx.resize(std::min(chunk, windows.size() - start));
        std::iota(idx.begin(), idx.end(), start);
        const HeadOutput h = heads(model, encode(model, stack_windows(windows, idx)));
        const std::size_t c = h.logits.dim(1);
        const std::size_t k = h.log_variance.empty() ? 0 : h.log_variance.dim(1);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            RngStream r = rng.fork(idx[i]);
            out.push_back(finish(h.logits.values().subspan(i * c, c),
                                 k ? h.log_variance.values().subspan(i * k, k) : std::span<const double>{},
                                 model.mc_samples(), r));
        }
    }
    return out;
}

void add_to_checkpoint(diffcore::CheckpointWriter& writer, const UacModel& model)
{
    writer.set_meta("model", {{"architecture", to_json(model.architecture())}, {"mc_samples", model.mc_samples()}});
    writer.add_network("encoder", model.encoder());
    writer.add_network("classifier", model.classifier());
    if (model.has_variance_head())
        writer.add_network("variance", model.variance());
}

UacModel model_from_checkpoint(const diffcore::Checkpoint& ckpt)
{
    if (!ckpt.meta().contains("model"))
        throw diffcore::CheckpointError("checkpoint has no model metadata");
    const auto& m = ckpt.meta().at("model");
    const Architecture arch = architecture_from_json(m.at("architecture"));
    return UacModel(arch, ckpt.network("encoder"), ckpt.network("classifier"),
                    arch.variance_head ? ckpt.network("variance") : Network{}, m.at("mc_samples").get<std::size_t>());
}

}  // namespace uac::model
