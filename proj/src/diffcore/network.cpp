#include "uac/diffcore/network.hpp"

#include <cmath>
#include <stdexcept>

namespace uac::diffcore {

std::string_view to_string(LayerKind kind)
{
    switch (kind) {
    case LayerKind::conv1d: return "conv1d";
    case LayerKind::batchnorm1d: return "batchnorm1d";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool1d: return "maxpool1d";
    case LayerKind::dropout: return "dropout";
    case LayerKind::linear: return "linear";
    case LayerKind::flatten: return "flatten";
    }
    return "unknown";
}

LayerKind layer_kind_from_string(std::string_view name)
{
    for (auto k : {LayerKind::conv1d, LayerKind::batchnorm1d, LayerKind::relu, LayerKind::maxpool1d,
                   LayerKind::dropout, LayerKind::linear, LayerKind::flatten})
        if (to_string(k) == name)
            return k;
    throw std::invalid_argument("unknown layer kind '" + std::string(name) + "'");
}

LayerSpec LayerSpec::conv1d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride)
{
    LayerSpec s;
    s.kind = LayerKind::conv1d;
    s.in_features = in_channels;
    s.out_features = out_channels;
    s.kernel = kernel;
    s.stride = stride;
    return s;
}

LayerSpec LayerSpec::batchnorm1d(std::size_t channels, double momentum, double eps)
{
    LayerSpec s;
    s.kind = LayerKind::batchnorm1d;
    s.in_features = channels;
    s.momentum = momentum;
    s.eps = eps;
    return s;
}

LayerSpec LayerSpec::relu()
{
    return LayerSpec{};
}

LayerSpec LayerSpec::maxpool1d(std::size_t pool)
{
    LayerSpec s;
    s.kind = LayerKind::maxpool1d;
    s.kernel = pool;
    return s;
}

LayerSpec LayerSpec::dropout(double rate)
{
    LayerSpec s;
    s.kind = LayerKind::dropout;
    s.rate = rate;
    return s;
}

LayerSpec LayerSpec::linear(std::size_t in_features, std::size_t out_features)
{
    LayerSpec s;
    s.kind = LayerKind::linear;
    s.in_features = in_features;
    s.out_features = out_features;
    return s;
}

LayerSpec LayerSpec::flatten()
{
    LayerSpec s;
    s.kind = LayerKind::flatten;
    return s;
}

void LayerSpec::validate() const
{
    const std::string name(to_string(kind));
    if (kernel < 1)
        throw ShapeError(name + ": kernel/pool size must be >= 1");
    if (stride < 1)
        throw ShapeError(name + ": stride must be >= 1");
    if (!(rate >= 0.0 && rate < 1.0))
        throw ShapeError(name + ": dropout rate must lie in [0, 1)");
    switch (kind) {
    case LayerKind::conv1d:
    case LayerKind::linear:
        if (in_features < 1 || out_features < 1)
            throw ShapeError(name + ": unit/channel counts must be >= 1");
        break;
    case LayerKind::batchnorm1d:
        if (in_features < 1)
            throw ShapeError(name + ": channel count must be >= 1");
        if (!(momentum > 0.0 && momentum <= 1.0) || !(eps >= 0.0))
            throw ShapeError(name + ": momentum must lie in (0, 1] and eps must be >= 0");
        break;
    default: break;
    }
}

Parameter::Parameter(std::string name_, Tensor init)
    : name(std::move(name_)),
      value(std::move(init)),
      grad(value.shape()),
      adam_m(value.shape()),
      adam_v(value.shape())
{
}

Network::Network(std::vector<LayerSpec> specs, Shape input_shape, std::uint64_t init_seed)
    : specs_(std::move(specs)), input_shape_(std::move(input_shape))
{
    if (input_shape_.empty())
        throw ShapeError("network input shape must have at least one dimension");
    for (auto d : input_shape_)
        if (d == 0)
            throw ShapeError("network input shape " + shape_to_string(input_shape_) + " has a zero dimension");
    const RngStream root(init_seed, hash_name("init"));
    Shape shape = input_shape_;
    for (std::size_t i = 0; i < specs_.size(); ++i) {
        RngStream rng = root.fork(i);
        try {
            auto layer = make_layer(specs_[i], i, rng);
            shape = layer->output_shape(shape);
            layers_.push_back(std::move(layer));
        }
        catch (const ShapeError& e) {
            throw ShapeError("layer " + std::to_string(i) + " (" + std::string(to_string(specs_[i].kind)) +
                             ") on input " + shape_to_string(shape) + ": " + e.what());
        }
    }
    output_shape_ = shape;
}

Network::Network(const Network& other)
    : specs_(other.specs_),
      input_shape_(other.input_shape_),
      output_shape_(other.output_shape_),
      step_(other.step_),
      mode_(other.mode_)
{
    layers_.reserve(other.layers_.size());
    for (const auto& l : other.layers_)
        layers_.push_back(l->clone());
}

Network& Network::operator=(const Network& other)
{
    if (this != &other) {
        Network copy(other);
        *this = std::move(copy);
    }
    return *this;
}

bool Network::batched(const Tensor& input) const
{
    if (input.shape() == input_shape_)
        return false;
    if (input.rank() == input_shape_.size() + 1 &&
        std::equal(input_shape_.begin(), input_shape_.end(), input.shape().begin() + 1))
        return true;
    throw ShapeError("network expects input " + shape_to_string(input_shape_) + " (optionally batched), got " +
                     shape_to_string(input.shape()));
}

Tensor Network::run(const Tensor& input, bool train, RngStream* rng)
{
    const bool is_batched = batched(input);
    if (!input.all_finite())
        throw std::domain_error("network input contains non-finite values");
    Shape batch_shape{1};
    if (is_batched)
        batch_shape = {input.dim(0)};
    else
        batch_shape.insert(batch_shape.end(), input_shape_.begin(), input_shape_.end());
    Tensor x = is_batched ? input : input.reshaped(batch_shape);

    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (train)
            x = layers_[i]->forward_train(x, *rng);
        else
            x = static_cast<const Layer&>(*layers_[i]).forward_eval(x);
    }
    if (!x.all_finite())
        throw std::domain_error("network output contains non-finite values");
    if (!is_batched)
        x = x.reshaped(output_shape_);
    if (train) {
        pending_backward_ = true;
        pending_batched_ = is_batched;
    }
    return x;
}

Tensor Network::forward(const Tensor& input, Mode mode, RngStream& rng)
{
    mode_ = mode;
    if (mode == Mode::eval) {
        for (auto& l : layers_)
            l->release();
        pending_backward_ = false;
        return infer(input);
    }
    return run(input, true, &rng);
}

Tensor Network::infer(const Tensor& input) const
{
    return const_cast<Network*>(this)->run(input, false, nullptr);
}

Tensor Network::backward(const Tensor& output_grad)
{
    if (!pending_backward_)
        throw std::logic_error("backward requires a preceding train-mode forward pass");
    Tensor g = output_grad;
    if (!pending_batched_) {
        if (g.shape() != output_shape_)
            throw ShapeError("output gradient shape " + shape_to_string(g.shape()) + " does not match " +
                             shape_to_string(output_shape_));
        Shape s{1};
        s.insert(s.end(), output_shape_.begin(), output_shape_.end());
        g = g.reshaped(s);
    }
    else if (g.rank() != output_shape_.size() + 1 ||
             !std::equal(output_shape_.begin(), output_shape_.end(), g.shape().begin() + 1)) {
        throw ShapeError("output gradient shape " + shape_to_string(g.shape()) + " does not match batched " +
                         shape_to_string(output_shape_));
    }
    for (std::size_t i = layers_.size(); i-- > 0;)
        g = layers_[i]->backward(g);
    pending_backward_ = false;
    if (!pending_batched_)
        g = g.reshaped(input_shape_);
    return g;
}

void Network::zero_grad()
{
    for (auto* p : parameters())
        p->grad.fill(0.0);
}

void Network::adam_step(double lr, const AdamConfig& config)
{
    if (!(lr > 0.0) || !std::isfinite(lr))
        throw std::invalid_argument("learning rate must be positive and finite");
    auto params = parameters();
    for (auto* p : params)
        if (!p->grad.all_finite())
            throw std::domain_error("non-finite gradient in parameter " + p->name);
    ++step_;
    const double t = static_cast<double>(step_);
    const double c1 = 1.0 - std::pow(config.beta1, t);
    const double c2 = 1.0 - std::pow(config.beta2, t);
    for (auto* p : params) {
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double g = p->grad[i];
            double& m = p->adam_m[i];
            double& v = p->adam_v[i];
            m = config.beta1 * m + (1.0 - config.beta1) * g;
            v = config.beta2 * v + (1.0 - config.beta2) * g * g;
            p->value[i] -= lr * (m / c1) / (std::sqrt(v / c2) + config.eps);
        }
        p->grad.fill(0.0);
    }
}

std::vector<Parameter*> Network::parameters()
{
    std::vector<Parameter*> out;
    for (auto& l : layers_)
        for (auto* p : l->parameters())
            out.push_back(p);
    return out;
}

std::vector<const Parameter*> Network::parameters() const
{
    std::vector<const Parameter*> out;
    for (auto* p : const_cast<Network*>(this)->parameters())
        out.push_back(p);
    return out;
}

std::vector<Buffer> Network::buffers()
{
    std::vector<Buffer> out;
    for (auto& l : layers_)
        for (auto b : l->buffers())
            out.push_back(b);
    return out;
}

std::size_t Network::parameter_count() const
{
    std::size_t n = 0;
    for (const auto* p : parameters())
        n += p->value.size();
    return n;
}

}  // namespace uac::diffcore
