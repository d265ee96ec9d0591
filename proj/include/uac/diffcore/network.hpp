#pragma once

#include "uac/diffcore/rng.hpp"
#include "uac/diffcore/tensor.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace uac::diffcore {

enum class LayerKind { conv1d, batchnorm1d, relu, maxpool1d, dropout, linear, flatten };
enum class Mode { train, eval };

std::string_view to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view name);

// Hyperparameters of one layer. Fields not used by a kind stay at their defaults.
struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    std::size_t in_features = 0;   // conv1d in-channels, linear inputs, batchnorm channels
    std::size_t out_features = 0;  // conv1d out-channels, linear outputs
    std::size_t kernel = 1;        // conv1d kernel size, maxpool1d pool size
    std::size_t stride = 1;        // conv1d stride
    double rate = 0.0;             // dropout rate in [0, 1)
    double momentum = 0.1;         // batchnorm running-stat update weight
    double eps = 1e-5;             // batchnorm variance offset

    static LayerSpec conv1d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                            std::size_t stride = 1);
    static LayerSpec batchnorm1d(std::size_t channels, double momentum = 0.1, double eps = 1e-5);
    static LayerSpec relu();
    static LayerSpec maxpool1d(std::size_t pool);
    static LayerSpec dropout(double rate);
    static LayerSpec linear(std::size_t in_features, std::size_t out_features);
    static LayerSpec flatten();

    // Throws ShapeError on invalid hyperparameters.
    void validate() const;

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor adam_m;
    Tensor adam_v;

    explicit Parameter(std::string name_, Tensor init);
};

// Non-trainable persistent state, e.g. batch-norm running statistics.
struct Buffer {
    std::string name;
    Tensor* tensor;
};

class Layer {
public:
    explicit Layer(LayerSpec spec) : spec_(spec) {}
    virtual ~Layer() = default;

    const LayerSpec& spec() const { return spec_; }

    // Per-sample output shape for a per-sample input shape; throws ShapeError.
    virtual Shape output_shape(const Shape& input) const = 0;

    // Batched forward; input has a leading batch axis. Caches what backward needs.
    virtual Tensor forward_train(const Tensor& input, RngStream& rng) = 0;
    virtual Tensor forward_eval(const Tensor& input) const = 0;
    // Accumulates parameter gradients and returns the input gradient.
    virtual Tensor backward(const Tensor& output_grad) = 0;
    virtual void release() = 0;

    virtual std::vector<Parameter*> parameters() { return {}; }
    virtual std::vector<Buffer> buffers() { return {}; }
    virtual std::unique_ptr<Layer> clone() const = 0;

private:
    LayerSpec spec_;
};

std::unique_ptr<Layer> make_layer(const LayerSpec& spec, std::size_t index, RngStream& init_rng);

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Sequential network over the fixed primitive set, with its Adam state.
class Network {
public:
    Network() = default;
    // Throws ShapeError if the specs do not compose on input_shape (per-sample, no batch axis).
    Network(std::vector<LayerSpec> specs, Shape input_shape, std::uint64_t init_seed);

    Network(const Network& other);
    Network& operator=(const Network& other);
    Network(Network&&) noexcept = default;
    Network& operator=(Network&&) noexcept = default;

    const std::vector<LayerSpec>& specs() const { return specs_; }
    const Shape& input_shape() const { return input_shape_; }
    const Shape& output_shape() const { return output_shape_; }
    std::size_t layer_count() const { return layers_.size(); }
    Layer& layer(std::size_t i) { return *layers_.at(i); }
    const Layer& layer(std::size_t i) const { return *layers_.at(i); }

    // Accepts a single sample (input_shape) or a batch ([B] + input_shape); the
    // output has the matching form. Train mode draws dropout masks from rng and
    // retains activations for backward.
    Tensor forward(const Tensor& input, Mode mode, RngStream& rng);
    // Eval-mode forward; does not touch any network state.
    Tensor infer(const Tensor& input) const;
    // Requires a preceding train-mode forward. Returns the input gradient.
    Tensor backward(const Tensor& output_grad);
    bool has_pending_backward() const { return pending_backward_; }

    void zero_grad();
    // One Adam update on all parameters, then clears gradients.
    void adam_step(double lr, const AdamConfig& config = {});

    std::vector<Parameter*> parameters();
    std::vector<const Parameter*> parameters() const;
    std::vector<Buffer> buffers();
    std::size_t parameter_count() const;

    std::uint64_t step() const { return step_; }
    void set_step(std::uint64_t step) { step_ = step; }
    Mode mode() const { return mode_; }
    void set_mode(Mode mode) { mode_ = mode; }

private:
    Tensor run(const Tensor& input, bool train, RngStream* rng);
    bool batched(const Tensor& input) const;

    std::vector<LayerSpec> specs_;
    Shape input_shape_;
    Shape output_shape_;
    std::vector<std::unique_ptr<Layer>> layers_;
    std::uint64_t step_ = 0;
    Mode mode_ = Mode::eval;
    bool pending_backward_ = false;
    bool pending_batched_ = true;
};

}  // namespace uac::diffcore
