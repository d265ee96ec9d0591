#include "uac/diffcore/network.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace uac::diffcore {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using ConstMapRM = Eigen::Map<const MatRM>;

std::string layer_label(std::size_t index, LayerKind kind)
{
    return std::to_string(index) + "." + std::string(to_string(kind));
}

Tensor he_uniform(Shape shape, std::size_t fan_in, RngStream& rng)
{
    Tensor t(std::move(shape));
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& v : t.values())
        v = (2.0 * rng.uniform() - 1.0) * bound;
    return t;
}

void require_cache(bool ok, const char* what)
{
    if (!ok)
        throw std::logic_error(std::string("backward called without a retained forward pass in ") + what);
}

// Batched [B, C, L] view; rank-2 batches [B, F] are treated as L = 1.
struct Dims3 {
    std::size_t batch, channels, length;
};

Dims3 dims3(const Tensor& t)
{
    if (t.rank() == 3)
        return {t.dim(0), t.dim(1), t.dim(2)};
    if (t.rank() == 2)
        return {t.dim(0), t.dim(1), 1};
    throw ShapeError("expected a batched rank-2 or rank-3 tensor, got " + shape_to_string(t.shape()));
}

class Conv1d final : public Layer {
public:
    Conv1d(const LayerSpec& spec, std::size_t index, RngStream& rng)
        : Layer(spec),
          weight_(layer_label(index, spec.kind) + ".weight",
                  he_uniform({spec.out_features, spec.in_features, spec.kernel}, spec.in_features * spec.kernel, rng)),
          bias_(layer_label(index, spec.kind) + ".bias", Tensor({spec.out_features}))
    {
    }

    Shape output_shape(const Shape& in) const override
    {
        const auto& s = spec();
        if (in.size() != 2 || in[0] != s.in_features)
            throw ShapeError("conv1d expects [" + std::to_string(s.in_features) + ", L], got " + shape_to_string(in));
        if (in[1] < s.kernel)
            throw ShapeError("conv1d kernel " + std::to_string(s.kernel) + " longer than input length " +
                             std::to_string(in[1]));
        return {s.out_features, (in[1] - s.kernel) / s.stride + 1};
    }

    Tensor forward_train(const Tensor& x, RngStream&) override
    {
        in_shape_ = x.shape();
        cols_ = im2col(x);
        has_cache_ = true;
        return apply(cols_, x.dim(0), out_length(x));
    }

    Tensor forward_eval(const Tensor& x) const override { return apply(im2col(x), x.dim(0), out_length(x)); }

    Tensor backward(const Tensor& g) override
    {
        require_cache(has_cache_, "conv1d");
        const auto& s = spec();
        const std::size_t batch = in_shape_[0], lin = in_shape_[2];
        const std::size_t lout = (lin - s.kernel) / s.stride + 1;
        const std::size_t rows = s.in_features * s.kernel;
        const std::size_t n = batch * lout;

        // Gather output grad into [Cout, B*Lout].
        MatRM gy(s.out_features, n);
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t o = 0; o < s.out_features; ++o)
                for (std::size_t t = 0; t < lout; ++t)
                    gy(o, b * lout + t) = g[(b * s.out_features + o) * lout + t];

        ConstMapRM cols(cols_.data(), rows, n);
        MapRM gw(weight_.grad.data(), s.out_features, rows);
        gw.noalias() += gy * cols.transpose();
        for (std::size_t o = 0; o < s.out_features; ++o)
            bias_.grad[o] += gy.row(o).sum();

        ConstMapRM w(weight_.value.data(), s.out_features, rows);
        MatRM gcols = w.transpose() * gy;

        Tensor gx(in_shape_);
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t c = 0; c < s.in_features; ++c)
                for (std::size_t j = 0; j < s.kernel; ++j) {
                    const std::size_t r = c * s.kernel + j;
                    double* dst = gx.data() + (b * s.in_features + c) * lin + j;
                    for (std::size_t t = 0; t < lout; ++t)
                        dst[t * s.stride] += gcols(r, b * lout + t);
                }
        release();
        return gx;
    }

    void release() override
    {
        cols_.clear();
        cols_.shrink_to_fit();
        has_cache_ = false;
    }

    std::vector<Parameter*> parameters() override { return {&weight_, &bias_}; }
    std::unique_ptr<Layer> clone() const override
    {
        auto copy = std::make_unique<Conv1d>(*this);
        copy->release();
        return copy;
    }

private:
    std::size_t out_length(const Tensor& x) const
    {
        if (x.rank() != 3 || x.dim(1) != spec().in_features || x.dim(2) < spec().kernel)
            throw ShapeError("conv1d got input " + shape_to_string(x.shape()));
        return (x.dim(2) - spec().kernel) / spec().stride + 1;
    }

    // [Cin*k, B*Lout] column matrix, row-major.
    std::vector<double> im2col(const Tensor& x) const
    {
        const auto& s = spec();
        const std::size_t batch = x.dim(0), lin = x.dim(2), lout = out_length(x);
        const std::size_t n = batch * lout;
        std::vector<double> cols(s.in_features * s.kernel * n);
        for (std::size_t c = 0; c < s.in_features; ++c)
            for (std::size_t j = 0; j < s.kernel; ++j) {
                double* row = cols.data() + (c * s.kernel + j) * n;
                for (std::size_t b = 0; b < batch; ++b) {
                    const double* src = x.data() + (b * s.in_features + c) * lin + j;
                    for (std::size_t t = 0; t < lout; ++t)
                        row[b * lout + t] = src[t * s.stride];
                }
            }
        return cols;
    }

    Tensor apply(const std::vector<double>& cols_data, std::size_t batch, std::size_t lout) const
    {
        const auto& s = spec();
        const std::size_t rows = s.in_features * s.kernel;
        const std::size_t n = batch * lout;
        ConstMapRM cols(cols_data.data(), rows, n);
        ConstMapRM w(weight_.value.data(), s.out_features, rows);
        MatRM y = w * cols;
        Tensor out({batch, s.out_features, lout});
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t o = 0; o < s.out_features; ++o) {
                double* dst = out.data() + (b * s.out_features + o) * lout;
                const double bo = bias_.value[o];
                for (std::size_t t = 0; t < lout; ++t)
                    dst[t] = y(o, b * lout + t) + bo;
            }
        return out;
    }

    Parameter weight_;
    Parameter bias_;
    Shape in_shape_;
    std::vector<double> cols_;
    bool has_cache_ = false;
};

class Linear final : public Layer {
public:
    Linear(const LayerSpec& spec, std::size_t index, RngStream& rng)
        : Layer(spec),
          weight_(layer_label(index, spec.kind) + ".weight",
                  he_uniform({spec.out_features, spec.in_features}, spec.in_features, rng)),
          bias_(layer_label(index, spec.kind) + ".bias", Tensor({spec.out_features}))
    {
    }

    Shape output_shape(const Shape& in) const override
    {
        if (in.size() != 1 || in[0] != spec().in_features)
            throw ShapeError("linear expects [" + std::to_string(spec().in_features) + "], got " +
                             shape_to_string(in));
        return {spec().out_features};
    }

    Tensor forward_train(const Tensor& x, RngStream&) override
    {
        input_ = x;
        return forward_eval(x);
    }

    Tensor forward_eval(const Tensor& x) const override
    {
        const auto& s = spec();
        if (x.rank() != 2 || x.dim(1) != s.in_features)
            throw ShapeError("linear got input " + shape_to_string(x.shape()));
        const std::size_t batch = x.dim(0);
        Tensor out({batch, s.out_features});
        ConstMapRM xm(x.data(), batch, s.in_features);
        ConstMapRM w(weight_.value.data(), s.out_features, s.in_features);
        MapRM y(out.data(), batch, s.out_features);
        y.noalias() = xm * w.transpose();
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t o = 0; o < s.out_features; ++o)
                y(b, o) += bias_.value[o];
        return out;
    }

    Tensor backward(const Tensor& g) override
    {
        require_cache(!input_.empty(), "linear");
        const auto& s = spec();
        const std::size_t batch = input_.dim(0);
        ConstMapRM gy(g.data(), batch, s.out_features);
        ConstMapRM xm(input_.data(), batch, s.in_features);
        MapRM gw(weight_.grad.data(), s.out_features, s.in_features);
        gw.noalias() += gy.transpose() * xm;
        for (std::size_t o = 0; o < s.out_features; ++o)
            bias_.grad[o] += gy.col(o).sum();
        Tensor gx({batch, s.in_features});
        ConstMapRM w(weight_.value.data(), s.out_features, s.in_features);
        MapRM(gx.data(), batch, s.in_features).noalias() = gy * w;
        release();
        return gx;
    }

    void release() override { input_ = Tensor(); }
    std::vector<Parameter*> parameters() override { return {&weight_, &bias_}; }
    std::unique_ptr<Layer> clone() const override
    {
        auto copy = std::make_unique<Linear>(*this);
        copy->release();
        return copy;
    }

private:
    Parameter weight_;
    Parameter bias_;
    Tensor input_;
};

class BatchNorm1d final : public Layer {
public:
    BatchNorm1d(const LayerSpec& spec, std::size_t index)
        : Layer(spec),
          gamma_(layer_label(index, spec.kind) + ".weight", Tensor({spec.in_features}, 1.0)),
          beta_(layer_label(index, spec.kind) + ".bias", Tensor({spec.in_features})),
          running_mean_({spec.in_features}, 0.0),
          running_var_({spec.in_features}, 1.0),
          prefix_(layer_label(index, spec.kind))
    {
    }

    Shape output_shape(const Shape& in) const override
    {
        if (in.empty() || in.size() > 2 || in[0] != spec().in_features)
            throw ShapeError("batchnorm1d expects [" + std::to_string(spec().in_features) + "] or [" +
                             std::to_string(spec().in_features) + ", L], got " + shape_to_string(in));
        return in;
    }

    Tensor forward_train(const Tensor& x, RngStream&) override
    {
        const auto d = check(x);
        const double n = static_cast<double>(d.batch * d.length);
        xhat_ = Tensor(x.shape());
        inv_std_.assign(d.channels, 0.0);
        Tensor out(x.shape());
        for (std::size_t c = 0; c < d.channels; ++c) {
            double mean = 0.0;
            for_each(d, c, [&](std::size_t i) { mean += x[i]; });
            mean /= n;
            double var = 0.0;
            for_each(d, c, [&](std::size_t i) { var += (x[i] - mean) * (x[i] - mean); });
            var /= n;
            const double inv = 1.0 / std::sqrt(var + spec().eps);
            inv_std_[c] = inv;
            for_each(d, c, [&](std::size_t i) {
                xhat_[i] = (x[i] - mean) * inv;
                out[i] = gamma_.value[c] * xhat_[i] + beta_.value[c];
            });
            const double unbiased = n > 1.0 ? var * n / (n - 1.0) : var;
            const double m = spec().momentum;
            running_mean_[c] = (1.0 - m) * running_mean_[c] + m * mean;
            // Keep running variance strictly positive.
            running_var_[c] = std::max((1.0 - m) * running_var_[c] + m * unbiased, 1e-300);
        }
        has_cache_ = true;
        return out;
    }

    Tensor forward_eval(const Tensor& x) const override
    {
        const auto d = check(x);
        Tensor out(x.shape());
        for (std::size_t c = 0; c < d.channels; ++c) {
            const double inv = 1.0 / std::sqrt(running_var_[c] + spec().eps);
            const double mean = running_mean_[c];
            for_each(d, c, [&](std::size_t i) { out[i] = gamma_.value[c] * (x[i] - mean) * inv + beta_.value[c]; });
        }
        return out;
    }

    Tensor backward(const Tensor& g) override
    {
        require_cache(has_cache_, "batchnorm1d");
        const auto d = dims3(g);
        const double n = static_cast<double>(d.batch * d.length);
        Tensor gx(g.shape());
        for (std::size_t c = 0; c < d.channels; ++c) {
            double sum_g = 0.0, sum_gx = 0.0;
            for_each(d, c, [&](std::size_t i) {
                sum_g += g[i];
                sum_gx += g[i] * xhat_[i];
            });
            gamma_.grad[c] += sum_gx;
            beta_.grad[c] += sum_g;
            const double gam = gamma_.value[c];
            const double k = gam * inv_std_[c] / n;
            for_each(d, c, [&](std::size_t i) { gx[i] = k * (n * g[i] - sum_g - xhat_[i] * sum_gx); });
        }
        release();
        return gx;
    }

    void release() override
    {
        xhat_ = Tensor();
        inv_std_.clear();
        has_cache_ = false;
    }

    std::vector<Parameter*> parameters() override { return {&gamma_, &beta_}; }
    std::vector<Buffer> buffers() override
    {
        return {{prefix_ + ".running_mean", &running_mean_}, {prefix_ + ".running_var", &running_var_}};
    }
    std::unique_ptr<Layer> clone() const override
    {
        auto copy = std::make_unique<BatchNorm1d>(*this);
        copy->release();
        return copy;
    }

private:
    Dims3 check(const Tensor& x) const
    {
        const auto d = dims3(x);
        if (d.channels != spec().in_features)
            throw ShapeError("batchnorm1d got input " + shape_to_string(x.shape()));
        return d;
    }

    template <typename F>
    static void for_each(const Dims3& d, std::size_t c, F&& f)
    {
        for (std::size_t b = 0; b < d.batch; ++b) {
            const std::size_t base = (b * d.channels + c) * d.length;
            for (std::size_t t = 0; t < d.length; ++t)
                f(base + t);
        }
    }

    Parameter gamma_;
    Parameter beta_;
    Tensor running_mean_;
    Tensor running_var_;
    std::string prefix_;
    Tensor xhat_;
    std::vector<double> inv_std_;
    bool has_cache_ = false;
};

class Relu final : public Layer {
public:
    explicit Relu(const LayerSpec& spec) : Layer(spec) {}

    Shape output_shape(const Shape& in) const override { return in; }

    Tensor forward_train(const Tensor& x, RngStream&) override
    {
        input_ = x;
        return forward_eval(x);
    }

    Tensor forward_eval(const Tensor& x) const override
    {
        Tensor out = x;
        for (auto& v : out.values())
            v = v > 0.0 ? v : 0.0;
        return out;
    }

    Tensor backward(const Tensor& g) override
    {
        require_cache(!input_.empty(), "relu");
        Tensor gx = g;
        for (std::size_t i = 0; i < gx.size(); ++i)
            if (!(input_[i] > 0.0))
                gx[i] = 0.0;
        release();
        return gx;
    }

    void release() override { input_ = Tensor(); }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Relu>(spec()); }

private:
    Tensor input_;
};

class MaxPool1d final : public Layer {
public:
    explicit MaxPool1d(const LayerSpec& spec) : Layer(spec) {}

    Shape output_shape(const Shape& in) const override
    {
        if (in.size() != 2 || in[1] < spec().kernel)
            throw ShapeError("maxpool1d of size " + std::to_string(spec().kernel) + " cannot pool " +
                             shape_to_string(in));
        return {in[0], in[1] / spec().kernel};
    }

    Tensor forward_train(const Tensor& x, RngStream&) override
    {
        in_shape_ = x.shape();
        has_cache_ = true;
        return pool(x, &argmax_);
    }

    Tensor forward_eval(const Tensor& x) const override { return pool(x, nullptr); }

    Tensor backward(const Tensor& g) override
    {
        require_cache(has_cache_, "maxpool1d");
        Tensor gx(in_shape_);
        for (std::size_t i = 0; i < g.size(); ++i)
            gx[argmax_[i]] += g[i];
        release();
        return gx;
    }

    void release() override
    {
        argmax_.clear();
        has_cache_ = false;
    }

    std::unique_ptr<Layer> clone() const override { return std::make_unique<MaxPool1d>(spec()); }

private:
    Tensor pool(const Tensor& x, std::vector<std::size_t>* argmax) const
    {
        if (x.rank() != 3 || x.dim(2) < spec().kernel)
            throw ShapeError("maxpool1d got input " + shape_to_string(x.shape()));
        const std::size_t p = spec().kernel, lin = x.dim(2), lout = lin / p;
        const std::size_t rows = x.dim(0) * x.dim(1);
        Tensor out({x.dim(0), x.dim(1), lout});
        if (argmax)
            argmax->assign(out.size(), 0);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t t = 0; t < lout; ++t) {
                std::size_t best = r * lin + t * p;
                for (std::size_t j = 1; j < p; ++j)
                    if (x[r * lin + t * p + j] > x[best])
                        best = r * lin + t * p + j;
                out[r * lout + t] = x[best];
                if (argmax)
                    (*argmax)[r * lout + t] = best;
            }
        return out;
    }

    Shape in_shape_;
    std::vector<std::size_t> argmax_;
    bool has_cache_ = false;
};

class Dropout final : public Layer {
public:
    explicit Dropout(const LayerSpec& spec) : Layer(spec) {}

    Shape output_shape(const Shape& in) const override { return in; }

    Tensor forward_train(const Tensor& x, RngStream& rng) override
    {
        const double rate = spec().rate;
        mask_ = Tensor(x.shape(), 1.0);
        if (rate > 0.0) {
            const double keep = 1.0 / (1.0 - rate);
            for (auto& m : mask_.values())
                m = rng.uniform() >= rate ? keep : 0.0;
        }
        Tensor out = x;
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] *= mask_[i];
        return out;
    }

    Tensor forward_eval(const Tensor& x) const override { return x; }

    Tensor backward(const Tensor& g) override
    {
        require_cache(!mask_.empty(), "dropout");
        Tensor gx = g;
        for (std::size_t i = 0; i < gx.size(); ++i)
            gx[i] *= mask_[i];
        release();
        return gx;
    }

    void release() override { mask_ = Tensor(); }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Dropout>(spec()); }

private:
    Tensor mask_;
};

class Flatten final : public Layer {
public:
    explicit Flatten(const LayerSpec& spec) : Layer(spec) {}

    Shape output_shape(const Shape& in) const override { return {shape_size(in)}; }

    Tensor forward_train(const Tensor& x, RngStream&) override
    {
        in_shape_ = x.shape();
        return forward_eval(x);
    }

    Tensor forward_eval(const Tensor& x) const override
    {
        return x.reshaped({x.dim(0), x.size() / x.dim(0)});
    }

    Tensor backward(const Tensor& g) override
    {
        require_cache(!in_shape_.empty(), "flatten");
        Tensor gx = g.reshaped(in_shape_);
        release();
        return gx;
    }

    void release() override { in_shape_.clear(); }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Flatten>(spec()); }

private:
    Shape in_shape_;
};

}  // namespace

std::unique_ptr<Layer> make_layer(const LayerSpec& spec, std::size_t index, RngStream& init_rng)
{
    spec.validate();
    switch (spec.kind) {
    case LayerKind::conv1d: return std::make_unique<Conv1d>(spec, index, init_rng);
    case LayerKind::linear: return std::make_unique<Linear>(spec, index, init_rng);
    case LayerKind::batchnorm1d: return std::make_unique<BatchNorm1d>(spec, index);
    case LayerKind::relu: return std::make_unique<Relu>(spec);
    case LayerKind::maxpool1d: return std::make_unique<MaxPool1d>(spec);
    case LayerKind::dropout: return std::make_unique<Dropout>(spec);
    case LayerKind::flatten: return std::make_unique<Flatten>(spec);
    }
    throw std::invalid_argument("unknown layer kind");
}

}  // namespace uac::diffcore
