#include "uac/diffcore/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace uac::diffcore {

std::size_t shape_size(const Shape& shape)
{
    std::size_t n = 1;
    for (auto d : shape)
        n *= d;
    return n;
}

std::string shape_to_string(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i)
        os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape))
{
    for (auto d : shape_)
        if (d == 0)
            throw ShapeError("tensor dimensions must be positive, got " + shape_to_string(shape_));
    values_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values))
{
    for (auto d : shape_)
        if (d == 0)
            throw ShapeError("tensor dimensions must be positive, got " + shape_to_string(shape_));
    if (shape_size(shape_) != values_.size())
        throw ShapeError("tensor shape " + shape_to_string(shape_) + " does not match " +
                         std::to_string(values_.size()) + " values");
}

Tensor Tensor::from(std::initializer_list<double> values)
{
    return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::reshaped(Shape shape) const
{
    return Tensor(std::move(shape), values_);
}

void Tensor::fill(double value)
{
    std::fill(values_.begin(), values_.end(), value);
}

bool Tensor::all_finite() const
{
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace uac::diffcore
