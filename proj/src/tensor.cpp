#include "lnas/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace lnas {

std::size_t shape_size(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

std::string shape_string(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i)
            os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_size(shape_), 0.0) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data))
{
    if (shape_size(shape_) != data_.size())
        throw ShapeError("tensor shape " + shape_string(shape_) + " does not match " +
                         std::to_string(data_.size()) + " values");
    check_finite("Tensor construction");
}

Tensor Tensor::filled(Shape shape, double value)
{
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    t.check_finite("Tensor::filled");
    return t;
}

std::size_t Tensor::rows() const
{
    if (shape_.size() != 2)
        throw ShapeError("rows() on non-matrix tensor " + shape_string(shape_));
    return shape_[0];
}

std::size_t Tensor::cols() const
{
    if (shape_.size() != 2)
        throw ShapeError("cols() on non-matrix tensor " + shape_string(shape_));
    return shape_[1];
}

void Tensor::check_finite(const char* where) const
{
    for (double v : data_) {
        if (!std::isfinite(v))
            throw NonFiniteError(std::string("non-finite value produced by ") + where);
    }
}

double dot(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size())
        throw ShapeError("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += a[i] * b[i];
    return s;
}

double norm2(std::span<const double> a)
{
    return std::sqrt(dot(a, a));
}

} // namespace lnas
