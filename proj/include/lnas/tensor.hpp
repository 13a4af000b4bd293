#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lnas {

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct NonFiniteError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major double tensor. Every entry is finite; constructors and
// mutating helpers that can introduce NaN/Inf throw NonFiniteError.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor filled(Shape shape, double value);
    static Tensor scalar(double value) { return Tensor({1}, {value}); }
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    {
        return Tensor({rows, cols}, std::move(data));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

    // Throws NonFiniteError naming `where` if any entry is NaN or Inf.
    void check_finite(const char* where) const;

    friend bool operator==(const Tensor& a, const Tensor& b) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);

} // namespace lnas
