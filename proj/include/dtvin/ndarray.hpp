#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace dtvin::gradcore {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Dense row-major array of doubles.
class NdArray {
public:
    NdArray() = default;
    explicit NdArray(Shape shape, double fill = 0.0);
    NdArray(Shape shape, std::vector<double> data);

    static NdArray zeros(Shape shape) { return NdArray(std::move(shape), 0.0); }
    static NdArray scalar(double v) { return NdArray(Shape{1}, std::vector<double>{v}); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const { return data_.size(); }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    std::vector<double>& storage() { return data_; }
    const std::vector<double>& storage() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    const double& operator[](std::size_t i) const { return data_[i]; }

    // Row-major indexing for rank 2 and 3 arrays.
    double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    double& at(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    double at(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    /// Same data, new shape. Throws if the element count differs.
    NdArray reshaped(Shape shape) const;
    void fill(double v);
    bool all_finite() const;
    double abs_sum() const;
    double abs_max() const;

    friend bool operator==(const NdArray& a, const NdArray& b) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

}  // namespace dtvin::gradcore
