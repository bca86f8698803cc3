#include "dtvin/ndarray.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace dtvin::gradcore {

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        n *= d;
    }
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream out;
    out << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i != 0) {
            out << 'x';
        }
        out << shape[i];
    }
    out << ')';
    return out.str();
}

NdArray::NdArray(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

NdArray::NdArray(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != data_.size()) {
        throw std::invalid_argument("NdArray: shape " + shape_to_string(shape_) + " does not match " +
                                    std::to_string(data_.size()) + " values");
    }
}

NdArray NdArray::reshaped(Shape shape) const {
    return NdArray(std::move(shape), data_);
}

void NdArray::fill(double v) {
    for (double& x : data_) {
        x = v;
    }
}

bool NdArray::all_finite() const {
    for (double x : data_) {
        if (!std::isfinite(x)) {
            return false;
        }
    }
    return true;
}

double NdArray::abs_sum() const {
    double s = 0.0;
    for (double x : data_) {
        s += std::fabs(x);
    }
    return s;
}

double NdArray::abs_max() const {
    double m = 0.0;
    for (double x : data_) {
        m = std::max(m, std::fabs(x));
    }
    return m;
}

}  // namespace dtvin::gradcore
