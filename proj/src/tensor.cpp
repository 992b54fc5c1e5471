#include "dtd/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace dtd {

std::size_t shape_count(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor dimensions must be positive");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

Tensor::Tensor(std::vector<int> shape)
    : shape_(std::move(shape)), data_(shape_count(shape_), 0.0) {}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_count(shape_) != data_.size()) {
        throw std::invalid_argument("tensor data length does not match shape " + shape_str());
    }
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

Tensor Tensor::zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
}

Tensor Tensor::row(std::vector<double> v) {
    const int n = static_cast<int>(v.size());
    return Tensor({n}, std::move(v));
}

Tensor Tensor::matrix(int rows, int cols, std::vector<double> data) {
    return Tensor({rows, cols}, std::move(data));
}

Tensor Tensor::identity(int n) {
    Tensor t({n, n});
    for (int i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
}

int Tensor::rows() const {
    if (shape_.size() >= 2) return shape_[0];
    return 1;
}

int Tensor::cols() const {
    if (shape_.size() >= 2) return shape_[1];
    if (shape_.size() == 1) return shape_[0];
    return 1;
}

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Tensor Tensor::reshaped(std::vector<int> shape) const {
    if (shape_count(shape) != data_.size()) {
        throw std::invalid_argument("reshape element count mismatch for " + shape_str());
    }
    return Tensor(std::move(shape), data_);
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) os << "x";
        os << shape_[i];
    }
    os << "]";
    return os.str();
}

}  // namespace dtd
