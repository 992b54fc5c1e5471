#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace dtd {

// Dense row-major tensor of doubles. Rank 0 is a scalar, rank 1 a vector
// (treated as a 1 x n row where matrix semantics are needed), rank 2 a matrix.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);
    Tensor(std::vector<int> shape, std::vector<double> data);

    static Tensor scalar(double v);
    static Tensor zeros(std::vector<int> shape);
    static Tensor full(std::vector<int> shape, double v);
    static Tensor row(std::vector<double> v);
    static Tensor matrix(int rows, int cols, std::vector<double> data);
    static Tensor identity(int n);

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::size_t size() const { return data_.size(); }

    // Matrix view: scalars are 1x1, vectors 1xn.
    int rows() const;
    int cols() const;

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& at(int r, int c) { return data_[static_cast<std::size_t>(r) * cols() + c]; }
    double at(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols() + c]; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;

    Tensor reshaped(std::vector<int> shape) const;

    std::string shape_str() const;

    bool operator==(const Tensor& other) const {
        return shape_ == other.shape_ && data_ == other.data_;
    }

  private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

std::size_t shape_count(const std::vector<int>& shape);

}  // namespace dtd
