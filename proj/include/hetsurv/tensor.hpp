#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace hetsurv {

// Dense row-major tensor of 64-bit floats. The single numeric carrier for the
// whole pipeline; shapes are small enough at desk scale that value semantics
// (copy = deep copy) keep ownership trivial.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);
    Tensor(std::vector<int> shape, std::vector<double> values);
    Tensor(std::vector<int> shape, double fill);

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
    static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }
    static Tensor identity(int n);

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    std::int64_t size() const { return static_cast<std::int64_t>(values_.size()); }

    // 2-D convenience accessors; most of the pipeline lives in matrices.
    int rows() const { return shape_.empty() ? 0 : shape_[0]; }
    int cols() const { return shape_.size() < 2 ? 1 : shape_[1]; }

    double* data() { return values_.data(); }
    const double* data() const { return values_.data(); }
    std::vector<double>& values() { return values_; }
    const std::vector<double>& values() const { return values_; }

    double& operator[](std::int64_t i) { return values_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return values_[static_cast<std::size_t>(i)]; }

    double& at(int i, int j) { return values_[static_cast<std::size_t>(i) * cols_stride() + j]; }
    double at(int i, int j) const { return values_[static_cast<std::size_t>(i) * cols_stride() + j]; }
    double& at3(int i, int j, int k);
    double at3(int i, int j, int k) const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;
    double scalar_value() const;  // requires size()==1

    void fill(double v);
    std::string shape_str() const;

    bool operator==(const Tensor& other) const {
        return shape_ == other.shape_ && values_ == other.values_;
    }

  private:
    std::size_t cols_stride() const { return static_cast<std::size_t>(cols()); }

    std::vector<int> shape_;
    std::vector<double> values_;
};

std::string shape_str(const std::vector<int>& shape);

// Throws DimensionError naming both shapes when they disagree.
void require_same_shape(const Tensor& a, const Tensor& b, const std::string& what);

// max |a-b| over all entries; shapes must agree.
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace hetsurv
