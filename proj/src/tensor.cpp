#include "hetsurv/tensor.hpp"

#include <cmath>
#include <sstream>

#include "hetsurv/errors.hpp"

namespace hetsurv {

namespace {

std::int64_t shape_product(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw DimensionError("tensor dimension must be positive, got shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

}  // namespace

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    values_.assign(static_cast<std::size_t>(shape_product(shape_)), 0.0);
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
    if (shape_product(shape_) != static_cast<std::int64_t>(values_.size())) {
        throw DimensionError("tensor value count " + std::to_string(values_.size()) +
                             " does not match shape " + hetsurv::shape_str(shape_));
    }
}

Tensor::Tensor(std::vector<int> shape, double fill) : shape_(std::move(shape)) {
    values_.assign(static_cast<std::size_t>(shape_product(shape_)), fill);
}

Tensor Tensor::identity(int n) {
    Tensor t({n, n});
    for (int i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
}

double& Tensor::at3(int i, int j, int k) {
    const std::size_t d1 = static_cast<std::size_t>(shape_[1]);
    const std::size_t d2 = static_cast<std::size_t>(shape_[2]);
    return values_[(static_cast<std::size_t>(i) * d1 + static_cast<std::size_t>(j)) * d2 + static_cast<std::size_t>(k)];
}

double Tensor::at3(int i, int j, int k) const {
    const std::size_t d1 = static_cast<std::size_t>(shape_[1]);
    const std::size_t d2 = static_cast<std::size_t>(shape_[2]);
    return values_[(static_cast<std::size_t>(i) * d1 + static_cast<std::size_t>(j)) * d2 + static_cast<std::size_t>(k)];
}

bool Tensor::all_finite() const {
    for (double v : values_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

double Tensor::scalar_value() const {
    if (values_.size() != 1) {
        throw DimensionError("expected scalar tensor, got shape " + hetsurv::shape_str(shape_));
    }
    return values_[0];
}

void Tensor::fill(double v) {
    for (double& x : values_) x = v;
}

std::string Tensor::shape_str() const { return hetsurv::shape_str(shape_); }

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

void require_same_shape(const Tensor& a, const Tensor& b, const std::string& what) {
    if (!a.same_shape(b)) {
        throw DimensionError(what + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::fabs(a[i] - b[i]));
    }
    return m;
}

}  // namespace hetsurv
