#include "laser/tensor.hpp"

#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>

#include "laser/errors.hpp"

namespace laser {

namespace {

std::size_t element_count(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) {
            throw ShapeError("negative dimension in shape " + laser::shape_str(shape));
        }
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

}  // namespace

Tensor::Tensor(std::vector<int> shape, float fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(std::vector<int> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (element_count(shape_) != data_.size()) {
        throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                         laser::shape_str(shape_));
    }
}

bool Tensor::all_finite() const {
    for (float x : data_) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

std::string Tensor::shape_str() const { return laser::shape_str(shape_); }

std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += " x ";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() &&
           std::memcmp(a.raw(), b.raw(), a.size() * sizeof(float)) == 0;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
    }
}

Tensor lerp(const Tensor& a, const Tensor& b, double t) {
    require_same_shape(a, b, "lerp");
    Tensor out(a.shape());
    const float wa = static_cast<float>(1.0 - t);
    const float wb = static_cast<float>(t);
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = wa * a[i] + wb * b[i];
    return out;
}

Tensor axpby(double ca, const Tensor& a, double cb, const Tensor& b) {
    require_same_shape(a, b, "axpby");
    Tensor out(a.shape());
    const float fa = static_cast<float>(ca);
    const float fb = static_cast<float>(cb);
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = fa * a[i] + fb * b[i];
    return out;
}

Tensor scaled(const Tensor& a, double s) {
    Tensor out(a.shape());
    const float f = static_cast<float>(s);
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = f * a[i];
    return out;
}

double l2_norm(const Tensor& a) {
    double acc = 0.0;
    for (float x : a.data()) acc += static_cast<double>(x) * x;
    return std::sqrt(acc);
}

double l2_distance(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "l2_distance");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
    }
    return m;
}

double relative_error(const Tensor& a, const Tensor& reference) {
    const double denom = l2_norm(reference);
    const double num = l2_distance(a, reference);
    return denom > 0.0 ? num / denom : num;
}

}  // namespace laser
