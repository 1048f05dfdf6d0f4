#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace laser {

// Dense row-major float tensor. Shapes are small and fixed per backbone, so the
// type is a plain value: copies are deep and cheap enough for trace capture.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape, float fill = 0.0f);
    Tensor(std::vector<int> shape, std::vector<float> data);

    const std::vector<int>& shape() const { return shape_; }
    int dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<float> data() { return data_; }
    std::span<const float> data() const { return data_; }
    float* raw() { return data_.data(); }
    const float* raw() const { return data_.data(); }

    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;
    std::string shape_str() const;

    // Value equality (0.0 == -0.0). Use bit_equal for reproducibility checks.
    friend bool operator==(const Tensor& a, const Tensor& b) = default;

private:
    std::vector<int> shape_;
    std::vector<float> data_;
};

std::string shape_str(const std::vector<int>& shape);

bool bit_equal(const Tensor& a, const Tensor& b);

// Throws ShapeError naming `what` when shapes differ.
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

// (1 - t) * a + t * b, evaluated elementwise in that literal form.
Tensor lerp(const Tensor& a, const Tensor& b, double t);

// ca * a + cb * b
Tensor axpby(double ca, const Tensor& a, double cb, const Tensor& b);

Tensor scaled(const Tensor& a, double s);

double l2_norm(const Tensor& a);
double l2_distance(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);

// ||a - reference|| / ||reference||
double relative_error(const Tensor& a, const Tensor& reference);

}  // namespace laser
