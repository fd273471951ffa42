#pragma once

#include <string>
#include <vector>

namespace sspda {

/// Dense n-dimensional array of doubles with an optional gradient buffer.
/// The gradient buffer exists only while the tensor participates in
/// differentiation; shapes of values and grad always agree.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);  // zero-filled
    Tensor(std::vector<int> shape, std::vector<double> values);

    static Tensor scalar(double v);

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int axis) const;
    int numel() const { return static_cast<int>(values_.size()); }

    double* data() { return values_.data(); }
    const double* data() const { return values_.data(); }
    std::vector<double>& values() { return values_; }
    const std::vector<double>& values() const { return values_; }

    // Value of a single-element tensor.
    double item() const;

    // Checked accessors for the ranks the engine uses.
    double& at(int i, int j);
    double at(int i, int j) const;
    double& at(int c, int y, int x);
    double at(int c, int y, int x) const;
    double& at(int b, int c, int y, int x);
    double at(int b, int c, int y, int x) const;

    bool has_grad() const { return !grad_.empty(); }
    void ensure_grad();
    void drop_grad() { grad_.clear(); }
    void zero_grad();
    std::vector<double>& grad();
    const std::vector<double>& grad() const;

    bool all_finite() const;
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    std::string shape_str() const;

private:
    int offset2(int i, int j) const;
    int offset3(int c, int y, int x) const;
    int offset4(int b, int c, int y, int x) const;

    std::vector<int> shape_;
    std::vector<double> values_;
    std::vector<double> grad_;
};

}  // namespace sspda
