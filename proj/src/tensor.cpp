#include "sspda/tensor.hpp"

#include <cmath>
#include <sstream>

#include "sspda/errors.hpp"

namespace sspda {

namespace {

int checked_numel(const std::vector<int>& shape) {
    long long n = 1;
    for (int d : shape) {
        if (d <= 0) throw DimensionError("tensor dimensions must be positive");
        n *= d;
        if (n > (1LL << 31)) throw DimensionError("tensor too large");
    }
    return static_cast<int>(n);
}

}  // namespace

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    values_.assign(static_cast<std::size_t>(checked_numel(shape_)), 0.0);
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
    if (checked_numel(shape_) != static_cast<int>(values_.size())) {
        throw DimensionError("tensor shape does not match number of values");
    }
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

int Tensor::dim(int axis) const {
    if (axis < 0 || axis >= rank()) throw IndexError("tensor axis out of range");
    return shape_[static_cast<std::size_t>(axis)];
}

double Tensor::item() const {
    if (numel() != 1) throw DimensionError("item() requires a single-element tensor");
    return values_[0];
}

int Tensor::offset2(int i, int j) const {
    if (rank() != 2) throw DimensionError("expected rank-2 tensor, got " + shape_str());
    if (i < 0 || i >= shape_[0] || j < 0 || j >= shape_[1]) {
        throw IndexError("tensor index out of range");
    }
    return i * shape_[1] + j;
}

int Tensor::offset3(int c, int y, int x) const {
    if (rank() != 3) throw DimensionError("expected rank-3 tensor, got " + shape_str());
    if (c < 0 || c >= shape_[0] || y < 0 || y >= shape_[1] || x < 0 || x >= shape_[2]) {
        throw IndexError("tensor index out of range");
    }
    return (c * shape_[1] + y) * shape_[2] + x;
}

int Tensor::offset4(int b, int c, int y, int x) const {
    if (rank() != 4) throw DimensionError("expected rank-4 tensor, got " + shape_str());
    if (b < 0 || b >= shape_[0] || c < 0 || c >= shape_[1] || y < 0 || y >= shape_[2] ||
        x < 0 || x >= shape_[3]) {
        throw IndexError("tensor index out of range");
    }
    return ((b * shape_[1] + c) * shape_[2] + y) * shape_[3] + x;
}

double& Tensor::at(int i, int j) { return values_[static_cast<std::size_t>(offset2(i, j))]; }
double Tensor::at(int i, int j) const { return values_[static_cast<std::size_t>(offset2(i, j))]; }

double& Tensor::at(int c, int y, int x) {
    return values_[static_cast<std::size_t>(offset3(c, y, x))];
}
double Tensor::at(int c, int y, int x) const {
    return values_[static_cast<std::size_t>(offset3(c, y, x))];
}

double& Tensor::at(int b, int c, int y, int x) {
    return values_[static_cast<std::size_t>(offset4(b, c, y, x))];
}
double Tensor::at(int b, int c, int y, int x) const {
    return values_[static_cast<std::size_t>(offset4(b, c, y, x))];
}

void Tensor::ensure_grad() {
    if (grad_.size() != values_.size()) grad_.assign(values_.size(), 0.0);
}

void Tensor::zero_grad() {
    if (grad_.empty()) {
        ensure_grad();
    } else {
        std::fill(grad_.begin(), grad_.end(), 0.0);
    }
}

std::vector<double>& Tensor::grad() {
    if (grad_.empty()) throw ContractError("gradient buffer not allocated");
    return grad_;
}

const std::vector<double>& Tensor::grad() const {
    if (grad_.empty()) throw ContractError("gradient buffer not allocated");
    return grad_;
}

bool Tensor::all_finite() const {
    for (double v : values_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) os << 'x';
        os << shape_[i];
    }
    os << ']';
    return os.str();
}

}  // namespace sspda
