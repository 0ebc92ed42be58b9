#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "fusion/errors.hpp"

namespace fusion {

using Index = Eigen::Index;

template <typename Scalar> using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar> using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar> using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

/// Dense rank-1..4 array in row-major order. Rank-4 activations use the
/// batch x height x width x channels layout, so the last dimension is always
/// the channel axis and `matrix()` views the tensor as (positions x channels).
template <typename Scalar> class Tensor {
public:
    using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

    Tensor() = default;

    explicit Tensor(std::vector<Index> shape) : shape_(std::move(shape))
    {
        validate_shape(shape_);
        data_ = Storage::Zero(product(shape_));
    }

    Tensor(std::initializer_list<Index> shape) : Tensor(std::vector<Index>(shape)) {}

    Tensor(std::vector<Index> shape, Storage data) : shape_(std::move(shape)), data_(std::move(data))
    {
        validate_shape(shape_);
        if (product(shape_) != data_.size())
            throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " + shape_string(shape_));
    }

    static Tensor constant(std::vector<Index> shape, Scalar value)
    {
        Tensor t(std::move(shape));
        t.data_.setConstant(value);
        return t;
    }

    static Tensor from_values(std::vector<Index> shape, std::initializer_list<Scalar> values)
    {
        Storage s(static_cast<Index>(values.size()));
        Index i = 0;
        for (Scalar v : values)
            s[i++] = v;
        return Tensor(std::move(shape), std::move(s));
    }

    const std::vector<Index>& shape() const { return shape_; }
    Index rank() const { return static_cast<Index>(shape_.size()); }
    Index dim(Index i) const { return shape_[static_cast<std::size_t>(i)]; }
    Index size() const { return data_.size(); }
    bool empty() const { return shape_.empty(); }

    /// Size of the trailing (channel) axis.
    Index channels() const { return shape_.back(); }

    Storage& array() { return data_; }
    const Storage& array() const { return data_; }
    Scalar* data() { return data_.data(); }
    const Scalar* data() const { return data_.data(); }

    Scalar& operator[](Index i) { return data_[i]; }
    Scalar operator[](Index i) const { return data_[i]; }

    Scalar& operator()(Index n, Index h, Index w, Index c) { return data_[offset4(n, h, w, c)]; }
    Scalar operator()(Index n, Index h, Index w, Index c) const { return data_[offset4(n, h, w, c)]; }

    /// (size / channels) x channels row-major view.
    MatrixMap<Scalar> matrix() { return MatrixMap<Scalar>(data(), size() / channels(), channels()); }
    ConstMatrixMap<Scalar> matrix() const { return ConstMatrixMap<Scalar>(data(), size() / channels(), channels()); }

    Tensor reshaped(std::vector<Index> shape) const { return Tensor(std::move(shape), data_); }

    template <typename Other> Tensor<Other> cast() const { return Tensor<Other>(shape_, data_.template cast<Other>()); }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    friend bool operator==(const Tensor& a, const Tensor& b)
    {
        return a.shape_ == b.shape_ && (a.data_ == b.data_).all();
    }

    static std::string shape_string(const std::vector<Index>& shape)
    {
        std::ostringstream os;
        os << '[';
        for (std::size_t i = 0; i < shape.size(); ++i)
            os << (i ? "x" : "") << shape[i];
        os << ']';
        return os.str();
    }

    std::string shape_string() const { return shape_string(shape_); }

private:
    static Index product(const std::vector<Index>& shape)
    {
        return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
    }

    static void validate_shape(const std::vector<Index>& shape)
    {
        if (shape.empty() || shape.size() > 4)
            throw ShapeError("tensor rank must be 1..4, got " + std::to_string(shape.size()));
        for (Index d : shape)
            if (d < 1)
                throw ShapeError("tensor dimensions must be positive: " + shape_string(shape));
    }

    Index offset4(Index n, Index h, Index w, Index c) const
    {
        return ((n * shape_[1] + h) * shape_[2] + w) * shape_[3] + c;
    }

    std::vector<Index> shape_;
    Storage data_;
};

using TensorD = Tensor<double>;
using TensorF = Tensor<float>;

/// Max elementwise |a - b|; shapes must agree.
template <typename Scalar> Scalar max_abs_diff(const Tensor<Scalar>& a, const Tensor<Scalar>& b)
{
    if (!a.same_shape(b))
        throw ShapeError("max_abs_diff: " + a.shape_string() + " vs " + b.shape_string());
    return (a.array() - b.array()).abs().maxCoeff();
}

} // namespace fusion
