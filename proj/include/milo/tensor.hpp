#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace milo {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Index = Eigen::Index;

/// Raised when operand shapes are incompatible.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when a value contains NaN or Inf where finite data is required.
class NonFiniteError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

inline std::string shape_string(Index rows, Index cols)
{
    return std::to_string(rows) + "x" + std::to_string(cols);
}

template <typename Derived>
std::string shape_string(const Eigen::DenseBase<Derived>& m)
{
    return shape_string(m.rows(), m.cols());
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m)
{
    return m.derived().array().isFinite().all();
}

/// Flat row-major array with an explicit shape. This is the interchange form
/// used by the on-disk container; computations run on Eigen matrices.
class TensorValue {
public:
    TensorValue() = default;

    /// Throws ShapeError when product(shape) != data.size() and NonFiniteError
    /// on NaN/Inf unless `allow_non_finite` is set.
    TensorValue(std::vector<std::size_t> shape, std::vector<double> data, bool allow_non_finite = false);

    /// Rank 2 for matrices, rank 1 for column vectors.
    static TensorValue from_matrix(const Matrix& m);
    static TensorValue from_vector(const Vector& v);

    /// Rank 0/1 tensors become a column; rank 2 is taken as rows x cols.
    Matrix to_matrix() const;
    Vector to_vector() const;

    const std::vector<std::size_t>& shape() const noexcept { return shape_; }
    const std::vector<double>& data() const noexcept { return data_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }

    friend bool operator==(const TensorValue&, const TensorValue&) = default;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

} // namespace milo
