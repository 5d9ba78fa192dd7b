#include "milo/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>

namespace milo {

TensorValue::TensorValue(std::vector<std::size_t> shape, std::vector<double> data, bool allow_non_finite)
    : shape_(std::move(shape)), data_(std::move(data))
{
    const std::size_t expected =
        std::accumulate(shape_.begin(), shape_.end(), std::size_t{1}, std::multiplies<>());
    if (expected != data_.size()) {
        throw ShapeError("TensorValue: shape product " + std::to_string(expected) +
                         " does not match data length " + std::to_string(data_.size()));
    }
    if (!allow_non_finite) {
        for (double x : data_) {
            if (!std::isfinite(x)) {
                throw NonFiniteError("TensorValue: non-finite entry");
            }
        }
    }
}

TensorValue TensorValue::from_matrix(const Matrix& m)
{
    std::vector<double> data(static_cast<std::size_t>(m.size()));
    for (Index r = 0; r < m.rows(); ++r) {
        for (Index c = 0; c < m.cols(); ++c) {
            data[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
        }
    }
    return TensorValue({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                       std::move(data));
}

TensorValue TensorValue::from_vector(const Vector& v)
{
    return TensorValue({static_cast<std::size_t>(v.size())}, std::vector<double>(v.data(), v.data() + v.size()));
}

Matrix TensorValue::to_matrix() const
{
    if (rank() > 2) {
        throw ShapeError("TensorValue: rank " + std::to_string(rank()) + " cannot be viewed as a matrix");
    }
    const Index rows = rank() == 0 ? 1 : static_cast<Index>(shape_[0]);
    const Index cols = rank() == 2 ? static_cast<Index>(shape_[1]) : 1;
    Matrix m(rows, cols);
    for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < cols; ++c) {
            m(r, c) = data_[static_cast<std::size_t>(r * cols + c)];
        }
    }
    return m;
}

Vector TensorValue::to_vector() const
{
    return Eigen::Map<const Vector>(data_.data(), static_cast<Index>(data_.size()));
}

} // namespace milo
