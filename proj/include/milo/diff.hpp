#pragma once

// Tape-based reverse-mode differentiation over dense Eigen matrices.
//
// Every value is a matrix: column vectors are n x 1, batches are B x d and
// scalars are 1 x 1. Forward values are computed eagerly when a node is
// built. Non-differentiable forward maps are expressed through surrogate
// rules that supply their own vector-Jacobian product.

#include "milo/tensor.hpp"

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace milo {

class Tape;

enum class OpKind : std::uint8_t {
    Leaf,
    Constant,
    Add,
    Subtract,
    Multiply,         // elementwise
    MatVec,           // (m x n) * (n x 1)
    MatMul,           // (m x k) * (k x n)
    MatMulTransposed, // (m x k) * (n x k)^T
    Relu,
    Sigmoid,
    Sine,
    Square,
    Sum,
    Mean,
    PositivePartL1, // sum of max(0, x)
    Scale,          // x * attrs.scalar
    AddRow,         // (B x d) + broadcast (1 x d)
    RowSum,         // (B x d) -> (B x 1)
    SliceCols,
    ConcatCols,
    BatchNorm,
    Surrogate,
};

std::string to_string(OpKind kind);

/// Exact forward map paired with a replacement vector-Jacobian product.
struct SurrogateRule {
    std::string name;
    std::function<Matrix(const Matrix& input)> forward;
    /// Returns d(loss)/d(input) given the node input, its forward output and
    /// the upstream gradient d(loss)/d(output). Must have the input's shape.
    std::function<Matrix(const Matrix& input, const Matrix& output, const Matrix& upstream)> backward;
};

/// floor(x) forward, identity backward.
std::shared_ptr<const SurrogateRule> floor_identity_rule();
/// floor(x) forward, zero backward: the true derivative away from integers.
std::shared_ptr<const SurrogateRule> floor_exact_rule();

/// 1{x > threshold} forward, identity backward.
std::shared_ptr<const SurrogateRule> indicator_identity_rule(double threshold = 0.5);
/// floor(x) + 1{frac(x) > 0.5} forward (exact halves round down), identity backward.
std::shared_ptr<const SurrogateRule> round_identity_rule();

struct BatchNormAttrs {
    bool training = true;
    double eps = 1e-5;
    RowVector running_mean; // used when !training
    RowVector running_var;
};

struct OpAttrs {
    double scalar = 0.0;
    Index begin = 0;
    Index count = 0;
    std::shared_ptr<const SurrogateRule> rule;
    std::shared_ptr<const BatchNormAttrs> batch_norm;
};

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives and
/// has not been cleared.
struct Var {
    Tape* tape = nullptr;
    int id = -1;

    const Matrix& value() const;
    Index rows() const { return value().rows(); }
    Index cols() const { return value().cols(); }
    /// Value of a 1 x 1 node.
    double item() const;
};

/// Map from leaf nodes to d(root)/d(leaf).
class Gradients {
public:
    /// Gradient for `leaf`; zeros of the leaf's shape if the root does not
    /// depend on it.
    Matrix operator[](Var leaf) const;
    bool contains(Var leaf) const { return grads_.contains(leaf.id); }

private:
    friend class Tape;
    std::unordered_map<int, Matrix> grads_;
    const Tape* tape_ = nullptr;
};

/// Batch statistics computed by a training-mode batch-norm node.
struct BatchStats {
    RowVector mean;
    RowVector var; // biased
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Differentiable input. Rejects non-finite values.
    Var leaf(Matrix value);
    /// Non-differentiable input. Non-finite values are allowed.
    Var constant(Matrix value);
    Var scalar_constant(double value) { return constant(Matrix::Constant(1, 1, value)); }

    /// Generic node construction; the typed helpers below forward here.
    /// Throws ShapeError naming both shapes when parents are incompatible.
    Var build(OpKind kind, std::span<const Var> parents, const OpAttrs& attrs = {});

    /// Reverse sweep from a 1 x 1 root.
    Gradients backward(Var root) const;

    const Matrix& value(Var v) const;
    OpKind kind(Var v) const;
    bool requires_grad(Var v) const;
    /// Statistics of a training-mode BatchNorm node.
    BatchStats batch_stats(Var v) const;

    /// True if a surrogate node lies on a path from `leaf` to `root`.
    bool surrogate_on_path(Var leaf, Var root) const;

    std::size_t size() const noexcept { return nodes_.size(); }
    void clear() noexcept { nodes_.clear(); }

private:
    struct Node {
        OpKind kind = OpKind::Constant;
        std::vector<int> parents;
        Matrix value;
        OpAttrs attrs;
        bool requires_grad = false;
        // batch-norm caches
        Matrix normalized;
        RowVector inv_std;
        RowVector batch_mean;
        RowVector batch_var;
    };

    const Node& node(Var v) const;
    Var push(Node node);

    std::deque<Node> nodes_;
};

// Typed builders -------------------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var matvec(Var a, Var x);
Var matmul(Var a, Var b);
Var matmul_nt(Var a, Var b);
Var relu(Var x);
Var sigmoid(Var x);
Var sine(Var x);
Var square(Var x);
Var sum(Var x);
Var mean(Var x);
Var positive_part_l1(Var x);
Var scale(Var x, double c);
Var add_row(Var x, Var row);
Var row_sum(Var x);
Var slice_cols(Var x, Index begin, Index count);
Var concat_cols(Var a, Var b);
Var batch_norm(Var x, Var gamma, Var beta, std::shared_ptr<const BatchNormAttrs> attrs);
/// Node whose forward value is `rule.forward(input)` and whose backward uses
/// `rule.backward`.
Var attach_surrogate(Var input, std::shared_ptr<const SurrogateRule> rule);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator-(Var a) { return scale(a, -1.0); }

/// Builds a scalar-rooted graph from a leaf.
using GraphFn = std::function<Var(Tape&, Var)>;

/// Relative error max_i |autodiff_i - fd_i| / (max_i |fd_i| + 1e-12) against
/// central differences; 0 when both gradients vanish.
/// Throws std::invalid_argument if a surrogate lies between leaf and root.
double grad_check(const GraphFn& graph, const Matrix& at, double h = 1e-6);

} // namespace milo
