#include "milo/diff.hpp"

#include <cmath>
#include <stdexcept>

namespace milo {

std::string to_string(OpKind kind)
{
    switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Constant: return "constant";
    case OpKind::Add: return "add";
    case OpKind::Subtract: return "subtract";
    case OpKind::Multiply: return "multiply";
    case OpKind::MatVec: return "matvec";
    case OpKind::MatMul: return "matmul";
    case OpKind::MatMulTransposed: return "matmul_nt";
    case OpKind::Relu: return "relu";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Sine: return "sine";
    case OpKind::Square: return "square";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::PositivePartL1: return "positive_part_l1";
    case OpKind::Scale: return "scale";
    case OpKind::AddRow: return "add_row";
    case OpKind::RowSum: return "row_sum";
    case OpKind::SliceCols: return "slice_cols";
    case OpKind::ConcatCols: return "concat_cols";
    case OpKind::BatchNorm: return "batch_norm";
    case OpKind::Surrogate: return "surrogate";
    }
    return "unknown";
}

namespace {

Matrix sigmoid_of(const Matrix& x)
{
    // Split by sign so exp never overflows.
    return x.unaryExpr([](double z) {
        if (z >= 0.0) {
            return 1.0 / (1.0 + std::exp(-z));
        }
        const double e = std::exp(z);
        return e / (1.0 + e);
    });
}

[[noreturn]] void mismatch(OpKind kind, const Matrix& a, const Matrix& b)
{
    throw ShapeError(to_string(kind) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
}

void expect_arity(OpKind kind, std::size_t got, std::size_t want)
{
    if (got != want) {
        throw std::invalid_argument(to_string(kind) + ": expected " + std::to_string(want) + " parents, got " +
                                    std::to_string(got));
    }
}

void accumulate(std::vector<Matrix>& adj, int id, const Matrix& g)
{
    auto& slot = adj[static_cast<std::size_t>(id)];
    if (slot.size() == 0 && (g.rows() != 0 || g.cols() != 0)) {
        slot = g;
    } else if (slot.rows() == g.rows() && slot.cols() == g.cols()) {
        slot += g;
    } else {
        slot = g;
    }
}

} // namespace

std::shared_ptr<const SurrogateRule> floor_identity_rule()
{
    static const auto rule = std::make_shared<const SurrogateRule>(SurrogateRule{
        "floor",
        [](const Matrix& x) -> Matrix { return x.array().floor().matrix(); },
        [](const Matrix&, const Matrix&, const Matrix& g) -> Matrix { return g; },
    });
    return rule;
}

std::shared_ptr<const SurrogateRule> floor_exact_rule()
{
    static const auto rule = std::make_shared<const SurrogateRule>(SurrogateRule{
        "floor_exact",
        [](const Matrix& x) -> Matrix { return x.array().floor().matrix(); },
        [](const Matrix& x, const Matrix&, const Matrix&) -> Matrix { return Matrix::Zero(x.rows(), x.cols()); },
    });
    return rule;
}

std::shared_ptr<const SurrogateRule> indicator_identity_rule(double threshold)
{
    return std::make_shared<const SurrogateRule>(SurrogateRule{
        "indicator",
        [threshold](const Matrix& x) -> Matrix {
            return (x.array() > threshold).cast<double>().matrix();
        },
        [](const Matrix&, const Matrix&, const Matrix& g) -> Matrix { return g; },
    });
}

std::shared_ptr<const SurrogateRule> round_identity_rule()
{
    static const auto rule = std::make_shared<const SurrogateRule>(SurrogateRule{
        "round",
        [](const Matrix& x) -> Matrix {
            return x.unaryExpr([](double z) {
                const double f = std::floor(z);
                return f + ((z - f) > 0.5 ? 1.0 : 0.0);
            });
        },
        [](const Matrix&, const Matrix&, const Matrix& g) -> Matrix { return g; },
    });
    return rule;
}

// Var ------------------------------------------------------------------------

const Matrix& Var::value() const
{
    if (tape == nullptr) {
        throw std::logic_error("Var: detached handle");
    }
    return tape->value(*this);
}

double Var::item() const
{
    const Matrix& v = value();
    if (v.rows() != 1 || v.cols() != 1) {
        throw ShapeError("Var::item: expected 1x1, got " + shape_string(v));
    }
    return v(0, 0);
}

Matrix Gradients::operator[](Var leaf) const
{
    if (auto it = grads_.find(leaf.id); it != grads_.end()) {
        return it->second;
    }
    const Matrix& v = tape_->value(leaf);
    return Matrix::Zero(v.rows(), v.cols());
}

// Tape -----------------------------------------------------------------------

const Tape::Node& Tape::node(Var v) const
{
    if (v.tape != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
        throw std::logic_error("Tape: handle does not belong to this tape");
    }
    return nodes_[static_cast<std::size_t>(v.id)];
}

const Matrix& Tape::value(Var v) const { return node(v).value; }
OpKind Tape::kind(Var v) const { return node(v).kind; }
bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

BatchStats Tape::batch_stats(Var v) const
{
    const Node& n = node(v);
    if (n.kind != OpKind::BatchNorm || !n.attrs.batch_norm || !n.attrs.batch_norm->training) {
        throw std::logic_error("Tape::batch_stats: not a training-mode batch-norm node");
    }
    return {n.batch_mean, n.batch_var};
}

Var Tape::push(Node n)
{
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::leaf(Matrix value)
{
    if (!all_finite(value)) {
        throw NonFiniteError("Tape::leaf: non-finite input");
    }
    Node n;
    n.kind = OpKind::Leaf;
    n.value = std::move(value);
    n.requires_grad = true;
    return push(std::move(n));
}

Var Tape::constant(Matrix value)
{
    Node n;
    n.kind = OpKind::Constant;
    n.value = std::move(value);
    return push(std::move(n));
}

Var Tape::build(OpKind kind, std::span<const Var> parents, const OpAttrs& attrs)
{
    Node n;
    n.kind = kind;
    n.attrs = attrs;
    n.parents.reserve(parents.size());
    for (Var p : parents) {
        const Node& pn = node(p);
        n.parents.push_back(p.id);
        n.requires_grad = n.requires_grad || pn.requires_grad;
    }
    auto in = [&](std::size_t i) -> const Matrix& { return nodes_[static_cast<std::size_t>(n.parents[i])].value; };

    switch (kind) {
    case OpKind::Leaf:
    case OpKind::Constant:
        throw std::invalid_argument("Tape::build: use leaf() or constant() for inputs");

    case OpKind::Add:
    case OpKind::Subtract:
    case OpKind::Multiply: {
        expect_arity(kind, parents.size(), 2);
        const Matrix& a = in(0);
        const Matrix& b = in(1);
        if (a.rows() != b.rows() || a.cols() != b.cols()) {
            mismatch(kind, a, b);
        }
        if (kind == OpKind::Add) {
            n.value = a + b;
        } else if (kind == OpKind::Subtract) {
            n.value = a - b;
        } else {
            n.value = a.cwiseProduct(b);
        }
        break;
    }
    case OpKind::MatVec: {
        expect_arity(kind, parents.size(), 2);
        const Matrix& a = in(0);
        const Matrix& x = in(1);
        if (x.cols() != 1 || a.cols() != x.rows()) {
            mismatch(kind, a, x);
        }
        n.value = a * x;
        break;
    }
    case OpKind::MatMul: {
        expect_arity(kind, parents.size(), 2);
        const Matrix& a = in(0);
        const Matrix& b = in(1);
        if (a.cols() != b.rows()) {
            mismatch(kind, a, b);
        }
        n.value = a * b;
        break;
    }
    case OpKind::MatMulTransposed: {
        expect_arity(kind, parents.size(), 2);
        const Matrix& a = in(0);
        const Matrix& b = in(1);
        if (a.cols() != b.cols()) {
            mismatch(kind, a, b);
        }
        n.value = a * b.transpose();
        break;
    }
    case OpKind::Relu:
        expect_arity(kind, parents.size(), 1);
        n.value = in(0).cwiseMax(0.0);
        break;
    case OpKind::Sigmoid:
        expect_arity(kind, parents.size(), 1);
        n.value = sigmoid_of(in(0));
        break;
    case OpKind::Sine:
        expect_arity(kind, parents.size(), 1);
        n.value = in(0).array().sin().matrix();
        break;
    case OpKind::Square:
        expect_arity(kind, parents.size(), 1);
        n.value = in(0).array().square().matrix();
        break;
    case OpKind::Sum:
        expect_arity(kind, parents.size(), 1);
        n.value = Matrix::Constant(1, 1, in(0).sum());
        break;
    case OpKind::Mean:
        expect_arity(kind, parents.size(), 1);
        if (in(0).size() == 0) {
            throw ShapeError("mean: empty input " + shape_string(in(0)));
        }
        n.value = Matrix::Constant(1, 1, in(0).mean());
        break;
    case OpKind::PositivePartL1:
        expect_arity(kind, parents.size(), 1);
        n.value = Matrix::Constant(1, 1, in(0).cwiseMax(0.0).sum());
        break;
    case OpKind::Scale:
        expect_arity(kind, parents.size(), 1);
        n.value = in(0) * attrs.scalar;
        break;
    case OpKind::AddRow: {
        expect_arity(kind, parents.size(), 2);
        const Matrix& x = in(0);
        const Matrix& r = in(1);
        if (r.rows() != 1 || r.cols() != x.cols()) {
            mismatch(kind, x, r);
        }
        n.value = x.rowwise() + r.row(0);
        break;
    }
    case OpKind::RowSum:
        expect_arity(kind, parents.size(), 1);
        n.value = in(0).rowwise().sum();
        break;
    case OpKind::SliceCols: {
        expect_arity(kind, parents.size(), 1);
        const Matrix& x = in(0);
        if (attrs.begin < 0 || attrs.count < 0 || attrs.begin + attrs.count > x.cols()) {
            throw ShapeError("slice_cols: columns [" + std::to_string(attrs.begin) + ", " +
                             std::to_string(attrs.begin + attrs.count) + ") out of range for " + shape_string(x));
        }
        n.value = x.middleCols(attrs.begin, attrs.count);
        break;
    }
    case OpKind::ConcatCols: {
        expect_arity(kind, parents.size(), 2);
        const Matrix& a = in(0);
        const Matrix& b = in(1);
        if (a.rows() != b.rows()) {
            mismatch(kind, a, b);
        }
        n.value.resize(a.rows(), a.cols() + b.cols());
        n.value << a, b;
        break;
    }
    case OpKind::BatchNorm: {
        expect_arity(kind, parents.size(), 3);
        const Matrix& x = in(0);
        const Matrix& gamma = in(1);
        const Matrix& beta = in(2);
        if (gamma.rows() != 1 || gamma.cols() != x.cols()) {
            mismatch(kind, x, gamma);
        }
        if (beta.rows() != 1 || beta.cols() != x.cols()) {
            mismatch(kind, x, beta);
        }
        if (!attrs.batch_norm) {
            throw std::invalid_argument("batch_norm: missing attributes");
        }
        const BatchNormAttrs& bn = *attrs.batch_norm;
        RowVector mu;
        RowVector var;
        if (bn.training) {
            if (x.rows() < 2) {
                throw ShapeError("batch_norm: training mode needs at least 2 rows, got " + shape_string(x));
            }
            mu = x.colwise().mean();
            var = (x.rowwise() - mu).array().square().colwise().mean().matrix();
            n.batch_mean = mu;
            n.batch_var = var;
        } else {
            if (bn.running_mean.size() != x.cols() || bn.running_var.size() != x.cols()) {
                throw ShapeError("batch_norm: running statistics do not match " + shape_string(x));
            }
            mu = bn.running_mean;
            var = bn.running_var;
        }
        n.inv_std = (var.array() + bn.eps).rsqrt().matrix();
        n.normalized = (x.rowwise() - mu).array().rowwise() * n.inv_std.array();
        n.value = (n.normalized.array().rowwise() * gamma.row(0).array()).rowwise() + beta.row(0).array();
        break;
    }
    case OpKind::Surrogate: {
        expect_arity(kind, parents.size(), 1);
        if (!attrs.rule || !attrs.rule->forward || !attrs.rule->backward) {
            throw std::invalid_argument("attach_surrogate: incomplete rule");
        }
        n.value = attrs.rule->forward(in(0));
        if (n.value.rows() != in(0).rows() || n.value.cols() != in(0).cols()) {
            throw ShapeError("surrogate '" + attrs.rule->name + "': forward changed shape " +
                             shape_string(in(0)) + " -> " + shape_string(n.value));
        }
        break;
    }
    }
    return push(std::move(n));
}

Gradients Tape::backward(Var root) const
{
    const Node& r = node(root);
    if (r.value.rows() != 1 || r.value.cols() != 1) {
        throw ShapeError("backward: root must be 1x1, got " + shape_string(r.value));
    }
    Gradients out;
    out.tape_ = this;
    std::vector<Matrix> adj(static_cast<std::size_t>(root.id) + 1);
    adj[static_cast<std::size_t>(root.id)] = Matrix::Ones(1, 1);

    for (int id = root.id; id >= 0; --id) {
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        Matrix& g = adj[static_cast<std::size_t>(id)];
        if (!n.requires_grad || g.size() == 0) {
            continue;
        }
        auto val = [&](std::size_t i) -> const Node& { return nodes_[static_cast<std::size_t>(n.parents[i])]; };
        auto pid = [&](std::size_t i) { return n.parents[i]; };
        auto wants = [&](std::size_t i) { return val(i).requires_grad; };

        switch (n.kind) {
        case OpKind::Leaf:
            out.grads_[id] = g;
            break;
        case OpKind::Constant:
            break;
        case OpKind::Add:
            if (wants(0)) accumulate(adj, pid(0), g);
            if (wants(1)) accumulate(adj, pid(1), g);
            break;
        case OpKind::Subtract:
            if (wants(0)) accumulate(adj, pid(0), g);
            if (wants(1)) accumulate(adj, pid(1), -g);
            break;
        case OpKind::Multiply:
            if (wants(0)) accumulate(adj, pid(0), g.cwiseProduct(val(1).value));
            if (wants(1)) accumulate(adj, pid(1), g.cwiseProduct(val(0).value));
            break;
        case OpKind::MatVec:
        case OpKind::MatMul:
            if (wants(0)) accumulate(adj, pid(0), g * val(1).value.transpose());
            if (wants(1)) accumulate(adj, pid(1), val(0).value.transpose() * g);
            break;
        case OpKind::MatMulTransposed:
            if (wants(0)) accumulate(adj, pid(0), g * val(1).value);
            if (wants(1)) accumulate(adj, pid(1), g.transpose() * val(0).value);
            break;
        case OpKind::Relu:
            accumulate(adj, pid(0), g.cwiseProduct((val(0).value.array() > 0.0).cast<double>().matrix()));
            break;
        case OpKind::Sigmoid:
            accumulate(adj, pid(0), g.cwiseProduct((n.value.array() * (1.0 - n.value.array())).matrix()));
            break;
        case OpKind::Sine:
            accumulate(adj, pid(0), g.cwiseProduct(val(0).value.array().cos().matrix()));
            break;
        case OpKind::Square:
            accumulate(adj, pid(0), g.cwiseProduct(2.0 * val(0).value));
            break;
        case OpKind::Sum: {
            const Matrix& x = val(0).value;
            accumulate(adj, pid(0), Matrix::Constant(x.rows(), x.cols(), g(0, 0)));
            break;
        }
        case OpKind::Mean: {
            const Matrix& x = val(0).value;
            accumulate(adj, pid(0), Matrix::Constant(x.rows(), x.cols(), g(0, 0) / static_cast<double>(x.size())));
            break;
        }
        case OpKind::PositivePartL1: {
            const Matrix& x = val(0).value;
            accumulate(adj, pid(0), (x.array() > 0.0).cast<double>().matrix() * g(0, 0));
            break;
        }
        case OpKind::Scale:
            accumulate(adj, pid(0), g * n.attrs.scalar);
            break;
        case OpKind::AddRow:
            if (wants(0)) accumulate(adj, pid(0), g);
            if (wants(1)) accumulate(adj, pid(1), g.colwise().sum());
            break;
        case OpKind::RowSum: {
            const Matrix& x = val(0).value;
            accumulate(adj, pid(0), g.replicate(1, x.cols()));
            break;
        }
        case OpKind::SliceCols: {
            const Matrix& x = val(0).value;
            Matrix full = Matrix::Zero(x.rows(), x.cols());
            full.middleCols(n.attrs.begin, n.attrs.count) = g;
            accumulate(adj, pid(0), full);
            break;
        }
        case OpKind::ConcatCols: {
            const Index left = val(0).value.cols();
            if (wants(0)) accumulate(adj, pid(0), g.leftCols(left));
            if (wants(1)) accumulate(adj, pid(1), g.rightCols(g.cols() - left));
            break;
        }
        case OpKind::BatchNorm: {
            const Matrix& gamma = val(1).value;
            const Matrix& xhat = n.normalized;
            if (wants(1)) accumulate(adj, pid(1), g.cwiseProduct(xhat).colwise().sum());
            if (wants(2)) accumulate(adj, pid(2), g.colwise().sum());
            if (wants(0)) {
                const Matrix gx_hat = g.array().rowwise() * gamma.row(0).array();
                Matrix gx;
                if (n.attrs.batch_norm->training) {
                    const double b = static_cast<double>(g.rows());
                    const RowVector s1 = gx_hat.colwise().sum();
                    const RowVector s2 = gx_hat.cwiseProduct(xhat).colwise().sum();
                    Matrix inner = (b * gx_hat).rowwise() - s1;
                    inner -= (xhat.array().rowwise() * s2.array()).matrix();
                    gx = (inner.array().rowwise() * (n.inv_std.array() / b)).matrix();
                } else {
                    gx = (gx_hat.array().rowwise() * n.inv_std.array()).matrix();
                }
                accumulate(adj, pid(0), gx);
            }
            break;
        }
        case OpKind::Surrogate: {
            const Matrix& x = val(0).value;
            Matrix gx = n.attrs.rule->backward(x, n.value, g);
            if (gx.rows() != x.rows() || gx.cols() != x.cols()) {
                throw ShapeError("surrogate '" + n.attrs.rule->name + "': backward returned " + shape_string(gx) +
                                 " for input " + shape_string(x));
            }
            accumulate(adj, pid(0), gx);
            break;
        }
        }
        // Release interior adjoints early; leaves were copied above.
        g.resize(0, 0);
    }
    return out;
}

bool Tape::surrogate_on_path(Var leaf, Var root) const
{
    node(leaf);
    node(root);
    const auto count = static_cast<std::size_t>(root.id) + 1;
    std::vector<char> from_leaf(count, 0);
    std::vector<char> to_root(count, 0);
    from_leaf[static_cast<std::size_t>(leaf.id)] = 1;
    for (std::size_t i = static_cast<std::size_t>(leaf.id) + 1; i < count; ++i) {
        for (int p : nodes_[i].parents) {
            if (from_leaf[static_cast<std::size_t>(p)]) {
                from_leaf[i] = 1;
                break;
            }
        }
    }
    to_root[count - 1] = 1;
    for (std::size_t i = count; i-- > 0;) {
        if (!to_root[i]) {
            continue;
        }
        for (int p : nodes_[i].parents) {
            to_root[static_cast<std::size_t>(p)] = 1;
        }
        if (from_leaf[i] && nodes_[i].kind == OpKind::Surrogate) {
            return true;
        }
    }
    return false;
}

// Typed builders -------------------------------------------------------------

namespace {

Var unary(OpKind kind, Var x, const OpAttrs& attrs = {})
{
    const Var ps[] = {x};
    return x.tape->build(kind, ps, attrs);
}

Var binary(OpKind kind, Var a, Var b)
{
    if (a.tape != b.tape) {
        throw std::logic_error(to_string(kind) + ": operands live on different tapes");
    }
    const Var ps[] = {a, b};
    return a.tape->build(kind, ps);
}

} // namespace

Var add(Var a, Var b) { return binary(OpKind::Add, a, b); }
Var sub(Var a, Var b) { return binary(OpKind::Subtract, a, b); }
Var mul(Var a, Var b) { return binary(OpKind::Multiply, a, b); }
Var matvec(Var a, Var x) { return binary(OpKind::MatVec, a, x); }
Var matmul(Var a, Var b) { return binary(OpKind::MatMul, a, b); }
Var matmul_nt(Var a, Var b) { return binary(OpKind::MatMulTransposed, a, b); }
Var relu(Var x) { return unary(OpKind::Relu, x); }
Var sigmoid(Var x) { return unary(OpKind::Sigmoid, x); }
Var sine(Var x) { return unary(OpKind::Sine, x); }
Var square(Var x) { return unary(OpKind::Square, x); }
Var sum(Var x) { return unary(OpKind::Sum, x); }
Var mean(Var x) { return unary(OpKind::Mean, x); }
Var positive_part_l1(Var x) { return unary(OpKind::PositivePartL1, x); }
Var row_sum(Var x) { return unary(OpKind::RowSum, x); }
Var add_row(Var x, Var row) { return binary(OpKind::AddRow, x, row); }
Var concat_cols(Var a, Var b) { return binary(OpKind::ConcatCols, a, b); }

Var scale(Var x, double c)
{
    OpAttrs attrs;
    attrs.scalar = c;
    return unary(OpKind::Scale, x, attrs);
}

Var slice_cols(Var x, Index begin, Index count)
{
    OpAttrs attrs;
    attrs.begin = begin;
    attrs.count = count;
    return unary(OpKind::SliceCols, x, attrs);
}

Var batch_norm(Var x, Var gamma, Var beta, std::shared_ptr<const BatchNormAttrs> bn)
{
    OpAttrs attrs;
    attrs.batch_norm = std::move(bn);
    const Var ps[] = {x, gamma, beta};
    return x.tape->build(OpKind::BatchNorm, ps, attrs);
}

Var attach_surrogate(Var input, std::shared_ptr<const SurrogateRule> rule)
{
    OpAttrs attrs;
    attrs.rule = std::move(rule);
    return unary(OpKind::Surrogate, input, attrs);
}

double grad_check(const GraphFn& graph, const Matrix& at, double h)
{
    Matrix analytic;
    {
        Tape tape;
        const Var x = tape.leaf(at);
        const Var root = graph(tape, x);
        if (tape.surrogate_on_path(x, root)) {
            throw std::invalid_argument("grad_check: surrogate rule on the checked path");
        }
        analytic = tape.backward(root)[x];
    }
    auto eval = [&](const Matrix& point) {
        Tape tape;
        return graph(tape, tape.leaf(point)).item();
    };
    Matrix numeric(at.rows(), at.cols());
    Matrix probe = at;
    for (Index i = 0; i < at.size(); ++i) {
        const double orig = probe.data()[i];
        probe.data()[i] = orig + h;
        const double up = eval(probe);
        probe.data()[i] = orig - h;
        const double down = eval(probe);
        probe.data()[i] = orig;
        numeric.data()[i] = (up - down) / (2.0 * h);
    }
    // Normwise: a componentwise ratio is dominated by rounding noise wherever
    // a component happens to be near zero.
    const double scale = numeric.cwiseAbs().maxCoeff();
    if (scale == 0.0 && analytic.isZero(0.0)) {
        return 0.0;
    }
    return (analytic - numeric).cwiseAbs().maxCoeff() / (scale + 1e-12);
}

} // namespace milo
