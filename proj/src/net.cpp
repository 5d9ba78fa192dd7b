#include "milo/net.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

namespace milo {

void MlpSpec::validate() const
{
    if (widths.size() < 2) {
        throw std::invalid_argument("MlpSpec: need at least input and output widths");
    }
    for (Index w : widths) {
        if (w < 1) {
            throw std::invalid_argument("MlpSpec: widths must be positive");
        }
    }
    if (dropout < 0.0 || dropout >= 1.0) {
        throw std::invalid_argument("MlpSpec: dropout must lie in [0, 1)");
    }
}

MlpSpec solution_map_spec(Index input, Index hidden, Index output)
{
    return {{input, hidden, hidden, hidden, hidden, output}, false, 0.0};
}

MlpSpec correction_net_spec(Index input, Index hidden, Index output)
{
    return {{input, hidden, hidden, hidden, output}, true, 0.2};
}

Index hidden_width_for(Family family, Index n, Index m)
{
    (void)m;
    if (family == Family::IQP || family == Family::INP) {
        constexpr std::array<std::pair<double, Index>, 6> sizes{
            {{20, 64}, {50, 128}, {100, 256}, {200, 512}, {500, 1024}, {1000, 2048}}};
        const double ln = std::log(static_cast<double>(std::max<Index>(n, 1)));
        Index best = sizes[0].second;
        double best_dist = INFINITY;
        for (auto [size, width] : sizes) {
            const double d = std::abs(std::log(size) - ln);
            if (d < best_dist) {
                best_dist = d;
                best = width;
            }
        }
        return best;
    }
    // MIRB anchors as (n, log2 width); RB2D is the 2-variable case.
    const double count = family == Family::Rosenbrock2D ? 2.0 : static_cast<double>(std::max<Index>(n, 1));
    constexpr std::array<std::pair<double, double>, 3> anchors{{{2, 2}, {20, 4}, {10000, 10}}};
    double exponent = anchors.front().second;
    if (count >= anchors.back().first) {
        exponent = anchors.back().second;
    } else if (count > anchors.front().first) {
        for (std::size_t i = 0; i + 1 < anchors.size(); ++i) {
            const auto [n0, e0] = anchors[i];
            const auto [n1, e1] = anchors[i + 1];
            if (count <= n1) {
                const double t = (std::log(count) - std::log(n0)) / (std::log(n1) - std::log(n0));
                exponent = e0 + t * (e1 - e0);
                break;
            }
        }
    }
    return Index{1} << static_cast<int>(std::lround(exponent));
}

std::vector<Matrix*> MlpWeights::parameters()
{
    std::vector<Matrix*> out;
    for (auto& layer : layers) {
        out.push_back(&layer.weight);
        out.push_back(&layer.bias);
        if (layer.norm) {
            out.push_back(&layer.norm->gamma);
            out.push_back(&layer.norm->beta);
        }
    }
    return out;
}

std::vector<const Matrix*> MlpWeights::parameters() const
{
    std::vector<const Matrix*> out;
    for (const auto& layer : layers) {
        out.push_back(&layer.weight);
        out.push_back(&layer.bias);
        if (layer.norm) {
            out.push_back(&layer.norm->gamma);
            out.push_back(&layer.norm->beta);
        }
    }
    return out;
}

MlpWeights init_mlp(const MlpSpec& spec, std::uint64_t seed)
{
    spec.validate();
    Rng rng(seed);
    MlpWeights w;
    w.spec = spec;
    const Index count = spec.layer_count();
    for (Index l = 0; l < count; ++l) {
        const Index in = spec.widths[static_cast<std::size_t>(l)];
        const Index out = spec.widths[static_cast<std::size_t>(l + 1)];
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        DenseLayer layer;
        layer.weight = rng.uniform_matrix(out, in, -bound, bound);
        layer.bias = Matrix::Zero(1, out);
        const bool hidden = l + 1 < count;
        if (hidden && spec.batch_norm) {
            layer.norm = BatchNormParams{Matrix::Ones(1, out), Matrix::Zero(1, out), RowVector::Zero(out),
                                         RowVector::Ones(out)};
        }
        w.layers.push_back(std::move(layer));
    }
    return w;
}

MlpBinding bind(Tape& tape, const MlpWeights& weights, bool trainable)
{
    MlpBinding b;
    for (const Matrix* p : weights.parameters()) {
        b.params.push_back(trainable ? tape.leaf(*p) : tape.constant(*p));
    }
    return b;
}

Var forward(Tape& tape, const MlpWeights& weights, const MlpBinding& binding, Var input, ForwardMode mode,
            Rng* dropout_rng, std::vector<BatchStats>* stats)
{
    if (input.cols() != weights.spec.input_width()) {
        throw ShapeError("mlp forward: expected input width " + std::to_string(weights.spec.input_width()) + ", got " +
                         shape_string(input.value()));
    }
    if (input.rows() < 1) {
        throw ShapeError("mlp forward: empty batch");
    }
    const bool train = mode == ForwardMode::Train;
    if (train && weights.spec.batch_norm && input.rows() < 2) {
        throw ShapeError("mlp forward: training-mode batch-norm needs a batch of at least 2, got " +
                         std::to_string(input.rows()));
    }
    std::size_t k = 0;
    Var h = input;
    const std::size_t count = weights.layers.size();
    for (std::size_t l = 0; l < count; ++l) {
        const DenseLayer& layer = weights.layers[l];
        const Var w = binding.params.at(k++);
        const Var b = binding.params.at(k++);
        h = add_row(matmul_nt(h, w), b);
        if (l + 1 == count) {
            break;
        }
        if (layer.norm) {
            const Var gamma = binding.params.at(k++);
            const Var beta = binding.params.at(k++);
            auto attrs = std::make_shared<BatchNormAttrs>();
            attrs->training = train;
            if (!train) {
                attrs->running_mean = layer.norm->running_mean;
                attrs->running_var = layer.norm->running_var;
            }
            h = batch_norm(h, gamma, beta, std::move(attrs));
            if (train && stats != nullptr) {
                stats->push_back(tape.batch_stats(h));
            }
        }
        h = relu(h);
        if (train && weights.spec.dropout > 0.0 && dropout_rng != nullptr) {
            const double keep = 1.0 - weights.spec.dropout;
            Matrix mask(h.rows(), h.cols());
            for (Index i = 0; i < mask.size(); ++i) {
                mask.data()[i] = dropout_rng->bernoulli(keep) ? 1.0 / keep : 0.0;
            }
            h = mul(h, tape.constant(std::move(mask)));
        }
    }
    return h;
}

Matrix forward(const MlpWeights& weights, const Matrix& batch)
{
    Tape tape;
    const MlpBinding b = bind(tape, weights, false);
    return forward(tape, weights, b, tape.constant(batch), ForwardMode::Eval).value();
}

void update_running_stats(MlpWeights& weights, const std::vector<BatchStats>& stats, Index batch_size, double momentum)
{
    std::size_t k = 0;
    const double unbias = batch_size > 1 ? static_cast<double>(batch_size) / static_cast<double>(batch_size - 1) : 1.0;
    for (auto& layer : weights.layers) {
        if (!layer.norm) {
            continue;
        }
        if (k >= stats.size()) {
            throw std::invalid_argument("update_running_stats: fewer statistics than batch-norm layers");
        }
        const BatchStats& s = stats[k++];
        layer.norm->running_mean = (1.0 - momentum) * layer.norm->running_mean + momentum * s.mean;
        layer.norm->running_var = (1.0 - momentum) * layer.norm->running_var + momentum * unbias * s.var;
    }
}

double spectral_norm(const Matrix& m, int max_iter, double tol)
{
    if (m.size() == 0) {
        return 0.0;
    }
    Rng rng(0x5eed);
    Vector v = rng.normal_matrix(m.cols(), 1, 0.0, 1.0);
    v.normalize();
    double sigma = 0.0;
    for (int it = 0; it < max_iter; ++it) {
        Vector u = m * v;
        const double un = u.norm();
        if (un == 0.0) {
            return 0.0;
        }
        u /= un;
        v = m.transpose() * u;
        const double next = v.norm();
        if (next == 0.0) {
            return 0.0;
        }
        v /= next;
        const bool done = std::abs(next - sigma) <= tol * next;
        sigma = next;
        if (done) {
            break;
        }
    }
    return sigma;
}

double jacobian_norm_bound(const MlpWeights& weights)
{
    double bound = 1.0;
    for (const auto& layer : weights.layers) {
        bound *= spectral_norm(layer.weight);
        if (layer.norm) {
            const RowVector scale =
                layer.norm->gamma.row(0).array() / (layer.norm->running_var.array() + 1e-5).sqrt();
            bound *= scale.cwiseAbs().maxCoeff();
        }
    }
    return bound;
}

} // namespace milo
