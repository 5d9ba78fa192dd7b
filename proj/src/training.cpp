#include "milo/training.hpp"

#include "milo/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace milo {

ModelWeights init_model(const CoefficientSet& coeffs, const CorrectionConfig& correction, std::uint64_t seed,
                        Index hidden)
{
    correction.validate();
    const Dimensions& d = coeffs.dims;
    const Index h = hidden > 0 ? hidden : hidden_width_for(coeffs.family, coeffs.n, coeffs.m);
    ModelWeights w;
    w.correction = correction;
    w.solution_map = init_mlp(solution_map_spec(d.n_param, h, d.n_vars()), derive_seed(seed, 21));
    w.correction_net = init_mlp(correction_net_spec(d.n_vars() + d.n_param, h, d.n_vars()), derive_seed(seed, 22));
    return w;
}

void TrainingConfig::validate() const
{
    if (!(lambda >= 0.0)) throw std::invalid_argument("TrainingConfig: lambda must be >= 0");
    if (!(lr > 0.0)) throw std::invalid_argument("TrainingConfig: learning rate must be positive");
    if (batch < 2) throw std::invalid_argument("TrainingConfig: batch size must be >= 2");
    if (epochs < 1) throw std::invalid_argument("TrainingConfig: epochs must be >= 1");
    if (patience < 1) throw std::invalid_argument("TrainingConfig: patience must be >= 1");
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("TrainingConfig: weight decay must be >= 0");
}

Dataset make_dataset(const CoefficientSet& coeffs, Index n_train, Index n_val, Index n_test, std::uint64_t seed)
{
    return {sample_instances(coeffs, n_train, derive_seed(seed, 10)),
            sample_instances(coeffs, n_val, derive_seed(seed, 11)),
            sample_instances(coeffs, n_test, derive_seed(seed, 12))};
}

LossNodes penalty_loss(Tape& tape, const CoefficientSet& coeffs, const Matrix& params, Var x_hat, double lambda)
{
    if (x_hat.rows() < 1) {
        throw std::invalid_argument("penalty_loss: empty batch");
    }
    const double inv_b = 1.0 / static_cast<double>(x_hat.rows());
    const Var obj = mean(objective(tape, coeffs, params, x_hat));
    const Var pen = scale(positive_part_l1(constraints(tape, coeffs, params, x_hat)), inv_b);
    return {obj + scale(pen, lambda), obj, pen};
}

LossBreakdown penalty_loss(const CoefficientSet& coeffs, const Matrix& params, const Matrix& x_hat, double lambda)
{
    Tape tape;
    return penalty_loss(tape, coeffs, params, tape.constant(x_hat), lambda).values();
}

namespace {

struct AdamState {
    std::vector<Matrix> m;
    std::vector<Matrix> v;
    long step = 0;
};

void adamw_step(std::vector<Matrix*>& params, const std::vector<Matrix>& grads, AdamState& s,
                const TrainingConfig& c)
{
    if (s.m.empty()) {
        for (const Matrix* p : params) {
            s.m.push_back(Matrix::Zero(p->rows(), p->cols()));
            s.v.push_back(Matrix::Zero(p->rows(), p->cols()));
        }
    }
    ++s.step;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(s.step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(s.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Matrix& p = *params[i];
        const Matrix& g = grads[i];
        s.m[i] = c.beta1 * s.m[i] + (1.0 - c.beta1) * g;
        s.v[i] = c.beta2 * s.v[i] + (1.0 - c.beta2) * g.cwiseProduct(g);
        p *= 1.0 - c.lr * c.weight_decay;
        p.array() -= c.lr * (s.m[i].array() / bc1) / ((s.v[i].array() / bc2).sqrt() + c.adam_eps);
    }
}

// Rows of `params` selected by `order[begin, begin + count)`.
Matrix gather(const Matrix& params, const std::vector<Index>& order, std::size_t begin, std::size_t count)
{
    Matrix out(static_cast<Index>(count), params.cols());
    for (std::size_t i = 0; i < count; ++i) {
        out.row(static_cast<Index>(i)) = params.row(order[begin + i]);
    }
    return out;
}

void shuffle(std::vector<Index>& order, Rng& rng)
{
    for (std::size_t i = order.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.next_u64() % i);
        std::swap(order[i - 1], order[j]);
    }
}

Var model_output(Tape& tape, const CoefficientSet& coeffs, const ModelWeights& w, const MlpBinding& pi,
                 const MlpBinding& delta, Var xi, ForwardMode mode, Rng* rng, std::vector<BatchStats>* stats)
{
    const Var xbar = forward(tape, w.solution_map, pi, xi, mode);
    if (w.correction.method == CorrectionMethod::RL) {
        return xbar;
    }
    return apply_correction(tape, coeffs.dims, w.correction_net, delta, xbar, xi, w.correction, mode, rng, stats)
        .solution;
}

} // namespace

LossBreakdown validation_loss(const CoefficientSet& coeffs, const Matrix& params, const ModelWeights& weights,
                              double lambda)
{
    Tape tape;
    const MlpBinding pi = bind(tape, weights.solution_map, false);
    MlpBinding delta;
    if (uses_correction_net(weights.correction.method)) {
        delta = bind(tape, weights.correction_net, false);
    }
    ModelWeights eval_view{weights.correction, weights.solution_map, weights.correction_net};
    eval_view.correction.noise = false;
    const Var out = model_output(tape, coeffs, eval_view, pi, delta, tape.constant(params), ForwardMode::Eval,
                                 nullptr, nullptr);
    return penalty_loss(tape, coeffs, params, out, lambda).values();
}

TrainingResult train(const CoefficientSet& coeffs, const Dataset& data, ModelWeights initial,
                     const TrainingConfig& config)
{
    config.validate();
    if (data.train.rows() < 1 || data.val.rows() < 1) {
        throw std::invalid_argument("train: training and validation splits must be nonempty");
    }
    const Dimensions& d = coeffs.dims;
    if (data.train.cols() != d.n_param || data.val.cols() != d.n_param) {
        throw ShapeError("train: dataset has " + std::to_string(data.train.cols()) +
                         " parameter columns, family expects " + std::to_string(d.n_param));
    }
    if (initial.solution_map.spec.input_width() != d.n_param ||
        initial.solution_map.spec.output_width() != d.n_vars()) {
        throw ShapeError("train: solution map widths do not match the family dimensions");
    }
    const bool with_delta = uses_correction_net(initial.correction.method);

    ModelWeights w = std::move(initial);
    Rng order_rng(derive_seed(config.seed, 20));
    Rng noise_rng(derive_seed(config.seed, 23));
    AdamState adam;

    TrainingResult result;
    result.history.initial_val_loss = validation_loss(coeffs, data.val, w, config.lambda).total;
    result.history.best_val_loss = result.history.initial_val_loss;
    result.weights = w;
    int since_best = 0;

    std::vector<Index> order(static_cast<std::size_t>(data.train.rows()));
    std::iota(order.begin(), order.end(), Index{0});
    const std::size_t batch = static_cast<std::size_t>(config.batch);

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        shuffle(order, order_rng);
        double loss_sum = 0.0;
        Index rows_seen = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += batch) {
            const std::size_t count = std::min(batch, order.size() - begin);
            if (count < 2) {
                continue;
            }
            const Matrix params = gather(data.train, order, begin, count);
            Tape tape;
            const MlpBinding pi = bind(tape, w.solution_map, true);
            MlpBinding delta;
            if (with_delta) {
                delta = bind(tape, w.correction_net, true);
            }
            std::vector<BatchStats> stats;
            const Var out = model_output(tape, coeffs, w, pi, delta, tape.constant(params), ForwardMode::Train,
                                         &noise_rng, &stats);
            const LossNodes loss = penalty_loss(tape, coeffs, params, out, config.lambda);
            const double value = loss.total.item();
            if (!std::isfinite(value)) {
                throw NonFiniteError("training diverged: non-finite loss at epoch " + std::to_string(epoch));
            }
            const Gradients grads = tape.backward(loss.total);

            std::vector<Matrix*> targets = w.solution_map.parameters();
            std::vector<Matrix> g;
            for (const Var& v : pi.params) g.push_back(grads[v]);
            if (with_delta) {
                for (Matrix* p : w.correction_net.parameters()) targets.push_back(p);
                for (const Var& v : delta.params) g.push_back(grads[v]);
                update_running_stats(w.correction_net, stats, static_cast<Index>(count));
            }
            adamw_step(targets, g, adam, config);
            loss_sum += value * static_cast<double>(count);
            rows_seen += static_cast<Index>(count);
        }

        const double val = validation_loss(coeffs, data.val, w, config.lambda).total;
        if (!std::isfinite(val)) {
            throw NonFiniteError("training diverged: non-finite validation loss at epoch " + std::to_string(epoch));
        }
        result.history.epochs.push_back({epoch, rows_seen > 0 ? loss_sum / static_cast<double>(rows_seen) : 0.0, val});
        if (val < result.history.best_val_loss) {
            result.history.best_val_loss = val;
            result.history.best_epoch = epoch;
            result.weights = w;
            since_best = 0;
        } else if (++since_best >= config.patience) {
            break;
        }
    }
    return result;
}

Matrix relaxed_solutions(const ModelWeights& weights, const Matrix& params)
{
    return forward(weights.solution_map, params);
}

Matrix corrected_solutions(const CoefficientSet& coeffs, const ModelWeights& weights, const Matrix& params)
{
    const Matrix xbar = relaxed_solutions(weights, params);
    Matrix out(xbar.rows(), xbar.cols());
    for (Index r = 0; r < xbar.rows(); ++r) {
        out.row(r) = correct(xbar.row(r).transpose(), params.row(r).transpose(), coeffs.dims, weights.correction_net,
                             weights.correction)
                         .stacked()
                         .transpose();
    }
    return out;
}

Metrics summarize(std::vector<InstanceRecord> records, double tol)
{
    Metrics m;
    m.instances = std::move(records);
    const std::size_t n = m.instances.size();
    if (n == 0) {
        return m;
    }
    std::vector<double> obj;
    double time = 0.0;
    std::size_t feasible = 0;
    for (const auto& r : m.instances) {
        obj.push_back(r.obj);
        time += r.time_s;
        if (r.violation <= tol) ++feasible;
    }
    m.obj_mean = std::accumulate(obj.begin(), obj.end(), 0.0) / static_cast<double>(n);
    std::sort(obj.begin(), obj.end());
    m.obj_median = n % 2 == 1 ? obj[n / 2] : 0.5 * (obj[n / 2 - 1] + obj[n / 2]);
    m.feasible_frac = static_cast<double>(feasible) / static_cast<double>(n);
    m.mean_time_s = time / static_cast<double>(n);
    return m;
}

Metrics evaluate(const CoefficientSet& coeffs, const Matrix& test, const ModelWeights& weights, double tol,
                 const std::optional<ProjectionConfig>& projection)
{
    if (test.rows() < 1) {
        throw std::invalid_argument("evaluate: empty test set");
    }
    CorrectionConfig cfg = weights.correction;
    cfg.noise = false;
    std::vector<InstanceRecord> records;
    for (Index i = 0; i < test.rows(); ++i) {
        const Vector xi = test.row(i).transpose();
        const auto start = std::chrono::steady_clock::now();
        const Vector xbar = forward(weights.solution_map, xi.transpose()).row(0).transpose();
        MixedIntegerSolution sol;
        int iters = 0;
        if (projection) {
            const ProjectionReport rep = project(xbar, xi, coeffs, weights.correction_net, cfg, *projection);
            sol = rep.solution;
            iters = rep.iterations;
        } else {
            sol = correct(xbar, xi, coeffs.dims, weights.correction_net, cfg);
        }
        const auto stop = std::chrono::steady_clock::now();
        InstanceRecord r;
        r.idx = i;
        r.solution = sol.stacked();
        r.constraints = constraints(coeffs, xi, r.solution);
        r.obj = objective(coeffs, xi, r.solution);
        r.violation = violation(r.constraints);
        r.time_s = std::chrono::duration<double>(stop - start).count();
        r.proj_iters = iters;
        records.push_back(std::move(r));
    }
    return summarize(std::move(records), tol);
}

} // namespace milo
