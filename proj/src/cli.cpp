#include "milo/cli.hpp"

#include "milo/baselines.hpp"
#include "milo/container.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace milo::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string num(double v)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

json dims_json(const Dimensions& d)
{
    return {{"n_real", d.n_real}, {"n_int", d.n_int}, {"n_cons", d.n_cons}, {"n_param", d.n_param}};
}

json manifest(const std::string& command, const CoefficientSet& c, json seeds, json config, bool stamp)
{
    json m = {{"command", command},
              {"family", to_string(c.family)},
              {"dims", dims_json(c.dims)},
              {"seeds", std::move(seeds)},
              {"config", std::move(config)},
              {"tool_version", kToolVersion}};
    if (stamp) {
        const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
        std::ostringstream s;
        s << std::put_time(std::gmtime(&now), "%Y-%m-%dT%H:%M:%SZ");
        m["timestamp"] = s.str();
    }
    return m;
}

void ensure_dir(const fs::path& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) {
        throw std::runtime_error("cannot create output directory '" + dir.string() + "'");
    }
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

CoefficientSet load_coefficients(const fs::path& data) { return coefficients_from(read_container(data / "coeffs.milo")); }

Matrix load_split(const fs::path& data, const char* split, const CoefficientSet& c)
{
    return instances_from(read_container(data / (std::string(split) + ".milo")), c);
}

Metrics strip_times(Metrics m, double tol)
{
    for (auto& r : m.instances) r.time_s = 0.0;
    return summarize(std::move(m.instances), tol);
}

ProjectionConfig projection_config(double step, int max_iter, double tol)
{
    ProjectionConfig p;
    p.step = step;
    p.max_iter = max_iter;
    p.tol = tol;
    p.validate();
    return p;
}

} // namespace

json metrics_to_json(const Metrics& m, const std::string& method)
{
    json inst = json::array();
    for (const auto& r : m.instances) {
        inst.push_back({{"idx", r.idx}, {"obj", r.obj}, {"violation", r.violation}, {"time_s", r.time_s},
                        {"proj_iters", r.proj_iters}});
    }
    return {{"method", method},
            {"obj_mean", m.obj_mean},
            {"obj_median", m.obj_median},
            {"feasible_frac", m.feasible_frac},
            {"mean_time_s", m.mean_time_s},
            {"instances", std::move(inst)}};
}

Metrics metrics_from_json(const json& j)
{
    Metrics m;
    m.obj_mean = j.at("obj_mean").get<double>();
    m.obj_median = j.at("obj_median").get<double>();
    m.feasible_frac = j.at("feasible_frac").get<double>();
    m.mean_time_s = j.at("mean_time_s").get<double>();
    for (const auto& r : j.at("instances")) {
        InstanceRecord rec;
        rec.idx = r.at("idx").get<Index>();
        rec.obj = r.at("obj").get<double>();
        rec.violation = r.at("violation").get<double>();
        rec.time_s = r.at("time_s").get<double>();
        rec.proj_iters = r.at("proj_iters").get<int>();
        m.instances.push_back(std::move(rec));
    }
    return m;
}

json without_timing(json j)
{
    if (j.is_object()) {
        j.erase("time_s");
        j.erase("mean_time_s");
        j.erase("timestamp");
        for (auto& [key, value] : j.items()) value = without_timing(value);
    } else if (j.is_array()) {
        for (auto& value : j) value = without_timing(value);
    }
    return j;
}

int run_generate(const GenerateOptions& o)
{
    if (o.out.empty()) throw std::invalid_argument("generate: --out is required");
    if (o.train < 1 || o.val < 1 || o.test < 1) throw std::invalid_argument("generate: split sizes must be >= 1");
    const CoefficientSet c = build_family(parse_family(o.problem), o.n, o.m, o.seed);
    const Dataset d = make_dataset(c, o.train, o.val, o.test, o.seed);
    ensure_dir(o.out);

    const json man = manifest("generate", c, {{"master", o.seed}},
                              {{"problem", o.problem}, {"n", o.n}, {"m", o.m}, {"train", o.train}, {"val", o.val},
                               {"test", o.test}},
                              o.stamp);
    Container coeffs = to_container(c);
    coeffs.metadata["manifest"] = man;
    write_container(o.out / "coeffs.milo", coeffs);
    const std::pair<const char*, const Matrix*> splits[] = {{"train", &d.train}, {"val", &d.val}, {"test", &d.test}};
    for (const auto& [name, params] : splits) {
        Container split = instances_container(c, *params, name);
        split.metadata["manifest"] = man;
        write_container(o.out / (std::string(name) + ".milo"), split);
    }
    write_json(o.out / "manifest.json", man);
    return 0;
}

int run_train(const TrainOptions& o)
{
    if (o.out.empty()) throw std::invalid_argument("train: --out is required");
    const CoefficientSet c = load_coefficients(o.data);
    const Dataset d{load_split(o.data, "train", c), load_split(o.data, "val", c), Matrix(0, c.dims.n_param)};

    CorrectionConfig corr;
    corr.method = parse_method(o.method);
    corr.temperature = o.temperature;
    corr.slope = o.slope;
    TrainingConfig cfg;
    cfg.lambda = o.lambda;
    cfg.lr = o.lr;
    cfg.batch = o.batch;
    cfg.epochs = o.epochs;
    cfg.patience = o.patience;
    cfg.seed = o.seed;
    cfg.validate();

    const TrainingResult res = train(c, d, init_model(c, corr, o.seed, o.hidden), cfg);
    ensure_dir(o.out);
    const json man = manifest("train", c, {{"train", o.seed}},
                              {{"method", o.method},
                               {"lambda", o.lambda},
                               {"lr", o.lr},
                               {"batch", o.batch},
                               {"epochs", o.epochs},
                               {"patience", o.patience},
                               {"hidden", res.weights.solution_map.spec.widths.at(1)},
                               {"temperature", o.temperature},
                               {"slope", o.slope},
                               {"weight_decay", cfg.weight_decay},
                               {"data", o.data.string()}},
                              o.stamp);
    Container w = to_container(res.weights);
    w.metadata["manifest"] = man;
    write_container(o.out / "weights.milo", w);

    json epochs = json::array();
    for (const auto& e : res.history.epochs) {
        epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}});
    }
    write_json(o.out / "history.json", {{"initial_val_loss", res.history.initial_val_loss},
                                        {"best_epoch", res.history.best_epoch},
                                        {"best_val_loss", res.history.best_val_loss},
                                        {"epochs", std::move(epochs)},
                                        {"manifest", man}});
    return 0;
}

int run_eval(const EvalOptions& o)
{
    if (o.out.empty()) throw std::invalid_argument("eval: --out is required");
    if (!fs::exists(o.weights)) throw std::runtime_error("eval: weights file '" + o.weights.string() + "' not found");
    const CoefficientSet c = load_coefficients(o.data);
    const Matrix test = load_split(o.data, "test", c);
    const ModelWeights w = weights_from(read_container(o.weights));
    if (!o.method.empty() && parse_method(o.method) != w.correction.method) {
        throw std::invalid_argument("eval: --method " + o.method + " does not match weights trained with " +
                                    to_string(w.correction.method));
    }
    const std::string method = to_string(w.correction.method);

    Metrics pre = evaluate(c, test, w, o.tol);
    std::optional<Metrics> post;
    if (o.project) {
        post = evaluate(c, test, w, o.tol, projection_config(o.proj_step, o.proj_max_iter, o.tol));
    }
    if (!o.timing) {
        pre = strip_times(std::move(pre), o.tol);
        if (post) post = strip_times(std::move(*post), o.tol);
    }

    ensure_dir(o.out);
    const json man = manifest("eval", c, json::object(),
                              {{"weights", o.weights.string()},
                               {"method", method},
                               {"project", o.project},
                               {"proj_step", o.proj_step},
                               {"proj_max_iter", o.proj_max_iter},
                               {"tol", o.tol},
                               {"data", o.data.string()}},
                              o.stamp);
    json metrics = {{"pre", metrics_to_json(pre, method)}, {"manifest", man}};
    if (post) metrics["post"] = metrics_to_json(*post, method + "-p");
    write_json(o.out / "metrics.json", metrics);

    std::ostringstream csv;
    csv << "phase,idx,obj,violation,time_s,proj_iters\n";
    auto rows = [&](const Metrics& m, const char* phase) {
        for (const auto& r : m.instances) {
            csv << phase << ',' << r.idx << ',' << num(r.obj) << ',' << num(r.violation) << ',' << num(r.time_s)
                << ',' << r.proj_iters << '\n';
        }
    };
    rows(pre, "pre");
    if (post) rows(*post, "post");
    write_text(o.out / "instances.csv", csv.str());

    std::ostringstream heat;
    for (Index j = 0; j < c.dims.n_cons; ++j) heat << (j ? "," : "") << 'g' << j;
    heat << '\n';
    for (const auto& r : pre.instances) {
        for (Index j = 0; j < r.constraints.size(); ++j) {
            heat << (j ? "," : "") << num(std::max(0.0, r.constraints(j)));
        }
        heat << '\n';
    }
    write_text(o.out / "heatmap.csv", heat.str());
    write_json(o.out / "manifest.json", man);
    return 0;
}

namespace {

template <typename Solve>
Metrics timed_baseline(const CoefficientSet& c, const Matrix& test, double tol, bool timing, Solve solve)
{
    std::vector<InstanceRecord> records;
    for (Index i = 0; i < test.rows(); ++i) {
        const Vector xi = test.row(i).transpose();
        const auto start = std::chrono::steady_clock::now();
        const Vector x = solve(xi);
        const auto stop = std::chrono::steady_clock::now();
        InstanceRecord r;
        r.idx = i;
        r.solution = x;
        r.constraints = constraints(c, xi, x);
        r.obj = objective(c, xi, x);
        r.violation = violation(r.constraints);
        r.time_s = timing ? std::chrono::duration<double>(stop - start).count() : 0.0;
        records.push_back(std::move(r));
    }
    return summarize(std::move(records), tol);
}

} // namespace

int run_bench(const BenchOptions& o, std::ostream& log)
{
    if (o.out.empty()) throw std::invalid_argument("bench: --out is required");
    if (o.methods.empty()) throw std::invalid_argument("bench: no methods requested");
    const CoefficientSet c = load_coefficients(o.data);
    const Matrix test = load_split(o.data, "test", c);
    const RelaxationConfig relax;
    OracleConfig oracle;
    oracle.window = o.oracle_window;
    oracle.tol = o.tol;

    json rows = json::array();
    bool failed = false;
    for (const std::string& name : o.methods) {
        try {
            Metrics m;
            if (name == "rr") {
                m = timed_baseline(c, test, o.tol, o.timing,
                                   [&](const Vector& xi) { return rr_baseline(c, xi, relax).stacked(); });
            } else if (name == "oracle") {
                m = timed_baseline(c, test, o.tol, o.timing, [&](const Vector& xi) {
                    const Vector center = solve_relaxation(c, xi, relax).x;
                    const auto best = brute_force_oracle(c, xi, center, oracle);
                    return best ? best->solution.stacked() : rs_round(center, c.dims.n_real).stacked();
                });
            } else {
                const bool projected = name.size() > 2 && name.ends_with("-p");
                const std::string base = projected ? name.substr(0, name.size() - 2) : name;
                parse_method(base);
                const fs::path path = o.models / base / "weights.milo";
                if (!fs::exists(path)) throw std::runtime_error("weights not found at '" + path.string() + "'");
                const ModelWeights w = weights_from(read_container(path));
                std::optional<ProjectionConfig> proj;
                if (projected) proj = projection_config(o.proj_step, o.proj_max_iter, o.tol);
                m = evaluate(c, test, w, o.tol, proj);
                if (!o.timing) m = strip_times(std::move(m), o.tol);
            }
            json row = metrics_to_json(m, name);
            row.erase("instances");
            rows.push_back(std::move(row));
        } catch (const std::exception& e) {
            failed = true;
            rows.push_back({{"method", name}, {"error", e.what()}});
            log << "bench: " << name << " failed: " << e.what() << '\n';
        }
    }

    ensure_dir(o.out);
    std::string joined;
    for (const auto& m : o.methods) joined += (joined.empty() ? "" : ",") + m;
    const json man = manifest("bench", c, json::object(),
                              {{"methods", joined},
                               {"tol", o.tol},
                               {"proj_step", o.proj_step},
                               {"proj_max_iter", o.proj_max_iter},
                               {"oracle_window", o.oracle_window},
                               {"data", o.data.string()},
                               {"models", o.models.string()}},
                              o.stamp);
    const json report = {{"rows", rows}, {"manifest", man}};
    write_json(o.out / "report.json", report);
    const std::string table = format_report(report);
    write_text(o.out / "report.txt", table);
    log << table;
    return failed ? 1 : 0;
}

std::string format_report(const json& report)
{
    std::ostringstream s;
    s << std::left << std::setw(10) << "Method" << std::right << std::setw(12) << "Obj Mean" << std::setw(12)
      << "Obj Med" << std::setw(11) << "Feasible" << std::setw(12) << "Time (s)" << '\n';
    for (const auto& row : report.at("rows")) {
        s << std::left << std::setw(10) << row.at("method").get<std::string>() << std::right;
        if (row.contains("error")) {
            s << "  error: " << row.at("error").get<std::string>() << '\n';
            continue;
        }
        s << std::fixed << std::setprecision(4) << std::setw(12) << row.at("obj_mean").get<double>() << std::setw(12)
          << row.at("obj_median").get<double>() << std::setw(10) << std::setprecision(1)
          << 100.0 * row.at("feasible_frac").get<double>() << '%' << std::setw(12) << std::setprecision(5)
          << row.at("mean_time_s").get<double>() << '\n';
        s.unsetf(std::ios::fixed);
    }
    return s.str();
}

} // namespace milo::cli
