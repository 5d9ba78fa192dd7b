#pragma once

// Subcommand drivers behind the `milo` executable. Each returns the process
// exit code; argument errors and I/O failures surface as exceptions that the
// front end reports with a nonzero exit.

#include "milo/training.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace milo::cli {

inline constexpr const char* kToolVersion = "0.1.0";

struct GenerateOptions {
    std::string problem = "iqp";
    Index n = 20;
    Index m = 20;
    std::uint64_t seed = 0;
    Index train = 8000;
    Index val = 1000;
    Index test = 100;
    std::filesystem::path out;
    bool stamp = false; // record a wall-clock timestamp in the manifest
};

struct TrainOptions {
    std::filesystem::path data;
    std::string method = "rc";
    double lambda = 100.0;
    double lr = 1e-3;
    Index batch = 64;
    int epochs = 200;
    int patience = 20;
    std::uint64_t seed = 0;
    Index hidden = 0; // 0 picks the family default
    double temperature = 1.0;
    double slope = 10.0;
    std::filesystem::path out;
    bool stamp = false;
};

struct EvalOptions {
    std::filesystem::path data;
    std::filesystem::path weights;
    std::string method; // empty accepts whatever the weights hold
    bool project = true;
    double proj_step = 0.01;
    int proj_max_iter = 1000;
    double tol = 1e-6;
    std::filesystem::path out;
    bool timing = true; // false writes zero times for byte-stable output
    bool stamp = false;
};

struct BenchOptions {
    std::filesystem::path data;
    std::filesystem::path models; // holds <method>/weights.milo for learned methods
    std::vector<std::string> methods{"rc", "lt", "rr", "oracle"};
    double tol = 1e-6;
    double proj_step = 0.01;
    int proj_max_iter = 1000;
    Index oracle_window = 2;
    std::filesystem::path out;
    bool timing = true;
    bool stamp = false;
};

int run_generate(const GenerateOptions& o);
int run_train(const TrainOptions& o);
int run_eval(const EvalOptions& o);
int run_bench(const BenchOptions& o, std::ostream& log);

nlohmann::json metrics_to_json(const Metrics& m, const std::string& method);
Metrics metrics_from_json(const nlohmann::json& j);

/// Copy of a metrics document with wall-clock fields removed.
nlohmann::json without_timing(nlohmann::json j);

/// Human-readable table of a bench report.
std::string format_report(const nlohmann::json& report);

} // namespace milo::cli
