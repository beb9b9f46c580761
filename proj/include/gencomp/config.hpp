#pragma once

// Run configuration: a single JSON document holding the engine settings plus
// task, asset paths and the evaluator choice. Relative paths resolve against
// the directory of the config file.

#include <chrono>
#include <filesystem>
#include <memory>
#include <set>
#include <tuple>
#include <string>
#include <vector>

#include "gencomp/dataset.hpp"
#include "gencomp/engine.hpp"
#include "gencomp/error.hpp"
#include "gencomp/evaluator.hpp"
#include "gencomp/external.hpp"
#include "gencomp/genome.hpp"
#include "gencomp/model.hpp"

namespace gencomp {

enum class EvaluatorKind { builtin, synthetic, external, constant };

struct EvaluatorSpec {
    EvaluatorKind kind = EvaluatorKind::builtin;
    double base_accuracy = 0.9;       // synthetic
    std::vector<double> coefficients; // synthetic
    double constant = 0.0;            // constant
    std::vector<std::string> command; // external
    double timeout_s = 300.0;         // external
};

struct RunConfig {
    Task task = Task::Ps;
    std::string model_path;
    std::string dataset_path;
    double validation_fraction = 0.2;
    EvaluatorSpec evaluator;
    EngineConfig engine;
    std::vector<double> pareto_thresholds;
    json raw;  // the document as given, for run manifests
};

namespace detail {

inline double cfg_number(const json& j, const char* key) {
    if (!j[key].is_number()) throw ValidationError(std::string("config field '") + key + "' must be a number");
    return j[key].get<double>();
}

inline std::size_t cfg_count(const json& j, const char* key) {
    if (!j[key].is_number_integer() || j[key].get<long long>() < 0) {
        throw ValidationError(std::string("config field '") + key + "' must be a non-negative integer");
    }
    return j[key].get<std::size_t>();
}

inline std::string resolve(const std::filesystem::path& base, const std::string& p) {
    if (p.empty()) return p;
    const std::filesystem::path path(p);
    return path.is_absolute() ? p : (base / path).lexically_normal().string();
}

inline EvaluatorSpec parse_evaluator(const json& j) {
    EvaluatorSpec e;
    const json obj = j.is_string() ? json{{"kind", j}} : j;
    if (!obj.is_object() || !obj.contains("kind") || !obj["kind"].is_string()) {
        throw ValidationError("config field 'evaluator' needs a 'kind'");
    }
    const std::string kind = obj["kind"];
    if (kind == "builtin") {
        e.kind = EvaluatorKind::builtin;
    } else if (kind == "synthetic") {
        e.kind = EvaluatorKind::synthetic;
        if (obj.contains("base_accuracy")) e.base_accuracy = cfg_number(obj, "base_accuracy");
        if (!obj.contains("coefficients") || !obj["coefficients"].is_array()) {
            throw ValidationError("synthetic evaluator needs a 'coefficients' array");
        }
        for (const auto& c : obj["coefficients"]) {
            if (!c.is_number() || c.get<double>() < 0) throw ValidationError("synthetic coefficients must be >= 0");
            e.coefficients.push_back(c.get<double>());
        }
    } else if (kind == "external") {
        e.kind = EvaluatorKind::external;
        if (!obj.contains("command") || !obj["command"].is_array() || obj["command"].empty()) {
            throw ValidationError("external evaluator needs a non-empty 'command' array");
        }
        for (const auto& c : obj["command"]) e.command.push_back(c.get<std::string>());
        if (obj.contains("timeout_s")) e.timeout_s = cfg_number(obj, "timeout_s");
        if (!(e.timeout_s > 0)) throw ValidationError("timeout_s must be positive");
    } else if (kind == "constant") {
        e.kind = EvaluatorKind::constant;
        if (!obj.contains("accuracy")) throw ValidationError("constant evaluator needs 'accuracy'");
        e.constant = cfg_number(obj, "accuracy");
    } else {
        throw ValidationError("unknown evaluator kind '" + kind + "'");
    }
    return e;
}

}  // namespace detail

inline RunConfig parse_run_config(const json& j, const std::filesystem::path& base_dir) {
    if (!j.is_object()) throw ValidationError("config must be a JSON object");
    static const std::set<std::string> known = {
        "task", "model", "dataset", "validation_fraction", "evaluator", "population_size", "iterations",
        "acc_thr", "p_cross", "p_swap", "p_mutate", "p_tweak", "mutation_sigma", "epsilon_pen",
        "elitism", "seed", "init_max_attempts", "init", "workers", "pareto_thresholds"};
    for (const auto& [key, _] : j.items()) {
        if (!known.count(key)) throw ValidationError("unknown config field '" + key + "'");
    }

    RunConfig c;
    c.raw = j;
    if (!j.contains("task") || !j["task"].is_string()) throw ValidationError("config field 'task' is required");
    c.task = task_from_string(j["task"].get<std::string>());
    if (!j.contains("model") || !j["model"].is_string()) throw ValidationError("config field 'model' is required");
    c.model_path = detail::resolve(base_dir, j["model"]);
    if (j.contains("dataset")) c.dataset_path = detail::resolve(base_dir, j["dataset"].get<std::string>());
    if (j.contains("validation_fraction")) c.validation_fraction = detail::cfg_number(j, "validation_fraction");
    if (j.contains("evaluator")) c.evaluator = detail::parse_evaluator(j["evaluator"]);
    if (c.evaluator.kind == EvaluatorKind::builtin && c.dataset_path.empty()) {
        throw ValidationError("config field 'dataset' is required for the builtin evaluator");
    }

    auto& e = c.engine;
    if (j.contains("population_size")) e.population_size = detail::cfg_count(j, "population_size");
    if (j.contains("iterations")) e.iterations = detail::cfg_count(j, "iterations");
    if (j.contains("acc_thr")) e.acc_thr = detail::cfg_number(j, "acc_thr");
    if (j.contains("p_cross")) e.p_cross = detail::cfg_number(j, "p_cross");
    if (j.contains("p_swap")) e.p_swap = detail::cfg_number(j, "p_swap");
    if (j.contains("p_mutate")) e.p_mutate = detail::cfg_number(j, "p_mutate");
    if (j.contains("p_tweak")) e.p_tweak = detail::cfg_number(j, "p_tweak");
    if (j.contains("mutation_sigma")) e.mutation_sigma = detail::cfg_number(j, "mutation_sigma");
    if (j.contains("epsilon_pen")) e.epsilon_pen = detail::cfg_number(j, "epsilon_pen");
    if (j.contains("elitism")) {
        if (!j["elitism"].is_boolean()) throw ValidationError("config field 'elitism' must be a boolean");
        e.elitism = j["elitism"];
    }
    if (j.contains("seed")) {
        if (!j["seed"].is_number_integer() || j["seed"].get<long long>() < 0) throw ValidationError("config field 'seed' must be a non-negative integer");
        e.seed = j["seed"].get<std::uint64_t>();
    }
    if (j.contains("init_max_attempts")) e.init_max_attempts = detail::cfg_count(j, "init_max_attempts");
    if (j.contains("init")) {
        const std::string init = j["init"].is_string() ? j["init"].get<std::string>() : "";
        if (init == "warm") e.init = InitPolicy::warm;
        else if (init == "uniform") e.init = InitPolicy::uniform;
        else throw ValidationError("config field 'init' must be \"warm\" or \"uniform\"");
    }
    if (j.contains("workers")) e.workers = detail::cfg_count(j, "workers");
    if (j.contains("pareto_thresholds")) {
        if (!j["pareto_thresholds"].is_array()) throw ValidationError("config field 'pareto_thresholds' must be an array");
        for (const auto& t : j["pareto_thresholds"]) c.pareto_thresholds.push_back(t.get<double>());
    }
    validate(e);
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& ex) {
        throw ValidationError("config '" + path + "' is not valid JSON: " + ex.what());
    }
    return parse_run_config(j, std::filesystem::path(path).parent_path());
}

/// Loaded assets for one run; evaluators may hold references into it.
struct RunAssets {
    ModelSpec model;
    TensorStore tensors;
    GenomeSchema schema;
    std::unique_ptr<Evaluator> evaluator;
};

inline std::unique_ptr<RunAssets> load_assets(const RunConfig& c) {
    auto a = std::make_unique<RunAssets>();
    std::tie(a->model, a->tensors) = load_model(c.model_path);
    a->schema = build_schema(a->model, c.task);
    switch (c.evaluator.kind) {
    case EvaluatorKind::builtin:
        a->evaluator = std::make_unique<BuiltinEvaluator>(
            a->model, a->tensors, load_csv_dataset(c.dataset_path, c.validation_fraction));
        break;
    case EvaluatorKind::synthetic:
        if (c.evaluator.coefficients.size() != a->schema.size()) {
            throw ValidationError("synthetic evaluator has " + std::to_string(c.evaluator.coefficients.size()) +
                                  " coefficients, genome has " + std::to_string(a->schema.size()) + " genes");
        }
        a->evaluator = std::make_unique<SyntheticEvaluator>(
            landscape_for(a->schema, c.evaluator.base_accuracy, c.evaluator.coefficients));
        break;
    case EvaluatorKind::constant:
        a->evaluator = std::make_unique<ConstantEvaluator>(c.evaluator.constant);
        break;
    case EvaluatorKind::external: {
        ExternalOptions opt;
        opt.command = c.evaluator.command;
        opt.workers = c.engine.workers;
        opt.timeout = std::chrono::milliseconds(static_cast<long long>(c.evaluator.timeout_s * 1000.0));
        a->evaluator = std::make_unique<ExternalEvaluator>(opt, a->schema, a->model);
        break;
    }
    }
    return a;
}

}  // namespace gencomp
