// gencomp: command-line driver for compression-hyperparameter search.
//
//   gencomp flops      --model M | --config C  [--plan P]
//   gencomp evaluate   --config C  (--genome JSON | --plan P)
//   gencomp thresholds --config C  [--workers P] [--seed S] [--out DIR]
//   gencomp search     --config C  [--workers P] [--seed S] [--out DIR]
//   gencomp pareto     --config C  [--thresholds a,b,..] [--workers P] [--seed S] [--out DIR]
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "CLI11.hpp"
#include "gencomp/gencomp.hpp"

namespace fs = std::filesystem;
using namespace gencomp;

namespace {

struct Options {
    std::string config;
    std::string model;
    std::string plan;
    std::string genome;
    std::string out = ".";
    std::optional<std::size_t> workers;
    std::optional<std::uint64_t> seed;
    std::vector<double> thresholds;
};

std::string sha256_file(const std::string& path) {
    const std::string bytes = read_file(path);
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
    std::ostringstream hex;
    for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int{digest[i]};
    return hex.str();
}

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Writes through a temporary file and renames, so readers never see a partial file.
void write_atomically(const fs::path& path, const std::string& content) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write '" + tmp.string() + "'");
        out << content;
        if (!out.flush()) throw Error("cannot write '" + tmp.string() + "'");
    }
    fs::rename(tmp, path);
}

fs::path prepare_out(const std::string& dir) {
    fs::path p(dir);
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) throw ValidationError("cannot create output directory '" + dir + "': " + ec.message());
    return p;
}

RunConfig load_config(const Options& o) {
    if (o.config.empty()) throw ValidationError("--config is required");
    RunConfig c = load_run_config(o.config);
    if (o.workers) c.engine.workers = *o.workers;
    if (o.seed) c.engine.seed = *o.seed;
    validate(c.engine);
    return c;
}

std::string ratio_str(double r) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(4) << r;
    return s.str();
}

// ---- flops -----------------------------------------------------------------

int cmd_flops(const Options& o) {
    std::string model_path = o.model;
    if (model_path.empty()) {
        if (o.config.empty()) throw ValidationError("flops needs --model or --config");
        model_path = load_run_config(o.config).model_path;
    }
    const auto [model, tensors] = load_model(model_path);
    std::optional<CompressionPlan> plan;
    if (!o.plan.empty()) {
        json j;
        try {
            j = json::parse(read_file(o.plan));
        } catch (const json::exception& e) {
            throw ValidationError("plan '" + o.plan + "' is not valid JSON: " + e.what());
        }
        plan = plan_from_json(j, model);
    }
    const auto compressed = plan ? compressed_layer_flops(model, *plan) : std::vector<Macs>{};

    std::cout << "model: " << model.name << " (" << model.size() << " layers)\n";
    std::cout << "FLOPs are counted as multiply-accumulates (MACs); bias, activation and pooling are excluded.\n";
    std::cout << std::left << std::setw(7) << "layer" << std::setw(17) << "kind" << std::right << std::setw(14) << "MACs";
    if (plan) std::cout << std::setw(16) << "compressed";
    std::cout << '\n';
    Macs total = 0, total_c = 0;
    for (std::size_t i = 0; i < model.size(); ++i) {
        const Macs f = layer_flops(model.layers[i]);
        total += f;
        std::cout << std::left << std::setw(7) << i << std::setw(17) << to_string(model.layers[i].kind) << std::right
                  << std::setw(14) << f;
        if (plan) {
            total_c += compressed[i];
            std::cout << std::setw(16) << compressed[i];
        }
        std::cout << '\n';
    }
    std::cout << "total MACs: " << total << '\n';
    if (plan) {
        std::cout << "compressed MACs: " << total_c << '\n';
        std::cout << "ratio: " << ratio_str(total == 0 ? 1.0 : static_cast<double>(total_c) / static_cast<double>(total))
                  << '\n';
    }
    return 0;
}

// ---- evaluate ----------------------------------------------------------------

int cmd_evaluate(const Options& o) {
    const RunConfig c = load_config(o);
    auto assets = load_assets(c);
    Genome genome;
    CompressionPlan plan;
    if (!o.genome.empty()) {
        try {
            genome = genome_from_json(json::parse(o.genome));
        } catch (const json::exception& e) {
            throw ValidationError(std::string("--genome is not valid JSON: ") + e.what());
        }
        plan = decode(genome, assets->schema, assets->model);
    } else if (!o.plan.empty()) {
        plan = plan_from_json(json::parse(read_file(o.plan)), assets->model);
        genome = encode(plan, assets->schema, assets->model);
    } else {
        genome = identity_genome(assets->schema);
        plan = decode(genome, assets->schema, assets->model);
    }
    Scorer scorer(assets->model, assets->schema, *assets->evaluator, c.engine.workers);
    const double acc_o = scorer.accuracy(identity_genome(assets->schema));
    const auto rep = scorer.reports({genome}, acc_o, c.engine.acc_thr, c.engine.epsilon_pen).front();
    json out = {{"genome", to_json(genome, assets->schema)},
                {"plan", to_json(plan)},
                {"accuracy", rep.accuracy},
                {"base_accuracy", acc_o},
                {"delta_flops", rep.delta_flops},
                {"flops_ratio", scorer.flops_ratio(genome)},
                {"penalty", rep.penalty},
                {"score", rep.score},
                {"below_threshold", rep.below_threshold}};
    std::cout << out.dump(2) << '\n';
    return 0;
}

// ---- thresholds ------------------------------------------------------------------

int cmd_thresholds(const Options& o) {
    const RunConfig c = load_config(o);
    auto assets = load_assets(c);
    const fs::path out = prepare_out(o.out);
    Scorer scorer(assets->model, assets->schema, *assets->evaluator, c.engine.workers);
    const double acc_o = scorer.accuracy(identity_genome(assets->schema));
    if (!(acc_o > c.engine.acc_thr)) {
        throw InfeasibleError("acc_thr " + std::to_string(c.engine.acc_thr) +
                              " is not below the uncompressed accuracy " + std::to_string(acc_o) +
                              "; no individual can be accepted, lower acc_thr");
    }
    const auto theta = find_thresholds(
        assets->schema, [&](const Genome& g) { return scorer.accuracy(g); }, c.engine.acc_thr);
    json doc = {{"task", to_string(c.task)},
                {"acc_thr", c.engine.acc_thr},
                {"base_accuracy", acc_o},
                {"schema", to_json(assets->schema)},
                {"thresholds", to_json(theta, assets->schema)}};
    write_atomically(out / "thresholds.json", doc.dump(2) + "\n");
    std::cout << "thresholds: " << doc["thresholds"].dump() << '\n';
    std::cout << "wrote " << (out / "thresholds.json").string() << '\n';
    return 0;
}

// ---- search ------------------------------------------------------------------------

json asset_hashes(const RunConfig& c) {
    json a = {{"model", {{"path", c.model_path}, {"sha256", sha256_file(c.model_path)}}}};
    if (!c.dataset_path.empty()) a["dataset"] = {{"path", c.dataset_path}, {"sha256", sha256_file(c.dataset_path)}};
    return a;
}

json best_plan_doc(const EvolveResult& r, const RunAssets& a) {
    const double ratio = r.base_flops == 0 ? 1.0
                                           : static_cast<double>(r.base_flops - r.best_report.delta_flops) /
                                                 static_cast<double>(r.base_flops);
    return {{"genome", to_json(r.best, a.schema)},
            {"plan", to_json(decode(r.best, a.schema, a.model))},
            {"score", r.best_report.score},
            {"accuracy", r.best_report.accuracy},
            {"penalty", r.best_report.penalty},
            {"delta_flops", r.best_report.delta_flops},
            {"flops_ratio", ratio},
            {"base_accuracy", r.base_accuracy},
            {"base_flops", r.base_flops}};
}

EvolveResult run_search(const RunConfig& c, RunAssets& assets, std::ostream* history) {
    EvolveHooks hooks;
    if (history) {
        hooks.on_record = [&](const HistoryRecord& rec) {
            *history << to_json(rec, assets.schema).dump() << '\n';
            history->flush();
        };
    }
    return evolve(assets.model, assets.schema, *assets.evaluator, c.engine, hooks);
}

int cmd_search(const Options& o) {
    const RunConfig c = load_config(o);
    const std::string started = utc_now();
    auto assets = load_assets(c);
    const fs::path out = prepare_out(o.out);

    std::ofstream history(out / "history.jsonl", std::ios::trunc);
    if (!history) throw Error("cannot write history file");
    const EvolveResult r = run_search(c, *assets, &history);
    history.close();

    const json best = best_plan_doc(r, *assets);
    write_atomically(out / "best_plan.json", best.dump(2) + "\n");

    json config = c.raw;
    config["seed"] = c.engine.seed;
    config["workers"] = c.engine.workers;
    const json manifest = {{"config", config},
                           {"seed", c.engine.seed},
                           {"started_at", started},
                           {"finished_at", utc_now()},
                           {"flops_unit", "MAC"},
                           {"assets", asset_hashes(c)},
                           {"result",
                            {{"best_genome", best["genome"]},
                             {"score", best["score"]},
                             {"accuracy", best["accuracy"]},
                             {"flops_ratio", best["flops_ratio"]},
                             {"delta_flops", best["delta_flops"]},
                             {"base_accuracy", r.base_accuracy},
                             {"base_flops", r.base_flops},
                             {"init_draws", r.init_draws},
                             {"iterations", c.engine.iterations}}}};
    write_atomically(out / "run_manifest.json", manifest.dump(2) + "\n");

    std::cout << "best score " << r.best_report.score << ", accuracy " << r.best_report.accuracy
              << " (uncompressed " << r.base_accuracy << "), FLOPs ratio " << ratio_str(best["flops_ratio"].get<double>())
              << " [MACs]\n";
    std::cout << "wrote " << out.string() << "/{history.jsonl,best_plan.json,run_manifest.json}\n";
    return 0;
}

// ---- pareto ----------------------------------------------------------------------------

int cmd_pareto(const Options& o) {
    const RunConfig c = load_config(o);
    std::vector<double> thresholds = o.thresholds.empty() ? c.pareto_thresholds : o.thresholds;
    std::size_t dropped = 0;
    thresholds = dedupe_thresholds(thresholds, &dropped);
    if (dropped > 0) std::cerr << "[gencomp] warning: dropped " << dropped << " duplicate threshold(s)\n";
    if (thresholds.size() < 2) throw ValidationError("pareto needs at least two distinct thresholds");

    auto assets = load_assets(c);
    const fs::path out = prepare_out(o.out);
    std::ofstream csv(out / "pareto.csv", std::ios::trunc);
    if (!csv) throw Error("cannot write pareto.csv");
    csv << std::setprecision(17);
    csv << "series,acc_thr,uniform_level,accuracy,flops_ratio\n";
    csv.flush();

    for (double thr : thresholds) {
        RunConfig run = c;
        run.engine.acc_thr = thr;
        validate(run.engine);
        const EvolveResult r = run_search(run, *assets, nullptr);
        const double ratio = static_cast<double>(r.base_flops - r.best_report.delta_flops) / static_cast<double>(r.base_flops);
        csv << "evolved," << thr << ",," << r.best_report.accuracy << ',' << ratio << '\n';
        csv.flush();
        std::cout << "acc_thr " << thr << ": accuracy " << r.best_report.accuracy << ", FLOPs ratio " << ratio_str(ratio) << '\n';
    }

    Scorer scorer(assets->model, assets->schema, *assets->evaluator, c.engine.workers);
    for (const auto& p : uniform_baseline(scorer)) {
        csv << "uniform,," << p.level << ',' << p.accuracy << ',' << p.flops_ratio << '\n';
    }
    csv.flush();
    std::cout << "wrote " << (out / "pareto.csv").string() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Learn per-layer compression hyperparameters by adaptive sampling"};
    app.require_subcommand(1);
    Options o;

    auto add_run_flags = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "run config JSON")->required();
        sub->add_option("--workers", o.workers, "concurrent evaluations")->check(CLI::PositiveNumber);
        sub->add_option("--seed", o.seed, "override the config seed");
        sub->add_option("--out", o.out, "output directory");
    };

    auto* flops = app.add_subcommand("flops", "per-layer and total MACs, optionally under a plan");
    flops->add_option("--model", o.model, "model container");
    flops->add_option("--config", o.config, "run config (its model is used)");
    flops->add_option("--plan", o.plan, "compression plan JSON");

    auto* evaluate = app.add_subcommand("evaluate", "score one genome or plan");
    evaluate->add_option("--config", o.config, "run config JSON")->required();
    evaluate->add_option("--genome", o.genome, "genome as a JSON array");
    evaluate->add_option("--plan", o.plan, "compression plan JSON file");
    evaluate->add_option("--workers", o.workers, "concurrent evaluations")->check(CLI::PositiveNumber);

    auto* thresholds = app.add_subcommand("thresholds", "per-gene compression thresholds");
    add_run_flags(thresholds);
    auto* search = app.add_subcommand("search", "full evolutionary search");
    add_run_flags(search);
    auto* pareto = app.add_subcommand("pareto", "evolved frontier vs uniform baseline");
    add_run_flags(pareto);
    pareto->add_option("--thresholds", o.thresholds, "accuracy thresholds")->delimiter(',');

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*flops) return cmd_flops(o);
        if (*evaluate) return cmd_evaluate(o);
        if (*thresholds) return cmd_thresholds(o);
        if (*search) return cmd_search(o);
        if (*pareto) return cmd_pareto(o);
    } catch (const ValidationError& e) {
        std::cerr << "gencomp: error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "gencomp: error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
