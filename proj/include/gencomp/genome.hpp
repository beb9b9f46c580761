#pragma once

// Translation between fixed-length genomes and per-layer compression plans.
//
// Pruning tasks use one continuous ratio gene per layer. Decomposition uses a
// 64-bin rank code per SVD-able layer (fully connected, 1x1 conv) and a pair
// of 8-bin codes (output mode, then input mode) per k>1 convolution. The
// combined task lays the pruning block out first, then the decomposition
// block.

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include "gencomp/error.hpp"
#include "gencomp/model.hpp"

namespace gencomp {

enum class Task { Pn, Ps, D, D_Ps };

inline std::string_view to_string(Task t) {
    switch (t) {
    case Task::Pn: return "Pn";
    case Task::Ps: return "Ps";
    case Task::D: return "D";
    case Task::D_Ps: return "D_Ps";
    }
    return "?";
}

inline Task task_from_string(std::string_view s) {
    if (s == "Pn") return Task::Pn;
    if (s == "Ps") return Task::Ps;
    if (s == "D") return Task::D;
    if (s == "D_Ps" || s == "D+Ps") return Task::D_Ps;
    throw ValidationError("unknown task '" + std::string(s) + "' (expected Pn, Ps, D or D_Ps)");
}

inline bool task_prunes(Task t) { return t != Task::D; }
inline bool task_decomposes(Task t) { return t == Task::D || t == Task::D_Ps; }

enum class GeneKind { prune_ratio, svd_rank_code, tucker_rank_m_code, tucker_rank_n_code };

inline std::string_view to_string(GeneKind k) {
    switch (k) {
    case GeneKind::prune_ratio: return "prune_ratio";
    case GeneKind::svd_rank_code: return "svd_rank_code";
    case GeneKind::tucker_rank_m_code: return "tucker_rank_m_code";
    case GeneKind::tucker_rank_n_code: return "tucker_rank_n_code";
    }
    return "?";
}

inline constexpr int kSvdCodes = 64;
inline constexpr int kTuckerCodes = 8;

struct GeneDescriptor {
    std::size_t layer_id = 0;
    GeneKind kind = GeneKind::prune_ratio;
    std::size_t max_rank = 1;  // R; unused by prune genes

    bool discrete() const { return kind != GeneKind::prune_ratio; }

    /// 64 for SVD codes, 8 for Tucker codes, 0 for continuous genes.
    int code_max() const {
        switch (kind) {
        case GeneKind::svd_rank_code: return kSvdCodes;
        case GeneKind::tucker_rank_m_code:
        case GeneKind::tucker_rank_n_code: return kTuckerCodes;
        default: return 0;
        }
    }

    /// Gene value that leaves the layer uncompressed.
    double identity() const { return discrete() ? code_max() : 0.0; }

    double lower() const { return discrete() ? 1.0 : 0.0; }
    double upper() const { return discrete() ? code_max() : 1.0; }

    friend bool operator==(const GeneDescriptor&, const GeneDescriptor&) = default;
};

struct GenomeSchema {
    Task task = Task::Ps;
    std::vector<GeneDescriptor> genes;

    std::size_t size() const { return genes.size(); }
    const GeneDescriptor& operator[](std::size_t i) const { return genes[i]; }
};

struct Genome {
    std::vector<double> values;

    std::size_t size() const { return values.size(); }
    double& operator[](std::size_t i) { return values[i]; }
    double operator[](std::size_t i) const { return values[i]; }

    friend bool operator==(const Genome&, const Genome&) = default;
    friend auto operator<=>(const Genome&, const Genome&) = default;
};

// ---- compression plan ------------------------------------------------------

struct Prune {
    double ratio = 0.0;
    bool structured = false;
    friend bool operator==(const Prune&, const Prune&) = default;
};

struct Svd {
    std::size_t rank = 1;
    friend bool operator==(const Svd&, const Svd&) = default;
};

struct Tucker {
    std::size_t rank_m = 1;
    std::size_t rank_n = 1;
    friend bool operator==(const Tucker&, const Tucker&) = default;
};

using Decomposition = std::variant<Svd, Tucker>;

/// Structured channel pruning followed by decomposition of the masked weight.
struct PruneAndDecompose {
    double ratio = 0.0;
    Decomposition decomposition;
    friend bool operator==(const PruneAndDecompose&, const PruneAndDecompose&) = default;
};

using LayerAction = std::variant<std::monostate, Prune, Svd, Tucker, PruneAndDecompose>;

struct CompressionPlan {
    std::vector<LayerAction> layers;

    std::size_t size() const { return layers.size(); }
    friend bool operator==(const CompressionPlan&, const CompressionPlan&) = default;
};

inline CompressionPlan identity_plan(const ModelSpec& model) {
    return CompressionPlan{std::vector<LayerAction>(model.size())};
}

// ---- schema ----------------------------------------------------------------

inline GenomeSchema build_schema(const ModelSpec& model, Task task) {
    GenomeSchema schema;
    schema.task = task;
    if (task_prunes(task)) {
        for (const auto& l : model.layers) {
            schema.genes.push_back({l.id, GeneKind::prune_ratio, l.out_channels});
        }
    }
    if (task_decomposes(task)) {
        bool any = false;
        for (const auto& l : model.layers) {
            if (l.svd_decomposable()) {
                schema.genes.push_back(
                    {l.id, GeneKind::svd_rank_code, std::min(l.out_channels, l.in_channels)});
                any = true;
            } else if (l.tucker_decomposable()) {
                schema.genes.push_back({l.id, GeneKind::tucker_rank_m_code, l.out_channels});
                schema.genes.push_back({l.id, GeneKind::tucker_rank_n_code, l.in_channels});
                any = true;
            }
        }
        if (!any) throw ValidationError("model has no decomposable layer");
    }
    return schema;
}

inline Genome identity_genome(const GenomeSchema& schema) {
    Genome g;
    for (const auto& d : schema.genes) g.values.push_back(d.identity());
    return g;
}

inline void validate_genome(const Genome& genome, const GenomeSchema& schema) {
    if (genome.size() != schema.size()) {
        throw ValidationError("genome length " + std::to_string(genome.size()) +
                              " does not match schema length " + std::to_string(schema.size()));
    }
    for (std::size_t i = 0; i < genome.size(); ++i) {
        const double v = genome[i];
        const auto& d = schema[i];
        const bool ok = std::isfinite(v) && v >= d.lower() && v <= d.upper() &&
                        (!d.discrete() || v == std::floor(v));
        if (!ok) {
            throw ValidationError("gene " + std::to_string(i) + " (" +
                                  std::string(to_string(d.kind)) + ") out of domain: " +
                                  std::to_string(v));
        }
    }
}

/// Rank for a code: round(code * R / code_max), halves rounding up, at least 1.
inline std::size_t rank_from_code(int code, std::size_t max_rank, int code_max) {
    const std::uint64_t num = 2ull * static_cast<std::uint64_t>(code) * max_rank +
                              static_cast<std::uint64_t>(code_max);
    const std::uint64_t r = num / (2ull * static_cast<std::uint64_t>(code_max));
    return static_cast<std::size_t>(std::max<std::uint64_t>(r, 1));
}

/// Smallest code that decodes to `rank`; throws with the nearest code when none does.
inline int code_from_rank(std::size_t rank, std::size_t max_rank, int code_max) {
    int nearest = 1;
    std::size_t best_gap = SIZE_MAX;
    for (int c = 1; c <= code_max; ++c) {
        const std::size_t r = rank_from_code(c, max_rank, code_max);
        if (r == rank) return c;
        const std::size_t gap = r > rank ? r - rank : rank - r;
        if (gap < best_gap) {
            best_gap = gap;
            nearest = c;
        }
    }
    throw UnrepresentableError("rank " + std::to_string(rank) + " is not representable for R=" +
                                   std::to_string(max_rank) + " (nearest code " +
                                   std::to_string(nearest) + ")",
                               nearest);
}

namespace detail {

struct LayerGenes {
    const double* prune = nullptr;
    int svd = 0;
    int tucker_m = 0;
    int tucker_n = 0;
};

inline std::vector<LayerGenes> group_genes(const Genome& genome, const GenomeSchema& schema,
                                           std::size_t layers) {
    std::vector<LayerGenes> out(layers);
    for (std::size_t i = 0; i < schema.size(); ++i) {
        const auto& d = schema[i];
        if (d.layer_id >= layers) throw ValidationError("schema does not match model");
        auto& lg = out[d.layer_id];
        switch (d.kind) {
        case GeneKind::prune_ratio: lg.prune = &genome.values[i]; break;
        case GeneKind::svd_rank_code: lg.svd = static_cast<int>(genome[i]); break;
        case GeneKind::tucker_rank_m_code: lg.tucker_m = static_cast<int>(genome[i]); break;
        case GeneKind::tucker_rank_n_code: lg.tucker_n = static_cast<int>(genome[i]); break;
        }
    }
    return out;
}

}  // namespace detail

inline CompressionPlan decode(const Genome& genome, const GenomeSchema& schema,
                              const ModelSpec& model) {
    validate_genome(genome, schema);
    const auto genes = detail::group_genes(genome, schema, model.size());
    const bool structured = schema.task != Task::Pn;

    CompressionPlan plan = identity_plan(model);
    for (std::size_t li = 0; li < model.size(); ++li) {
        const auto& l = model.layers[li];
        const auto& g = genes[li];

        std::variant<std::monostate, Svd, Tucker> decomp;
        if (g.svd > 0) {
            decomp = Svd{rank_from_code(g.svd, std::min(l.out_channels, l.in_channels), kSvdCodes)};
        } else if (g.tucker_m > 0 && g.tucker_n > 0) {
            decomp = Tucker{rank_from_code(g.tucker_m, l.out_channels, kTuckerCodes),
                            rank_from_code(g.tucker_n, l.in_channels, kTuckerCodes)};
        }

        auto& action = plan.layers[li];
        if (g.prune != nullptr) {
            const double p = *g.prune;
            if (const auto* s = std::get_if<Svd>(&decomp)) {
                action = PruneAndDecompose{p, *s};
            } else if (const auto* t = std::get_if<Tucker>(&decomp)) {
                action = PruneAndDecompose{p, *t};
            } else {
                action = Prune{p, structured};
            }
        } else if (const auto* s = std::get_if<Svd>(&decomp)) {
            action = *s;
        } else if (const auto* t = std::get_if<Tucker>(&decomp)) {
            action = *t;
        }
    }
    return plan;
}

inline Genome encode(const CompressionPlan& plan, const GenomeSchema& schema,
                     const ModelSpec& model) {
    if (plan.size() != model.size()) throw ValidationError("plan/model layer count mismatch");
    Genome genome = identity_genome(schema);
    for (std::size_t i = 0; i < schema.size(); ++i) {
        const auto& d = schema[i];
        const auto& l = model.layers[d.layer_id];
        const auto& action = plan.layers[d.layer_id];
        if (std::holds_alternative<std::monostate>(action)) continue;

        const Prune* prune = std::get_if<Prune>(&action);
        const auto* pd = std::get_if<PruneAndDecompose>(&action);
        const Svd* svd = std::get_if<Svd>(&action);
        const Tucker* tucker = std::get_if<Tucker>(&action);
        if (pd != nullptr) {
            svd = std::get_if<Svd>(&pd->decomposition);
            tucker = std::get_if<Tucker>(&pd->decomposition);
        }

        switch (d.kind) {
        case GeneKind::prune_ratio: {
            double p = 0.0;
            if (prune != nullptr) p = prune->ratio;
            else if (pd != nullptr) p = pd->ratio;
            else throw ValidationError("layer " + std::to_string(l.id) + ": expected a pruning action");
            if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("prune ratio out of [0,1]");
            genome[i] = p;
            break;
        }
        case GeneKind::svd_rank_code:
            if (svd == nullptr) {
                if (prune != nullptr) break;
                throw ValidationError("layer " + std::to_string(l.id) + ": expected an SVD action");
            }
            if (svd->rank < 1 || svd->rank > d.max_rank) throw ValidationError("SVD rank out of range");
            genome[i] = code_from_rank(svd->rank, d.max_rank, kSvdCodes);
            break;
        case GeneKind::tucker_rank_m_code:
        case GeneKind::tucker_rank_n_code: {
            if (tucker == nullptr) {
                if (prune != nullptr) break;
                throw ValidationError("layer " + std::to_string(l.id) + ": expected a Tucker action");
            }
            const bool mode_m = d.kind == GeneKind::tucker_rank_m_code;
            const std::size_t r = mode_m ? tucker->rank_m : tucker->rank_n;
            if (r < 1 || r > d.max_rank) throw ValidationError("Tucker rank out of range");
            genome[i] = code_from_rank(r, d.max_rank, kTuckerCodes);
            break;
        }
        }
    }
    return genome;
}

// ---- JSON ------------------------------------------------------------------

inline json to_json(const Genome& genome, const GenomeSchema& schema) {
    json out = json::array();
    for (std::size_t i = 0; i < genome.size(); ++i) {
        if (i < schema.size() && schema[i].discrete()) {
            out.push_back(static_cast<long long>(genome[i]));
        } else {
            out.push_back(genome[i]);
        }
    }
    return out;
}

inline Genome genome_from_json(const json& j) {
    if (!j.is_array()) throw ValidationError("genome must be a JSON array");
    Genome g;
    for (const auto& v : j) {
        if (!v.is_number()) throw ValidationError("genome entries must be numbers");
        g.values.push_back(v.get<double>());
    }
    return g;
}

inline json to_json(const GenomeSchema& schema) {
    json out = json::array();
    for (const auto& d : schema.genes) {
        out.push_back({{"layer", d.layer_id},
                       {"kind", to_string(d.kind)},
                       {"max_rank", d.max_rank},
                       {"code_max", d.code_max()}});
    }
    return out;
}

inline json to_json(const Decomposition& d) {
    if (const auto* s = std::get_if<Svd>(&d)) return {{"type", "svd"}, {"rank", s->rank}};
    const auto& t = std::get<Tucker>(d);
    return {{"type", "tucker"}, {"rank_m", t.rank_m}, {"rank_n", t.rank_n}};
}

inline json to_json(const LayerAction& action) {
    return std::visit(
        [](const auto& a) -> json {
            using T = std::decay_t<decltype(a)>;
            if constexpr (std::is_same_v<T, std::monostate>) {
                return {{"type", "none"}};
            } else if constexpr (std::is_same_v<T, Prune>) {
                return {{"type", "prune"},
                        {"ratio", a.ratio},
                        {"mode", a.structured ? "structured" : "unstructured"}};
            } else if constexpr (std::is_same_v<T, PruneAndDecompose>) {
                return {{"type", "prune_decompose"},
                        {"ratio", a.ratio},
                        {"decomposition", to_json(a.decomposition)}};
            } else {
                return to_json(Decomposition{a});
            }
        },
        action);
}

inline json to_json(const CompressionPlan& plan) {
    json out = json::array();
    for (std::size_t i = 0; i < plan.size(); ++i) {
        out.push_back({{"layer", i}, {"action", to_json(plan.layers[i])}});
    }
    return out;
}

namespace detail {

inline std::size_t json_rank(const json& j, const char* key) {
    if (!j.contains(key) || !j[key].is_number_integer() || j[key].get<long long>() < 1) {
        throw ValidationError(std::string("plan action needs positive integer '") + key + "'");
    }
    return j[key].get<std::size_t>();
}

inline double json_ratio(const json& j) {
    if (!j.contains("ratio") || !j["ratio"].is_number()) {
        throw ValidationError("plan action needs numeric 'ratio'");
    }
    const double p = j["ratio"].get<double>();
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("prune ratio out of [0,1]");
    return p;
}

inline Decomposition decomposition_from_json(const json& j) {
    const std::string type = j.value("type", "");
    if (type == "svd") return Svd{json_rank(j, "rank")};
    if (type == "tucker") return Tucker{json_rank(j, "rank_m"), json_rank(j, "rank_n")};
    throw ValidationError("unknown decomposition type '" + type + "'");
}

}  // namespace detail

inline LayerAction action_from_json(const json& j) {
    if (!j.is_object()) throw ValidationError("plan action must be an object");
    const std::string type = j.value("type", "");
    if (type == "none") return std::monostate{};
    if (type == "prune") {
        const std::string mode = j.value("mode", "unstructured");
        if (mode != "structured" && mode != "unstructured") {
            throw ValidationError("unknown prune mode '" + mode + "'");
        }
        return Prune{detail::json_ratio(j), mode == "structured"};
    }
    if (type == "prune_decompose") {
        if (!j.contains("decomposition")) throw ValidationError("prune_decompose needs 'decomposition'");
        return PruneAndDecompose{detail::json_ratio(j),
                                 detail::decomposition_from_json(j["decomposition"])};
    }
    const auto d = detail::decomposition_from_json(j);
    if (const auto* s = std::get_if<Svd>(&d)) return *s;
    return std::get<Tucker>(d);
}

/// Accepts either the array form written by `to_json(plan)` or an object
/// with a "plan" key holding it. Layers not mentioned stay uncompressed.
inline CompressionPlan plan_from_json(const json& j, const ModelSpec& model) {
    const json& arr = j.is_object() && j.contains("plan") ? j["plan"] : j;
    if (!arr.is_array()) throw ValidationError("plan must be a JSON array");
    CompressionPlan plan = identity_plan(model);
    for (const auto& entry : arr) {
        if (!entry.is_object() || !entry.contains("layer") || !entry["layer"].is_number_integer()) {
            throw ValidationError("plan entry needs integer 'layer'");
        }
        const auto li = entry["layer"].get<long long>();
        if (li < 0 || static_cast<std::size_t>(li) >= model.size()) {
            throw ValidationError("plan/model mismatch: layer " + std::to_string(li));
        }
        plan.layers[static_cast<std::size_t>(li)] = action_from_json(entry.value("action", json::object()));
    }
    return plan;
}

}  // namespace gencomp
