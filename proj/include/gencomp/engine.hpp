#pragma once

// Adaptive sampling over compression genomes: scoring, per-gene threshold
// search, warm initialization, selection / crossover / mutation and the
// evolution loop.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <random>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "gencomp/compress.hpp"
#include "gencomp/error.hpp"
#include "gencomp/evaluator.hpp"
#include "gencomp/genome.hpp"
#include "gencomp/model.hpp"

namespace gencomp {

using Rng = std::mt19937_64;
using WarningSink = std::function<void(std::string_view)>;

inline void warn_stderr(std::string_view msg) { std::cerr << "[gencomp] warning: " << msg << '\n'; }

// ---- score -------------------------------------------------------------------

struct ScoreReport {
    Macs delta_flops = 0;
    double accuracy = 0.0;
    double penalty = 0.0;
    double score = 0.0;
    bool below_threshold = false;
};

/// score = delta_flops / max(PEN, eps), where
/// PEN = (acc_o - acc_v) + [acc_v < acc_thr] * exp(acc_thr - acc_v).
inline ScoreReport score(Macs delta_flops, double acc_v, double acc_o, double acc_thr, double eps_pen) {
    ScoreReport r;
    r.delta_flops = delta_flops;
    r.accuracy = acc_v;
    r.below_threshold = acc_v < acc_thr;
    const double raw = (acc_o - acc_v) + (r.below_threshold ? std::exp(acc_thr - acc_v) : 0.0);
    r.penalty = std::max(raw, eps_pen);
    r.score = static_cast<double>(delta_flops) / r.penalty;
    return r;
}

// ---- configuration -----------------------------------------------------------

enum class InitPolicy { warm, uniform };

struct EngineConfig {
    std::size_t population_size = 100;
    std::size_t iterations = 50;
    double acc_thr = 0.0;
    double p_cross = 0.7;
    double p_swap = 0.5;
    double p_mutate = 0.3;
    double p_tweak = 0.1;
    double mutation_sigma = 0.2;
    double epsilon_pen = 1e-3;
    bool elitism = true;
    std::uint64_t seed = 0;
    std::size_t init_max_attempts = 1000;
    InitPolicy init = InitPolicy::warm;
    std::size_t workers = 1;
};

inline void validate(const EngineConfig& c) {
    auto prob = [](double p, const char* name) {
        if (!(p >= 0.0 && p <= 1.0)) throw ValidationError(std::string(name) + " must be in [0,1]");
    };
    prob(c.p_cross, "p_cross");
    prob(c.p_swap, "p_swap");
    prob(c.p_mutate, "p_mutate");
    prob(c.p_tweak, "p_tweak");
    prob(c.acc_thr, "acc_thr");
    if (c.population_size < 2 || c.population_size % 2 != 0) {
        throw ValidationError("population_size must be even and >= 2 (got " +
                              std::to_string(c.population_size) + ")");
    }
    if (!(c.mutation_sigma >= 0.0) || !std::isfinite(c.mutation_sigma)) {
        throw ValidationError("mutation_sigma must be non-negative");
    }
    if (!(c.epsilon_pen > 0.0)) throw ValidationError("epsilon_pen must be positive");
    if (c.init_max_attempts == 0) throw ValidationError("init_max_attempts must be positive");
    if (c.workers == 0) throw ValidationError("workers must be positive");
}

// ---- parallel map ------------------------------------------------------------

/// Runs fn(i) for i in [0, n) on up to `workers` threads; rethrows the first
/// exception after all threads join.
inline void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < std::min(workers, n); ++t) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < n; i = next++) {
                    try {
                        fn(i);
                    } catch (...) {
                        std::lock_guard lock(error_mu);
                        if (!error) error = std::current_exception();
                        next = n;
                    }
                }
            });
        }
    }
    if (error) std::rethrow_exception(error);
}

// ---- threshold search ----------------------------------------------------------

using GenomeAccuracy = std::function<double(const Genome&)>;

/// Largest pruning ratio for gene `gene` (others uncompressed) whose accuracy
/// stays above acc_thr, to 1/64 resolution. Bisection assumes accuracy does
/// not rise with pruning; if the samples contradict that, a full scan over
/// multiples of 1/64 decides instead.
inline double find_threshold_continuous(const GenomeSchema& schema, std::size_t gene,
                                        const GenomeAccuracy& evaluate, double acc_thr,
                                        const WarningSink& warn = warn_stderr) {
    if (schema[gene].discrete()) throw ValidationError("gene is not continuous");
    Genome g = identity_genome(schema);
    std::vector<std::pair<double, double>> seen;
    auto acc_at = [&](double p) {
        g[gene] = p;
        const double a = evaluate(g);
        seen.emplace_back(p, a);
        return a;
    };

    constexpr double step = 1.0 / 64.0;
    double lo = 0.0;
    if (acc_at(1.0) > acc_thr) {
        lo = 1.0;
    } else {
        double hi = 1.0;
        while (hi - lo > step) {
            const double mid = 0.5 * (lo + hi);
            if (acc_at(mid) > acc_thr) lo = mid;
            else hi = mid;
        }
    }

    std::sort(seen.begin(), seen.end());
    bool monotone = true;
    for (std::size_t i = 1; i < seen.size(); ++i) monotone = monotone && seen[i].second <= seen[i - 1].second;
    if (monotone) return lo;

    if (warn) warn("accuracy not monotone in pruning ratio of gene " + std::to_string(gene) + "; scanning");
    double best = 0.0;
    for (int k = 1; k <= 64; ++k) {
        g[gene] = k * step;
        if (evaluate(g) > acc_thr) best = k * step;
    }
    return best;
}

/// Smallest rank code for gene `gene` (others at full rank) whose accuracy
/// stays above acc_thr. Falls back to code_max, with a warning, when no code
/// qualifies.
inline int find_threshold_discrete(const GenomeSchema& schema, std::size_t gene,
                                   const GenomeAccuracy& evaluate, double acc_thr,
                                   const WarningSink& warn = warn_stderr) {
    const int cmax = schema[gene].code_max();
    if (cmax == 0) throw ValidationError("gene is not a rank code");
    Genome g = identity_genome(schema);
    std::vector<std::pair<int, double>> seen;
    auto acc_at = [&](int c) {
        g[gene] = c;
        const double a = evaluate(g);
        seen.emplace_back(c, a);
        return a;
    };

    if (!(acc_at(cmax) > acc_thr)) {
        if (warn) warn("gene " + std::to_string(gene) + " violates acc_thr even at full rank; using code " + std::to_string(cmax));
        return cmax;
    }
    int lo = 1, hi = cmax;
    while (lo < hi) {
        const int mid = lo + (hi - lo) / 2;
        if (acc_at(mid) > acc_thr) hi = mid;
        else lo = mid + 1;
    }

    std::sort(seen.begin(), seen.end());
    bool monotone = true;
    for (std::size_t i = 1; i < seen.size(); ++i) monotone = monotone && seen[i].second >= seen[i - 1].second;
    if (monotone) return hi;

    if (warn) warn("accuracy not monotone in rank code of gene " + std::to_string(gene) + "; scanning");
    for (int c = 1; c <= cmax; ++c) {
        g[gene] = c;
        if (evaluate(g) > acc_thr) return c;
    }
    return cmax;
}

struct ThresholdVector {
    std::vector<double> values;
};

inline ThresholdVector find_thresholds(const GenomeSchema& schema, const GenomeAccuracy& evaluate,
                                       double acc_thr, const WarningSink& warn = warn_stderr) {
    ThresholdVector t;
    for (std::size_t i = 0; i < schema.size(); ++i) {
        t.values.push_back(schema[i].discrete()
                               ? static_cast<double>(find_threshold_discrete(schema, i, evaluate, acc_thr, warn))
                               : find_threshold_continuous(schema, i, evaluate, acc_thr, warn));
    }
    return t;
}

inline json to_json(const ThresholdVector& t, const GenomeSchema& schema) {
    return to_json(Genome{t.values}, schema);
}

// ---- initialization ------------------------------------------------------------

/// One warm-init draw: continuous genes from Normal(theta/2, theta/2) clamped
/// to [0, theta]; rank codes uniform over {theta, ..., code_max}.
inline Genome sample_warm(const GenomeSchema& schema, const ThresholdVector& theta, Rng& rng) {
    Genome g;
    g.values.resize(schema.size());
    for (std::size_t i = 0; i < schema.size(); ++i) {
        const double th = theta.values[i];
        if (schema[i].discrete()) {
            std::uniform_int_distribution<int> d(static_cast<int>(th), schema[i].code_max());
            g[i] = d(rng);
        } else if (th <= 0.0) {
            g[i] = 0.0;
        } else {
            std::normal_distribution<double> d(th / 2.0, th / 2.0);
            g[i] = std::clamp(d(rng), 0.0, th);
        }
    }
    return g;
}

/// Naive draw: continuous genes uniform in [0,1], codes uniform over their domain.
inline Genome sample_uniform(const GenomeSchema& schema, Rng& rng) {
    Genome g;
    g.values.resize(schema.size());
    for (std::size_t i = 0; i < schema.size(); ++i) {
        if (schema[i].discrete()) {
            std::uniform_int_distribution<int> d(1, schema[i].code_max());
            g[i] = d(rng);
        } else {
            std::uniform_real_distribution<double> d(0.0, 1.0);
            g[i] = d(rng);
        }
    }
    return g;
}

struct InitResult {
    std::vector<Genome> genomes;
    std::vector<double> accuracies;
    std::size_t draws = 0;  // individuals examined, accepted or not
};

/// Rejection sampling: keeps drawing until N individuals with accuracy above
/// acc_thr are accepted. Draws are evaluated in batches of N so results do not
/// depend on the worker count.
inline InitResult warm_init(const GenomeSchema& schema, const ThresholdVector& theta,
                            const std::function<std::vector<double>(const std::vector<Genome>&)>& evaluate_batch,
                            const EngineConfig& config, Rng& rng) {
    validate(config);
    const std::size_t n = config.population_size;
    const std::size_t cap = config.init_max_attempts * n;
    InitResult out;
    while (out.genomes.size() < n) {
        if (out.draws >= cap) {
            throw InfeasibleError("warm initialization accepted only " + std::to_string(out.genomes.size()) +
                                  " of " + std::to_string(n) + " individuals in " + std::to_string(cap) +
                                  " draws; lower acc_thr");
        }
        const std::size_t batch_size = std::min(n, cap - out.draws);
        std::vector<Genome> batch;
        for (std::size_t i = 0; i < batch_size; ++i) batch.push_back(sample_warm(schema, theta, rng));
        const auto acc = evaluate_batch(batch);
        for (std::size_t i = 0; i < batch.size() && out.genomes.size() < n; ++i) {
            ++out.draws;
            if (acc[i] > config.acc_thr) {
                out.genomes.push_back(std::move(batch[i]));
                out.accuracies.push_back(acc[i]);
            }
        }
    }
    return out;
}

// ---- genetic operators ---------------------------------------------------------

/// Selection probabilities: (s - s_min) / sum(s - s_min); uniform when all
/// scores are equal.
inline std::vector<double> selection_probabilities(const std::vector<double>& scores) {
    std::vector<double> p(scores.size(), 0.0);
    if (scores.empty()) return p;
    const double smin = *std::min_element(scores.begin(), scores.end());
    double total = 0.0;
    for (double s : scores) total += s - smin;
    if (!(total > 0.0) || !std::isfinite(total)) {
        std::fill(p.begin(), p.end(), 1.0 / static_cast<double>(scores.size()));
        return p;
    }
    for (std::size_t i = 0; i < scores.size(); ++i) p[i] = (scores[i] - smin) / total;
    return p;
}

/// N draws with replacement, proportional to the normalized scores.
inline std::vector<std::size_t> select_indices(const std::vector<double>& scores, Rng& rng) {
    const auto prob = selection_probabilities(scores);
    std::vector<double> cum(prob.size());
    double run = 0.0;
    for (std::size_t i = 0; i < prob.size(); ++i) cum[i] = run += prob[i];
    std::uniform_real_distribution<double> u(0.0, run);
    std::vector<std::size_t> picks(scores.size());
    for (auto& pick : picks) {
        const double x = u(rng);
        const auto it = std::upper_bound(cum.begin(), cum.end(), x);
        pick = it == cum.end() ? prob.size() - 1 : static_cast<std::size_t>(it - cum.begin());
        // landing exactly on the total: step back to the last positive weight
        while (prob[pick] == 0.0 && pick > 0) --pick;
    }
    return picks;
}

inline std::vector<Genome> select(const std::vector<Genome>& population, const std::vector<double>& scores, Rng& rng) {
    if (population.size() != scores.size()) throw ValidationError("one score per individual required");
    std::vector<Genome> next;
    next.reserve(population.size());
    for (std::size_t i : select_indices(scores, rng)) next.push_back(population[i]);
    return next;
}

/// Adjacent pairs (0,1), (2,3), ... cross with probability p_cross; each gene
/// position of a crossing pair swaps with probability p_swap.
inline void crossover(std::vector<Genome>& population, double p_cross, double p_swap, Rng& rng) {
    if (population.size() % 2 != 0) throw ValidationError("crossover needs an even population");
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t k = 0; k + 1 < population.size(); k += 2) {
        if (!(u(rng) < p_cross)) continue;
        auto& a = population[k];
        auto& b = population[k + 1];
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (u(rng) < p_swap) std::swap(a[i], b[i]);
        }
    }
}

/// Each individual mutates with probability p_mutate; each of its genes is
/// tweaked with probability p_tweak: Normal(0, sigma) noise for continuous
/// genes, +-1 for rank codes, then clipped to the gene's domain.
inline void mutate(std::vector<Genome>& population, const GenomeSchema& schema, double p_mutate,
                   double p_tweak, double sigma, Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::bernoulli_distribution coin(0.5);
    for (auto& g : population) {
        if (!(u(rng) < p_mutate)) continue;
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (!(u(rng) < p_tweak)) continue;
            const auto& d = schema[i];
            if (d.discrete()) {
                g[i] = std::clamp(g[i] + (coin(rng) ? 1.0 : -1.0), d.lower(), d.upper());
            } else {
                const double noise = sigma > 0.0 ? std::normal_distribution<double>(0.0, sigma)(rng) : 0.0;
                g[i] = std::clamp(g[i] + noise, 0.0, 1.0);
            }
        }
    }
}

// ---- evolution -------------------------------------------------------------------

struct HistoryRecord {
    std::size_t iteration = 0;
    std::size_t index = 0;
    Genome genome;
    ScoreReport report;
};

inline json to_json(const HistoryRecord& r, const GenomeSchema& schema) {
    return {{"iteration", r.iteration},
            {"index", r.index},
            {"genome", to_json(r.genome, schema)},
            {"accuracy", r.report.accuracy},
            {"delta_flops", r.report.delta_flops},
            {"score", r.report.score}};
}

struct History {
    std::vector<HistoryRecord> records;
    /// Best individual evaluated up to and including each iteration.
    std::vector<Genome> best_genome;
    std::vector<ScoreReport> best_report;
    /// Population mean score per iteration.
    std::vector<double> mean_score;
};

struct EvolveResult {
    Genome best;
    ScoreReport best_report;
    History history;
    ThresholdVector thresholds;
    double base_accuracy = 0.0;
    Macs base_flops = 0;
    std::size_t init_draws = 0;
};

/// Scores genomes for one (model, schema, evaluator) triple and memoizes
/// accuracies by genome value.
class Scorer {
public:
    Scorer(const ModelSpec& model, const GenomeSchema& schema, Evaluator& evaluator, std::size_t workers = 1)
        : model_(model), schema_(schema), evaluator_(evaluator), workers_(workers),
          base_flops_(model_flops(model)) {}

    const ModelSpec& model() const { return model_; }
    const GenomeSchema& schema() const { return schema_; }
    Macs base_flops() const { return base_flops_; }

    std::vector<double> accuracies(const std::vector<Genome>& genomes) {
        std::vector<double> out(genomes.size());
        std::vector<std::size_t> todo;
        std::map<Genome, std::size_t> first_of;
        for (std::size_t i = 0; i < genomes.size(); ++i) {
            if (auto it = cache_.find(genomes[i]); it != cache_.end()) {
                out[i] = it->second;
            } else if (first_of.emplace(genomes[i], i).second) {
                todo.push_back(i);
            }
        }
        std::vector<double> fresh(todo.size());
        parallel_for(todo.size(), workers_, [&](std::size_t t) {
            const Genome& g = genomes[todo[t]];
            fresh[t] = evaluator_.accuracy(g, decode(g, schema_, model_));
        });
        for (std::size_t t = 0; t < todo.size(); ++t) cache_.emplace(genomes[todo[t]], fresh[t]);
        for (std::size_t i = 0; i < genomes.size(); ++i) out[i] = cache_.at(genomes[i]);
        evaluations_ += todo.size();
        return out;
    }

    double accuracy(const Genome& g) { return accuracies({g}).front(); }

    Macs compressed(const Genome& g) const { return compressed_flops(model_, decode(g, schema_, model_)); }

    double flops_ratio(const Genome& g) const {
        return base_flops_ == 0 ? 1.0 : static_cast<double>(compressed(g)) / static_cast<double>(base_flops_);
    }

    std::vector<ScoreReport> reports(const std::vector<Genome>& genomes, double acc_o, double acc_thr, double eps) {
        const auto acc = accuracies(genomes);
        std::vector<ScoreReport> out;
        for (std::size_t i = 0; i < genomes.size(); ++i) {
            const Macs c = compressed(genomes[i]);
            out.push_back(score(base_flops_ - std::min(c, base_flops_), acc[i], acc_o, acc_thr, eps));
        }
        return out;
    }

    /// Evaluator calls actually made (cache misses).
    std::size_t evaluations() const { return evaluations_; }

private:
    const ModelSpec& model_;
    const GenomeSchema& schema_;
    Evaluator& evaluator_;
    std::size_t workers_;
    Macs base_flops_;
    std::map<Genome, double> cache_;
    std::size_t evaluations_ = 0;
};

struct EvolveHooks {
    /// Called for every history record as soon as it exists.
    std::function<void(const HistoryRecord&)> on_record;
    WarningSink warn = warn_stderr;
};

/// Full run: thresholds and warm (or uniform) initialization, then
/// `iterations` rounds of evaluate / select / crossover / mutate (+ elitism).
/// The population is evaluated iterations + 1 times; the result is the best
/// individual ever evaluated.
inline EvolveResult evolve(const ModelSpec& model, const GenomeSchema& schema, Evaluator& evaluator,
                           const EngineConfig& config, const EvolveHooks& hooks = {}) {
    validate(config);
    Scorer scorer(model, schema, evaluator, config.workers);
    Rng rng(config.seed);

    EvolveResult res;
    res.base_flops = scorer.base_flops();
    res.base_accuracy = scorer.accuracy(identity_genome(schema));

    std::vector<Genome> population;
    if (config.init == InitPolicy::warm) {
        res.thresholds = find_thresholds(
            schema, [&](const Genome& g) { return scorer.accuracy(g); }, config.acc_thr, hooks.warn);
        auto init = warm_init(
            schema, res.thresholds, [&](const std::vector<Genome>& gs) { return scorer.accuracies(gs); }, config, rng);
        population = std::move(init.genomes);
        res.init_draws = init.draws;
    } else {
        for (std::size_t i = 0; i < config.population_size; ++i) population.push_back(sample_uniform(schema, rng));
        res.init_draws = config.population_size;
    }

    bool have_best = false;
    for (std::size_t t = 0;; ++t) {
        const auto reports = scorer.reports(population, res.base_accuracy, config.acc_thr, config.epsilon_pen);
        std::vector<double> scores;
        double mean = 0.0;
        for (std::size_t i = 0; i < population.size(); ++i) {
            HistoryRecord rec{t, i, population[i], reports[i]};
            if (hooks.on_record) hooks.on_record(rec);
            res.history.records.push_back(std::move(rec));
            scores.push_back(reports[i].score);
            mean += reports[i].score;
            if (!have_best || reports[i].score > res.best_report.score) {
                res.best = population[i];
                res.best_report = reports[i];
                have_best = true;
            }
        }
        res.history.best_genome.push_back(res.best);
        res.history.best_report.push_back(res.best_report);
        res.history.mean_score.push_back(mean / static_cast<double>(population.size()));
        if (t == config.iterations) break;

        population = select(population, scores, rng);
        crossover(population, config.p_cross, config.p_swap, rng);
        mutate(population, schema, config.p_mutate, config.p_tweak, config.mutation_sigma, rng);
        if (config.elitism) {
            std::uniform_int_distribution<std::size_t> slot(0, population.size() - 1);
            population[slot(rng)] = res.best;
        }
    }
    return res;
}

}  // namespace gencomp
