#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <set>

#include "gencomp/engine.hpp"
#include "generators.hpp"
#include "paths.hpp"

using namespace gencomp;

namespace {

GenomeSchema continuous_schema(std::size_t n) {
    GenomeSchema s{Task::Ps, {}};
    for (std::size_t i = 0; i < n; ++i) s.genes.push_back({i, GeneKind::prune_ratio, 1});
    return s;
}

GenomeSchema code_schema() { return GenomeSchema{Task::D, {{0, GeneKind::svd_rank_code, 100}}}; }

struct Warnings {
    std::vector<std::string> seen;
    WarningSink sink() {
        return [this](std::string_view m) { seen.emplace_back(m); };
    }
};

/// Evaluator that counts its calls.
class Counting final : public Evaluator {
public:
    explicit Counting(SyntheticLandscape land) : land_(std::move(land)) {}
    double accuracy(const Genome& g, const CompressionPlan&) override {
        ++calls;
        return synthetic_accuracy(g, land_);
    }
    std::string name() const override { return "counting"; }
    std::atomic<std::size_t> calls{0};

private:
    SyntheticLandscape land_;
};

/// Tiny four-layer FC model so the synthetic landscape has four genes.
ModelSpec four_layer_model() {
    ModelSpec m;
    for (std::size_t i = 0; i < 4; ++i) {
        LayerSpec l;
        l.id = i;
        l.out_channels = 8;
        l.in_channels = 8;
        l.has_relu = i < 3;
        m.layers.push_back(l);
    }
    m.manifest = manifest_from_model(m);
    return m;
}

EngineConfig small_config(std::uint64_t seed) {
    EngineConfig c;
    c.population_size = 20;
    c.iterations = 10;
    c.acc_thr = 0.8;
    c.seed = seed;
    return c;
}

const EvolveHooks kQuiet{nullptr, [](std::string_view) {}};

}  // namespace

// ---- score -------------------------------------------------------------------

TEST(Score, ZeroDegradationHitsTheFloor) {
    const auto r = score(1000, 0.9, 0.9, 0.8, 1e-3);
    EXPECT_EQ(r.penalty, 1e-3);
    EXPECT_NEAR(r.score, 1e6, 1e6 * 1e-12);
    EXPECT_FALSE(r.below_threshold);
}

TEST(Score, SmallDegradation) {
    const auto r = score(1'000'000, 0.85, 0.90, 0.80, 1e-3);
    EXPECT_NEAR(r.penalty, 0.05, 0.05 * 1e-12);
    EXPECT_NEAR(r.score, 2e7, 2e7 * 1e-12);
}

TEST(Score, BelowThresholdAddsExponential) {
    const auto r = score(1000, 0.75, 0.90, 0.80, 1e-3);
    const double want = (0.90 - 0.75) + std::exp(0.80 - 0.75);
    EXPECT_NEAR(r.penalty, want, want * 1e-12);
    EXPECT_NEAR(r.penalty, 1.20127, 1e-5);
    EXPECT_TRUE(r.below_threshold);
}

TEST(Score, NegativeDegradationIsFloored) {
    EXPECT_EQ(score(10, 0.95, 0.9, 0.8, 1e-3).penalty, 1e-3);
}

TEST(Score, AlgebraicProperties) {
    gen::Rng rng(51);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 10000; ++t) {
        const double acc_o = u(rng), acc_v = u(rng), thr = u(rng);
        const Macs df = gen::uniform(rng, 0, 1'000'000);
        const auto r = score(df, acc_v, acc_o, thr, 1e-3);
        ASSERT_GE(r.penalty, 1e-3);
        ASSERT_EQ(r.score, static_cast<double>(df) / r.penalty);
        ASSERT_GT(score(df + 1, acc_v, acc_o, thr, 1e-3).score, r.score);
        if (df > 0 && acc_v > 0.01 && r.penalty > 1e-3) {
            ASSERT_LT(score(df, acc_v - 0.01, acc_o, thr, 1e-3).score, r.score);
        }
        // the same degradation below the floor costs at least e^0 extra
        if (acc_v < thr) {
            ASSERT_GE(r.penalty, acc_o - acc_v + 1.0);
        }
    }
}

// ---- config ------------------------------------------------------------------

TEST(Config, Defaults) {
    const EngineConfig c;
    EXPECT_EQ(c.population_size, 100u);
    EXPECT_EQ(c.iterations, 50u);
    EXPECT_EQ(c.p_cross, 0.7);
    EXPECT_EQ(c.p_swap, 0.5);
    EXPECT_EQ(c.p_mutate, 0.3);
    EXPECT_EQ(c.p_tweak, 0.1);
    EXPECT_EQ(c.mutation_sigma, 0.2);
    EXPECT_EQ(c.epsilon_pen, 1e-3);
    EXPECT_TRUE(c.elitism);
    EXPECT_EQ(c.init_max_attempts, 1000u);
}

TEST(Config, OddPopulationNamesTheField) {
    EngineConfig c;
    c.population_size = 7;
    try {
        validate(c);
        FAIL() << "expected an error";
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("population_size"), std::string::npos);
    }
    c.population_size = 0;
    EXPECT_THROW(validate(c), ValidationError);
}

TEST(Config, ProbabilitiesInUnitInterval) {
    for (double EngineConfig::*field : {&EngineConfig::p_cross, &EngineConfig::p_swap, &EngineConfig::p_mutate,
                                        &EngineConfig::p_tweak, &EngineConfig::acc_thr}) {
        EngineConfig c;
        c.*field = 1.5;
        EXPECT_THROW(validate(c), ValidationError);
        c.*field = -0.1;
        EXPECT_THROW(validate(c), ValidationError);
    }
    EngineConfig c;
    c.epsilon_pen = 0.0;
    EXPECT_THROW(validate(c), ValidationError);
}

// ---- thresholds --------------------------------------------------------------

TEST(Threshold, LinearCrossing) {
    const auto s = continuous_schema(1);
    const double th = find_threshold_continuous(s, 0, [](const Genome& g) { return 0.9 - 0.5 * g[0]; }, 0.8);
    EXPECT_NEAR(th, 0.2, 1.0 / 64);
    EXPECT_LT(0.9 - 0.5 * th, 0.9);
    EXPECT_GT(0.9 - 0.5 * th, 0.8);
}

TEST(Threshold, ConstantEvaluators) {
    const auto s = continuous_schema(1);
    EXPECT_EQ(find_threshold_continuous(s, 0, [](const Genome&) { return 0.9; }, 0.8), 1.0);
    EXPECT_EQ(find_threshold_continuous(s, 0, [](const Genome&) { return 0.5; }, 0.8), 0.0);
}

TEST(Threshold, OtherGenesStayAtIdentity) {
    const auto s = continuous_schema(3);
    find_threshold_continuous(s, 1, [](const Genome& g) {
        EXPECT_EQ(g[0], 0.0);
        EXPECT_EQ(g[2], 0.0);
        return 0.9 - g[1];
    }, 0.5);
}

TEST(Threshold, NonMonotoneFallsBackToScan) {
    const auto s = continuous_schema(1);
    auto acc = [](const Genome& g) { return g[0] < 0.3 ? 0.81 + 0.1 * g[0] : 0.5; };
    Warnings w;
    const double th = find_threshold_continuous(s, 0, acc, 0.8, w.sink());
    EXPECT_EQ(w.seen.size(), 1u);
    double scan = 0.0;
    for (int k = 1; k <= 64; ++k)
        if (acc(Genome{{k / 64.0}}) > 0.8) scan = k / 64.0;
    EXPECT_EQ(th, scan);
}

TEST(Threshold, BisectionMatchesScanOnMonotoneSteps) {
    const auto s = continuous_schema(1);
    for (int cut = 0; cut <= 64; ++cut) {
        auto acc = [cut](const Genome& g) { return g[0] <= cut / 64.0 ? 0.9 : 0.1; };
        Warnings w;
        EXPECT_EQ(find_threshold_continuous(s, 0, acc, 0.8, w.sink()), cut / 64.0);
        EXPECT_TRUE(w.seen.empty());
    }
}

TEST(Threshold, DiscreteInversion) {
    GenomeSchema s{Task::D, {{0, GeneKind::svd_rank_code, 100}}};
    EXPECT_EQ(find_threshold_discrete(s, 0, [](const Genome& g) { return 0.5 + 0.4 * g[0] / 64; }, 0.8), 49);
    EXPECT_EQ(find_threshold_discrete(s, 0, [](const Genome&) { return 0.9; }, 0.8), 1);
    Warnings w;
    EXPECT_EQ(find_threshold_discrete(s, 0, [](const Genome&) { return 0.5; }, 0.8, w.sink()), 64);
    EXPECT_EQ(w.seen.size(), 1u);
}

TEST(Threshold, DiscreteMatchesScanForEveryCut) {
    const auto s = code_schema();
    for (int cut = 1; cut <= 64; ++cut) {
        auto acc = [cut](const Genome& g) { return g[0] >= cut ? 0.9 : 0.1; };
        EXPECT_EQ(find_threshold_discrete(s, 0, acc, 0.8), cut);
    }
}

TEST(Threshold, VectorCoversEveryGene) {
    GenomeSchema s{Task::D_Ps, {{0, GeneKind::prune_ratio, 1}, {0, GeneKind::svd_rank_code, 8}}};
    const auto t = find_thresholds(s, [](const Genome& g) { return 0.9 - 0.5 * g[0] - 0.2 * (1 - g[1] / 64); }, 0.8);
    ASSERT_EQ(t.values.size(), 2u);
    EXPECT_NEAR(t.values[0], 0.2, 1.0 / 64);
    EXPECT_EQ(t.values[1], 33);
}

// ---- warm init ---------------------------------------------------------------

TEST(WarmInit, ZeroThresholdsGiveIdentity) {
    const auto s = continuous_schema(3);
    EngineConfig c;
    c.population_size = 10;
    c.acc_thr = 0.8;
    gen::Rng rng(1);
    const auto res = warm_init(s, ThresholdVector{{0, 0, 0}}, [](const std::vector<Genome>& gs) {
        return std::vector<double>(gs.size(), 0.9);
    }, c, rng);
    EXPECT_EQ(res.genomes.size(), 10u);
    EXPECT_EQ(res.draws, 10u);
    for (const auto& g : res.genomes) EXPECT_EQ(g, identity_genome(s));
}

TEST(WarmInit, InfeasibleThresholdExhaustsAttempts) {
    const auto s = continuous_schema(2);
    EngineConfig c;
    c.population_size = 4;
    c.acc_thr = 0.95;
    c.init_max_attempts = 3;
    gen::Rng rng(2);
    std::size_t evaluated = 0;
    try {
        warm_init(s, ThresholdVector{{0.5, 0.5}}, [&](const std::vector<Genome>& gs) {
            evaluated += gs.size();
            return std::vector<double>(gs.size(), 0.9);
        }, c, rng);
        FAIL() << "expected an error";
    } catch (const InfeasibleError& e) {
        EXPECT_NE(std::string(e.what()).find("acc_thr"), std::string::npos);
    }
    EXPECT_EQ(evaluated, 12u);
}

TEST(WarmInit, DrawsRespectThresholds) {
    GenomeSchema s{Task::D_Ps, {{0, GeneKind::prune_ratio, 1}, {0, GeneKind::svd_rank_code, 8},
                                {1, GeneKind::tucker_rank_m_code, 8}}};
    const ThresholdVector th{{0.3, 40, 5}};
    gen::Rng rng(3);
    std::set<int> codes;
    for (int t = 0; t < 20000; ++t) {
        const auto g = sample_warm(s, th, rng);
        ASSERT_GE(g[0], 0.0);
        ASSERT_LE(g[0], 0.3);
        ASSERT_GE(g[1], 40);
        ASSERT_LE(g[1], 64);
        ASSERT_GE(g[2], 5);
        ASSERT_LE(g[2], 8);
        codes.insert(static_cast<int>(g[1]));
    }
    EXPECT_EQ(codes.size(), 25u);
}

TEST(WarmInit, AcceptanceRateMatchesMonteCarlo) {
    // accept iff 0.5 (g0^2 + g1^2) < 0.1
    const auto s = continuous_schema(2);
    const SyntheticLandscape land{0.9, {0.5, 0.5}, {}};
    const ThresholdVector th{{0.8, 0.5}};

    std::mt19937_64 mc(99);
    std::size_t hits = 0;
    const std::size_t trials = 100000;
    for (std::size_t t = 0; t < trials; ++t) {
        double g[2];
        for (int i = 0; i < 2; ++i) {
            const double m = th.values[static_cast<std::size_t>(i)] / 2;
            g[i] = std::clamp(std::normal_distribution<double>(m, m)(mc), 0.0, 2 * m);
        }
        hits += 0.9 - 0.5 * (g[0] * g[0] + g[1] * g[1]) > 0.8;
    }
    const double p = static_cast<double>(hits) / trials;

    EngineConfig c;
    c.population_size = 2000;
    c.acc_thr = 0.8;
    gen::Rng rng(4);
    const auto res = warm_init(s, th, [&](const std::vector<Genome>& gs) {
        std::vector<double> a;
        for (const auto& g : gs) a.push_back(synthetic_accuracy(g, land));
        return a;
    }, c, rng);
    for (double a : res.accuracies) EXPECT_GT(a, 0.8);
    const double rate = static_cast<double>(res.genomes.size()) / static_cast<double>(res.draws);
    const double sigma = std::sqrt(p * (1 - p) / static_cast<double>(res.draws) + p * (1 - p) / trials);
    EXPECT_NEAR(rate, p, 3 * sigma) << "p=" << p << " draws=" << res.draws;
}

// ---- selection ---------------------------------------------------------------

TEST(Selection, Probabilities) {
    const auto p = selection_probabilities({1, 2, 3});
    EXPECT_EQ(p[0], 0.0);
    EXPECT_NEAR(p[1], 1.0 / 3, 1e-15);
    EXPECT_NEAR(p[2], 2.0 / 3, 1e-15);
    for (double q : selection_probabilities({5, 5, 5, 5})) EXPECT_EQ(q, 0.25);
}

TEST(Selection, EmpiricalFrequencies) {
    gen::Rng rng(6);
    const std::vector<double> scores{1, 2, 3};
    std::vector<std::size_t> counts(3, 0);
    std::size_t draws = 0;
    while (draws < 100000) {
        for (auto i : select_indices(scores, rng)) ++counts[i];
        draws += 3;
    }
    EXPECT_EQ(counts[0], 0u);
    double l1 = 0;
    const double want[3] = {0, 1.0 / 3, 2.0 / 3};
    for (int i = 0; i < 3; ++i) l1 += std::fabs(static_cast<double>(counts[static_cast<std::size_t>(i)]) / draws - want[i]);
    EXPECT_LT(l1, 0.01);
}

TEST(Selection, WeakestNeverChosenForRandomScores) {
    gen::Rng rng(7);
    std::uniform_real_distribution<double> u(-1e6, 1e6);
    for (int t = 0; t < 500; ++t) {
        std::vector<double> s(gen::uniform(rng, 2, 30));
        for (auto& v : s) v = u(rng);
        const auto weakest = std::min_element(s.begin(), s.end()) - s.begin();
        for (auto i : select_indices(s, rng)) ASSERT_NE(static_cast<std::ptrdiff_t>(i), weakest);
    }
}

TEST(Selection, KeepsPopulationSize) {
    gen::Rng rng(8);
    std::vector<Genome> pop(6, Genome{{0.1}});
    EXPECT_EQ(select(pop, {1, 2, 3, 4, 5, 6}, rng).size(), 6u);
    EXPECT_THROW(select(pop, {1, 2}, rng), ValidationError);
}

// ---- crossover / mutation ----------------------------------------------------

TEST(Crossover, ZeroProbabilityIsIdentity) {
    gen::Rng rng(9);
    const auto s = continuous_schema(5);
    std::vector<Genome> pop;
    for (int i = 0; i < 10; ++i) pop.push_back(gen::random_genome(s, rng));
    auto copy = pop;
    crossover(copy, 0.0, 1.0, rng);
    EXPECT_EQ(copy, pop);
}

TEST(Crossover, FullSwapExchangesPairs) {
    gen::Rng rng(10);
    const auto s = continuous_schema(5);
    std::vector<Genome> pop;
    for (int i = 0; i < 10; ++i) pop.push_back(gen::random_genome(s, rng));
    auto copy = pop;
    crossover(copy, 1.0, 1.0, rng);
    for (std::size_t k = 0; k < pop.size(); k += 2) {
        EXPECT_EQ(copy[k], pop[k + 1]);
        EXPECT_EQ(copy[k + 1], pop[k]);
    }
}

TEST(Crossover, PreservesPerPairPositionMultisets) {
    gen::Rng rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 300; ++t) {
        const auto model = gen::random_model(rng);
        const auto s = build_schema(model, gen::random_task(rng));
        const std::size_t n = 2 * gen::uniform(rng, 1, 8);
        std::vector<Genome> pop;
        for (std::size_t i = 0; i < n; ++i) pop.push_back(gen::random_genome(s, rng));
        auto copy = pop;
        crossover(copy, u(rng), u(rng), rng);
        ASSERT_EQ(copy.size(), n);
        for (std::size_t k = 0; k < n; k += 2)
            for (std::size_t i = 0; i < s.size(); ++i) {
                ASSERT_EQ(std::minmax(copy[k][i], copy[k + 1][i]), std::minmax(pop[k][i], pop[k + 1][i]));
            }
    }
    std::vector<Genome> odd(3, Genome{{0.0}});
    EXPECT_THROW(crossover(odd, 1.0, 1.0, rng), ValidationError);
}

TEST(Mutate, ZeroProbabilityIsIdentity) {
    gen::Rng rng(12);
    const auto s = continuous_schema(4);
    std::vector<Genome> pop;
    for (int i = 0; i < 10; ++i) pop.push_back(gen::random_genome(s, rng));
    auto copy = pop;
    mutate(copy, s, 0.0, 1.0, 0.2, rng);
    EXPECT_EQ(copy, pop);
}

TEST(Mutate, ClampsToDomain) {
    gen::Rng rng(13);
    GenomeSchema s{Task::D_Ps, {{0, GeneKind::prune_ratio, 1}, {0, GeneKind::svd_rank_code, 8},
                                {1, GeneKind::tucker_rank_n_code, 8}}};
    std::vector<Genome> pop(200, Genome{{0.99, 1, 8}});
    mutate(pop, s, 1.0, 1.0, 5.0, rng);
    std::set<double> codes1, codes2;
    for (const auto& g : pop) {
        EXPECT_GE(g[0], 0.0);
        EXPECT_LE(g[0], 1.0);
        codes1.insert(g[1]);
        codes2.insert(g[2]);
    }
    EXPECT_EQ(codes1, (std::set<double>{1, 2}));
    EXPECT_EQ(codes2, (std::set<double>{7, 8}));
}

TEST(Mutate, NoiseHasConfiguredSpread) {
    gen::Rng rng(14);
    const auto s = continuous_schema(1);
    std::vector<Genome> pop(40000, Genome{{0.5}});
    mutate(pop, s, 1.0, 1.0, 0.05, rng);
    double sum = 0, sq = 0;
    for (const auto& g : pop) {
        sum += g[0] - 0.5;
        sq += (g[0] - 0.5) * (g[0] - 0.5);
    }
    const double n = static_cast<double>(pop.size());
    EXPECT_NEAR(sum / n, 0.0, 0.002);
    EXPECT_NEAR(std::sqrt(sq / n), 0.05, 0.002);
}

TEST(Operators, RandomSequencesStayInDomain) {
    gen::Rng rng(15);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 100; ++t) {
        const auto model = gen::random_model(rng);
        const auto s = build_schema(model, gen::random_task(rng));
        std::vector<Genome> pop;
        for (int i = 0; i < 10; ++i) pop.push_back(gen::random_genome(s, rng));
        for (int step = 0; step < 20; ++step) {
            std::vector<double> scores;
            for (std::size_t i = 0; i < pop.size(); ++i) scores.push_back(u(rng));
            pop = select(pop, scores, rng);
            crossover(pop, u(rng), u(rng), rng);
            mutate(pop, s, u(rng), u(rng), 0.5 * u(rng), rng);
            ASSERT_EQ(pop.size(), 10u);
            for (const auto& g : pop) ASSERT_NO_THROW(validate_genome(g, s));
        }
    }
}

// ---- scorer ------------------------------------------------------------------

TEST(Scorer, CachesByGenome) {
    const auto model = four_layer_model();
    const auto s = build_schema(model, Task::Pn);
    Counting ev(SyntheticLandscape{0.9, {0.1, 0.2, 0.3, 0.4}, {}});
    Scorer scorer(model, s, ev, 3);
    const Genome a{{0.1, 0, 0, 0}}, b{{0.2, 0, 0, 0}};
    const auto acc = scorer.accuracies({a, b, a, a, b});
    EXPECT_EQ(ev.calls.load(), 2u);
    EXPECT_EQ(acc[0], acc[2]);
    EXPECT_EQ(scorer.evaluations(), 2u);
    scorer.accuracy(a);
    EXPECT_EQ(ev.calls.load(), 2u);
}

TEST(Scorer, ReportsUseCompressedFlops) {
    const auto model = four_layer_model();
    const auto s = build_schema(model, Task::Pn);
    ConstantEvaluator ev(0.9);
    Scorer scorer(model, s, ev);
    const auto r = scorer.reports({Genome{{0.5, 0, 0, 0}}}, 0.9, 0.8, 1e-3).front();
    EXPECT_EQ(r.delta_flops, 32u);
    EXPECT_EQ(r.score, 32.0 / 1e-3);
    EXPECT_EQ(scorer.flops_ratio(Genome{{0.5, 0, 0, 0}}), 224.0 / 256.0);
}

// ---- evolve ------------------------------------------------------------------

TEST(Evolve, ZeroIterationsReturnsBestOfInit) {
    const auto model = four_layer_model();
    const auto s = build_schema(model, Task::Pn);
    SyntheticEvaluator ev(SyntheticLandscape{0.9, {0.1, 0.2, 0.3, 0.4}, {}});
    auto c = small_config(1);
    c.iterations = 0;
    const auto res = evolve(model, s, ev, c, kQuiet);
    ASSERT_EQ(res.history.records.size(), c.population_size);
    double best = -1;
    for (const auto& r : res.history.records) {
        EXPECT_GT(r.report.accuracy, c.acc_thr);
        best = std::max(best, r.report.score);
    }
    EXPECT_EQ(res.best_report.score, best);
}

TEST(Evolve, EvaluatesPopulationIterationsPlusOneTimes) {
    const auto model = four_layer_model();
    const auto s = build_schema(model, Task::Pn);
    SyntheticEvaluator ev(SyntheticLandscape{0.9, {0.1, 0.2, 0.3, 0.4}, {}});
    const auto c = small_config(2);
    std::size_t seen = 0;
    EvolveHooks hooks{[&](const HistoryRecord&) { ++seen; }, [](std::string_view) {}};
    const auto res = evolve(model, s, ev, c, hooks);
    EXPECT_EQ(seen, c.population_size * (c.iterations + 1));
    EXPECT_EQ(res.history.best_genome.size(), c.iterations + 1);
    EXPECT_EQ(res.history.records.back().iteration, c.iterations);
}

TEST(Evolve, ElitismKeepsBestSoFarMonotone) {
    const auto model = four_layer_model();
    const auto s = build_schema(model, Task::Pn);
    SyntheticEvaluator ev(SyntheticLandscape{0.9, {0.1, 0.2, 0.3, 0.4}, {}});
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto res = evolve(model, s, ev, small_config(seed), kQuiet);
        for (std::size_t t = 1; t < res.history.best_report.size(); ++t) {
            EXPECT_GE(res.history.best_report[t].score, res.history.best_report[t - 1].score);
        }
        // the elite survives into the next evaluated population
        for (std::size_t t = 1; t < res.history.best_genome.size(); ++t) {
            bool present = false;
            for (const auto& r : res.history.records)
                present = present || (r.iteration == t && r.genome == res.history.best_genome[t - 1]);
            EXPECT_TRUE(present) << "seed " << seed << " iteration " << t;
        }
    }
}

TEST(Evolve, BestIsMaximumOverHistoryWithoutElitism) {
    const auto model = four_layer_model();
    const auto s = build_schema(model, Task::Pn);
    SyntheticEvaluator ev(SyntheticLandscape{0.9, {0.1, 0.2, 0.3, 0.4}, {}});
    auto c = small_config(3);
    c.elitism = false;
    const auto res = evolve(model, s, ev, c, kQuiet);
    double best = -1;
    for (const auto& r : res.history.records) best = std::max(best, r.report.score);
    EXPECT_EQ(res.best_report.score, best);
}

TEST(Evolve, DeterministicAndWorkerInvariant) {
    const auto model = four_layer_model();
    const auto s = build_schema(model, Task::D);
    SyntheticEvaluator ev(landscape_for(s, 0.9, {0.3, 0.3, 0.3, 0.3}));
    auto c = small_config(4);
    const auto a = evolve(model, s, ev, c, kQuiet);
    const auto b = evolve(model, s, ev, c, kQuiet);
    c.workers = 4;
    const auto d = evolve(model, s, ev, c, kQuiet);
    ASSERT_EQ(a.history.records.size(), b.history.records.size());
    for (std::size_t i = 0; i < a.history.records.size(); ++i) {
        EXPECT_EQ(to_json(a.history.records[i], s), to_json(b.history.records[i], s));
        EXPECT_EQ(to_json(a.history.records[i], s), to_json(d.history.records[i], s));
    }
}

TEST(Evolve, UniformInitSkipsThresholds) {
    const auto model = four_layer_model();
    const auto s = build_schema(model, Task::Pn);
    SyntheticEvaluator ev(SyntheticLandscape{0.9, {0.1, 0.2, 0.3, 0.4}, {}});
    auto c = small_config(5);
    c.init = InitPolicy::uniform;
    const auto res = evolve(model, s, ev, c, kQuiet);
    EXPECT_TRUE(res.thresholds.values.empty());
    EXPECT_EQ(res.init_draws, c.population_size);
}

TEST(Evolve, RunsOnBundledMlp) {
    auto [model, tensors] = load_model(asset("spiral_mlp.gcm"));
    const auto s = build_schema(model, Task::Ps);
    BuiltinEvaluator ev(model, tensors, load_csv_dataset(asset("spiral.csv"), 0.2));
    auto c = small_config(6);
    c.acc_thr = 0.9;
    const auto res = evolve(model, s, ev, c, kQuiet);
    EXPECT_EQ(res.base_accuracy, model.manifest["reference_accuracy"].get<double>());
    EXPECT_GT(res.best_report.accuracy, 0.9);
    EXPECT_GT(res.best_report.delta_flops, 0u);
}
