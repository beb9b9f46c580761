#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "gencomp/compress.hpp"
#include "gencomp/linalg.hpp"
#include "generators.hpp"
#include "oracle.hpp"

using namespace gencomp;

namespace {

Matrix random_matrix(gen::Rng& rng, std::size_t r, std::size_t c) {
    std::normal_distribution<double> nd;
    Matrix m(r, c);
    for (auto& v : m.data) v = nd(rng);
    return m;
}

oracle::Mat to_eigen(const Matrix& m) {
    oracle::Mat e(static_cast<Eigen::Index>(m.rows), static_cast<Eigen::Index>(m.cols));
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) e(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m(i, j);
    return e;
}

double diff_norm_sq(const Matrix& a, const Matrix& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) s += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
    return s;
}

double diff_norm_sq(const Tensor4& a, const Tensor4& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) s += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
    return s;
}

double norm_sq(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s;
}

Tensor4 random_tensor(gen::Rng& rng, std::size_t m, std::size_t n, std::size_t k) {
    std::normal_distribution<double> nd;
    Tensor4 t(m, n, k, k);
    for (auto& v : t.data) v = nd(rng);
    return t;
}

LayerSpec fc(std::size_t id, std::size_t m, std::size_t n, bool relu = true) {
    LayerSpec l;
    l.id = id;
    l.out_channels = m;
    l.in_channels = n;
    l.has_relu = relu;
    return l;
}

}  // namespace

// ---- SVD ---------------------------------------------------------------------

TEST(Svd, SingularValuesMatchEigen) {
    gen::Rng rng(1);
    for (int t = 0; t < 100; ++t) {
        const auto a = random_matrix(rng, gen::uniform(rng, 1, 20), gen::uniform(rng, 1, 20));
        const auto s = svd(a);
        const auto ref = oracle::singular_values(to_eigen(a));
        ASSERT_EQ(s.s.size(), static_cast<std::size_t>(ref.size()));
        for (std::size_t k = 0; k < s.s.size(); ++k) EXPECT_NEAR(s.s[k], ref(static_cast<Eigen::Index>(k)), 1e-9 * (1 + ref(0)));
        for (std::size_t k = 1; k < s.s.size(); ++k) EXPECT_GE(s.s[k - 1], s.s[k]);
    }
}

TEST(Svd, FactorsAreOrthonormalAndReconstruct) {
    gen::Rng rng(2);
    for (int t = 0; t < 50; ++t) {
        const auto a = random_matrix(rng, gen::uniform(rng, 1, 16), gen::uniform(rng, 1, 16));
        const auto s = svd(a);
        const Matrix utu = multiply(s.u.transposed(), s.u);
        const Matrix vtv = multiply(s.v.transposed(), s.v);
        for (std::size_t i = 0; i < utu.rows; ++i)
            for (std::size_t j = 0; j < utu.cols; ++j) EXPECT_NEAR(utu(i, j), i == j ? 1.0 : 0.0, 1e-10);
        for (std::size_t i = 0; i < vtv.rows; ++i)
            for (std::size_t j = 0; j < vtv.cols; ++j) EXPECT_NEAR(vtv(i, j), i == j ? 1.0 : 0.0, 1e-10);
        const auto f = svd_truncate(a, std::min(a.rows, a.cols));
        EXPECT_LE(diff_norm_sq(f.reconstruct(), a), 1e-20 * std::max(1.0, frobenius_sq(a)) + 1e-24);
    }
}

TEST(Svd, RankDeficientInputGetsOrthonormalCompletion) {
    Matrix a(4, 3);  // rank 1
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 3; ++j) a(i, j) = (i + 1.0) * (j + 2.0);
    const auto s = svd(a);
    const Matrix utu = multiply(s.u.transposed(), s.u);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(utu(i, j), i == j ? 1.0 : 0.0, 1e-10);
    EXPECT_NEAR(s.s[1], 0.0, 1e-10);
    const Matrix zero(3, 5);
    const auto z = svd(zero);
    EXPECT_EQ(z.s, std::vector<double>(3, 0.0));
}

TEST(Svd, DiagonalTruncationError) {
    Matrix d(3, 3);
    d(0, 0) = 3;
    d(1, 1) = 2;
    d(2, 2) = 1;
    const auto f = svd_truncate(d, 2);
    EXPECT_NEAR(std::sqrt(diff_norm_sq(f.reconstruct(), d)), 1.0, 1e-12);
    const auto ref = oracle::truncate(to_eigen(d), 2);
    EXPECT_NEAR((ref - to_eigen(d)).norm(), 1.0, 1e-12);
}

TEST(Svd, RankOneIsExact) {
    Matrix a(5, 4);
    const double u[] = {1, -2, 0.5, 3, 1}, v[] = {2, 1, -1, 0.25};
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 4; ++j) a(i, j) = u[i] * v[j];
    EXPECT_LE(diff_norm_sq(svd_truncate(a, 1).reconstruct(), a), 1e-24 * frobenius_sq(a));
}

TEST(Svd, EckartYoungOnRandomMatrices) {
    gen::Rng rng(3);
    for (int t = 0; t < 100; ++t) {
        const auto a = random_matrix(rng, gen::uniform(rng, 1, 32), gen::uniform(rng, 1, 32));
        const std::size_t p = std::min(a.rows, a.cols);
        const std::size_t r = gen::uniform(rng, 1, p);
        const auto sv = oracle::singular_values(to_eigen(a));
        double discarded = 0.0;
        for (std::size_t k = r; k < p; ++k) discarded += sv(static_cast<Eigen::Index>(k)) * sv(static_cast<Eigen::Index>(k));
        const double err = diff_norm_sq(svd_truncate(a, r).reconstruct(), a);
        EXPECT_NEAR(err, discarded, 1e-8 * std::max(discarded, 1e-12 * frobenius_sq(a)) + 1e-20);
    }
}

TEST(Svd, RankOutOfRange) {
    EXPECT_THROW(svd_truncate(Matrix(3, 2), 0), ValidationError);
    EXPECT_THROW(svd_truncate(Matrix(3, 2), 3), ValidationError);
}

// ---- Tucker-2 --------------------------------------------------------------------

TEST(Tucker2, FullRankIsExact) {
    gen::Rng rng(4);
    for (int t = 0; t < 30; ++t) {
        const auto w = random_tensor(rng, gen::uniform(rng, 1, 8), gen::uniform(rng, 1, 8), 3);
        const auto f = tucker2(w, w.m, w.n);
        EXPECT_LE(std::sqrt(diff_norm_sq(f.reconstruct(), w)), 1e-5 * std::sqrt(norm_sq(w.data)));
    }
}

TEST(Tucker2, ShapesFollowRanks) {
    gen::Rng rng(5);
    const auto w = random_tensor(rng, 6, 5, 3);
    const auto f = tucker2(w, 4, 2);
    EXPECT_EQ(f.core.m, 4u);
    EXPECT_EQ(f.core.n, 2u);
    EXPECT_EQ(f.core.kh, 3u);
    EXPECT_EQ(f.factor_m.rows, 6u);
    EXPECT_EQ(f.factor_m.cols, 4u);
    EXPECT_EQ(f.factor_n.rows, 5u);
    EXPECT_EQ(f.factor_n.cols, 2u);
    EXPECT_THROW(tucker2(w, 7, 1), ValidationError);
    EXPECT_THROW(tucker2(w, 1, 0), ValidationError);
}

TEST(Tucker2, TrueModeRankIsRecovered) {
    // W[o] = A[o][0] * B0 + A[o][1] * B1 has mode-m rank 2
    gen::Rng rng(6);
    std::normal_distribution<double> nd;
    for (int t = 0; t < 20; ++t) {
        const std::size_t m = gen::uniform(rng, 2, 8), n = gen::uniform(rng, 1, 8);
        const auto b0 = random_tensor(rng, 1, n, 3), b1 = random_tensor(rng, 1, n, 3);
        Tensor4 w(m, n, 3, 3);
        for (std::size_t o = 0; o < m; ++o) {
            const double a0 = nd(rng), a1 = nd(rng);
            for (std::size_t j = 0; j < n * 9; ++j) w.data[o * n * 9 + j] = a0 * b0.data[j] + a1 * b1.data[j];
        }
        const auto f = tucker2(w, 2, n);
        EXPECT_LE(std::sqrt(diff_norm_sq(f.reconstruct(), w)), 1e-9 * std::sqrt(norm_sq(w.data)));
    }
}

TEST(Tucker2, MatchesProjectionOracleAndIsMonotone) {
    gen::Rng rng(7);
    for (int t = 0; t < 20; ++t) {
        const auto w = random_tensor(rng, 4, 4, 3);
        for (std::size_t rn = 1; rn <= 4; ++rn) {
            double prev = INFINITY;
            for (std::size_t rm = 1; rm <= 4; ++rm) {
                const auto rec = tucker2(w, rm, rn).reconstruct();
                const auto ref = oracle::tucker_reconstruct(w.data, 4, 4, 9, rm, rn);
                for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(rec.data[i], ref[i], 1e-9);
                const double err = diff_norm_sq(rec, w);
                EXPECT_LE(err, prev * (1 + 1e-12));
                prev = err;
            }
        }
    }
}

TEST(Tucker2, OneFullModeReducesToTruncatedSvdOfOtherUnfolding) {
    gen::Rng rng(8);
    for (int t = 0; t < 20; ++t) {
        const auto w = random_tensor(rng, gen::uniform(rng, 2, 8), gen::uniform(rng, 2, 8), 3);
        const std::size_t rm = gen::uniform(rng, 1, w.m);
        oracle::Mat um(static_cast<Eigen::Index>(w.m), static_cast<Eigen::Index>(w.n * 9));
        for (std::size_t i = 0; i < w.data.size(); ++i) um(static_cast<Eigen::Index>(i / (w.n * 9)), static_cast<Eigen::Index>(i % (w.n * 9))) = w.data[i];
        const auto sv = oracle::singular_values(um);
        double discarded = 0.0;
        for (Eigen::Index k = static_cast<Eigen::Index>(rm); k < sv.size(); ++k) discarded += sv(k) * sv(k);
        EXPECT_NEAR(diff_norm_sq(tucker2(w, rm, w.n).reconstruct(), w), discarded, 1e-8 * std::max(1.0, discarded));
    }
}

// ---- pruning -------------------------------------------------------------------------

TEST(PruneUnstructured, Example) {
    const std::vector<float> w = {1, -2, 3, -4};
    EXPECT_EQ(prune_unstructured(w, 0.5), (std::vector<float>{0, 0, 3, -4}));
    EXPECT_EQ(prune_unstructured(w, 0.0), w);
    EXPECT_EQ(prune_unstructured(w, 1.0), (std::vector<float>{0, 0, 0, 0}));
    EXPECT_THROW(prune_unstructured(w, 1.5), ValidationError);
}

TEST(PruneUnstructured, TiesGoToLowerIndex) {
    const std::vector<float> w = {2, -1, 1, 3, -1};
    EXPECT_EQ(prune_unstructured(w, 0.4), (std::vector<float>{2, 0, 0, 3, -1}));
}

TEST(PruneUnstructured, MatchesSortOracleAndPreservesSurvivorsBitwise) {
    gen::Rng rng(9);
    std::normal_distribution<float> nd;
    for (int t = 0; t < 300; ++t) {
        std::vector<float> w(gen::uniform(rng, 1, 60));
        for (auto& v : w) v = std::round(nd(rng) * 4) / 4;  // many ties
        const std::size_t k = gen::uniform(rng, 0, 64);
        const double p = k / 64.0;
        const auto out = prune_unstructured(w, p);
        const std::size_t drop = k * w.size() / 64;
        const auto ref = oracle::magnitude_prune(w, drop);
        ASSERT_EQ(out.size(), ref.size());
        EXPECT_EQ(std::memcmp(out.data(), ref.data(), 4 * out.size()), 0);
        std::size_t zeroed = 0;
        for (std::size_t i = 0; i < w.size(); ++i) zeroed += std::memcmp(&out[i], &w[i], 4) != 0;
        EXPECT_LE(zeroed, drop);
    }
}

TEST(ChannelMask, Examples) {
    const std::vector<double> s = {10, 1, 5, 7};
    EXPECT_EQ(mask_from_saliency(0, s, 0.5).keep, (std::vector<bool>{true, false, false, true}));
    EXPECT_EQ(mask_from_saliency(0, s, 0.0).keep, std::vector<bool>(4, true));
    EXPECT_EQ(mask_from_saliency(0, std::vector<double>{1, 2, 3}, 0.5).kept(), 2u);
    EXPECT_EQ(mask_from_saliency(0, s, 1.0).kept(), 0u);
}

TEST(ChannelMask, KeptCountIsCeiling) {
    for (std::size_t m = 1; m <= 40; ++m) {
        for (std::size_t k = 0; k <= 64; ++k) {
            const std::vector<double> s(m, 1.0);
            const auto mask = mask_from_saliency(0, s, k / 64.0);
            EXPECT_EQ(mask.kept(), m - k * m / 64) << m << " " << k;
            if (k < 64) {
                EXPECT_GT(mask.kept(), 0u);
            }
        }
    }
}

TEST(ChannelMask, StructuredPruneUsesFilterL1AndRespectsMaskSites) {
    gen::Rng rng(10);
    ModelSpec m;
    m.layers = {fc(0, 6, 3), fc(1, 4, 6), fc(2, 2, 4, false)};
    const auto t = gen::random_tensors(m, rng);
    const auto mask = prune_structured(m, t, 0, 0.5);
    EXPECT_EQ(mask.keep, oracle::top_filters(t.layers[0].weight, 6, 3));
    EXPECT_THROW(prune_structured(m, t, 2, 0.5), ValidationError);
    m.layers[1].has_relu = false;
    EXPECT_THROW(prune_structured(m, t, 1, 0.5), ValidationError);
}

// ---- FLOPs ----------------------------------------------------------------------------

TEST(CompressedFlops, IdentityPlan) {
    gen::Rng rng(11);
    for (int t = 0; t < 50; ++t) {
        const auto m = gen::random_model(rng);
        EXPECT_EQ(compressed_flops(m, identity_plan(m)), model_flops(m));
    }
}

TEST(CompressedFlops, SvdBreakEven) {
    ModelSpec m;
    m.layers = {fc(0, 64, 64, false)};
    EXPECT_EQ(compressed_flops(m, CompressionPlan{{Svd{32}}}), 4096u);
    EXPECT_EQ(compressed_flops(m, CompressionPlan{{Svd{31}}}), 31u * 128);
    EXPECT_EQ(compressed_flops(m, CompressionPlan{{Svd{33}}}), 4096u);
}

TEST(CompressedFlops, StructuredPruningHalvesNextConv) {
    ModelSpec m;
    LayerSpec a;
    a.kind = LayerKind::conv;
    a.out_channels = 8;
    a.in_channels = 2;
    a.kernel = 3;
    a.h_in = a.w_in = 6;
    a.padding = 1;
    a.has_relu = true;
    LayerSpec b = a;
    b.id = 1;
    b.in_channels = 8;
    b.out_channels = 4;
    m.layers = {a, b};
    CompressionPlan plan{{Prune{0.5, true}, LayerAction{}}};
    const auto per = compressed_layer_flops(m, plan);
    std::vector<bool> keep(8, false);
    for (int i = 0; i < 4; ++i) keep[static_cast<std::size_t>(i)] = true;
    EXPECT_EQ(per[1], layer_flops(b) / 2);
    EXPECT_EQ(per[1], oracle::direct_macs(4, 8, 3, 6, 6, 1, 1, nullptr, nullptr, &keep));
}

TEST(CompressedFlops, MatchesCountingOracleOnRandomPlans) {
    gen::Rng rng(12);
    for (int t = 0; t < 400; ++t) {
        const auto m = gen::random_model(rng);
        const auto tensors = gen::random_tensors(m, rng);
        const Task task = gen::random_task(rng);
        const auto pc = gen::random_plan(m, tensors, task, rng);
        const auto per = compressed_layer_flops(m, pc.plan);
        for (std::size_t i = 0; i < m.size(); ++i) {
            EXPECT_EQ(per[i], oracle::layer_macs(m.layers[i], pc.cases[i])) << "task " << to_string(task) << " layer " << i;
        }
        EXPECT_LE(compressed_flops(m, pc.plan), model_flops(m));
    }
}

TEST(CompressedFlops, MonotoneInRatioAndRank) {
    gen::Rng rng(13);
    for (int t = 0; t < 100; ++t) {
        const auto m = gen::random_model(rng);
        for (Task task : {Task::Pn, Task::Ps}) {
            const auto s = build_schema(m, task);
            Genome g = gen::random_genome(s, rng);
            const std::size_t i = gen::uniform(rng, 0, s.size() - 1);
            g[i] = 0.3;
            const Macs lo = compressed_flops(m, decode(g, s, m));
            g[i] = 0.7;
            EXPECT_GE(lo, compressed_flops(m, decode(g, s, m)));
        }
        if (m.count_l1() + m.count_l2() == 0) continue;
        for (Task task : {Task::D, Task::D_Ps}) {
            const auto s = build_schema(m, task);
            Genome g = gen::random_genome(s, rng);
            for (std::size_t i = 0; i < s.size(); ++i) {
                if (!s[i].discrete() || g[i] >= s[i].code_max()) continue;
                const Macs before = compressed_flops(m, decode(g, s, m));
                Genome h = g;
                h[i] += 1;
                EXPECT_LE(before, compressed_flops(m, decode(h, s, m)));
            }
        }
    }
}

TEST(CompressedFlops, RejectsMixedPruning) {
    ModelSpec m;
    m.layers = {fc(0, 4, 4), fc(1, 4, 4), fc(2, 2, 4, false)};
    CompressionPlan plan{{Prune{0.5, true}, Prune{0.5, false}, LayerAction{}}};
    EXPECT_THROW(compressed_flops(m, plan), ValidationError);
    plan.layers[1] = Tucker{1, 1};
    EXPECT_THROW(compressed_flops(m, plan), ValidationError);
}

// ---- applying plans -----------------------------------------------------------------------

TEST(ApplyPlan, IdentityIsBitExact) {
    gen::Rng rng(14);
    const auto m = gen::random_model(rng);
    const auto t = gen::random_tensors(m, rng);
    const auto c = apply_plan(m, t, identity_plan(m));
    EXPECT_EQ(c.tensors, t);
    for (const auto& mask : c.masks) EXPECT_TRUE(mask.keep.empty());
}

TEST(ApplyPlan, FullPruneZeroesWeights) {
    gen::Rng rng(15);
    ModelSpec m;
    m.layers = {fc(0, 4, 3), fc(1, 4, 4), fc(2, 2, 4, false)};
    const auto t = gen::random_tensors(m, rng);
    CompressionPlan plan = identity_plan(m);
    plan.layers[1] = Prune{1.0, false};
    const auto c = apply_plan(m, t, plan);
    EXPECT_EQ(c.tensors.layers[1].weight, std::vector<float>(16, 0.0f));
    EXPECT_EQ(c.tensors.layers[1].bias, t.layers[1].bias);
}

TEST(ApplyPlan, DecomposedWeightsMatchEigenTruncation) {
    gen::Rng rng(16);
    ModelSpec m;
    m.layers = {fc(0, 7, 5), fc(1, 3, 7, false)};
    const auto t = gen::random_tensors(m, rng);
    const auto c = apply_plan(m, t, CompressionPlan{{Svd{2}, LayerAction{}}});
    oracle::Mat w(7, 5);
    for (std::size_t i = 0; i < 35; ++i) w(static_cast<Eigen::Index>(i / 5), static_cast<Eigen::Index>(i % 5)) = t.layers[0].weight[i];
    const auto ref = oracle::truncate(w, 2);
    for (std::size_t i = 0; i < 35; ++i) {
        EXPECT_NEAR(c.tensors.layers[0].weight[i], ref(static_cast<Eigen::Index>(i / 5), static_cast<Eigen::Index>(i % 5)), 1e-6);
    }
}
