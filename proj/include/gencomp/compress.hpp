#pragma once

// Applying compression plans to weights, and MAC accounting for the
// compressed network.
//
// Structured pruning masks output channels after the ReLU of a layer; the
// mask shrinks the next layer's effective input channels. Layers without a
// ReLU and the final (logits) layer are never masked, so structured pruning
// genes on them have no effect. Channel saliency is the filter L1 norm.
//
// A decomposed layer runs factored when that is cheaper than the dense
// reconstruction, otherwise dense; its MAC count is the smaller of the two.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "gencomp/error.hpp"
#include "gencomp/genome.hpp"
#include "gencomp/linalg.hpp"
#include "gencomp/model.hpp"

namespace gencomp {

/// floor(p * n) with a small guard so values like 0.7 * 10 land on 7.
inline std::size_t floor_count(double p, std::size_t n) {
    const double x = p * static_cast<double>(n);
    return static_cast<std::size_t>(std::clamp(std::floor(x + 1e-9), 0.0, static_cast<double>(n)));
}

/// ceil(q * n) with the same guard.
inline std::size_t ceil_count(double q, std::size_t n) {
    const double x = q * static_cast<double>(n);
    return static_cast<std::size_t>(std::clamp(std::ceil(x - 1e-9), 0.0, static_cast<double>(n)));
}

/// Zeroes the floor(p * numel) entries of smallest magnitude; ties go to the
/// lower flat index. Remaining entries are copied bit for bit.
inline std::vector<float> prune_unstructured(std::span<const float> weights, double p) {
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("prune ratio out of [0,1]");
    std::vector<float> out(weights.begin(), weights.end());
    const std::size_t count = floor_count(p, weights.size());
    if (count == 0) return out;
    std::vector<std::size_t> idx(weights.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return std::fabs(weights[a]) < std::fabs(weights[b]);
    });
    for (std::size_t i = 0; i < count; ++i) out[idx[i]] = 0.0f;
    return out;
}

struct ChannelMask {
    std::size_t layer_id = 0;
    std::vector<bool> keep;

    std::size_t kept() const { return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), true)); }
    friend bool operator==(const ChannelMask&, const ChannelMask&) = default;
};

/// Whether structured pruning can mask this layer's outputs.
inline bool maskable(const ModelSpec& model, std::size_t layer_id) {
    return layer_id + 1 < model.size() && model.layers[layer_id].has_relu;
}

/// Per-output-channel L1 norm of the filter.
inline std::vector<double> filter_saliency(const LayerSpec& layer, const LayerTensors& t) {
    const std::size_t per = layer.in_channels * layer.kernel * layer.kernel;
    std::vector<double> s(layer.out_channels, 0.0);
    for (std::size_t c = 0; c < layer.out_channels; ++c) {
        for (std::size_t j = 0; j < per; ++j) s[c] += std::fabs(static_cast<double>(t.weight[c * per + j]));
    }
    return s;
}

/// Keeps the ceil((1-p) m) channels of largest saliency, ties to lower index.
inline ChannelMask mask_from_saliency(std::size_t layer_id, std::span<const double> saliency, double p) {
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("prune ratio out of [0,1]");
    const std::size_t m = saliency.size();
    const std::size_t keep = ceil_count(1.0 - p, m);
    std::vector<std::size_t> idx(m);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return saliency[a] > saliency[b]; });
    ChannelMask mask{layer_id, std::vector<bool>(m, false)};
    for (std::size_t i = 0; i < keep; ++i) mask.keep[idx[i]] = true;
    return mask;
}

inline ChannelMask prune_structured(const ModelSpec& model, const TensorStore& tensors,
                                    std::size_t layer_id, double p) {
    if (layer_id >= model.size()) throw ValidationError("layer id out of range");
    if (!maskable(model, layer_id)) {
        throw ValidationError("layer " + std::to_string(layer_id) +
                              " has no maskable activation site");
    }
    const auto s = filter_saliency(model.layers[layer_id], tensors.layers[layer_id]);
    return mask_from_saliency(layer_id, s, p);
}

// ---- factorizations --------------------------------------------------------

struct SvdFactors {
    Matrix left;   // m x r, singular values folded in
    Matrix right;  // r x n

    Matrix reconstruct() const { return multiply(left, right); }
};

/// 4-way m x n x k x k tensor, m-major.
struct Tensor4 {
    std::size_t m = 0, n = 0, kh = 0, kw = 0;
    std::vector<double> data;

    Tensor4() = default;
    Tensor4(std::size_t m_, std::size_t n_, std::size_t kh_, std::size_t kw_)
        : m(m_), n(n_), kh(kh_), kw(kw_), data(m_ * n_ * kh_ * kw_, 0.0) {}

    double& at(std::size_t o, std::size_t i, std::size_t y, std::size_t x) {
        return data[((o * n + i) * kh + y) * kw + x];
    }
    double at(std::size_t o, std::size_t i, std::size_t y, std::size_t x) const {
        return data[((o * n + i) * kh + y) * kw + x];
    }
};

struct Tucker2Factors {
    Tensor4 core;     // rank_m x rank_n x k x k
    Matrix factor_m;  // m x rank_m
    Matrix factor_n;  // n x rank_n

    Tensor4 reconstruct() const {
        const std::size_t m = factor_m.rows, n = factor_n.rows;
        const std::size_t rm = factor_m.cols, rn = factor_n.cols;
        const std::size_t kk = core.kh * core.kw;
        // tmp[o][b][yx] = sum_a Um[o][a] core[a][b][yx]
        std::vector<double> tmp(m * rn * kk, 0.0);
        for (std::size_t o = 0; o < m; ++o)
            for (std::size_t a = 0; a < rm; ++a) {
                const double u = factor_m(o, a);
                for (std::size_t b = 0; b < rn; ++b)
                    for (std::size_t s = 0; s < kk; ++s) tmp[(o * rn + b) * kk + s] += u * core.data[(a * rn + b) * kk + s];
            }
        Tensor4 out(m, n, core.kh, core.kw);
        for (std::size_t o = 0; o < m; ++o)
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t b = 0; b < rn; ++b) {
                    const double u = factor_n(i, b);
                    for (std::size_t s = 0; s < kk; ++s) out.data[(o * n + i) * kk + s] += u * tmp[(o * rn + b) * kk + s];
                }
        return out;
    }
};

using Factorization = std::variant<SvdFactors, Tucker2Factors>;

/// Best rank-r approximation in Frobenius norm (truncated SVD).
inline SvdFactors svd_truncate(const Matrix& w, std::size_t r) {
    if (r < 1 || r > std::min(w.rows, w.cols)) {
        throw ValidationError("SVD rank " + std::to_string(r) + " out of range [1, " +
                              std::to_string(std::min(w.rows, w.cols)) + "]");
    }
    const SvdResult s = svd(w);
    SvdFactors f{Matrix(w.rows, r), Matrix(r, w.cols)};
    for (std::size_t k = 0; k < r; ++k) {
        for (std::size_t i = 0; i < w.rows; ++i) f.left(i, k) = s.u(i, k) * s.s[k];
        for (std::size_t j = 0; j < w.cols; ++j) f.right(k, j) = s.v(j, k);
    }
    return f;
}

/// HOSVD along the output- and input-channel modes only.
inline Tucker2Factors tucker2(const Tensor4& w, std::size_t rank_m, std::size_t rank_n) {
    if (rank_m < 1 || rank_m > w.m || rank_n < 1 || rank_n > w.n) {
        throw ValidationError("Tucker-2 ranks (" + std::to_string(rank_m) + ", " +
                              std::to_string(rank_n) + ") out of range");
    }
    const std::size_t kk = w.kh * w.kw;
    Matrix unfold_m(w.m, w.n * kk);
    unfold_m.data = w.data;
    Matrix unfold_n(w.n, w.m * kk);
    for (std::size_t o = 0; o < w.m; ++o)
        for (std::size_t i = 0; i < w.n; ++i)
            for (std::size_t s = 0; s < kk; ++s) unfold_n(i, o * kk + s) = w.data[(o * w.n + i) * kk + s];

    Tucker2Factors f;
    f.factor_m = leading_left_vectors(unfold_m, rank_m);
    f.factor_n = leading_left_vectors(unfold_n, rank_n);

    // core[a][b] = sum_o sum_i Um[o][a] Un[i][b] W[o][i]
    std::vector<double> tmp(rank_m * w.n * kk, 0.0);
    for (std::size_t a = 0; a < rank_m; ++a)
        for (std::size_t o = 0; o < w.m; ++o) {
            const double u = f.factor_m(o, a);
            for (std::size_t i = 0; i < w.n; ++i)
                for (std::size_t s = 0; s < kk; ++s) tmp[(a * w.n + i) * kk + s] += u * w.data[(o * w.n + i) * kk + s];
        }
    f.core = Tensor4(rank_m, rank_n, w.kh, w.kw);
    for (std::size_t a = 0; a < rank_m; ++a)
        for (std::size_t b = 0; b < rank_n; ++b)
            for (std::size_t i = 0; i < w.n; ++i) {
                const double u = f.factor_n(i, b);
                for (std::size_t s = 0; s < kk; ++s) f.core.data[(a * rank_n + b) * kk + s] += u * tmp[(a * w.n + i) * kk + s];
            }
    return f;
}

// ---- plan accounting -------------------------------------------------------

/// Plan checks beyond what decode guarantees: ratios and ranks in range, and
/// no mixing of unstructured pruning with channel masks (masked MACs of a
/// sparse layer would depend on the weight values).
inline void validate_plan(const ModelSpec& model, const CompressionPlan& plan) {
    if (plan.size() != model.size()) throw ValidationError("plan/model mismatch: layer count");
    bool unstructured = false, structured = false;
    auto check_decomp = [&](const LayerSpec& l, const Decomposition& d) {
        if (const auto* s = std::get_if<Svd>(&d)) {
            if (!l.svd_decomposable()) throw ValidationError("plan/model mismatch: SVD on layer " + std::to_string(l.id));
            if (s->rank < 1 || s->rank > std::min(l.out_channels, l.in_channels)) throw ValidationError("SVD rank out of range on layer " + std::to_string(l.id));
        } else {
            const auto& t = std::get<Tucker>(d);
            if (!l.tucker_decomposable()) throw ValidationError("plan/model mismatch: Tucker on layer " + std::to_string(l.id));
            if (t.rank_m < 1 || t.rank_m > l.out_channels || t.rank_n < 1 || t.rank_n > l.in_channels) {
                throw ValidationError("Tucker rank out of range on layer " + std::to_string(l.id));
            }
        }
    };
    for (std::size_t i = 0; i < model.size(); ++i) {
        const auto& l = model.layers[i];
        std::visit(
            [&](const auto& a) {
                using T = std::decay_t<decltype(a)>;
                if constexpr (std::is_same_v<T, Prune>) {
                    if (!(a.ratio >= 0.0 && a.ratio <= 1.0)) throw ValidationError("prune ratio out of [0,1]");
                    (a.structured ? structured : unstructured) = true;
                } else if constexpr (std::is_same_v<T, PruneAndDecompose>) {
                    if (!(a.ratio >= 0.0 && a.ratio <= 1.0)) throw ValidationError("prune ratio out of [0,1]");
                    structured = true;
                    check_decomp(l, a.decomposition);
                } else if constexpr (std::is_same_v<T, Svd> || std::is_same_v<T, Tucker>) {
                    check_decomp(l, Decomposition{a});
                }
            },
            plan.layers[i]);
    }
    if (structured && unstructured) {
        throw ValidationError("plan mixes structured and unstructured pruning");
    }
}

/// Structured pruning ratio acting on a layer's outputs, if any.
inline std::optional<double> structured_ratio(const ModelSpec& model, const CompressionPlan& plan, std::size_t i) {
    if (!maskable(model, i)) return std::nullopt;
    if (const auto* p = std::get_if<Prune>(&plan.layers[i]); p != nullptr && p->structured) return p->ratio;
    if (const auto* pd = std::get_if<PruneAndDecompose>(&plan.layers[i])) return pd->ratio;
    return std::nullopt;
}

/// Effective (kept) output channel count of every layer under the plan.
inline std::vector<std::size_t> kept_outputs(const ModelSpec& model, const CompressionPlan& plan) {
    std::vector<std::size_t> kept(model.size());
    for (std::size_t i = 0; i < model.size(); ++i) {
        const auto r = structured_ratio(model, plan, i);
        kept[i] = r ? ceil_count(1.0 - *r, model.layers[i].out_channels) : model.layers[i].out_channels;
    }
    return kept;
}

namespace detail {

inline Macs svd_layer_macs(const LayerSpec& l, std::size_t rank, std::size_t ko, std::size_t ki, bool clamp) {
    const Spatial out = output_spatial(l);
    const Macs s = l.spatial() ? Macs{out.h} * out.w : 1;
    const std::size_t r = clamp ? std::min({rank, ko, ki}) : rank;
    const Macs factored = Macs{r} * (ko + ki) * s;
    const Macs dense = Macs{ko} * ki * s;
    return std::min(factored, dense);
}

inline Macs tucker_layer_macs(const LayerSpec& l, const Tucker& t, std::size_t ko, std::size_t ki, bool clamp) {
    const Spatial out = output_spatial(l);
    const Macs s_out = Macs{out.h} * out.w;
    const Macs s_in = Macs{l.h_in} * l.w_in;
    const Macs kk = Macs{l.kernel} * l.kernel;
    const std::size_t rm = clamp ? std::min(t.rank_m, ko) : t.rank_m;
    const std::size_t rn = clamp ? std::min(t.rank_n, ki) : t.rank_n;
    const Macs factored = Macs{ki} * rn * s_in + Macs{rn} * rm * kk * s_out + Macs{rm} * ko * s_out;
    const Macs dense = Macs{ko} * ki * kk * s_out;
    return std::min(factored, dense);
}

}  // namespace detail

/// MACs of every layer after compression.
inline std::vector<Macs> compressed_layer_flops(const ModelSpec& model, const CompressionPlan& plan) {
    validate_plan(model, plan);
    const auto kept = kept_outputs(model, plan);
    std::vector<Macs> out(model.size());
    for (std::size_t i = 0; i < model.size(); ++i) {
        const auto& l = model.layers[i];
        const std::size_t ko = kept[i];
        const std::size_t ki = i == 0 ? l.in_channels : kept[i - 1];
        const Spatial sp = output_spatial(l);
        const Macs s_out = l.spatial() ? Macs{sp.h} * sp.w : 1;
        const Macs kk = Macs{l.kernel} * l.kernel;
        out[i] = std::visit(
            [&](const auto& a) -> Macs {
                using T = std::decay_t<decltype(a)>;
                if constexpr (std::is_same_v<T, Prune>) {
                    if (a.structured) return Macs{ko} * ki * kk * s_out;
                    const std::size_t numel = l.weight_size();
                    return Macs{numel - floor_count(a.ratio, numel)} * s_out;
                } else if constexpr (std::is_same_v<T, Svd>) {
                    return detail::svd_layer_macs(l, a.rank, ko, ki, false);
                } else if constexpr (std::is_same_v<T, Tucker>) {
                    return detail::tucker_layer_macs(l, a, ko, ki, false);
                } else if constexpr (std::is_same_v<T, PruneAndDecompose>) {
                    if (ko == 0 || ki == 0) return 0;
                    if (const auto* s = std::get_if<Svd>(&a.decomposition)) {
                        return detail::svd_layer_macs(l, s->rank, ko, ki, true);
                    }
                    return detail::tucker_layer_macs(l, std::get<Tucker>(a.decomposition), ko, ki, true);
                } else {
                    return Macs{ko} * ki * kk * s_out;
                }
            },
            plan.layers[i]);
    }
    return out;
}

inline Macs compressed_flops(const ModelSpec& model, const CompressionPlan& plan) {
    Macs total = 0;
    for (Macs m : compressed_layer_flops(model, plan)) total += m;
    return total;
}

// ---- applying a plan -------------------------------------------------------

/// Everything the forward pass needs: effective dense weights plus the
/// output-channel masks (empty `keep` means all channels kept).
struct CompressedModel {
    TensorStore tensors;
    std::vector<ChannelMask> masks;
};

namespace detail {

inline Matrix to_matrix(const std::vector<float>& w, std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < w.size(); ++i) m.data[i] = w[i];
    return m;
}

inline std::vector<std::size_t> kept_indices(const ChannelMask& mask, std::size_t n) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < n; ++i) {
        if (mask.keep.empty() || mask.keep[i]) idx.push_back(i);
    }
    return idx;
}

/// Decomposes the sub-tensor selected by the kept output rows / input columns
/// and scatters the reconstruction into a zeroed full-shape weight.
inline std::vector<float> decompose_weight(const LayerSpec& l, const std::vector<float>& w,
                                           const Decomposition& d,
                                           const std::vector<std::size_t>& rows,
                                           const std::vector<std::size_t>& cols, bool clamp) {
    const std::size_t kk = l.kernel * l.kernel;
    const std::size_t n = l.in_channels;
    std::vector<float> out(w.size(), 0.0f);
    if (rows.empty() || cols.empty()) return out;

    if (const auto* s = std::get_if<Svd>(&d)) {
        Matrix sub(rows.size(), cols.size());
        for (std::size_t a = 0; a < rows.size(); ++a)
            for (std::size_t b = 0; b < cols.size(); ++b) sub(a, b) = w[rows[a] * n + cols[b]];
        const std::size_t r = clamp ? std::min({s->rank, rows.size(), cols.size()}) : s->rank;
        const Matrix rec = svd_truncate(sub, r).reconstruct();
        for (std::size_t a = 0; a < rows.size(); ++a)
            for (std::size_t b = 0; b < cols.size(); ++b) out[rows[a] * n + cols[b]] = static_cast<float>(rec(a, b));
        return out;
    }
    const auto& t = std::get<Tucker>(d);
    Tensor4 sub(rows.size(), cols.size(), l.kernel, l.kernel);
    for (std::size_t a = 0; a < rows.size(); ++a)
        for (std::size_t b = 0; b < cols.size(); ++b)
            for (std::size_t s = 0; s < kk; ++s) sub.data[(a * cols.size() + b) * kk + s] = w[(rows[a] * n + cols[b]) * kk + s];
    const std::size_t rm = clamp ? std::min(t.rank_m, rows.size()) : t.rank_m;
    const std::size_t rn = clamp ? std::min(t.rank_n, cols.size()) : t.rank_n;
    const Tensor4 rec = tucker2(sub, rm, rn).reconstruct();
    for (std::size_t a = 0; a < rows.size(); ++a)
        for (std::size_t b = 0; b < cols.size(); ++b)
            for (std::size_t s = 0; s < kk; ++s)
                out[(rows[a] * n + cols[b]) * kk + s] = static_cast<float>(rec.data[(a * cols.size() + b) * kk + s]);
    return out;
}

}  // namespace detail

/// Applies the plan layer by layer. Within a layer that both prunes and
/// decomposes, the channel mask is chosen on the original weight first and
/// the masked weight is decomposed afterwards.
inline CompressedModel apply_plan(const ModelSpec& model, const TensorStore& tensors,
                                  const CompressionPlan& plan) {
    validate_plan(model, plan);
    CompressedModel out;
    out.tensors = tensors;
    out.masks.resize(model.size());
    for (std::size_t i = 0; i < model.size(); ++i) {
        out.masks[i].layer_id = i;
        if (const auto r = structured_ratio(model, plan, i)) {
            out.masks[i] = prune_structured(model, tensors, i, *r);
        }
    }
    for (std::size_t i = 0; i < model.size(); ++i) {
        const auto& l = model.layers[i];
        auto& w = out.tensors.layers[i].weight;
        const auto& orig = tensors.layers[i].weight;
        std::visit(
            [&](const auto& a) {
                using T = std::decay_t<decltype(a)>;
                if constexpr (std::is_same_v<T, Prune>) {
                    if (!a.structured) w = prune_unstructured(orig, a.ratio);
                } else if constexpr (std::is_same_v<T, Svd> || std::is_same_v<T, Tucker>) {
                    std::vector<std::size_t> rows(l.out_channels), cols(l.in_channels);
                    std::iota(rows.begin(), rows.end(), 0);
                    std::iota(cols.begin(), cols.end(), 0);
                    w = detail::decompose_weight(l, orig, Decomposition{a}, rows, cols, false);
                } else if constexpr (std::is_same_v<T, PruneAndDecompose>) {
                    const auto rows = detail::kept_indices(out.masks[i], l.out_channels);
                    const auto cols = i == 0 ? detail::kept_indices(ChannelMask{}, l.in_channels)
                                             : detail::kept_indices(out.masks[i - 1], l.in_channels);
                    w = detail::decompose_weight(l, orig, a.decomposition, rows, cols, true);
                }
            },
            plan.layers[i]);
    }
    return out;
}

}  // namespace gencomp
