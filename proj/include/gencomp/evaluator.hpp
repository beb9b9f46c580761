#pragma once

// Accuracy sources for individuals: the built-in forward pass, an analytic
// synthetic landscape and a constant. The external worker pool lives in
// external.hpp.

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "gencomp/compress.hpp"
#include "gencomp/dataset.hpp"
#include "gencomp/error.hpp"
#include "gencomp/genome.hpp"
#include "gencomp/model.hpp"

namespace gencomp {

struct EvalOutcome {
    double accuracy = 0.0;
    std::size_t correct = 0;
    std::size_t evaluated = 0;
};

namespace detail {

struct Activation {
    std::size_t channels = 0;
    std::size_t h = 0;  // 0 for flat vectors
    std::size_t w = 0;
    std::vector<double> v;
};

inline Activation global_average_pool(const Activation& a) {
    Activation out{a.channels, 0, 0, std::vector<double>(a.channels, 0.0)};
    const std::size_t hw = a.h * a.w;
    for (std::size_t c = 0; c < a.channels; ++c) {
        double s = 0.0;
        for (std::size_t j = 0; j < hw; ++j) s += a.v[c * hw + j];
        out.v[c] = s / static_cast<double>(hw);
    }
    return out;
}

inline Activation run_layer(const LayerSpec& l, const LayerTensors& t, const ChannelMask& mask,
                            const Activation& in_raw) {
    const auto keeps = [&](std::size_t c) { return mask.keep.empty() || mask.keep[c]; };
    Activation out;
    out.channels = l.out_channels;
    if (!l.spatial()) {
        const Activation in = in_raw.h > 0 ? global_average_pool(in_raw) : in_raw;
        out.v.assign(l.out_channels, 0.0);
        for (std::size_t o = 0; o < l.out_channels; ++o) {
            if (!keeps(o)) continue;
            double acc = t.bias[o];
            const float* row = t.weight.data() + o * l.in_channels;
            for (std::size_t i = 0; i < l.in_channels; ++i) acc += static_cast<double>(row[i]) * in.v[i];
            out.v[o] = l.has_relu ? std::max(acc, 0.0) : acc;
        }
        return out;
    }

    const Spatial sp = output_spatial(l);
    out.h = sp.h;
    out.w = sp.w;
    out.v.assign(l.out_channels * sp.h * sp.w, 0.0);
    const std::size_t k = l.kernel;
    const auto pad = static_cast<long>(l.padding);
    for (std::size_t o = 0; o < l.out_channels; ++o) {
        if (!keeps(o)) continue;
        for (std::size_t y = 0; y < sp.h; ++y) {
            for (std::size_t x = 0; x < sp.w; ++x) {
                double acc = t.bias[o];
                for (std::size_t i = 0; i < l.in_channels; ++i) {
                    const float* kern = t.weight.data() + ((o * l.in_channels + i) * k) * k;
                    const double* plane = in_raw.v.data() + i * l.h_in * l.w_in;
                    for (std::size_t ky = 0; ky < k; ++ky) {
                        const long iy = static_cast<long>(y * l.stride + ky) - pad;
                        if (iy < 0 || iy >= static_cast<long>(l.h_in)) continue;
                        for (std::size_t kx = 0; kx < k; ++kx) {
                            const long ix = static_cast<long>(x * l.stride + kx) - pad;
                            if (ix < 0 || ix >= static_cast<long>(l.w_in)) continue;
                            acc += static_cast<double>(kern[ky * k + kx]) *
                                   plane[static_cast<std::size_t>(iy) * l.w_in + static_cast<std::size_t>(ix)];
                        }
                    }
                }
                out.v[(o * sp.h + y) * sp.w + x] = l.has_relu ? std::max(acc, 0.0) : acc;
            }
        }
    }
    return out;
}

}  // namespace detail

/// Logits of one sample through the compressed network.
inline std::vector<double> forward(const ModelSpec& model, const CompressedModel& compressed,
                                   const float* sample) {
    const auto& first = model.layers.front();
    detail::Activation a;
    a.channels = first.in_channels;
    a.h = first.spatial() ? first.h_in : 0;
    a.w = first.spatial() ? first.w_in : 0;
    a.v.assign(sample, sample + input_dim(model));
    for (std::size_t i = 0; i < model.size(); ++i) {
        a = detail::run_layer(model.layers[i], compressed.tensors.layers[i], compressed.masks[i], a);
        for (double v : a.v) {
            if (!std::isfinite(v)) {
                throw Error("non-finite activation in layer " + std::to_string(i));
            }
        }
    }
    if (a.h > 0) a = detail::global_average_pool(a);
    return a.v;
}

/// Index of the largest logit; ties go to the lowest class index.
inline std::size_t argmax(const std::vector<double>& logits) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i) {
        if (logits[i] > logits[best]) best = i;
    }
    return best;
}

inline EvalOutcome builtin_accuracy(const ModelSpec& model, const CompressedModel& compressed,
                                    const Dataset& data) {
    if (data.dim != input_dim(model)) {
        throw ValidationError("dataset has " + std::to_string(data.dim) + " features, model expects " +
                              std::to_string(input_dim(model)));
    }
    if (data.num_classes > output_dim(model)) throw ValidationError("dataset labels exceed model outputs");
    EvalOutcome out;
    for (std::size_t s = 0; s < data.size(); ++s) {
        if (argmax(forward(model, compressed, data.row(s))) == data.labels[s]) ++out.correct;
    }
    out.evaluated = data.size();
    out.accuracy = static_cast<double>(out.correct) / static_cast<double>(out.evaluated);
    return out;
}

inline EvalOutcome builtin_accuracy(const ModelSpec& model, const TensorStore& tensors,
                                    const CompressionPlan& plan, const Dataset& data) {
    return builtin_accuracy(model, apply_plan(model, tensors, plan), data);
}

// ---- synthetic landscape ---------------------------------------------------

/// acc(v) = clamp(acc_o - sum_i c_i g_i^2, 0, 1); g_i is the gene itself for
/// continuous genes and 1 - code/code_max for rank codes.
struct SyntheticLandscape {
    double base_accuracy = 0.9;
    std::vector<double> coefficients;
    std::vector<int> code_max;  // 0 marks a continuous gene; empty = all continuous
};

inline SyntheticLandscape landscape_for(const GenomeSchema& schema, double base_accuracy,
                                        std::vector<double> coefficients) {
    SyntheticLandscape s{base_accuracy, std::move(coefficients), {}};
    for (const auto& d : schema.genes) s.code_max.push_back(d.code_max());
    return s;
}

inline double synthetic_accuracy(const Genome& genome, const SyntheticLandscape& land) {
    if (genome.size() != land.coefficients.size()) {
        throw ValidationError("genome length does not match landscape coefficient count");
    }
    if (!land.code_max.empty() && land.code_max.size() != genome.size()) {
        throw ValidationError("landscape code table has the wrong length");
    }
    double drop = 0.0;
    for (std::size_t i = 0; i < genome.size(); ++i) {
        const int cm = land.code_max.empty() ? 0 : land.code_max[i];
        const double g = cm > 0 ? 1.0 - genome[i] / cm : genome[i];
        drop += land.coefficients[i] * g * g;
    }
    return std::clamp(land.base_accuracy - drop, 0.0, 1.0);
}

// ---- evaluator interface ---------------------------------------------------

/// Accuracy oracle for individuals. Implementations must tolerate concurrent
/// calls from the engine's evaluation phase.
class Evaluator {
public:
    virtual ~Evaluator() = default;
    virtual double accuracy(const Genome& genome, const CompressionPlan& plan) = 0;
    virtual std::string name() const = 0;
};

class BuiltinEvaluator final : public Evaluator {
public:
    BuiltinEvaluator(const ModelSpec& model, const TensorStore& tensors, Dataset data)
        : model_(model), tensors_(tensors), data_(std::move(data)) {
        validate(data_);
        if (data_.dim != input_dim(model_)) {
            throw ValidationError("dataset has " + std::to_string(data_.dim) +
                                  " features, model expects " + std::to_string(input_dim(model_)));
        }
    }

    double accuracy(const Genome&, const CompressionPlan& plan) override {
        return builtin_accuracy(model_, tensors_, plan, data_).accuracy;
    }
    std::string name() const override { return "builtin"; }
    const Dataset& dataset() const { return data_; }

private:
    const ModelSpec& model_;
    const TensorStore& tensors_;
    Dataset data_;
};

class SyntheticEvaluator final : public Evaluator {
public:
    explicit SyntheticEvaluator(SyntheticLandscape land) : land_(std::move(land)) {}
    double accuracy(const Genome& genome, const CompressionPlan&) override {
        return synthetic_accuracy(genome, land_);
    }
    std::string name() const override { return "synthetic"; }
    const SyntheticLandscape& landscape() const { return land_; }

private:
    SyntheticLandscape land_;
};

class ConstantEvaluator final : public Evaluator {
public:
    explicit ConstantEvaluator(double acc) : acc_(acc) {
        if (!(acc >= 0.0 && acc <= 1.0)) throw ValidationError("constant accuracy must be in [0,1]");
    }
    double accuracy(const Genome&, const CompressionPlan&) override { return acc_; }
    std::string name() const override { return "constant"; }

private:
    double acc_;
};

}  // namespace gencomp
