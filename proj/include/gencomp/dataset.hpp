#pragma once

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "gencomp/error.hpp"
#include "gencomp/model.hpp"

namespace gencomp {

/// Validation samples. Features are row-major M x d; for convolutional
/// models each row is one c x h x w image, channel-major.
struct Dataset {
    std::size_t dim = 0;
    std::vector<float> features;
    std::vector<std::size_t> labels;
    std::size_t num_classes = 0;

    std::size_t size() const { return labels.size(); }
    const float* row(std::size_t i) const { return features.data() + i * dim; }
};

inline void validate(const Dataset& d) {
    if (d.size() == 0) throw ValidationError("dataset is empty");
    if (d.features.size() != d.size() * d.dim) throw ValidationError("dataset feature count mismatch");
    for (auto y : d.labels) {
        if (y >= d.num_classes) throw ValidationError("label out of range");
    }
}

/// CSV with a header row; features first, integer label in the last column.
/// Only the first ceil(fraction * rows) rows are kept.
inline Dataset parse_csv_dataset(const std::string& text, double fraction = 1.0) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ValidationError("validation_fraction must be in (0, 1]");
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("dataset CSV has no header row");

    Dataset d;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<double> cells;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) {
            try {
                std::size_t used = 0;
                cells.push_back(std::stod(cell, &used));
            } catch (const std::exception&) {
                throw ValidationError("dataset line " + std::to_string(line_no) + ": bad number '" + cell + "'");
            }
        }
        if (cells.size() < 2) throw ValidationError("dataset line " + std::to_string(line_no) + ": too few columns");
        const std::size_t dim = cells.size() - 1;
        if (d.dim == 0) d.dim = dim;
        if (dim != d.dim) throw ValidationError("dataset line " + std::to_string(line_no) + ": ragged row");
        const double label = cells.back();
        if (label < 0 || label != std::floor(label)) {
            throw ValidationError("dataset line " + std::to_string(line_no) + ": label must be a non-negative integer");
        }
        for (std::size_t j = 0; j < dim; ++j) {
            if (!std::isfinite(cells[j])) throw ValidationError("dataset line " + std::to_string(line_no) + ": non-finite feature");
            d.features.push_back(static_cast<float>(cells[j]));
        }
        d.labels.push_back(static_cast<std::size_t>(label));
        d.num_classes = std::max(d.num_classes, d.labels.back() + 1);
    }
    if (d.labels.empty()) throw ValidationError("dataset has no rows");

    const auto keep = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(d.size()) - 1e-9));
    d.labels.resize(std::max<std::size_t>(keep, 1));
    d.features.resize(d.labels.size() * d.dim);
    return d;
}

inline Dataset load_csv_dataset(const std::string& path, double fraction = 1.0) {
    return parse_csv_dataset(read_file(path), fraction);
}

/// Input width the first layer expects.
inline std::size_t input_dim(const ModelSpec& model) {
    if (model.layers.empty()) throw ValidationError("model has no layers");
    const auto& l = model.layers.front();
    return l.spatial() ? l.in_channels * l.h_in * l.w_in : l.in_channels;
}

inline std::size_t output_dim(const ModelSpec& model) {
    if (model.layers.empty()) throw ValidationError("model has no layers");
    return model.layers.back().out_channels;
}

}  // namespace gencomp
