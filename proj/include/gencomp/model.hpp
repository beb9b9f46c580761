#pragma once

// Layer-wise network description, weight storage, the model container
// format and MAC counting for the uncompressed network.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gencomp/error.hpp"

namespace gencomp {

using json = nlohmann::json;

/// Multiply-accumulate count. One MAC is one "FLOP" throughout the project.
using Macs = std::uint64_t;

enum class LayerKind { fully_connected, conv, pointwise_conv };

inline std::string_view to_string(LayerKind kind) {
    switch (kind) {
    case LayerKind::fully_connected: return "fully_connected";
    case LayerKind::conv: return "conv";
    case LayerKind::pointwise_conv: return "pointwise_conv";
    }
    return "?";
}

inline LayerKind layer_kind_from_string(std::string_view s) {
    if (s == "fully_connected") return LayerKind::fully_connected;
    if (s == "conv") return LayerKind::conv;
    if (s == "pointwise_conv") return LayerKind::pointwise_conv;
    throw ModelFormatError("unknown layer kind '" + std::string(s) + "'");
}

struct LayerSpec {
    std::size_t id = 0;
    LayerKind kind = LayerKind::fully_connected;
    std::size_t out_channels = 1;  // m
    std::size_t in_channels = 1;   // n
    std::size_t kernel = 1;        // k
    std::size_t h_in = 0;
    std::size_t w_in = 0;
    std::size_t stride = 1;
    std::size_t padding = 0;
    bool has_relu = false;

    bool spatial() const { return kind != LayerKind::fully_connected; }

    /// Target of SVD: fully-connected layers and 1x1 convolutions.
    bool svd_decomposable() const {
        return kind == LayerKind::fully_connected || kind == LayerKind::pointwise_conv;
    }

    /// Target of Tucker-2: convolutions with k > 1.
    bool tucker_decomposable() const { return kind == LayerKind::conv && kernel > 1; }

    std::size_t weight_size() const { return out_channels * in_channels * kernel * kernel; }

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct ModelSpec {
    std::string name;
    std::vector<LayerSpec> layers;
    /// Manifest as read from disk, extra keys included. Forwarded verbatim to
    /// external evaluators.
    json manifest;

    std::size_t size() const { return layers.size(); }

    std::size_t count_l1() const {
        std::size_t c = 0;
        for (const auto& l : layers) c += l.svd_decomposable() ? 1 : 0;
        return c;
    }

    std::size_t count_l2() const {
        std::size_t c = 0;
        for (const auto& l : layers) c += l.tucker_decomposable() ? 1 : 0;
        return c;
    }
};

struct LayerTensors {
    std::vector<float> weight;  // m x n (x k x k), m-major
    std::vector<float> bias;    // m

    friend bool operator==(const LayerTensors&, const LayerTensors&) = default;
};

struct TensorStore {
    std::vector<LayerTensors> layers;

    friend bool operator==(const TensorStore&, const TensorStore&) = default;
};

struct Spatial {
    std::size_t h = 0;
    std::size_t w = 0;

    friend bool operator==(const Spatial&, const Spatial&) = default;
};

/// Output feature-map size of a convolution-kind layer.
inline Spatial output_spatial(const LayerSpec& layer) {
    if (!layer.spatial()) return {0, 0};
    const std::size_t ph = layer.h_in + 2 * layer.padding;
    const std::size_t pw = layer.w_in + 2 * layer.padding;
    if (layer.stride == 0) throw ValidationError("stride must be positive");
    if (ph < layer.kernel || pw < layer.kernel) {
        throw ValidationError("layer " + std::to_string(layer.id) +
                              ": kernel larger than padded input");
    }
    return {(ph - layer.kernel) / layer.stride + 1, (pw - layer.kernel) / layer.stride + 1};
}

inline Macs layer_flops(const LayerSpec& layer) {
    if (!layer.spatial()) return Macs{layer.out_channels} * layer.in_channels;
    const auto out = output_spatial(layer);
    return Macs{layer.out_channels} * layer.in_channels * layer.kernel * layer.kernel * out.h *
           out.w;
}

inline Macs model_flops(const ModelSpec& model) {
    Macs total = 0;
    for (const auto& l : model.layers) total += layer_flops(l);
    return total;
}

/// Checks per-layer invariants and the sequential chain. A fully-connected
/// layer that follows a spatial layer consumes its globally average-pooled
/// channels.
inline void validate(const ModelSpec& model) {
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const auto& l = model.layers[i];
        const std::string where = "layer " + std::to_string(i) + ": ";
        if (l.id != i) throw ModelFormatError(where + "id out of order");
        if (l.out_channels == 0 || l.in_channels == 0 || l.kernel == 0 || l.stride == 0) {
            throw ModelFormatError(where + "m, n, k and stride must be positive");
        }
        if (l.kind == LayerKind::fully_connected &&
            (l.kernel != 1 || l.h_in != 0 || l.w_in != 0)) {
            throw ModelFormatError(where + "fully_connected requires k=1 and h_in=w_in=0");
        }
        if (l.kind == LayerKind::pointwise_conv && l.kernel != 1) {
            throw ModelFormatError(where + "pointwise_conv requires k=1");
        }
        if (l.spatial()) {
            if (l.h_in == 0 || l.w_in == 0) throw ModelFormatError(where + "empty input map");
            (void)output_spatial(l);
        }
        if (i == 0) continue;
        const auto& prev = model.layers[i - 1];
        if (l.in_channels != prev.out_channels) {
            throw ModelFormatError(where + "channel chain mismatch (" +
                                   std::to_string(prev.out_channels) + " -> " +
                                   std::to_string(l.in_channels) + ")");
        }
        if (l.spatial()) {
            if (!prev.spatial()) {
                throw ModelFormatError(where + "spatial layer cannot follow fully_connected");
            }
            if (output_spatial(prev) != Spatial{l.h_in, l.w_in}) {
                throw ModelFormatError(where + "spatial chain mismatch");
            }
        }
    }
}

inline void validate(const ModelSpec& model, const TensorStore& tensors) {
    validate(model);
    if (tensors.layers.size() != model.layers.size()) {
        throw ModelFormatError("tensor store has wrong layer count");
    }
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const auto& l = model.layers[i];
        const auto& t = tensors.layers[i];
        if (t.weight.size() != l.weight_size() || t.bias.size() != l.out_channels) {
            throw ModelFormatError("layer " + std::to_string(i) + ": tensor shape mismatch");
        }
        for (float v : t.weight) {
            if (!std::isfinite(v)) throw ModelFormatError("non-finite weight value");
        }
        for (float v : t.bias) {
            if (!std::isfinite(v)) throw ModelFormatError("non-finite bias value");
        }
    }
}

namespace detail {

inline std::uint32_t read_u32_le(const unsigned char* p) {
    return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
           (std::uint32_t{p[3]} << 24);
}

inline float read_f32_le(const unsigned char* p) {
    std::uint32_t bits = read_u32_le(p);
    float v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
}

inline void write_u32_le(std::string& out, std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) out.push_back(static_cast<char>((v >> s) & 0xFF));
}

inline void write_f32_le(std::string& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, sizeof bits);
    write_u32_le(out, bits);
}

template <class T>
T manifest_count(const json& j, const char* key, T fallback, bool required) {
    if (!j.contains(key)) {
        if (required) throw ModelFormatError(std::string("manifest layer missing '") + key + "'");
        return fallback;
    }
    const auto& v = j.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) {
        throw ModelFormatError(std::string("manifest field '") + key +
                               "' must be a non-negative integer");
    }
    return static_cast<T>(v.get<long long>());
}

}  // namespace detail

/// Builds a ModelSpec from a manifest object (no tensors involved).
inline ModelSpec model_from_manifest(const json& manifest) {
    if (!manifest.is_object() || !manifest.contains("layers") || !manifest["layers"].is_array()) {
        throw ModelFormatError("malformed manifest: expected object with 'layers' array");
    }
    ModelSpec model;
    model.manifest = manifest;
    model.name = manifest.value("name", std::string{});
    std::size_t id = 0;
    for (const auto& jl : manifest["layers"]) {
        if (!jl.is_object() || !jl.contains("kind") || !jl["kind"].is_string()) {
            throw ModelFormatError("malformed manifest: layer without 'kind'");
        }
        LayerSpec l;
        l.id = id++;
        l.kind = layer_kind_from_string(jl["kind"].get<std::string>());
        l.out_channels = detail::manifest_count<std::size_t>(jl, "m", 0, true);
        l.in_channels = detail::manifest_count<std::size_t>(jl, "n", 0, true);
        l.kernel = detail::manifest_count<std::size_t>(jl, "k", 1, false);
        l.h_in = detail::manifest_count<std::size_t>(jl, "h_in", 0, false);
        l.w_in = detail::manifest_count<std::size_t>(jl, "w_in", 0, false);
        l.stride = detail::manifest_count<std::size_t>(jl, "stride", 1, false);
        l.padding = detail::manifest_count<std::size_t>(jl, "padding", 0, false);
        l.has_relu = jl.value("has_relu", false);
        model.layers.push_back(l);
    }
    validate(model);
    return model;
}

inline json manifest_from_model(const ModelSpec& model) {
    json layers = json::array();
    for (const auto& l : model.layers) {
        layers.push_back({{"kind", to_string(l.kind)},
                          {"m", l.out_channels},
                          {"n", l.in_channels},
                          {"k", l.kernel},
                          {"h_in", l.h_in},
                          {"w_in", l.w_in},
                          {"stride", l.stride},
                          {"padding", l.padding},
                          {"has_relu", l.has_relu}});
    }
    json m = model.manifest.is_object() ? model.manifest : json::object();
    m["name"] = model.name;
    m["layers"] = std::move(layers);
    return m;
}

/// Parses a manifest plus the raw tensor blob that follows it on disk.
inline std::pair<ModelSpec, TensorStore> parse_model(std::string_view manifest_bytes,
                                                     std::string_view blob_bytes) {
    json manifest;
    try {
        manifest = json::parse(manifest_bytes);
    } catch (const json::exception& e) {
        throw ModelFormatError(std::string("malformed manifest: ") + e.what());
    }
    ModelSpec model = model_from_manifest(manifest);

    std::size_t expected = 0;
    for (const auto& l : model.layers) expected += (l.weight_size() + l.out_channels) * 4;
    if (blob_bytes.size() != expected) {
        throw ModelFormatError("blob length mismatch: expected " + std::to_string(expected) +
                               " bytes, got " + std::to_string(blob_bytes.size()));
    }

    TensorStore store;
    const auto* p = reinterpret_cast<const unsigned char*>(blob_bytes.data());
    for (const auto& l : model.layers) {
        LayerTensors t;
        t.weight.resize(l.weight_size());
        t.bias.resize(l.out_channels);
        for (auto& v : t.weight) { v = detail::read_f32_le(p); p += 4; }
        for (auto& v : t.bias) { v = detail::read_f32_le(p); p += 4; }
        store.layers.push_back(std::move(t));
    }
    validate(model, store);
    return {std::move(model), std::move(store)};
}

/// Parses a model container: u32 LE header length, JSON manifest, then the
/// f32 LE tensors (weight then bias for each layer).
inline std::pair<ModelSpec, TensorStore> parse_container(std::string_view bytes) {
    if (bytes.size() < 4) throw ModelFormatError("container shorter than its header");
    const std::uint32_t header_len =
        detail::read_u32_le(reinterpret_cast<const unsigned char*>(bytes.data()));
    if (bytes.size() - 4 < header_len) throw ModelFormatError("truncated manifest");
    return parse_model(bytes.substr(4, header_len), bytes.substr(4 + header_len));
}

inline std::string serialize_model(const ModelSpec& model, const TensorStore& tensors) {
    validate(model, tensors);
    const std::string header = manifest_from_model(model).dump();
    std::string out;
    detail::write_u32_le(out, static_cast<std::uint32_t>(header.size()));
    out += header;
    for (const auto& t : tensors.layers) {
        for (float v : t.weight) detail::write_f32_le(out, v);
        for (float v : t.bias) detail::write_f32_le(out, v);
    }
    return out;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open '" + path + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::pair<ModelSpec, TensorStore> load_model(const std::string& path) {
    return parse_container(read_file(path));
}

}  // namespace gencomp
