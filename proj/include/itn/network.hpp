#pragma once

// Small convolutional regressor: five 3x3 conv + ReLU + 2x2 max-pool stages
// shared by all outputs, then one two-layer fully-connected branch per
// output (translation, rotation, P logits, Q logits).

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "itn/error.hpp"
#include "itn/loss.hpp"
#include "itn/predictor.hpp"
#include "itn/rng.hpp"
#include "itn/volume.hpp"

namespace itn {

inline constexpr int kConvStages = 5;

struct Architecture {
    int input_size = 32;
    int in_channels = 1;
    std::array<int, kConvStages> channels{8, 16, 32, 32, 32};
    int head_width = 64;
    Representation representation = Representation::Quat;
    Heads heads;

    int final_spatial() const { return input_size >> kConvStages; }
    int feature_size() const { return channels.back() * final_spatial() * final_spatial(); }

    friend bool operator==(const Architecture&, const Architecture&) = default;
};

inline Architecture make_architecture(int plane_size, Representation rep, Heads heads) {
    Architecture a;
    a.input_size = plane_size;
    a.in_channels = heads.triplet ? 3 : 1;
    a.representation = rep;
    a.heads = heads;
    return a;
}

enum class HeadKind { Translation, Rotation, P, Q };

template <typename Scalar = float>
class Regressor {
public:
    struct ConvLayer {
        int in_c, out_c, size;  // size = input spatial size
        size_t w, b;            // parameter offsets
    };
    struct Head {
        HeadKind kind;
        int out;
        size_t w1, b1, w2, b2;
    };

    /// Per-call activations needed by backward().
    struct Cache {
        std::array<std::vector<Scalar>, kConvStages> padded;   // zero-padded stage inputs
        std::array<std::vector<Scalar>, kConvStages> relu;     // post-activation conv outputs
        std::array<std::vector<std::int32_t>, kConvStages> argmax;
        std::vector<Scalar> features;
        std::vector<std::vector<Scalar>> hidden;
        std::vector<std::vector<Scalar>> outputs;
    };

    explicit Regressor(Architecture arch) : arch_(arch) {
        if (arch_.input_size < (1 << kConvStages)) {
            throw Error(ErrorKind::InputShape, "input size must be at least 32");
        }
        if (arch_.in_channels < 1) throw Error(ErrorKind::InputShape, "need at least one input channel");
        size_t offset = 0;
        int in_c = arch_.in_channels;
        int size = arch_.input_size;
        for (int l = 0; l < kConvStages; ++l) {
            const int out_c = arch_.channels[static_cast<size_t>(l)];
            ConvLayer c{in_c, out_c, size, offset, 0};
            offset += static_cast<size_t>(out_c) * in_c * 9;
            c.b = offset;
            offset += static_cast<size_t>(out_c);
            conv_[static_cast<size_t>(l)] = c;
            in_c = out_c;
            size /= 2;
        }
        auto add_head = [&](HeadKind kind, int out) {
            Head h{kind, out, 0, 0, 0, 0};
            const size_t f = static_cast<size_t>(arch_.feature_size());
            const size_t hw = static_cast<size_t>(arch_.head_width);
            h.w1 = offset;
            offset += hw * f;
            h.b1 = offset;
            offset += hw;
            h.w2 = offset;
            offset += static_cast<size_t>(out) * hw;
            h.b2 = offset;
            offset += static_cast<size_t>(out);
            heads_.push_back(h);
        };
        if (arch_.representation != Representation::Anchors) add_head(HeadKind::Translation, 3);
        add_head(HeadKind::Rotation, rotation_width(arch_.representation));
        if (arch_.heads.p) add_head(HeadKind::P, 6);
        if (arch_.heads.q) add_head(HeadKind::Q, 6);
        params_.assign(offset, Scalar(0));
    }

    const Architecture& architecture() const { return arch_; }
    const std::vector<Head>& heads() const { return heads_; }
    size_t parameter_count() const { return params_.size(); }
    std::span<Scalar> parameters() { return params_; }
    std::span<const Scalar> parameters() const { return params_; }

    /// Weights ~ N(0, stddev), biases zero.
    void initialize(std::uint64_t seed, double stddev) {
        Rng rng(derive_seed(seed, 0x1217));
        std::normal_distribution<double> g(0.0, stddev);
        std::fill(params_.begin(), params_.end(), Scalar(0));
        auto fill = [&](size_t from, size_t to) {
            for (size_t i = from; i < to; ++i) params_[i] = static_cast<Scalar>(g(rng));
        };
        for (const auto& c : conv_) fill(c.w, c.b);
        for (const auto& h : heads_) {
            fill(h.w1, h.b1);
            fill(h.w2, h.b2);
        }
    }

    PredictorOutput forward(std::span<const PlaneImage> images) const {
        Cache cache;
        return forward(images, cache);
    }

    PredictorOutput forward(std::span<const PlaneImage> images, Cache& cache) const {
        check_input(images);
        const int s0 = arch_.input_size;
        // Stage-0 padded input.
        {
            const int p = s0 + 2;
            auto& pad = cache.padded[0];
            pad.assign(static_cast<size_t>(arch_.in_channels) * p * p, Scalar(0));
            for (int c = 0; c < arch_.in_channels; ++c) {
                const auto& img = images[static_cast<size_t>(c)];
                for (int i = 0; i < s0; ++i)
                    for (int j = 0; j < s0; ++j)
                        pad[(static_cast<size_t>(c) * p + i + 1) * p + j + 1] = static_cast<Scalar>(img.at(i, j));
            }
        }
        std::vector<Scalar> pooled;
        for (int l = 0; l < kConvStages; ++l) {
            const ConvLayer& c = conv_[static_cast<size_t>(l)];
            conv_forward(c, cache.padded[static_cast<size_t>(l)], cache.relu[static_cast<size_t>(l)]);
            pool_forward(c.out_c, c.size, cache.relu[static_cast<size_t>(l)], pooled, cache.argmax[static_cast<size_t>(l)]);
            if (l + 1 < kConvStages) {
                pad_into(pooled, c.out_c, c.size / 2, cache.padded[static_cast<size_t>(l + 1)]);
            }
        }
        cache.features = std::move(pooled);

        cache.hidden.assign(heads_.size(), {});
        cache.outputs.assign(heads_.size(), {});
        const size_t f = cache.features.size();
        const size_t hw = static_cast<size_t>(arch_.head_width);
        for (size_t h = 0; h < heads_.size(); ++h) {
            const Head& head = heads_[h];
            auto& hid = cache.hidden[h];
            hid.assign(hw, Scalar(0));
            for (size_t o = 0; o < hw; ++o) {
                const Scalar* wrow = &params_[head.w1 + o * f];
                Scalar acc = params_[head.b1 + o];
                for (size_t i = 0; i < f; ++i) acc += wrow[i] * cache.features[i];
                hid[o] = acc > Scalar(0) ? acc : Scalar(0);
            }
            auto& out = cache.outputs[h];
            out.assign(static_cast<size_t>(head.out), Scalar(0));
            for (size_t o = 0; o < out.size(); ++o) {
                const Scalar* wrow = &params_[head.w2 + o * hw];
                Scalar acc = params_[head.b2 + o];
                for (size_t i = 0; i < hw; ++i) acc += wrow[i] * hid[i];
                out[o] = acc;
            }
        }
        return decode(cache.outputs);
    }

    /// Accumulates d(loss)/d(params) into `param_grad`, given the gradient
    /// with respect to the raw outputs.
    void backward(const Cache& cache, const OutputGradient& grad, std::span<Scalar> param_grad) const {
        if (param_grad.size() != params_.size()) throw Error(ErrorKind::SizeMismatch, "gradient buffer size");
        const size_t f = cache.features.size();
        const size_t hw = static_cast<size_t>(arch_.head_width);
        std::vector<Scalar> d_features(f, Scalar(0));
        std::vector<Scalar> d_hidden(hw);
        for (size_t h = 0; h < heads_.size(); ++h) {
            const Head& head = heads_[h];
            const auto d_out = head_gradient(head, grad);
            const auto& hid = cache.hidden[h];
            std::fill(d_hidden.begin(), d_hidden.end(), Scalar(0));
            for (size_t o = 0; o < static_cast<size_t>(head.out); ++o) {
                const Scalar g = d_out[o];
                if (g == Scalar(0)) continue;
                param_grad[head.b2 + o] += g;
                Scalar* gw = &param_grad[head.w2 + o * hw];
                const Scalar* w = &params_[head.w2 + o * hw];
                for (size_t i = 0; i < hw; ++i) {
                    gw[i] += g * hid[i];
                    d_hidden[i] += g * w[i];
                }
            }
            for (size_t o = 0; o < hw; ++o) {
                if (!(hid[o] > Scalar(0))) continue;
                const Scalar g = d_hidden[o];
                param_grad[head.b1 + o] += g;
                Scalar* gw = &param_grad[head.w1 + o * f];
                const Scalar* w = &params_[head.w1 + o * f];
                for (size_t i = 0; i < f; ++i) {
                    gw[i] += g * cache.features[i];
                    d_features[i] += g * w[i];
                }
            }
        }

        std::vector<Scalar> d_pooled = std::move(d_features);
        std::vector<Scalar> d_relu, d_padded;
        for (int l = kConvStages - 1; l >= 0; --l) {
            const ConvLayer& c = conv_[static_cast<size_t>(l)];
            const auto& relu = cache.relu[static_cast<size_t>(l)];
            const auto& arg = cache.argmax[static_cast<size_t>(l)];
            d_relu.assign(relu.size(), Scalar(0));
            for (size_t k = 0; k < arg.size(); ++k) d_relu[static_cast<size_t>(arg[k])] += d_pooled[k];
            for (size_t k = 0; k < relu.size(); ++k) {
                if (!(relu[k] > Scalar(0))) d_relu[k] = Scalar(0);
            }
            const bool need_input = l > 0;
            conv_backward(c, cache.padded[static_cast<size_t>(l)], d_relu, param_grad, need_input ? &d_padded : nullptr);
            if (need_input) {
                // Strip padding to get the gradient w.r.t. the previous pooled map.
                const int s = c.size;
                const int p = s + 2;
                d_pooled.assign(static_cast<size_t>(c.in_c) * s * s, Scalar(0));
                for (int ch = 0; ch < c.in_c; ++ch)
                    for (int i = 0; i < s; ++i)
                        for (int j = 0; j < s; ++j)
                            d_pooled[(static_cast<size_t>(ch) * s + i) * s + j] =
                                d_padded[(static_cast<size_t>(ch) * p + i + 1) * p + j + 1];
            }
        }
    }

    template <typename Other>
    Regressor<Other> cast() const {
        Regressor<Other> out(arch_);
        auto dst = out.parameters();
        for (size_t i = 0; i < params_.size(); ++i) dst[i] = static_cast<Other>(params_[i]);
        return out;
    }

private:
    void check_input(std::span<const PlaneImage> images) const {
        if (images.size() != static_cast<size_t>(arch_.in_channels)) {
            throw Error(ErrorKind::InputShape, "expected " + std::to_string(arch_.in_channels) + " image(s), got " +
                                                   std::to_string(images.size()));
        }
        for (const auto& img : images) {
            if (img.size != arch_.input_size || img.pixels.size() != static_cast<size_t>(img.size) * img.size) {
                throw Error(ErrorKind::InputShape, "expected " + std::to_string(arch_.input_size) + "x" +
                                                       std::to_string(arch_.input_size) + " image, got size " +
                                                       std::to_string(img.size));
            }
        }
    }

    void conv_forward(const ConvLayer& c, const std::vector<Scalar>& padded, std::vector<Scalar>& relu) const {
        const int s = c.size;
        const int p = s + 2;
        relu.assign(static_cast<size_t>(c.out_c) * s * s, Scalar(0));
        for (int oc = 0; oc < c.out_c; ++oc) {
            Scalar* out = &relu[static_cast<size_t>(oc) * s * s];
            std::fill(out, out + s * s, params_[c.b + static_cast<size_t>(oc)]);
            for (int ic = 0; ic < c.in_c; ++ic) {
                const Scalar* in = &padded[static_cast<size_t>(ic) * p * p];
                const Scalar* w = &params_[c.w + (static_cast<size_t>(oc) * c.in_c + ic) * 9];
                for (int ky = 0; ky < 3; ++ky)
                    for (int kx = 0; kx < 3; ++kx) {
                        const Scalar wk = w[ky * 3 + kx];
                        for (int y = 0; y < s; ++y) {
                            const Scalar* row = in + (y + ky) * p + kx;
                            Scalar* o = out + y * s;
                            for (int x = 0; x < s; ++x) o[x] += wk * row[x];
                        }
                    }
            }
            for (int k = 0; k < s * s; ++k) out[k] = out[k] > Scalar(0) ? out[k] : Scalar(0);
        }
    }

    void conv_backward(const ConvLayer& c, const std::vector<Scalar>& padded, const std::vector<Scalar>& d_out,
                       std::span<Scalar> param_grad, std::vector<Scalar>* d_padded) const {
        const int s = c.size;
        const int p = s + 2;
        if (d_padded) d_padded->assign(static_cast<size_t>(c.in_c) * p * p, Scalar(0));
        for (int oc = 0; oc < c.out_c; ++oc) {
            const Scalar* g = &d_out[static_cast<size_t>(oc) * s * s];
            Scalar bias = 0;
            for (int k = 0; k < s * s; ++k) bias += g[k];
            param_grad[c.b + static_cast<size_t>(oc)] += bias;
            for (int ic = 0; ic < c.in_c; ++ic) {
                const Scalar* in = &padded[static_cast<size_t>(ic) * p * p];
                const size_t woff = c.w + (static_cast<size_t>(oc) * c.in_c + ic) * 9;
                Scalar* din = d_padded ? &(*d_padded)[static_cast<size_t>(ic) * p * p] : nullptr;
                for (int ky = 0; ky < 3; ++ky)
                    for (int kx = 0; kx < 3; ++kx) {
                        const Scalar wk = params_[woff + static_cast<size_t>(ky * 3 + kx)];
                        Scalar acc = 0;
                        for (int y = 0; y < s; ++y) {
                            const Scalar* row = in + (y + ky) * p + kx;
                            const Scalar* gr = g + y * s;
                            for (int x = 0; x < s; ++x) acc += gr[x] * row[x];
                            if (din) {
                                Scalar* drow = din + (y + ky) * p + kx;
                                for (int x = 0; x < s; ++x) drow[x] += wk * gr[x];
                            }
                        }
                        param_grad[woff + static_cast<size_t>(ky * 3 + kx)] += acc;
                    }
            }
        }
    }

    static void pool_forward(int channels, int s, const std::vector<Scalar>& in, std::vector<Scalar>& out,
                             std::vector<std::int32_t>& argmax) {
        const int h = s / 2;
        out.assign(static_cast<size_t>(channels) * h * h, Scalar(0));
        argmax.assign(out.size(), 0);
        for (int c = 0; c < channels; ++c)
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < h; ++j) {
                    std::int32_t best = (c * s + 2 * i) * s + 2 * j;
                    for (int di = 0; di < 2; ++di)
                        for (int dj = 0; dj < 2; ++dj) {
                            const std::int32_t k = (c * s + 2 * i + di) * s + 2 * j + dj;
                            if (in[static_cast<size_t>(k)] > in[static_cast<size_t>(best)]) best = k;
                        }
                    const size_t o = (static_cast<size_t>(c) * h + i) * h + j;
                    out[o] = in[static_cast<size_t>(best)];
                    argmax[o] = best;
                }
    }

    static void pad_into(const std::vector<Scalar>& in, int channels, int s, std::vector<Scalar>& out) {
        const int p = s + 2;
        out.assign(static_cast<size_t>(channels) * p * p, Scalar(0));
        for (int c = 0; c < channels; ++c)
            for (int i = 0; i < s; ++i)
                std::copy_n(&in[(static_cast<size_t>(c) * s + i) * s], s, &out[(static_cast<size_t>(c) * p + i + 1) * p + 1]);
    }

    PredictorOutput decode(const std::vector<std::vector<Scalar>>& outputs) const {
        PredictorOutput out;
        out.representation = arch_.representation;
        for (size_t h = 0; h < heads_.size(); ++h) {
            const auto& v = outputs[h];
            switch (heads_[h].kind) {
                case HeadKind::Translation: out.t = {double(v[0]), double(v[1]), double(v[2])}; break;
                case HeadKind::Rotation:
                    switch (arch_.representation) {
                        case Representation::Quat: std::copy(v.begin(), v.end(), out.q_raw.begin()); break;
                        case Representation::Euler: std::copy(v.begin(), v.end(), out.euler_rad.begin()); break;
                        case Representation::Matrix: std::copy(v.begin(), v.end(), out.r_raw.begin()); break;
                        case Representation::Anchors: std::copy(v.begin(), v.end(), out.anchors_raw.begin()); break;
                    }
                    break;
                case HeadKind::P: out.P = softmax(to_array6(v)); break;
                case HeadKind::Q: out.Q = softmax(to_array6(v)); break;
            }
        }
        if (arch_.representation == Representation::Anchors) {
            // Translation of an anchor prediction is its centre point.
            out.t = {out.anchors_raw[0], out.anchors_raw[1], out.anchors_raw[2]};
        }
        return out;
    }

    static std::array<Scalar, 6> to_array6(const std::vector<Scalar>& v) {
        std::array<Scalar, 6> a{};
        std::copy_n(v.begin(), 6, a.begin());
        return a;
    }

    std::vector<Scalar> head_gradient(const Head& head, const OutputGradient& g) const {
        std::vector<Scalar> d(static_cast<size_t>(head.out));
        const double* src = nullptr;
        switch (head.kind) {
            case HeadKind::Translation: src = g.t.data(); break;
            case HeadKind::Rotation: src = g.rotation.data(); break;
            case HeadKind::P: src = g.p_logits.data(); break;
            case HeadKind::Q: src = g.q_logits.data(); break;
        }
        for (size_t i = 0; i < d.size(); ++i) d[i] = static_cast<Scalar>(src[i]);
        return d;
    }

    Architecture arch_;
    std::array<ConvLayer, kConvStages> conv_{};
    std::vector<Head> heads_;
    std::vector<Scalar> params_;
};

/// Adapts a trained regressor to the Predictor interface.
class ModelPredictor : public Predictor {
public:
    explicit ModelPredictor(Regressor<float> model) : model_(std::move(model)) {}

    InputMode input_mode() const override {
        return model_.architecture().in_channels == 3 ? InputMode::Triplet : InputMode::Single;
    }

    PredictorOutput predict(const PredictionContext& ctx) const override { return model_.forward(ctx.images); }

    const Regressor<float>& model() const { return model_; }

private:
    Regressor<float> model_;
};

// ---------------------------------------------------------------------------
// Checkpoint format (little-endian):
//   "ITNM" | u8 version=1 | u8 representation | u8 head flags (1=P, 2=Q, 4=triplet)
//   | u8 in_channels | u32 input_size | u32 head_width | u32 channels[5]
//   | u32 n + n bytes layer description | u64 parameter count | f32 parameters

inline constexpr std::uint8_t kCheckpointVersion = 1;
inline constexpr const char* kLayerDescription = "conv3x3-same,relu,maxpool2x2;fc-relu-fc;softmax(P,Q)";

namespace detail {

template <typename T>
void put_le(std::ostream& out, T v) {
    static_assert(std::is_integral_v<T>);
    for (size_t i = 0; i < sizeof(T); ++i) out.put(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(std::istream& in) {
    std::uint64_t v = 0;
    for (size_t i = 0; i < sizeof(T); ++i) {
        const int c = in.get();
        if (c == EOF) throw Error(ErrorKind::Io, "truncated checkpoint");
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return static_cast<T>(v);
}

}  // namespace detail

inline void save_checkpoint(const Regressor<float>& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
    const Architecture& a = model.architecture();
    out.write("ITNM", 4);
    detail::put_le<std::uint8_t>(out, kCheckpointVersion);
    detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(a.representation));
    detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>((a.heads.p ? 1 : 0) | (a.heads.q ? 2 : 0) | (a.heads.triplet ? 4 : 0)));
    detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(a.in_channels));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.input_size));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.head_width));
    for (int c : a.channels) detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(c));
    const std::string desc = kLayerDescription;
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(desc.size()));
    out.write(desc.data(), static_cast<std::streamsize>(desc.size()));
    detail::put_le<std::uint64_t>(out, model.parameter_count());
    for (float v : model.parameters()) detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
    if (!out) throw Error(ErrorKind::Io, "short write to " + path.string());
}

inline Regressor<float> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot read checkpoint " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "ITNM", 4) != 0) throw Error(ErrorKind::Io, "not an ITNM checkpoint: " + path.string());
    if (detail::get_le<std::uint8_t>(in) != kCheckpointVersion) throw Error(ErrorKind::Io, "unsupported checkpoint version");
    Architecture a;
    const auto rep = detail::get_le<std::uint8_t>(in);
    if (rep > 3) throw Error(ErrorKind::Io, "bad representation byte");
    a.representation = static_cast<Representation>(rep);
    const auto flags = detail::get_le<std::uint8_t>(in);
    a.heads = {(flags & 1) != 0, (flags & 2) != 0, (flags & 4) != 0};
    a.in_channels = detail::get_le<std::uint8_t>(in);
    a.input_size = static_cast<int>(detail::get_le<std::uint32_t>(in));
    a.head_width = static_cast<int>(detail::get_le<std::uint32_t>(in));
    for (int& c : a.channels) c = static_cast<int>(detail::get_le<std::uint32_t>(in));
    const auto desc_len = detail::get_le<std::uint32_t>(in);
    std::string desc(desc_len, '\0');
    in.read(desc.data(), desc_len);
    if (!in || desc != kLayerDescription) throw Error(ErrorKind::Io, "unknown layer description '" + desc + "'");
    Regressor<float> model(a);
    if (detail::get_le<std::uint64_t>(in) != model.parameter_count()) {
        throw Error(ErrorKind::Io, "parameter count does not match architecture");
    }
    for (float& v : model.parameters()) v = std::bit_cast<float>(detail::get_le<std::uint32_t>(in));
    return model;
}

}  // namespace itn
