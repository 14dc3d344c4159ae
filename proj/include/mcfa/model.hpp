#pragma once

// The three cascaded sub-networks. Each stage runs a VGG-16-style
// convolutional body (channel counts scaled by channel_scale), collapses the
// spatial extent by global average pooling, and exposes a "last shared
// feature" that feeds the stage's task heads, its dynamic-weight head and
// the next stage's concatenation:
//
//   S_Net  56x56   conv1_1..conv3_3            shared:  256s x 1 x 1
//   M_Net 112x112  conv1_1..conv4_3, fc 1024s  shared: 1024s + 256s  = 1280s
//   L_Net 224x224  conv1_1..conv5_3, fc 1024s  shared: 1024s + 1280s = 2304s
//
// After each shared feature, two identity-width layers (1x1 convolutions in
// S_Net, fully connected elsewhere) feed the per-task heads.

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcfa/dynamic_weighting.hpp"
#include "mcfa/tensor.hpp"

namespace mcfa {

struct ModelConfig {
    double channel_scale = 1.0;
    int num_attributes = 4;            // d
    int num_landmarks = 5;             // k
    std::array<int, 3> input_sides{224, 112, 56};
    int in_channels = 1;

    int scaled(int base) const {
        return static_cast<int>(std::lround(base * channel_scale));
    }

    void validate() const {
        if (channel_scale <= 0.0) throw std::invalid_argument("channel_scale must be positive");
        for (int base : {64, 128, 256, 512, 1024})
            if (scaled(base) < 1)
                throw std::invalid_argument("channel_scale " + std::to_string(channel_scale) +
                                            " rounds " + std::to_string(base) + " channels to zero");
        if (num_attributes < 1) throw std::invalid_argument("num_attributes must be positive");
        if (num_landmarks < 1) throw std::invalid_argument("num_landmarks must be positive");
        if (in_channels != 1 && in_channels != 3)
            throw std::invalid_argument("in_channels must be 1 or 3");
        if (input_sides[0] != 2 * input_sides[1] || input_sides[1] != 2 * input_sides[2])
            throw std::invalid_argument("input_sides must halve: got " +
                                        std::to_string(input_sides[0]) + "," +
                                        std::to_string(input_sides[1]) + "," +
                                        std::to_string(input_sides[2]));
        if (input_sides[2] < 4 || input_sides[2] % 4 != 0)
            throw std::invalid_argument("smallest pyramid side must be a positive multiple of 4");
    }

    int shared_s_len() const { return scaled(256); }
    int shared_m_len() const { return scaled(1024) + scaled(256); }
    int shared_l_len() const { return scaled(1024) + shared_m_len(); }
};

struct ConvLayer {
    Tensor weight;  // [Cout, Cin, kh, kw]
    Tensor bias;    // [Cout]
};

struct DenseLayer {
    Tensor weight;  // [Din, Dout]
    Tensor bias;    // [Dout]
};

// Predictions of one sub-network for one sample; all graph tensors.
struct StageOutputs {
    Tensor face_prob;    // scalar in [0,1]
    Tensor box;          // [4]  (left, top, height, width), normalized units
    Tensor landmarks;    // [2k] normalized coordinates
    Tensor attr_logits;  // [2d] per-attribute (negative, positive) logit pairs
    Tensor dyn_weights;  // [d]  simplex vector from the dynamic-weight head
};

enum class ParamGroup {
    snet_body,
    mnet_body,
    lnet_body,
    snet_head_cls,
    snet_head_box,
    snet_head_landmark,
    snet_head_attr,
    mnet_head_cls,
    mnet_head_box,
    mnet_head_landmark,
    mnet_head_attr,
    lnet_head_cls,
    lnet_head_box,
    lnet_head_landmark,
    lnet_head_attr,
    snet_dyn,
    mnet_dyn,
    lnet_dyn,
};
inline constexpr int kNumParamGroups = 18;

inline const char* param_group_name(ParamGroup g) {
    static const char* names[] = {
        "snet_body",      "mnet_body",      "lnet_body",          "snet_head_cls",
        "snet_head_box",  "snet_head_landmark", "snet_head_attr", "mnet_head_cls",
        "mnet_head_box",  "mnet_head_landmark", "mnet_head_attr", "lnet_head_cls",
        "lnet_head_box",  "lnet_head_landmark", "lnet_head_attr", "snet_dyn",
        "mnet_dyn",       "lnet_dyn",
    };
    return names[static_cast<int>(g)];
}

namespace detail {

inline constexpr int kVggBlockChannels[5] = {64, 128, 256, 512, 512};
inline constexpr int kVggBlockConvs[5] = {2, 2, 3, 3, 3};

inline std::string vgg_conv_name(int block, int idx) {
    return "conv" + std::to_string(block + 1) + "_" + std::to_string(idx + 1);
}

}  // namespace detail

struct SnetParams {
    std::vector<ConvLayer> body;  // conv1_1 .. conv3_3
    ConvLayer post1, post2;       // identity-width 1x1 convolutions
    ConvLayer head_cls, head_box, head_landmark, head_attr;
    ConvLayer head_dyn;           // dynamic-weight head, 1x1 convolution form
};

struct DenseStageParams {
    std::vector<ConvLayer> body;  // conv1_1 .. conv4_3 / conv5_3
    DenseLayer fc_embed;          // GAP(512s) -> 1024s
    DenseLayer post1, post2;      // identity-width
    DenseLayer head_cls, head_box, head_landmark, head_attr;
    DynamicWeightHead head_dyn;
};

class McfaModel {
public:
    McfaModel() = default;

    McfaModel(const ModelConfig& config, std::uint64_t init_seed) : config_(config) {
        config_.validate();
        build();
        std::mt19937_64 rng(init_seed);
        for (auto& p : named_params())
            if (p.is_weight && !p.is_dyn_head) he_init(p.tensor, rng);
        // dynamic-weight heads stay zero so training starts from uniform weights
    }

    const ModelConfig& config() const { return config_; }

    struct NamedParam {
        std::string name;
        Tensor tensor;  // aliases the model's parameter storage
        ParamGroup group;
        bool is_weight;
        bool is_dyn_head;
    };

    // Deterministic enumeration of every learnable tensor.
    std::vector<NamedParam> named_params() {
        std::vector<NamedParam> out;
        auto add_conv = [&](const std::string& n, ConvLayer& l, ParamGroup g, bool dyn = false) {
            out.push_back({n + ".weight", l.weight, g, true, dyn});
            out.push_back({n + ".bias", l.bias, g, false, dyn});
        };
        auto add_dense = [&](const std::string& n, DenseLayer& l, ParamGroup g, bool dyn = false) {
            out.push_back({n + ".weight", l.weight, g, true, dyn});
            out.push_back({n + ".bias", l.bias, g, false, dyn});
        };

        int li = 0;
        for (int b = 0; b < 3; ++b)
            for (int i = 0; i < detail::kVggBlockConvs[b]; ++i, ++li)
                add_conv("snet." + detail::vgg_conv_name(b, i), snet.body[li], ParamGroup::snet_body);
        add_conv("snet.post1", snet.post1, ParamGroup::snet_body);
        add_conv("snet.post2", snet.post2, ParamGroup::snet_body);
        add_conv("snet.head_cls", snet.head_cls, ParamGroup::snet_head_cls);
        add_conv("snet.head_box", snet.head_box, ParamGroup::snet_head_box);
        add_conv("snet.head_landmark", snet.head_landmark, ParamGroup::snet_head_landmark);
        add_conv("snet.head_attr", snet.head_attr, ParamGroup::snet_head_attr);
        add_conv("snet.head_dyn", snet.head_dyn, ParamGroup::snet_dyn, true);

        auto add_dense_stage = [&](const std::string& prefix, DenseStageParams& s, int blocks,
                                   ParamGroup body, ParamGroup cls, ParamGroup box,
                                   ParamGroup landmark, ParamGroup attr, ParamGroup dyn) {
            int lj = 0;
            for (int b = 0; b < blocks; ++b)
                for (int i = 0; i < detail::kVggBlockConvs[b]; ++i, ++lj)
                    add_conv(prefix + "." + detail::vgg_conv_name(b, i), s.body[lj], body);
            add_dense(prefix + ".fc_embed", s.fc_embed, body);
            add_dense(prefix + ".post1", s.post1, body);
            add_dense(prefix + ".post2", s.post2, body);
            add_dense(prefix + ".head_cls", s.head_cls, cls);
            add_dense(prefix + ".head_box", s.head_box, box);
            add_dense(prefix + ".head_landmark", s.head_landmark, landmark);
            add_dense(prefix + ".head_attr", s.head_attr, attr);
            out.push_back({prefix + ".head_dyn.weight", s.head_dyn.weight, dyn, true, true});
            out.push_back({prefix + ".head_dyn.bias", s.head_dyn.bias, dyn, false, true});
        };
        add_dense_stage("mnet", mnet, 4, ParamGroup::mnet_body, ParamGroup::mnet_head_cls,
                        ParamGroup::mnet_head_box, ParamGroup::mnet_head_landmark,
                        ParamGroup::mnet_head_attr, ParamGroup::mnet_dyn);
        add_dense_stage("lnet", lnet, 5, ParamGroup::lnet_body, ParamGroup::lnet_head_cls,
                        ParamGroup::lnet_head_box, ParamGroup::lnet_head_landmark,
                        ParamGroup::lnet_head_attr, ParamGroup::lnet_dyn);
        return out;
    }

    void zero_grad() {
        for (auto& p : named_params()) p.tensor.zero_grad();
    }

    McfaModel clone() const {
        McfaModel c;
        c.config_ = config_;
        c.build();
        auto src = const_cast<McfaModel*>(this)->named_params();
        auto dst = c.named_params();
        for (std::size_t i = 0; i < src.size(); ++i)
            dst[i].tensor.values() = src[i].tensor.values();
        return c;
    }

    SnetParams snet;
    DenseStageParams mnet, lnet;

private:
    void build() {
        const int d = config_.num_attributes;
        const int k = config_.num_landmarks;

        auto conv = [&](int cout, int cin, int kh, int kw) {
            return ConvLayer{Tensor({cout, cin, kh, kw}), Tensor({cout})};
        };
        auto dense = [&](int din, int dout) {
            return DenseLayer{Tensor({din, dout}), Tensor({dout})};
        };
        auto body = [&](int blocks) {
            std::vector<ConvLayer> layers;
            int cin = config_.in_channels;
            for (int b = 0; b < blocks; ++b) {
                const int cout = config_.scaled(detail::kVggBlockChannels[b]);
                for (int i = 0; i < detail::kVggBlockConvs[b]; ++i) {
                    layers.push_back(conv(cout, cin, 3, 3));
                    cin = cout;
                }
            }
            return layers;
        };

        const int cs = config_.shared_s_len();
        snet.body = body(3);
        snet.post1 = conv(cs, cs, 1, 1);
        snet.post2 = conv(cs, cs, 1, 1);
        snet.head_cls = conv(2, cs, 1, 1);
        snet.head_box = conv(4, cs, 1, 1);
        snet.head_landmark = conv(2 * k, cs, 1, 1);
        snet.head_attr = conv(2 * d, cs, 1, 1);
        snet.head_dyn = conv(d, cs, 1, 1);

        auto dense_stage = [&](DenseStageParams& s, int blocks, int shared_len) {
            s.body = body(blocks);
            s.fc_embed = dense(config_.scaled(detail::kVggBlockChannels[blocks - 1]),
                               config_.scaled(1024));
            s.post1 = dense(shared_len, shared_len);
            s.post2 = dense(shared_len, shared_len);
            s.head_cls = dense(shared_len, 2);
            s.head_box = dense(shared_len, 4);
            s.head_landmark = dense(shared_len, 2 * k);
            s.head_attr = dense(shared_len, 2 * d);
            s.head_dyn = DynamicWeightHead{Tensor({shared_len, d}), Tensor({d})};
        };
        dense_stage(mnet, 4, config_.shared_m_len());
        dense_stage(lnet, 5, config_.shared_l_len());
    }

    static void he_init(Tensor& w, std::mt19937_64& rng) {
        int fan_in = 1;
        if (w.rank() == 4) fan_in = w.dim(1) * w.dim(2) * w.dim(3);
        else if (w.rank() == 2) fan_in = w.dim(0);
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
        for (auto& v : w.values()) v = dist(rng);
    }

    ModelConfig config_;
};

// ---------------------------------------------------------------------------
// Forward passes.

struct Pyramid {
    Tensor large, medium, small;
};

inline Pyramid build_pyramid(Graph& g, const ModelConfig& cfg, const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != cfg.in_channels ||
        image.dim(1) != cfg.input_sides[0] || image.dim(2) != cfg.input_sides[0])
        throw std::invalid_argument("build_pyramid: expected [" + std::to_string(cfg.in_channels) +
                                    "," + std::to_string(cfg.input_sides[0]) + "," +
                                    std::to_string(cfg.input_sides[0]) + "] image, got " +
                                    detail::shape_str(image.shape()));
    Pyramid p;
    p.large = image;
    p.medium = g.avg_pool2d(p.large, 2, 2);
    p.small = g.avg_pool2d(p.medium, 2, 2);
    return p;
}

namespace detail {

// VGG body: 3x3 stride-1 pad-1 convolutions with relu, 2x2 max pool between
// blocks, global average pool after the last block.
inline Tensor run_body(Graph& g, const std::vector<ConvLayer>& layers, int blocks, Tensor x) {
    int li = 0;
    for (int b = 0; b < blocks; ++b) {
        for (int i = 0; i < kVggBlockConvs[b]; ++i, ++li)
            x = g.relu(g.conv2d(x, layers[li].weight, layers[li].bias, 1, 1));
        if (b + 1 < blocks) x = g.max_pool2d(x, 2, 2);
    }
    return g.avg_pool2d(x, x.dim(1), 1);  // [C,1,1]
}

}  // namespace detail

inline std::pair<Tensor, StageOutputs> forward_snet(const McfaModel& m, Graph& g,
                                                    const Tensor& small_image) {
    const auto& cfg = m.config();
    if (small_image.rank() != 3 || small_image.dim(0) != cfg.in_channels ||
        small_image.dim(1) != cfg.input_sides[2] || small_image.dim(2) != cfg.input_sides[2])
        throw std::invalid_argument("forward_snet: image shape " +
                                    detail::shape_str(small_image.shape()) + " does not match config");
    Tensor shared = detail::run_body(g, m.snet.body, 3, small_image);  // [256s,1,1]

    Tensor t = g.relu(g.conv2d(shared, m.snet.post1.weight, m.snet.post1.bias, 1, 0));
    t = g.relu(g.conv2d(t, m.snet.post2.weight, m.snet.post2.bias, 1, 0));

    StageOutputs out;
    Tensor cls = g.flatten(g.conv2d(t, m.snet.head_cls.weight, m.snet.head_cls.bias, 1, 0));
    out.face_prob = g.slice(g.softmax(cls), 1, 1);
    out.box = g.flatten(g.conv2d(t, m.snet.head_box.weight, m.snet.head_box.bias, 1, 0));
    out.landmarks =
        g.flatten(g.conv2d(t, m.snet.head_landmark.weight, m.snet.head_landmark.bias, 1, 0));
    out.attr_logits = g.flatten(g.conv2d(t, m.snet.head_attr.weight, m.snet.head_attr.bias, 1, 0));
    out.dyn_weights = compute_weights_conv(g, m.snet.head_dyn.weight, m.snet.head_dyn.bias, shared);
    return {shared, out};
}

namespace detail {

inline StageOutputs dense_stage_heads(Graph& g, const DenseStageParams& s, const Tensor& shared) {
    Tensor t = g.relu(g.fully_connected(shared, s.post1.weight, s.post1.bias));
    t = g.relu(g.fully_connected(t, s.post2.weight, s.post2.bias));
    StageOutputs out;
    Tensor cls = g.fully_connected(t, s.head_cls.weight, s.head_cls.bias);
    out.face_prob = g.slice(g.softmax(cls), 1, 1);
    out.box = g.fully_connected(t, s.head_box.weight, s.head_box.bias);
    out.landmarks = g.fully_connected(t, s.head_landmark.weight, s.head_landmark.bias);
    out.attr_logits = g.fully_connected(t, s.head_attr.weight, s.head_attr.bias);
    out.dyn_weights = compute_weights(g, s.head_dyn, shared);
    return out;
}

}  // namespace detail

inline std::pair<Tensor, StageOutputs> forward_mnet(const McfaModel& m, Graph& g,
                                                    const Tensor& medium_image,
                                                    const Tensor& shared_s) {
    const auto& cfg = m.config();
    if (medium_image.rank() != 3 || medium_image.dim(1) != cfg.input_sides[1] ||
        medium_image.dim(2) != cfg.input_sides[1] || medium_image.dim(0) != cfg.in_channels)
        throw std::invalid_argument("forward_mnet: image shape " +
                                    detail::shape_str(medium_image.shape()) + " does not match config");
    if (static_cast<int>(shared_s.size()) != cfg.shared_s_len())
        throw std::invalid_argument("forward_mnet: shared_s length " +
                                    std::to_string(shared_s.size()) + " != " +
                                    std::to_string(cfg.shared_s_len()));
    Tensor gap = g.flatten(detail::run_body(g, m.mnet.body, 4, medium_image));  // [512s]
    Tensor embed = g.relu(g.fully_connected(gap, m.mnet.fc_embed.weight, m.mnet.fc_embed.bias));
    Tensor shared = g.concat(embed, g.flatten(shared_s));  // [1024s + 256s]
    return {shared, detail::dense_stage_heads(g, m.mnet, shared)};
}

inline std::pair<Tensor, StageOutputs> forward_lnet(const McfaModel& m, Graph& g,
                                                    const Tensor& large_image,
                                                    const Tensor& shared_m) {
    const auto& cfg = m.config();
    if (large_image.rank() != 3 || large_image.dim(1) != cfg.input_sides[0] ||
        large_image.dim(2) != cfg.input_sides[0] || large_image.dim(0) != cfg.in_channels)
        throw std::invalid_argument("forward_lnet: image shape " +
                                    detail::shape_str(large_image.shape()) + " does not match config");
    if (static_cast<int>(shared_m.size()) != cfg.shared_m_len())
        throw std::invalid_argument("forward_lnet: shared_m length " +
                                    std::to_string(shared_m.size()) + " != " +
                                    std::to_string(cfg.shared_m_len()));
    Tensor gap = g.flatten(detail::run_body(g, m.lnet.body, 5, large_image));  // [512s]
    Tensor embed = g.relu(g.fully_connected(gap, m.lnet.fc_embed.weight, m.lnet.fc_embed.bias));
    Tensor shared = g.concat(embed, shared_m);  // [1024s + 1280s]
    return {shared, detail::dense_stage_heads(g, m.lnet, shared)};
}

struct FullOutputs {
    StageOutputs s, m, l;
};

// Training-mode forward: all three stages, features forwarded, no gating.
inline FullOutputs forward_full(const McfaModel& m, Graph& g, const Tensor& image) {
    Pyramid pyr = build_pyramid(g, m.config(), image);
    auto [shared_s, out_s] = forward_snet(m, g, pyr.small);
    auto [shared_m, out_m] = forward_mnet(m, g, pyr.medium, shared_s);
    auto [shared_l, out_l] = forward_lnet(m, g, pyr.large, shared_m);
    (void)shared_l;
    return {out_s, out_m, out_l};
}

}  // namespace mcfa
