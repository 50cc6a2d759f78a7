#pragma once

#include "uda/ops.hpp"

namespace uda {

// conv (or transposed conv) weights plus the instance-norm affine pair
template <class T>
struct ConvBlock {
    Tensor<T> w, b;
    Tensor<T> gamma, beta;  // null when the block has no normalization
    bool has_norm = true;
};

template <class T>
ConvBlock<T> make_conv_block(std::vector<int> wshape, int out_ch, int norm_ch, Rng& rng,
                             bool has_norm = true) {
    ConvBlock<T> blk;
    blk.w = randn<T>(std::move(wshape), rng, 0.0, 0.02, true);
    blk.b = zeros<T>({out_ch}, true);
    blk.has_norm = has_norm;
    if (has_norm) {
        blk.gamma = full<T>({norm_ch}, T(1), true);
        blk.beta = zeros<T>({norm_ch}, true);
    }
    return blk;
}

template <class T>
void append_block_params(std::vector<Tensor<T>>& out, const ConvBlock<T>& blk) {
    out.push_back(blk.w);
    out.push_back(blk.b);
    if (blk.has_norm) {
        out.push_back(blk.gamma);
        out.push_back(blk.beta);
    }
}

struct GeneratorConfig {
    int in_channels = 3;
    int out_channels = 3;
    int base_width = 64;  // ladder base_width -> 2w -> 4w -> 8w
    double dropout_p = 0.5;
};

// U-Net style encoder-decoder: 4 stride-2 down blocks, 4 stride-2 up blocks,
// skip concatenation between mirrored stages, 1x1 conv + tanh head.
template <class T>
struct GeneratorParams {
    GeneratorConfig cfg;
    std::vector<ConvBlock<T>> down;  // 4 blocks
    std::vector<ConvBlock<T>> up;    // 4 blocks
    Tensor<T> head_w, head_b;

    std::vector<Tensor<T>> parameters() const {
        std::vector<Tensor<T>> ps;
        for (const auto& b : down) append_block_params(ps, b);
        for (const auto& b : up) append_block_params(ps, b);
        ps.push_back(head_w);
        ps.push_back(head_b);
        return ps;
    }
};

template <class T>
GeneratorParams<T> init_generator(const GeneratorConfig& cfg, uint64_t seed) {
    if (cfg.in_channels < 1 || cfg.out_channels < 1 || cfg.base_width < 1)
        throw ParamError("init_generator: channel counts and base width must be >= 1");
    if (cfg.dropout_p < 0.0 || cfg.dropout_p >= 1.0)
        throw ParamError("init_generator: dropout_p must be in [0, 1)");
    Rng rng(seed);
    GeneratorParams<T> p;
    p.cfg = cfg;
    int w = cfg.base_width;
    int down_in[4] = {cfg.in_channels, w, 2 * w, 4 * w};
    int down_out[4] = {w, 2 * w, 4 * w, 8 * w};
    for (int i = 0; i < 4; ++i)
        p.down.push_back(make_conv_block<T>({down_out[i], down_in[i], 4, 4}, down_out[i], down_out[i], rng));
    // decoder inputs include the concatenated skip channels
    int up_in[4] = {8 * w, 8 * w, 4 * w, 2 * w};
    int up_out[4] = {4 * w, 2 * w, w, w};
    for (int i = 0; i < 4; ++i)
        p.up.push_back(make_conv_block<T>({up_in[i], up_out[i], 4, 4}, up_out[i], up_out[i], rng));
    p.head_w = randn<T>({cfg.out_channels, w, 1, 1}, rng, 0.0, 0.02, true);
    p.head_b = zeros<T>({cfg.out_channels}, true);
    return p;
}

template <class T>
Tensor<T> generator_forward(const GeneratorParams<T>& p, const Tensor<T>& x, bool training,
                            Rng& rng) {
    if (x->shape.size() != 4) throw ShapeError("generator_forward: input must be NCHW");
    if (x->shape[1] != p.cfg.in_channels)
        throw ShapeError("generator_forward: expected " + std::to_string(p.cfg.in_channels) +
                         " input channels, got " + std::to_string(x->shape[1]));
    if (x->shape[2] % 16 != 0 || x->shape[3] % 16 != 0)
        throw ShapeError("generator_forward: H and W must be divisible by 16 (four stride-2 stages), got " +
                         shape_str(x->shape));
    const T alpha = T(0.2);
    std::vector<Tensor<T>> skips;
    Tensor<T> h = x;
    for (int i = 0; i < 4; ++i) {
        h = conv2d(h, p.down[i].w, p.down[i].b, 2, 1);
        h = instance_norm(h, 1e-5, p.down[i].gamma, p.down[i].beta);
        h = leaky_relu(h, alpha);
        skips.push_back(h);
    }
    Tensor<T> u = skips[3];
    for (int i = 0; i < 4; ++i) {
        u = conv_transpose2d(u, p.up[i].w, p.up[i].b, 2, 1);
        u = instance_norm(u, 1e-5, p.up[i].gamma, p.up[i].beta);
        u = relu(u);
        if (i < 3) {
            if (training && p.cfg.dropout_p > 0.0) u = dropout(u, p.cfg.dropout_p, true, rng);
            u = concat_channels(u, skips[2 - i]);
        }
    }
    u = conv2d(u, p.head_w, p.head_b, 1, 0);
    return tanh_(u);
}

struct DiscriminatorConfig {
    int in_channels = 3;
    int base_width = 64;  // ladder w, 2w, 4w, 4w, 4w; feature vector length 4w
};

// 5 stride-2 convs, instance norm on every layer except the first, global
// average pool to the feature vector, affine head to 2 softmax logits.
template <class T>
struct DiscriminatorParams {
    DiscriminatorConfig cfg;
    std::vector<ConvBlock<T>> blocks;  // 5 blocks
    Tensor<T> head_w, head_b;

    int feature_size() const { return 4 * cfg.base_width; }

    std::vector<Tensor<T>> parameters() const {
        std::vector<Tensor<T>> ps;
        for (const auto& b : blocks) append_block_params(ps, b);
        ps.push_back(head_w);
        ps.push_back(head_b);
        return ps;
    }
};

template <class T>
DiscriminatorParams<T> init_discriminator(const DiscriminatorConfig& cfg, uint64_t seed) {
    if (cfg.in_channels < 1 || cfg.base_width < 1)
        throw ParamError("init_discriminator: channel counts must be >= 1");
    Rng rng(seed);
    DiscriminatorParams<T> p;
    p.cfg = cfg;
    int w = cfg.base_width;
    int chans[6] = {cfg.in_channels, w, 2 * w, 4 * w, 4 * w, 4 * w};
    for (int i = 0; i < 5; ++i)
        p.blocks.push_back(
            make_conv_block<T>({chans[i + 1], chans[i], 4, 4}, chans[i + 1], chans[i + 1], rng, i != 0));
    p.head_w = randn<T>({2, 4 * w}, rng, 0.0, 0.02, true);
    p.head_b = zeros<T>({2}, true);
    return p;
}

// Returns N x 2 probabilities; column 1 is the "real" probability.
template <class T>
Tensor<T> discriminator_forward(const DiscriminatorParams<T>& p, const Tensor<T>& x) {
    if (x->shape.size() != 4) throw ShapeError("discriminator_forward: input must be NCHW");
    if (x->shape[1] != p.cfg.in_channels)
        throw ShapeError("discriminator_forward: expected " + std::to_string(p.cfg.in_channels) +
                         " input channels, got " + std::to_string(x->shape[1]));
    if (x->shape[2] % 32 != 0 || x->shape[3] % 32 != 0)
        throw ShapeError("discriminator_forward: H and W must be divisible by 32 (five stride-2 stages), got " +
                         shape_str(x->shape));
    const T alpha = T(0.2);
    Tensor<T> h = x;
    for (const auto& blk : p.blocks) {
        h = conv2d(h, blk.w, blk.b, 2, 1);
        if (blk.has_norm) h = instance_norm(h, 1e-5, blk.gamma, blk.beta);
        h = leaky_relu(h, alpha);
    }
    h = global_avg_pool(h);
    h = linear(h, p.head_w, p.head_b);
    return softmax(h, 1);
}

struct SegmenterConfig {
    int in_channels = 3;
    int num_classes = 6;
    int base_width = 32;  // encoder ladder w, 2w, 4w
};

// Compact 3-stage encoder-decoder with skip connections; per-pixel class
// logits out, same spatial size as the input.
template <class T>
struct SegmenterParams {
    SegmenterConfig cfg;
    ConvBlock<T> enc1, enc2, enc3;
    ConvBlock<T> dec2, merge2, dec1, merge1;
    Tensor<T> head_w, head_b;

    std::vector<Tensor<T>> parameters() const {
        std::vector<Tensor<T>> ps;
        for (const auto* b : {&enc1, &enc2, &enc3, &dec2, &merge2, &dec1, &merge1})
            append_block_params(ps, *b);
        ps.push_back(head_w);
        ps.push_back(head_b);
        return ps;
    }
};

template <class T>
SegmenterParams<T> init_segmenter(const SegmenterConfig& cfg, uint64_t seed) {
    if (cfg.in_channels < 1 || cfg.num_classes < 2 || cfg.base_width < 1)
        throw ParamError("init_segmenter: need >=1 input channel, >=2 classes, base width >=1");
    Rng rng(seed);
    SegmenterParams<T> p;
    p.cfg = cfg;
    int w = cfg.base_width;
    p.enc1 = make_conv_block<T>({w, cfg.in_channels, 3, 3}, w, w, rng);
    p.enc2 = make_conv_block<T>({2 * w, w, 4, 4}, 2 * w, 2 * w, rng);
    p.enc3 = make_conv_block<T>({4 * w, 2 * w, 4, 4}, 4 * w, 4 * w, rng);
    p.dec2 = make_conv_block<T>({4 * w, 2 * w, 4, 4}, 2 * w, 2 * w, rng);    // transposed
    p.merge2 = make_conv_block<T>({2 * w, 4 * w, 3, 3}, 2 * w, 2 * w, rng);
    p.dec1 = make_conv_block<T>({2 * w, w, 4, 4}, w, w, rng);                // transposed
    p.merge1 = make_conv_block<T>({w, 2 * w, 3, 3}, w, w, rng);
    p.head_w = randn<T>({cfg.num_classes, w, 1, 1}, rng, 0.0, 0.02, true);
    p.head_b = zeros<T>({cfg.num_classes}, true);
    return p;
}

template <class T>
Tensor<T> segmenter_forward(const SegmenterParams<T>& p, const Tensor<T>& x) {
    if (x->shape.size() != 4) throw ShapeError("segmenter_forward: input must be NCHW");
    if (x->shape[1] != p.cfg.in_channels)
        throw ShapeError("segmenter_forward: expected " + std::to_string(p.cfg.in_channels) +
                         " input channels, got " + std::to_string(x->shape[1]));
    if (x->shape[2] % 4 != 0 || x->shape[3] % 4 != 0)
        throw ShapeError("segmenter_forward: H and W must be divisible by 4, got " + shape_str(x->shape));
    auto block = [](const Tensor<T>& in, const ConvBlock<T>& b, int stride, int pad) {
        auto h = conv2d(in, b.w, b.b, stride, pad);
        h = instance_norm(h, 1e-5, b.gamma, b.beta);
        return relu(h);
    };
    auto e1 = block(x, p.enc1, 1, 1);
    auto e2 = block(e1, p.enc2, 2, 1);
    auto e3 = block(e2, p.enc3, 2, 1);

    auto d2 = conv_transpose2d(e3, p.dec2.w, p.dec2.b, 2, 1);
    d2 = relu(instance_norm(d2, 1e-5, p.dec2.gamma, p.dec2.beta));
    auto m2 = block(concat_channels(d2, e2), p.merge2, 1, 1);

    auto d1 = conv_transpose2d(m2, p.dec1.w, p.dec1.b, 2, 1);
    d1 = relu(instance_norm(d1, 1e-5, p.dec1.gamma, p.dec1.beta));
    auto m1 = block(concat_channels(d1, e1), p.merge1, 1, 1);

    return conv2d(m1, p.head_w, p.head_b, 1, 0);
}

template <class T>
size_t count_params(const std::vector<Tensor<T>>& ps) {
    size_t n = 0;
    for (const auto& p : ps) n += p->size();
    return n;
}

}  // namespace uda
