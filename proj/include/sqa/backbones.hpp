#pragma once

#include <array>

#include "sqa/layers.hpp"

namespace sqa {

struct FeatureStageSpec {
    std::int64_t downscale = 1;
    std::int64_t channels = 0;
};

// Exactly four stage maps with a declared (downscale, channels) contract.
struct FeaturePyramid {
    std::array<FTensor, 4> stages;
    std::array<FeatureStageSpec, 4> spec;

    // Verifies every stage honors its declared contract for the given input
    // extents; throws ShapeError naming the stage otherwise.
    void validate(std::int64_t input_h, std::int64_t input_w) const;
};

// ---------------------------------------------------------------------------
// Trainable 4-channel residual encoder (image + segmentation mask input).
// ---------------------------------------------------------------------------

struct ResNetLiteConfig {
    std::int64_t in_channels = 4;
    std::int64_t base_width = 64;  // stage channels (w, 2w, 4w, 8w)
    int blocks_per_stage = 2;
};

struct BasicBlock {
    ConvLayer conv1, conv2;
    BatchNormLayer bn1, bn2;
    bool has_down = false;
    ConvLayer down_conv;
    BatchNormLayer down_bn;

    void init(Rng& rng, std::int64_t cin, std::int64_t cout, int stride);
    FTensor forward(FTape* tape, const FTensor& x, bool training) const;
    void collect(const std::string& prefix, ParamCollector& pc) const;
};

struct ResNetLite {
    ResNetLiteConfig cfg;
    ConvLayer stem;
    BatchNormLayer stem_bn;
    std::vector<std::vector<BasicBlock>> stages;

    void init(Rng& rng, const ResNetLiteConfig& config);
    // input [B,4,H,W] with H,W divisible by 32 and the mask channel in {0,1};
    // emits stages at 1/4, 1/8, 1/16, 1/32.
    FeaturePyramid forward(FTape* tape, const FTensor& x, bool training) const;
    void collect(const std::string& prefix, ParamCollector& pc) const;
};

// ---------------------------------------------------------------------------
// Frozen transformer encoder standing in for a pretrained image backbone.
// ---------------------------------------------------------------------------

struct ViTLiteConfig {
    std::int64_t embed_dim = 96;
    int heads = 4;
    int depth = 8;
    int patch = 16;
    std::int64_t img_size = 64;  // canonical grid for the positional table
    double mlp_ratio = 4.0;
    std::array<int, 4> taps{0, 0, 0, 0};  // zeros mean depth/4 .. depth

    std::array<int, 4> resolved_taps() const;
};

struct VitBlock {
    LayerNormLayer ln1, ln2;
    MhsaParams<float> attn;
    LinearLayer fc1, fc2;

    void init(Rng& rng, std::int64_t d, std::int64_t hidden);
    FTensor forward(FTape* tape, const FTensor& x, int heads) const;
    void collect(const std::string& prefix, ParamCollector& pc) const;
};

struct ViTLite {
    ViTLiteConfig cfg;
    ConvLayer patch_embed;
    FTensor pos_embed;  // [1, tokens, D]
    std::vector<VitBlock> blocks;

    // image [B,3,H,W], H and W divisible by the patch size; pos table is
    // interpolated when the token grid differs from the canonical one
    FTensor embed_tokens(FTape* tape, const FTensor& image) const;
    // all four stages at 1/patch scale, D channels, tapped mid-depth
    FeaturePyramid forward(FTape* tape, const FTensor& image) const;
    void collect(const std::string& prefix, ParamCollector& pc) const;
};

// Deterministic frozen stand-in generated from the seed; every parameter is
// excluded from gradient flow and optimizer updates.
ViTLite init_frozen_vit(std::uint64_t seed, const ViTLiteConfig& config);

}  // namespace sqa
