#pragma once

#include "sqa/backbones.hpp"

namespace sqa {

// Two 3x3 conv+bn stages with a 1x1 projection shortcut:
//   y = relu(bn1(conv1(x))); out = relu(bn2(conv2(y)) + proj(x))
struct FuseBlock {
    ConvLayer conv1, conv2, proj;
    BatchNormLayer bn1, bn2;

    void init(Rng& rng, std::int64_t cin, std::int64_t cout);
    FTensor forward(FTape* tape, const FTensor& x, bool training) const;
    void collect(const std::string& prefix, ParamCollector& pc) const;
};

// Parallel context branches over the deepest stage: a 1x1 conv, three dilated
// 3x3 convs, and a global-pooling branch, concatenated and merged back to the
// input channel count by a 1x1 conv. Spatial extent is always preserved;
// dilation rates clamp down on tiny maps.
struct AsppModule {
    ConvLayer entry;                 // 1x1
    std::array<ConvLayer, 3> dilated;
    ConvLayer pool_proj;             // 1x1 after global pooling
    ConvLayer merge;                 // 1x1 back to input channels
    std::array<int, 3> rates{6, 12, 18};

    void init(Rng& rng, std::int64_t channels, std::int64_t branch_channels);
    FTensor forward(FTape* tape, const FTensor& x) const;
    // rate actually applied for a given spatial extent
    static int clamped_rate(int rate, std::int64_t h, std::int64_t w);
    void collect(const std::string& prefix, ParamCollector& pc) const;
};

// Fused maps N1..N4 at scales 1/4, 1/8, 1/16, 1/16 with the stage channel
// ladder, plus full-resolution auxiliary logits when enabled.
struct NeckOutput {
    std::array<FTensor, 4> n;
};

struct FusionNeckConfig {
    bool pretrained_fusion = true;
    std::int64_t vit_dim = 96;
    std::int64_t vit_patch = 16;
    std::array<std::int64_t, 4> stage_channels{64, 128, 256, 512};
};

struct FusionNeck {
    FusionNeckConfig cfg;
    std::array<ConvLayer, 4> align;  // 1x1 vit-dim -> stage channels (fusion only)
    std::array<FuseBlock, 4> fuse;
    AsppModule aspp;
    std::array<FuseBlock, 3> topdown;  // builds N3, N2, N1

    void init(Rng& rng, const FusionNeckConfig& config);

    // stage_index in 1..4. Stages 1-3 align+resize the frozen-backbone map to
    // the trainable stage's extent; stage 4 resizes the trainable map up to
    // the frozen backbone's 1/16 extent. vit_stage may be null when the
    // fusion branch is disabled.
    FTensor align_and_fuse_stage(FTape* tape, const FTensor& resnet_stage,
                                 const FTensor& vit_stage, int stage_index,
                                 std::int64_t input_h, std::int64_t input_w,
                                 bool training) const;

    NeckOutput forward(FTape* tape, const FeaturePyramid& resnet_pyr,
                       const FeaturePyramid* vit_pyr, std::int64_t input_h,
                       std::int64_t input_w, bool training) const;
    void collect(const std::string& prefix, ParamCollector& pc) const;
};

// 1x1 conv to 3 classes plus upsampling to the input resolution.
struct AuxHead {
    ConvLayer conv;

    void init(Rng& rng, std::int64_t cin);
    FTensor forward(FTape* tape, const FTensor& feat, std::int64_t input_h,
                    std::int64_t input_w) const;
    void collect(const std::string& prefix, ParamCollector& pc) const;
};

}  // namespace sqa
