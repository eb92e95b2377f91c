#pragma once

#include "sqa/neck.hpp"

namespace sqa {

// Segmentation-branch features at 1/4, 1/8, 1/16, channel-matched to N1..N3.
struct SegFeatureSet {
    FTensor s1, s2, s3;
};

// Four 3x3 stride-2 conv stages over the segmentation result: the first two
// reach the 1/4 grid, the next two extend the ladder to 1/8 and 1/16.
struct SegFeatureNet {
    ConvLayer conv0, conv1, conv2, conv3;
    BatchNormLayer bn0, bn1, bn2, bn3;
    std::int64_t in_channels = 1;

    void init(Rng& rng, std::int64_t in_ch, std::int64_t base_width);
    SegFeatureSet forward(FTape* tape, const FTensor& x, bool training) const;
    void collect(const std::string& prefix, ParamCollector& pc) const;
};

struct CsamBlock {
    CsamWeights<float> w;

    void init(Rng& rng, std::int64_t channels, std::int64_t squeeze_ratio = 8,
              int spatial_kernel = 7);
    FTensor forward(FTape* tape, const FTensor& x) const { return csam(tape, x, w); }
    void collect(const std::string& prefix, ParamCollector& pc) const;
};

// Multi-scale differential decoder: difference the segmentation features
// against the fused maps at three scales, enhance each with channel-spatial
// attention, then resize, concatenate, and classify per pixel into
// {background, missed, mistaken}.
struct AqsDecoder {
    SegFeatureNet seg;
    std::array<CsamBlock, 3> enhance;
    ConvLayer head_conv, head_out;
    BatchNormLayer head_bn;

    void init(Rng& rng, std::int64_t seg_in_channels, std::int64_t base_width);
    // D_i = S_i - N_i, elementwise per scale
    static std::array<FTensor, 3> multiscale_diff(FTape* tape, const SegFeatureSet& s,
                                                  const NeckOutput& n);
    FTensor forward(FTape* tape, const FTensor& seg_input, const NeckOutput& n,
                    std::int64_t input_h, std::int64_t input_w, bool training) const;
    void collect(const std::string& prefix, ParamCollector& pc) const;
};

// Baseline classification head over N1 alone: 3x3 conv then 1x1 conv.
struct PlainHead {
    ConvLayer conv, out;
    BatchNormLayer bn;

    void init(Rng& rng, std::int64_t cin);
    FTensor forward(FTape* tape, const FTensor& n1, std::int64_t input_h, std::int64_t input_w,
                    bool training) const;
    void collect(const std::string& prefix, ParamCollector& pc) const;
};

// Throws UsageError unless every value is exactly 0 or 1.
void validate_binary_mask(const FTensor& mask);

}  // namespace sqa
