#include "sqa/decoder.hpp"

namespace sqa {

void validate_binary_mask(const FTensor& mask) {
    for (float v : mask->data)
        if (v != 0.0f && v != 1.0f)
            throw UsageError("segmentation mask values must be exactly 0 or 1, got " +
                             std::to_string(v));
}

void SegFeatureNet::init(Rng& rng, std::int64_t in_ch, std::int64_t base_width) {
    in_channels = in_ch;
    Conv2dSpec s;
    s.stride = 2;
    s.padding = 1;
    const std::int64_t half = std::max<std::int64_t>(1, base_width / 2);
    conv0.init(rng, half, in_ch, 3, false, s);
    bn0.init(half);
    conv1.init(rng, base_width, half, 3, false, s);
    bn1.init(base_width);
    conv2.init(rng, base_width * 2, base_width, 3, false, s);
    bn2.init(base_width * 2);
    conv3.init(rng, base_width * 4, base_width * 2, 3, false, s);
    bn3.init(base_width * 4);
}

SegFeatureSet SegFeatureNet::forward(FTape* tape, const FTensor& x, bool training) const {
    if (x->rank() != 4 || x->dim(1) != in_channels)
        throw ShapeError("segmentation branch expects " + std::to_string(in_channels) +
                         " channels, got " + shape_str<float>(x->dims));
    if (x->dim(2) % 16 != 0 || x->dim(3) % 16 != 0)
        throw ShapeError("segmentation branch input extents must be divisible by 16");
    SegFeatureSet out;
    auto y = relu(tape, bn0.forward(tape, conv0.forward(tape, x), training));
    out.s1 = relu(tape, bn1.forward(tape, conv1.forward(tape, y), training));
    out.s2 = relu(tape, bn2.forward(tape, conv2.forward(tape, out.s1), training));
    out.s3 = relu(tape, bn3.forward(tape, conv3.forward(tape, out.s2), training));
    return out;
}

void SegFeatureNet::collect(const std::string& prefix, ParamCollector& pc) const {
    conv0.collect(prefix + ".conv0", pc);
    bn0.collect(prefix + ".bn0", pc);
    conv1.collect(prefix + ".conv1", pc);
    bn1.collect(prefix + ".bn1", pc);
    conv2.collect(prefix + ".conv2", pc);
    bn2.collect(prefix + ".bn2", pc);
    conv3.collect(prefix + ".conv3", pc);
    bn3.collect(prefix + ".bn3", pc);
}

void CsamBlock::init(Rng& rng, std::int64_t channels, std::int64_t squeeze_ratio,
                     int spatial_kernel) {
    const std::int64_t squeezed = std::max<std::int64_t>(1, channels / squeeze_ratio);
    w.mlp_w1 = he_conv_weight(rng, squeezed, channels, 1, false);
    w.mlp_b1 = make_tensor<float>({squeezed}, true);
    w.mlp_w2 = he_conv_weight(rng, channels, squeezed, 1, false);
    w.mlp_b2 = make_tensor<float>({channels}, true);
    w.spatial_w = he_conv_weight(rng, 1, 2, spatial_kernel, false);
    w.spatial_b = make_tensor<float>({1}, true);
}

void CsamBlock::collect(const std::string& prefix, ParamCollector& pc) const {
    pc.param(prefix + ".mlp.w1", w.mlp_w1);
    pc.param(prefix + ".mlp.b1", w.mlp_b1);
    pc.param(prefix + ".mlp.w2", w.mlp_w2);
    pc.param(prefix + ".mlp.b2", w.mlp_b2);
    pc.param(prefix + ".spatial.weight", w.spatial_w);
    pc.param(prefix + ".spatial.bias", w.spatial_b);
}

void AqsDecoder::init(Rng& rng, std::int64_t seg_in_channels, std::int64_t base_width) {
    seg.init(rng, seg_in_channels, base_width);
    enhance[0].init(rng, base_width);
    enhance[1].init(rng, base_width * 2);
    enhance[2].init(rng, base_width * 4);
    const std::int64_t cat_ch = base_width * 7;  // w + 2w + 4w
    Conv2dSpec s;
    s.padding = 1;
    head_conv.init(rng, base_width, cat_ch, 3, false, s);
    head_bn.init(base_width);
    head_out.init(rng, 3, base_width, 1, true, {});
}

std::array<FTensor, 3> AqsDecoder::multiscale_diff(FTape* tape, const SegFeatureSet& s,
                                                   const NeckOutput& n) {
    const std::array<FTensor, 3> seg{s.s1, s.s2, s.s3};
    std::array<FTensor, 3> out;
    for (std::size_t i = 0; i < 3; ++i) {
        if (seg[i]->dims != n.n[i]->dims)
            throw ShapeError("scale " + std::to_string(i + 1) + ": segmentation features " +
                             shape_str<float>(seg[i]->dims) + " do not match fusion features " +
                             shape_str<float>(n.n[i]->dims));
        out[i] = sub(tape, seg[i], n.n[i]);  // segmentation minus fusion
    }
    return out;
}

FTensor AqsDecoder::forward(FTape* tape, const FTensor& seg_input, const NeckOutput& n,
                            std::int64_t input_h, std::int64_t input_w, bool training) const {
    const auto s = seg.forward(tape, seg_input, training);
    auto d = multiscale_diff(tape, s, n);
    for (std::size_t i = 0; i < 3; ++i) d[i] = enhance[i].forward(tape, d[i]);

    const std::int64_t h1 = d[0]->dim(2), w1 = d[0]->dim(3);
    auto cat = concat<float>(tape,
                             {d[0], bilinear_resize(tape, d[1], h1, w1),
                              bilinear_resize(tape, d[2], h1, w1)},
                             1);
    auto y = relu(tape, head_bn.forward(tape, head_conv.forward(tape, cat), training));
    return bilinear_resize(tape, head_out.forward(tape, y), input_h, input_w);
}

void AqsDecoder::collect(const std::string& prefix, ParamCollector& pc) const {
    seg.collect(prefix + ".seg", pc);
    for (std::size_t i = 0; i < 3; ++i)
        enhance[i].collect(prefix + ".csam" + std::to_string(i + 1), pc);
    head_conv.collect(prefix + ".head.conv", pc);
    head_bn.collect(prefix + ".head.bn", pc);
    head_out.collect(prefix + ".head.out", pc);
}

void PlainHead::init(Rng& rng, std::int64_t cin) {
    Conv2dSpec s;
    s.padding = 1;
    conv.init(rng, cin, cin, 3, false, s);
    bn.init(cin);
    out.init(rng, 3, cin, 1, true, {});
}

FTensor PlainHead::forward(FTape* tape, const FTensor& n1, std::int64_t input_h,
                           std::int64_t input_w, bool training) const {
    auto y = relu(tape, bn.forward(tape, conv.forward(tape, n1), training));
    return bilinear_resize(tape, out.forward(tape, y), input_h, input_w);
}

void PlainHead::collect(const std::string& prefix, ParamCollector& pc) const {
    conv.collect(prefix + ".conv", pc);
    bn.collect(prefix + ".bn", pc);
    out.collect(prefix + ".out", pc);
}

}  // namespace sqa
