#include "sqa/neck.hpp"

namespace sqa {

void FuseBlock::init(Rng& rng, std::int64_t cin, std::int64_t cout) {
    Conv2dSpec s;
    s.padding = 1;
    conv1.init(rng, cout, cin, 3, false, s);
    bn1.init(cout);
    conv2.init(rng, cout, cout, 3, false, s);
    bn2.init(cout);
    proj.init(rng, cout, cin, 1, true, {});
}

FTensor FuseBlock::forward(FTape* tape, const FTensor& x, bool training) const {
    auto y = relu(tape, bn1.forward(tape, conv1.forward(tape, x), training));
    y = bn2.forward(tape, conv2.forward(tape, y), training);
    return relu(tape, add(tape, y, proj.forward(tape, x)));
}

void FuseBlock::collect(const std::string& prefix, ParamCollector& pc) const {
    conv1.collect(prefix + ".conv1", pc);
    bn1.collect(prefix + ".bn1", pc);
    conv2.collect(prefix + ".conv2", pc);
    bn2.collect(prefix + ".bn2", pc);
    proj.collect(prefix + ".proj", pc);
}

void AsppModule::init(Rng& rng, std::int64_t channels, std::int64_t branch_channels) {
    entry.init(rng, branch_channels, channels, 1, true, {});
    for (auto& c : dilated) c.init(rng, branch_channels, channels, 3, true, {});
    pool_proj.init(rng, branch_channels, channels, 1, true, {});
    merge.init(rng, channels, branch_channels * 5, 1, true, {});
}

int AsppModule::clamped_rate(int rate, std::int64_t h, std::int64_t w) {
    const std::int64_t cap = std::max<std::int64_t>(1, std::min(h, w) - 1);
    return int(std::min<std::int64_t>(rate, cap));
}

FTensor AsppModule::forward(FTape* tape, const FTensor& x) const {
    const std::int64_t h = x->dim(2), w = x->dim(3);
    std::vector<FTensor> branches;
    branches.push_back(relu(tape, entry.forward(tape, x)));
    for (std::size_t i = 0; i < dilated.size(); ++i) {
        Conv2dSpec s;
        s.dilation = clamped_rate(rates[i], h, w);
        s.padding = s.dilation;  // extent-preserving for a 3x3 kernel
        branches.push_back(relu(tape, dilated[i].forward(tape, x, s)));
    }
    auto pooled = relu(tape, pool_proj.forward(tape, global_avg_pool(tape, x)));
    branches.push_back(bilinear_resize(tape, pooled, h, w));
    return merge.forward(tape, concat(tape, branches, 1));
}

void AsppModule::collect(const std::string& prefix, ParamCollector& pc) const {
    entry.collect(prefix + ".entry", pc);
    for (std::size_t i = 0; i < dilated.size(); ++i)
        dilated[i].collect(prefix + ".dilated" + std::to_string(i), pc);
    pool_proj.collect(prefix + ".pool", pc);
    merge.collect(prefix + ".merge", pc);
}

void FusionNeck::init(Rng& rng, const FusionNeckConfig& config) {
    cfg = config;
    for (int i = 0; i < 4; ++i) {
        const std::int64_t c = cfg.stage_channels[std::size_t(i)];
        if (cfg.pretrained_fusion) align[std::size_t(i)].init(rng, c, cfg.vit_dim, 1, true, {});
        fuse[std::size_t(i)].init(rng, cfg.pretrained_fusion ? 2 * c : c, c);
    }
    aspp.init(rng, cfg.stage_channels[3], std::max<std::int64_t>(1, cfg.stage_channels[3] / 4));
    for (int i = 0; i < 3; ++i) {
        // builds N_i from concat(upsampled N_{i+1}, fused_i)
        const std::int64_t cout = cfg.stage_channels[std::size_t(i)];
        const std::int64_t cin = cfg.stage_channels[std::size_t(i) + 1] + cout;
        topdown[std::size_t(i)].init(rng, cin, cout);
    }
}

FTensor FusionNeck::align_and_fuse_stage(FTape* tape, const FTensor& resnet_stage,
                                         const FTensor& vit_stage, int stage_index,
                                         std::int64_t input_h, std::int64_t input_w,
                                         bool training) const {
    if (stage_index < 1 || stage_index > 4)
        throw ConfigError("stage index must be in 1..4");
    if (vit_stage && resnet_stage->dim(0) != vit_stage->dim(0))
        throw ShapeError("stage " + std::to_string(stage_index) +
                         ": batch extents differ between backbones");
    const std::size_t i = std::size_t(stage_index - 1);

    FTensor trunk = resnet_stage;
    if (stage_index == 4)  // deepest trainable map rises to the 1/16 grid
        trunk = bilinear_resize(tape, trunk, input_h / cfg.vit_patch, input_w / cfg.vit_patch);

    if (!cfg.pretrained_fusion || !vit_stage)
        return fuse[i].forward(tape, trunk, training);

    auto aligned = align[i].forward(tape, vit_stage);
    aligned = bilinear_resize(tape, aligned, trunk->dim(2), trunk->dim(3));
    return fuse[i].forward(tape, concat<float>(tape, {trunk, aligned}, 1), training);
}

NeckOutput FusionNeck::forward(FTape* tape, const FeaturePyramid& resnet_pyr,
                               const FeaturePyramid* vit_pyr, std::int64_t input_h,
                               std::int64_t input_w, bool training) const {
    std::array<FTensor, 4> fused;
    for (int s = 1; s <= 4; ++s)
        fused[std::size_t(s - 1)] = align_and_fuse_stage(
            tape, resnet_pyr.stages[std::size_t(s - 1)],
            vit_pyr ? vit_pyr->stages[std::size_t(s - 1)] : nullptr, s, input_h, input_w,
            training);

    NeckOutput out;
    out.n[3] = aspp.forward(tape, fused[3]);
    for (int s = 3; s >= 1; --s) {
        auto up = bilinear_resize(tape, out.n[std::size_t(s)], fused[std::size_t(s - 1)]->dim(2),
                                  fused[std::size_t(s - 1)]->dim(3));
        out.n[std::size_t(s - 1)] = topdown[std::size_t(s - 1)].forward(
            tape, concat<float>(tape, {up, fused[std::size_t(s - 1)]}, 1), training);
    }

    // scale/channel contract: 1/4, 1/8, 1/16, 1/16 ladder
    const std::array<std::int64_t, 4> scales{4, 8, 16, 16};
    for (std::size_t s = 0; s < 4; ++s) {
        const auto& t = out.n[s];
        if (t->dim(1) != cfg.stage_channels[s] || t->dim(2) != input_h / scales[s] ||
            t->dim(3) != input_w / scales[s])
            throw ShapeError("neck output N" + std::to_string(s + 1) + " is " +
                             shape_str<float>(t->dims) + " but the contract requires [B," +
                             std::to_string(cfg.stage_channels[s]) + "," +
                             std::to_string(input_h / scales[s]) + "," +
                             std::to_string(input_w / scales[s]) + "]");
    }
    return out;
}

void FusionNeck::collect(const std::string& prefix, ParamCollector& pc) const {
    for (std::size_t i = 0; i < 4; ++i) {
        if (cfg.pretrained_fusion)
            align[i].collect(prefix + ".align" + std::to_string(i + 1), pc);
        fuse[i].collect(prefix + ".fuse" + std::to_string(i + 1), pc);
    }
    aspp.collect(prefix + ".aspp", pc);
    for (std::size_t i = 0; i < 3; ++i)
        topdown[i].collect(prefix + ".topdown" + std::to_string(i + 1), pc);
}

void AuxHead::init(Rng& rng, std::int64_t cin) { conv.init(rng, 3, cin, 1, true, {}); }

FTensor AuxHead::forward(FTape* tape, const FTensor& feat, std::int64_t input_h,
                         std::int64_t input_w) const {
    return bilinear_resize(tape, conv.forward(tape, feat), input_h, input_w);
}

void AuxHead::collect(const std::string& prefix, ParamCollector& pc) const {
    conv.collect(prefix + ".conv", pc);
}

}  // namespace sqa
