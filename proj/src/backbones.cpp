#include "sqa/backbones.hpp"

namespace sqa {

void FeaturePyramid::validate(std::int64_t input_h, std::int64_t input_w) const {
    for (std::size_t i = 0; i < 4; ++i) {
        const auto& t = stages[i];
        if (!t) throw ShapeError("pyramid stage " + std::to_string(i + 1) + " is missing");
        const std::int64_t want_h = input_h / spec[i].downscale;
        const std::int64_t want_w = input_w / spec[i].downscale;
        if (t->rank() != 4 || t->dim(1) != spec[i].channels || t->dim(2) != want_h ||
            t->dim(3) != want_w)
            throw ShapeError("pyramid stage " + std::to_string(i + 1) + " is " +
                             shape_str<float>(t->dims) + " but the contract requires [B," +
                             std::to_string(spec[i].channels) + "," + std::to_string(want_h) +
                             "," + std::to_string(want_w) + "]");
    }
}

// ---------------------------------------------------------------------------
// ResNet-lite
// ---------------------------------------------------------------------------

void BasicBlock::init(Rng& rng, std::int64_t cin, std::int64_t cout, int stride) {
    Conv2dSpec s1;
    s1.stride = stride;
    s1.padding = 1;
    conv1.init(rng, cout, cin, 3, false, s1);
    bn1.init(cout);
    Conv2dSpec s2;
    s2.padding = 1;
    conv2.init(rng, cout, cout, 3, false, s2);
    bn2.init(cout);
    has_down = stride != 1 || cin != cout;
    if (has_down) {
        Conv2dSpec sd;
        sd.stride = stride;
        down_conv.init(rng, cout, cin, 1, false, sd);
        down_bn.init(cout);
    }
}

FTensor BasicBlock::forward(FTape* tape, const FTensor& x, bool training) const {
    auto y = relu(tape, bn1.forward(tape, conv1.forward(tape, x), training));
    y = bn2.forward(tape, conv2.forward(tape, y), training);
    auto skip = has_down ? down_bn.forward(tape, down_conv.forward(tape, x), training) : x;
    return relu(tape, add(tape, y, skip));
}

void BasicBlock::collect(const std::string& prefix, ParamCollector& pc) const {
    conv1.collect(prefix + ".conv1", pc);
    bn1.collect(prefix + ".bn1", pc);
    conv2.collect(prefix + ".conv2", pc);
    bn2.collect(prefix + ".bn2", pc);
    if (has_down) {
        down_conv.collect(prefix + ".down.conv", pc);
        down_bn.collect(prefix + ".down.bn", pc);
    }
}

void ResNetLite::init(Rng& rng, const ResNetLiteConfig& config) {
    cfg = config;
    Conv2dSpec stem_spec;
    stem_spec.stride = 2;
    stem_spec.padding = 3;
    stem.init(rng, cfg.base_width, cfg.in_channels, 7, false, stem_spec);
    stem_bn.init(cfg.base_width);
    stages.assign(4, {});
    std::int64_t cin = cfg.base_width;
    for (int s = 0; s < 4; ++s) {
        const std::int64_t cout = cfg.base_width << s;
        for (int b = 0; b < cfg.blocks_per_stage; ++b) {
            BasicBlock blk;
            blk.init(rng, b == 0 ? cin : cout, cout, (s > 0 && b == 0) ? 2 : 1);
            stages[std::size_t(s)].push_back(std::move(blk));
        }
        cin = cout;
    }
}

FeaturePyramid ResNetLite::forward(FTape* tape, const FTensor& x, bool training) const {
    if (x->rank() != 4)
        throw ShapeError("backbone input must be [B,C,H,W], got " + shape_str<float>(x->dims));
    if (x->dim(1) != cfg.in_channels)
        throw ShapeError("encoder expects " + std::to_string(cfg.in_channels) +
                         " input channels (image plus segmentation mask), got " +
                         std::to_string(x->dim(1)));
    if (x->dim(2) % 32 != 0 || x->dim(3) % 32 != 0)
        throw ShapeError("encoder input extents must be divisible by 32, got " +
                         shape_str<float>(x->dims));

    auto y = relu(tape, stem_bn.forward(tape, stem.forward(tape, x), training));
    y = max_pool2d(tape, y, 3, 2, 1);

    FeaturePyramid pyr;
    for (int s = 0; s < 4; ++s) {
        for (const auto& blk : stages[std::size_t(s)]) y = blk.forward(tape, y, training);
        pyr.stages[std::size_t(s)] = y;
        pyr.spec[std::size_t(s)] = {std::int64_t(4) << s, cfg.base_width << s};
    }
    pyr.validate(x->dim(2), x->dim(3));
    return pyr;
}

void ResNetLite::collect(const std::string& prefix, ParamCollector& pc) const {
    stem.collect(prefix + ".stem.conv", pc);
    stem_bn.collect(prefix + ".stem.bn", pc);
    for (std::size_t s = 0; s < stages.size(); ++s)
        for (std::size_t b = 0; b < stages[s].size(); ++b)
            stages[s][b].collect(prefix + ".stage" + std::to_string(s + 1) + ".block" +
                                     std::to_string(b),
                                 pc);
}

// ---------------------------------------------------------------------------
// ViT-lite
// ---------------------------------------------------------------------------

std::array<int, 4> ViTLiteConfig::resolved_taps() const {
    std::array<int, 4> t = taps;
    if (t == std::array<int, 4>{0, 0, 0, 0})
        t = {depth / 4, depth / 2, 3 * depth / 4, depth};
    if (!(t[0] >= 1 && t[0] < t[1] && t[1] < t[2] && t[2] < t[3] && t[3] == depth))
        throw ConfigError("tap indices must be strictly increasing and end at the block depth");
    return t;
}

void VitBlock::init(Rng& rng, std::int64_t d, std::int64_t hidden) {
    ln1.init(d, true);
    ln2.init(d, true);
    const double stddev = std::sqrt(2.0 / double(d));
    auto proj = [&]() { return randn_tensor<float>(rng, {d, d}, stddev, false); };
    auto bias = [&]() { return make_tensor<float>({d}, false); };
    attn.wq = proj();
    attn.bq = bias();
    attn.wk = proj();
    attn.bk = bias();
    attn.wv = proj();
    attn.bv = bias();
    attn.wo = proj();
    attn.bo = bias();
    fc1.init(rng, hidden, d, true);
    fc2.init(rng, d, hidden, true);
}

FTensor VitBlock::forward(FTape* tape, const FTensor& x, int heads) const {
    auto y = add(tape, x, multi_head_self_attention(tape, ln1.forward(tape, x), attn, heads));
    auto m = fc2.forward(tape, gelu(tape, fc1.forward(tape, ln2.forward(tape, y))));
    return add(tape, y, m);
}

void VitBlock::collect(const std::string& prefix, ParamCollector& pc) const {
    ln1.collect(prefix + ".ln1", pc);
    pc.param(prefix + ".attn.wq", attn.wq);
    pc.param(prefix + ".attn.bq", attn.bq);
    pc.param(prefix + ".attn.wk", attn.wk);
    pc.param(prefix + ".attn.bk", attn.bk);
    pc.param(prefix + ".attn.wv", attn.wv);
    pc.param(prefix + ".attn.bv", attn.bv);
    pc.param(prefix + ".attn.wo", attn.wo);
    pc.param(prefix + ".attn.bo", attn.bo);
    ln2.collect(prefix + ".ln2", pc);
    fc1.collect(prefix + ".mlp.fc1", pc);
    fc2.collect(prefix + ".mlp.fc2", pc);
}

ViTLite init_frozen_vit(std::uint64_t seed, const ViTLiteConfig& config) {
    if (config.embed_dim % config.heads != 0)
        throw ConfigError("embed dim must be divisible by the head count");
    if (config.img_size % config.patch != 0)
        throw ConfigError("canonical image size must be divisible by the patch size");
    config.resolved_taps();

    ViTLite vit;
    vit.cfg = config;
    Rng rng = Rng::for_stream(seed, 0x5174);
    Conv2dSpec pspec;
    pspec.stride = config.patch;
    vit.patch_embed.init(rng, config.embed_dim, 3, config.patch, true, pspec, /*frozen=*/true);
    const std::int64_t grid = config.img_size / config.patch;
    vit.pos_embed = randn_tensor<float>(rng, {1, grid * grid, config.embed_dim}, 0.02, false);
    const std::int64_t hidden = std::int64_t(double(config.embed_dim) * config.mlp_ratio);
    for (int i = 0; i < config.depth; ++i) {
        VitBlock blk;
        blk.init(rng, config.embed_dim, hidden);
        vit.blocks.push_back(std::move(blk));
    }
    return vit;
}

FTensor ViTLite::embed_tokens(FTape* tape, const FTensor& image) const {
    if (image->rank() != 4 || image->dim(1) != 3)
        throw ShapeError("frozen backbone expects [B,3,H,W], got " + shape_str<float>(image->dims));
    if (image->dim(2) % cfg.patch != 0 || image->dim(3) % cfg.patch != 0)
        throw ShapeError("image extents must be divisible by the patch size " +
                         std::to_string(cfg.patch) + ", got " + shape_str<float>(image->dims));
    const std::int64_t b = image->dim(0);
    const std::int64_t gh = image->dim(2) / cfg.patch, gw = image->dim(3) / cfg.patch;

    auto maps = patch_embed.forward(tape, image);  // [B,D,gh,gw]
    auto tokens = permute(tape, reshape(tape, maps, {b, cfg.embed_dim, gh * gw}), {0, 2, 1});

    auto pos = pos_embed;
    const std::int64_t grid0 = cfg.img_size / cfg.patch;
    if (gh != grid0 || gw != grid0) {
        // resample the positional table onto the actual token grid
        auto grid_maps = permute(tape, reshape(tape, pos, {1, grid0, grid0, cfg.embed_dim}),
                                 {0, 3, 1, 2});
        auto resized = bilinear_resize(tape, grid_maps, gh, gw);
        pos = reshape(tape, permute(tape, resized, {0, 2, 3, 1}), {1, gh * gw, cfg.embed_dim});
    }
    return add(tape, tokens, pos);
}

FeaturePyramid ViTLite::forward(FTape* tape, const FTensor& image) const {
    const std::int64_t b = image->dim(0);
    const auto taps = cfg.resolved_taps();
    auto x = embed_tokens(tape, image);
    const std::int64_t gh = image->dim(2) / cfg.patch, gw = image->dim(3) / cfg.patch;

    FeaturePyramid pyr;
    std::size_t next_tap = 0;
    for (int i = 0; i < cfg.depth; ++i) {
        x = blocks[std::size_t(i)].forward(tape, x, cfg.heads);
        if (next_tap < 4 && taps[next_tap] == i + 1) {
            auto map = reshape(tape, permute(tape, x, {0, 2, 1}), {b, cfg.embed_dim, gh, gw});
            pyr.stages[next_tap] = map;
            pyr.spec[next_tap] = {cfg.patch, cfg.embed_dim};
            ++next_tap;
        }
    }
    pyr.validate(image->dim(2), image->dim(3));
    return pyr;
}

void ViTLite::collect(const std::string& prefix, ParamCollector& pc) const {
    patch_embed.collect(prefix + ".patch", pc);
    pc.param(prefix + ".pos_embed", pos_embed);
    for (std::size_t i = 0; i < blocks.size(); ++i)
        blocks[i].collect(prefix + ".block" + std::to_string(i), pc);
}

std::uint64_t hash_tensors(const std::vector<NamedTensor>& named, const std::string& prefix) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 1099511628211ULL;
        }
    };
    for (const auto& nt : named) {
        if (nt.name.rfind(prefix, 0) != 0) continue;
        mix(nt.name.data(), nt.name.size());
        mix(nt.tensor->data.data(), nt.tensor->data.size() * sizeof(float));
    }
    return h;
}

}  // namespace sqa
