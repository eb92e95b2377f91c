#include "sqa/model.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

namespace sqa {

using nlohmann::json;

std::int64_t ModelConfig::base_width() const {
    const double w = 64.0 * width_mult;
    const auto iw = std::int64_t(w);
    if (double(iw) != w || iw < 8)
        throw ConfigError("width_mult must yield an integer base width of at least 8");
    return iw;
}

std::array<std::int64_t, 4> ModelConfig::stage_channels() const {
    const std::int64_t w = base_width();
    return {w, 2 * w, 4 * w, 8 * w};
}

std::string ModelConfig::ablation_name() const {
    if (!pretrained_fusion && decoder == "plain") return "Baseline";
    if (pretrained_fusion && decoder == "plain") return "Baseline+PIF";
    if (pretrained_fusion && decoder == "aqs") return "Baseline+PIF+AQSD";
    return "Baseline+AQSD";
}

void ModelConfig::validate() const {
    base_width();
    if (decoder != "plain" && decoder != "aqs")
        throw ConfigError("decoder must be \"plain\" or \"aqs\"");
    if (aux_source != "n4" && aux_source != "n1")
        throw ConfigError("aux_source must be \"n4\" or \"n1\"");
    if (aux_target != "qa" && aux_target != "gt_mask")
        throw ConfigError("aux_target must be \"qa\" or \"gt_mask\"");
    if (seg_input != "mask" && seg_input != "mask_image")
        throw ConfigError("seg_input must be \"mask\" or \"mask_image\"");
    if (vit_dim <= 0 || vit_heads <= 0 || vit_dim % vit_heads != 0)
        throw ConfigError("vit_dim must be positive and divisible by vit_heads");
    if (vit_depth < 4) throw ConfigError("vit_depth must be at least 4 for the four taps");
    if (vit_patch != 16) throw ConfigError("vit_patch must be 16");
    if (vit_img_size % vit_patch != 0)
        throw ConfigError("vit_img_size must be divisible by the patch size");
    if (blocks_per_stage < 1) throw ConfigError("blocks_per_stage must be >= 1");
}

namespace {

void reject_unknown_keys(const json& j, const std::set<std::string>& known,
                         const std::string& what) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key()))
            throw FormatError(what + ": unknown key '" + it.key() + "'");
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

ModelConfig ModelConfig::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("model config: ") + e.what());
    }
    reject_unknown_keys(j,
                        {"pretrained_fusion", "decoder", "aux_enabled", "aux_source",
                         "aux_target", "seg_input", "width_mult", "vit_dim", "vit_heads",
                         "vit_depth", "vit_patch", "vit_img_size", "blocks_per_stage", "seed",
                         "vit_seed"},
                        "model config");
    ModelConfig cfg;
    get_if(j, "pretrained_fusion", cfg.pretrained_fusion);
    get_if(j, "decoder", cfg.decoder);
    get_if(j, "aux_enabled", cfg.aux_enabled);
    get_if(j, "aux_source", cfg.aux_source);
    get_if(j, "aux_target", cfg.aux_target);
    get_if(j, "seg_input", cfg.seg_input);
    get_if(j, "width_mult", cfg.width_mult);
    get_if(j, "vit_dim", cfg.vit_dim);
    get_if(j, "vit_heads", cfg.vit_heads);
    get_if(j, "vit_depth", cfg.vit_depth);
    get_if(j, "vit_patch", cfg.vit_patch);
    get_if(j, "vit_img_size", cfg.vit_img_size);
    get_if(j, "blocks_per_stage", cfg.blocks_per_stage);
    get_if(j, "seed", cfg.seed);
    get_if(j, "vit_seed", cfg.vit_seed);
    cfg.validate();
    return cfg;
}

ModelConfig ModelConfig::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open model config '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_json_text(text);
}

std::string ModelConfig::to_json_text() const {
    json j;
    j["pretrained_fusion"] = pretrained_fusion;
    j["decoder"] = decoder;
    j["aux_enabled"] = aux_enabled;
    j["aux_source"] = aux_source;
    j["aux_target"] = aux_target;
    j["seg_input"] = seg_input;
    j["width_mult"] = width_mult;
    j["vit_dim"] = vit_dim;
    j["vit_heads"] = vit_heads;
    j["vit_depth"] = vit_depth;
    j["vit_patch"] = vit_patch;
    j["vit_img_size"] = vit_img_size;
    j["blocks_per_stage"] = blocks_per_stage;
    j["seed"] = seed;
    j["vit_seed"] = vit_seed;
    return j.dump(2);
}

SqaModel SqaModel::build(const ModelConfig& cfg) {
    cfg.validate();
    SqaModel m;
    m.cfg = cfg;
    const std::int64_t w = cfg.base_width();

    Rng rng = Rng::for_stream(cfg.seed, 0x0d3f);
    ResNetLiteConfig rcfg;
    rcfg.base_width = w;
    rcfg.blocks_per_stage = cfg.blocks_per_stage;
    m.resnet.init(rng, rcfg);

    if (cfg.pretrained_fusion) {
        ViTLiteConfig vcfg;
        vcfg.embed_dim = cfg.vit_dim;
        vcfg.heads = cfg.vit_heads;
        vcfg.depth = cfg.vit_depth;
        vcfg.patch = cfg.vit_patch;
        vcfg.img_size = cfg.vit_img_size;
        m.vit = init_frozen_vit(cfg.vit_seed, vcfg);
    }

    FusionNeckConfig ncfg;
    ncfg.pretrained_fusion = cfg.pretrained_fusion;
    ncfg.vit_dim = cfg.vit_dim;
    ncfg.vit_patch = cfg.vit_patch;
    ncfg.stage_channels = cfg.stage_channels();
    m.neck.init(rng, ncfg);

    if (cfg.aux_enabled)
        m.aux.init(rng, cfg.aux_source == "n1" ? ncfg.stage_channels[0] : ncfg.stage_channels[3]);

    if (cfg.decoder == "aqs")
        m.aqsd.init(rng, cfg.seg_input == "mask_image" ? 4 : 1, w);
    else
        m.plain.init(rng, ncfg.stage_channels[0]);
    return m;
}

ModelOutput SqaModel::forward(FTape* tape, const FTensor& image, const FTensor& mask,
                              bool training) const {
    if (image->rank() != 4 || image->dim(1) != 3)
        throw ShapeError("image must be [B,3,H,W], got " + shape_str<float>(image->dims));
    if (mask->rank() != 4 || mask->dim(1) != 1 || mask->dim(0) != image->dim(0) ||
        mask->dim(2) != image->dim(2) || mask->dim(3) != image->dim(3))
        throw ShapeError("mask must be [B,1,H,W] matching the image");
    validate_binary_mask(mask);
    const std::int64_t h = image->dim(2), w = image->dim(3);

    auto joint = concat<float>(tape, {image, mask}, 1);
    const auto rpyr = resnet.forward(tape, joint, training);
    std::optional<FeaturePyramid> vpyr;
    if (cfg.pretrained_fusion) vpyr = vit.forward(tape, image);
    const auto nout = neck.forward(tape, rpyr, vpyr ? &*vpyr : nullptr, h, w, training);

    ModelOutput out;
    if (cfg.decoder == "aqs") {
        FTensor seg_in = cfg.seg_input == "mask_image"
                             ? concat<float>(tape, {mask, image}, 1)
                             : mask;
        out.logits = aqsd.forward(tape, seg_in, nout, h, w, training);
    } else {
        out.logits = plain.forward(tape, nout.n[0], h, w, training);
    }
    if (cfg.aux_enabled)
        out.aux_logits = aux.forward(tape, cfg.aux_source == "n1" ? nout.n[0] : nout.n[3], h, w);
    return out;
}

std::vector<NamedTensor> SqaModel::named_tensors() const {
    ParamCollector pc;
    resnet.collect("resnet", pc);
    if (cfg.pretrained_fusion) vit.collect("vit", pc);
    neck.collect("neck", pc);
    if (cfg.aux_enabled) aux.collect("aux_head", pc);
    if (cfg.decoder == "aqs")
        aqsd.collect("aqsd", pc);
    else
        plain.collect("plain_head", pc);
    return pc.named;
}

std::vector<FTensor> SqaModel::trainable_params() const {
    ParamCollector pc;
    resnet.collect("resnet", pc);
    if (cfg.pretrained_fusion) vit.collect("vit", pc);
    neck.collect("neck", pc);
    if (cfg.aux_enabled) aux.collect("aux_head", pc);
    if (cfg.decoder == "aqs")
        aqsd.collect("aqsd", pc);
    else
        plain.collect("plain_head", pc);
    return pc.trainable;
}

std::uint64_t SqaModel::frozen_hash() const { return hash_tensors(named_tensors(), "vit."); }

std::uint64_t SqaModel::trainable_hash() const {
    const auto named = named_tensors();
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& nt : named) {
        if (nt.name.rfind("vit.", 0) == 0) continue;
        h ^= hash_tensors({nt}, "");
        h *= 1099511628211ULL;
    }
    return h;
}

// ---------------------------------------------------------------------------
// shape propagation
// ---------------------------------------------------------------------------

namespace {

std::int64_t conv_out(std::int64_t in, int k, int stride, int padding, int dilation = 1) {
    return (in + 2 * padding - dilation * (k - 1) - 1) / stride + 1;
}

}  // namespace

ShapePlan plan_shapes(const ModelConfig& cfg, std::int64_t input_h, std::int64_t input_w) {
    if (input_h % 32 != 0 || input_w % 32 != 0)
        throw ShapeError("input extents must be divisible by 32");
    const auto chans = cfg.stage_channels();
    ShapePlan plan;

    // trainable encoder: 7x7/2 stem, 3x3/2 pool, then stage strides 1,2,2,2
    std::int64_t h = conv_out(input_h, 7, 2, 3);
    std::int64_t w = conv_out(input_w, 7, 2, 3);
    h = conv_out(h, 3, 2, 1);
    w = conv_out(w, 3, 2, 1);
    for (int s = 0; s < 4; ++s) {
        if (s > 0) {
            h = conv_out(h, 3, 2, 1);
            w = conv_out(w, 3, 2, 1);
        }
        plan.resnet[std::size_t(s)] = {chans[std::size_t(s)], h, w};
    }

    // frozen encoder: every tap on the 1/16 token grid
    const std::int64_t gh = input_h / cfg.vit_patch, gw = input_w / cfg.vit_patch;
    for (auto& s : plan.vit) s = {cfg.vit_dim, gh, gw};

    // fused ladder: stages 1-3 keep the trainable extents, stage 4 rises to
    // the frozen 1/16 grid, and the top-down pass emits N1..N4
    plan.neck[3] = {chans[3], gh, gw};
    for (int s = 0; s < 3; ++s)
        plan.neck[std::size_t(s)] = {chans[std::size_t(s)], plan.resnet[std::size_t(s)].h,
                                     plan.resnet[std::size_t(s)].w};
    return plan;
}

// ---------------------------------------------------------------------------
// parameter / MAC accounting
// ---------------------------------------------------------------------------

namespace {

struct CostAccum {
    std::int64_t params = 0;
    std::int64_t macs = 0;

    void conv(std::int64_t cout, std::int64_t cin, int k, bool bias, std::int64_t oh,
              std::int64_t ow) {
        params += cout * cin * k * k + (bias ? cout : 0);
        macs += cout * cin * k * k * oh * ow;
    }
    void bn(std::int64_t ch) { params += 2 * ch; }
    void ln(std::int64_t ch) { params += 2 * ch; }
    void dense(std::int64_t dout, std::int64_t din, std::int64_t rows) {
        params += dout * din + dout;
        macs += rows * dout * din;
    }
};

}  // namespace

CostReport count_params_flops(const ModelConfig& cfg, std::int64_t input_h,
                              std::int64_t input_w) {
    cfg.validate();
    const auto chans = cfg.stage_channels();
    const std::int64_t w0 = cfg.base_width();
    const auto plan = plan_shapes(cfg, input_h, input_w);
    CostReport report;

    // --- trainable encoder ---
    CostAccum r;
    {
        std::int64_t h = conv_out(input_h, 7, 2, 3), w = conv_out(input_w, 7, 2, 3);
        r.conv(w0, 4, 7, false, h, w);
        r.bn(w0);
        h = conv_out(h, 3, 2, 1);
        w = conv_out(w, 3, 2, 1);
        std::int64_t cin = w0;
        for (int s = 0; s < 4; ++s) {
            const std::int64_t cout = chans[std::size_t(s)];
            for (int b = 0; b < cfg.blocks_per_stage; ++b) {
                const int stride = (s > 0 && b == 0) ? 2 : 1;
                const std::int64_t bin = b == 0 ? cin : cout;
                if (stride == 2) {
                    h = conv_out(h, 3, 2, 1);
                    w = conv_out(w, 3, 2, 1);
                }
                r.conv(cout, bin, 3, false, h, w);
                r.bn(cout);
                r.conv(cout, cout, 3, false, h, w);
                r.bn(cout);
                if (stride != 1 || bin != cout) {
                    r.conv(cout, bin, 1, false, h, w);
                    r.bn(cout);
                }
            }
            cin = cout;
        }
    }

    // --- frozen encoder ---
    CostAccum v;
    if (cfg.pretrained_fusion) {
        const std::int64_t gh = plan.vit[0].h, gw = plan.vit[0].w, n = gh * gw, d = cfg.vit_dim;
        v.conv(d, 3, cfg.vit_patch, true, gh, gw);
        v.params += (cfg.vit_img_size / cfg.vit_patch) * (cfg.vit_img_size / cfg.vit_patch) * d;
        const std::int64_t hidden = std::int64_t(double(d) * 4.0);
        for (int b = 0; b < cfg.vit_depth; ++b) {
            v.ln(d);
            for (int p = 0; p < 4; ++p) v.dense(d, d, n);  // q,k,v,o projections
            v.macs += 2 * n * n * d;                       // scores and context matmuls
            v.ln(d);
            v.dense(hidden, d, n);
            v.dense(d, hidden, n);
        }
    }

    // --- neck ---
    CostAccum nk;
    {
        auto fuse_cost = [&nk](std::int64_t cin, std::int64_t cout, std::int64_t h,
                               std::int64_t w) {
            nk.conv(cout, cin, 3, false, h, w);
            nk.bn(cout);
            nk.conv(cout, cout, 3, false, h, w);
            nk.bn(cout);
            nk.conv(cout, cin, 1, true, h, w);
        };
        for (int s = 0; s < 4; ++s) {
            const std::int64_t c = chans[std::size_t(s)];
            const auto& at = plan.neck[std::size_t(s)];  // fused stage extent
            if (cfg.pretrained_fusion) {
                // alignment runs on the frozen grid before resizing
                nk.conv(c, cfg.vit_dim, 1, true, plan.vit[std::size_t(s)].h,
                        plan.vit[std::size_t(s)].w);
                fuse_cost(2 * c, c, at.h, at.w);
            } else {
                fuse_cost(c, c, at.h, at.w);
            }
        }
        const std::int64_t c4 = chans[3], cb = std::max<std::int64_t>(1, c4 / 4);
        const std::int64_t ah = plan.neck[3].h, aw = plan.neck[3].w;
        nk.conv(cb, c4, 1, true, ah, aw);
        for (int i = 0; i < 3; ++i) nk.conv(cb, c4, 3, true, ah, aw);
        nk.conv(cb, c4, 1, true, 1, 1);  // pooling branch
        nk.conv(c4, 5 * cb, 1, true, ah, aw);
        for (int s = 0; s < 3; ++s) {
            const std::int64_t cout = chans[std::size_t(s)];
            const std::int64_t cin = chans[std::size_t(s) + 1] + cout;
            fuse_cost(cin, cout, plan.neck[std::size_t(s)].h, plan.neck[std::size_t(s)].w);
        }
        if (cfg.aux_enabled) {
            const auto& src = cfg.aux_source == "n1" ? plan.neck[0] : plan.neck[3];
            nk.conv(3, src.channels, 1, true, src.h, src.w);
        }
    }

    // --- decoder ---
    CostAccum dec;
    if (cfg.decoder == "aqs") {
        const std::int64_t in_ch = cfg.seg_input == "mask_image" ? 4 : 1;
        const std::int64_t half = std::max<std::int64_t>(1, w0 / 2);
        std::int64_t h = conv_out(input_h, 3, 2, 1), w = conv_out(input_w, 3, 2, 1);
        dec.conv(half, in_ch, 3, false, h, w);
        dec.bn(half);
        h = conv_out(h, 3, 2, 1);
        w = conv_out(w, 3, 2, 1);
        dec.conv(w0, half, 3, false, h, w);
        dec.bn(w0);
        const std::int64_t s1h = h, s1w = w;
        h = conv_out(h, 3, 2, 1);
        w = conv_out(w, 3, 2, 1);
        dec.conv(2 * w0, w0, 3, false, h, w);
        dec.bn(2 * w0);
        h = conv_out(h, 3, 2, 1);
        w = conv_out(w, 3, 2, 1);
        dec.conv(4 * w0, 2 * w0, 3, false, h, w);
        dec.bn(4 * w0);
        for (int i = 0; i < 3; ++i) {
            const std::int64_t c = chans[std::size_t(i)];
            const std::int64_t sq = std::max<std::int64_t>(1, c / 8);
            const auto& at = plan.neck[std::size_t(i)];
            dec.conv(sq, c, 1, true, 1, 1);
            dec.conv(c, sq, 1, true, 1, 1);
            dec.conv(sq, c, 1, true, 1, 1);  // max-pool branch reuses weights: MACs only
            dec.conv(c, sq, 1, true, 1, 1);
            dec.params -= sq * c + sq + c * sq + c;  // shared MLP counted once
            dec.conv(1, 2, 7, true, at.h, at.w);
        }
        dec.conv(w0, 7 * w0, 3, false, s1h, s1w);
        dec.bn(w0);
        dec.conv(3, w0, 1, true, s1h, s1w);
    } else {
        const auto& n1 = plan.neck[0];
        dec.conv(w0, w0, 3, false, n1.h, n1.w);
        dec.bn(w0);
        dec.conv(3, w0, 1, true, n1.h, n1.w);
    }

    report.trainable_params = r.params + nk.params + dec.params;
    report.frozen_params = v.params;
    report.macs = r.macs + v.macs + nk.macs + dec.macs;
    return report;
}

}  // namespace sqa
