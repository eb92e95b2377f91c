#pragma once

#include <optional>

#include "sqa/decoder.hpp"

namespace sqa {

// Architectural hyperparameters plus the ablation switches. The three studied
// rows map to:
//   (pretrained_fusion=false, decoder="plain")  -> "Baseline"
//   (pretrained_fusion=true,  decoder="plain")  -> "Baseline+PIF"
//   (pretrained_fusion=true,  decoder="aqs")    -> "Baseline+PIF+AQSD"
struct ModelConfig {
    bool pretrained_fusion = true;
    std::string decoder = "aqs";  // "plain" | "aqs"
    bool aux_enabled = true;
    std::string aux_source = "n4";   // "n4" | "n1"
    std::string aux_target = "qa";   // "qa" | "gt_mask"
    std::string seg_input = "mask";  // "mask" | "mask_image"
    double width_mult = 1.0;         // scales the (64,128,256,512) ladder

    std::int64_t vit_dim = 96;
    int vit_heads = 4;
    int vit_depth = 8;
    int vit_patch = 16;
    std::int64_t vit_img_size = 64;

    int blocks_per_stage = 2;
    std::uint64_t seed = 1;
    std::uint64_t vit_seed = 2;

    std::int64_t base_width() const;  // 64 * width_mult, validated
    std::array<std::int64_t, 4> stage_channels() const;
    std::string ablation_name() const;
    void validate() const;

    static ModelConfig from_json_file(const std::string& path);
    static ModelConfig from_json_text(const std::string& text);
    std::string to_json_text() const;
};

struct ModelOutput {
    FTensor logits;      // [B,3,H,W]
    FTensor aux_logits;  // null when the auxiliary head is disabled
};

struct SqaModel {
    ModelConfig cfg;
    ResNetLite resnet;
    ViTLite vit;  // present only when pretrained_fusion
    FusionNeck neck;
    AuxHead aux;
    AqsDecoder aqsd;
    PlainHead plain;

    static SqaModel build(const ModelConfig& cfg);

    // image [B,3,H,W] with extents divisible by 32; mask [B,1,H,W] in {0,1}
    ModelOutput forward(FTape* tape, const FTensor& image, const FTensor& mask,
                        bool training) const;

    std::vector<NamedTensor> named_tensors() const;  // parameters + buffers
    std::vector<FTensor> trainable_params() const;
    std::uint64_t frozen_hash() const;     // over "vit.*"
    std::uint64_t trainable_hash() const;  // over everything else
};

// ---------------------------------------------------------------------------
// static analysis: shape propagation and parameter/MAC accounting
// ---------------------------------------------------------------------------

struct StageShape {
    std::int64_t channels = 0, h = 0, w = 0;
};

struct ShapePlan {
    std::array<StageShape, 4> resnet;  // 1/4 .. 1/32
    std::array<StageShape, 4> vit;     // all 1/16
    std::array<StageShape, 4> neck;    // 1/4, 1/8, 1/16, 1/16
};

// Propagates the stride arithmetic of every layer without running tensors.
ShapePlan plan_shapes(const ModelConfig& cfg, std::int64_t input_h, std::int64_t input_w);

struct CostReport {
    std::int64_t trainable_params = 0;
    std::int64_t frozen_params = 0;
    std::int64_t macs = 0;  // multiply-accumulates of convs, linears, attention matmuls

    std::int64_t total_params() const { return trainable_params + frozen_params; }
};

// Analytic totals over the layer list at the given input size.
CostReport count_params_flops(const ModelConfig& cfg, std::int64_t input_h, std::int64_t input_w);

}  // namespace sqa
