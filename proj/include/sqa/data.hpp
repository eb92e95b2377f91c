#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sqa/tensor.hpp"

namespace sqa {

// Binary grid helpers shared by the generator and the morphology routines.
struct Mask2d {
    std::int64_t height = 0, width = 0;
    std::vector<std::uint8_t> v;  // 0/1

    static Mask2d zeros(std::int64_t h, std::int64_t w) { return {h, w, std::vector<std::uint8_t>(std::size_t(h * w), 0)}; }
    std::uint8_t at(std::int64_t y, std::int64_t x) const { return v[std::size_t(y * width + x)]; }
    void set(std::int64_t y, std::int64_t x, std::uint8_t val) { v[std::size_t(y * width + x)] = val; }
};

// Disk-structuring-element morphology; pixels outside the canvas read as 0.
Mask2d dilate_disk(const Mask2d& m, int radius);
Mask2d erode_disk(const Mask2d& m, int radius);

// Simulated interactive-segmentation defects applied per instance.
struct PerturbConfig {
    int radius_min = 0;       // morphological disk radius range
    int radius_max = 2;
    int shift_max = 2;        // integer translation in each axis
    double drop_prob = 0.1;   // whole-instance removal -> missed regions
    double blob_prob = 0.5;   // chance of spurious blobs -> mistaken regions
    int blob_count_max = 2;
    int blob_size_min = 3;    // blob rectangle edge range
    int blob_size_max = 8;

    void validate() const;
};

struct SceneConfig {
    std::int64_t height = 64, width = 64;
    int min_buildings = 1, max_buildings = 8;
    // scaled from a 2,500-pixel floor at 512x512 down to the desk canvas
    std::int64_t min_building_area = 40;
    double bg_base_min = 0.15, bg_base_max = 0.45;
    double contrast_min = 0.25;  // building/background intensity separation
    double noise_amp = 0.03;
    PerturbConfig perturb;
    std::uint64_t master_seed = 1234;

    void validate() const;
    static SceneConfig from_json_text(const std::string& text);
    static SceneConfig from_json_file(const std::string& path);
    std::string to_json_text() const;
};

struct BuildingInstance {
    double cx = 0, cy = 0, w = 0, h = 0, angle = 0;
    double intensity = 0;
    std::int64_t area = 0;  // rendered pixels
};

struct PerturbRecord {
    int morph_radius = 0;  // positive dilates, negative erodes
    int shift_x = 0, shift_y = 0;
    bool dropped = false;
};

// One training/eval sample: image, segmentation mask, QA label map, plus the
// instance metadata that produced them. qa_labels is always the deterministic
// function of (seg_mask, gt_mask) computed by sqa_ground_truth.
struct SqaTriplet {
    TensorPtr<float> image;      // [3,H,W] in [0,1]
    TensorPtr<float> gt_mask;    // [1,H,W] in {0,1}, true building footprints
    TensorPtr<float> seg_mask;   // [1,H,W] in {0,1}, perturbed segmentation
    TensorPtr<float> qa_labels;  // [H,W] in {0 bg, 1 missed, 2 mistaken}
    std::vector<BuildingInstance> buildings;
    std::vector<PerturbRecord> perturbations;
};

// label 1 (missed) where gt=1 and seg=0; label 2 (mistaken) where seg=1 and
// gt=0; 0 elsewhere.
TensorPtr<float> sqa_ground_truth(const TensorPtr<float>& seg_mask,
                                  const TensorPtr<float>& gt_mask);

// Applies per-instance morphology/shift/drop over connected components plus
// global spurious blobs; identity under an all-zero perturbation config.
Mask2d perturb_mask(const Mask2d& gt, std::uint64_t seed, const PerturbConfig& cfg,
                    std::vector<PerturbRecord>* records = nullptr);

// Fully determined by (cfg.master_seed, index).
SqaTriplet generate_scene(const SceneConfig& cfg, std::uint64_t index);

// ---------------------------------------------------------------------------
// on-disk datasets
// ---------------------------------------------------------------------------

struct DatasetEntry {
    std::uint64_t index = 0;
    std::string image, mask, labels;        // file names relative to the directory
    std::string image_hash, mask_hash, labels_hash;
};

struct Dataset {
    std::string dir;
    SceneConfig scene_cfg;
    std::vector<DatasetEntry> entries;
};

// Writes count scenes plus manifest.json; returns the manifest.
Dataset write_dataset(const std::string& dir, const SceneConfig& cfg, std::int64_t count);
Dataset load_manifest(const std::string& dir);
SqaTriplet load_triplet(const Dataset& ds, std::size_t i);

std::string fnv1a_file_hash(const std::string& path);

}  // namespace sqa
