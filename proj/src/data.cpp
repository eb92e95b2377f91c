#include "sqa/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "sqa/error.hpp"
#include "sqa/netpbm.hpp"
#include "sqa/rng.hpp"

namespace sqa {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// morphology
// ---------------------------------------------------------------------------

namespace {

std::vector<std::pair<int, int>> disk_offsets(int radius) {
    std::vector<std::pair<int, int>> offs;
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx)
            if (dy * dy + dx * dx <= radius * radius) offs.emplace_back(dy, dx);
    return offs;
}

}  // namespace

Mask2d dilate_disk(const Mask2d& m, int radius) {
    if (radius <= 0) return m;
    const auto offs = disk_offsets(radius);
    Mask2d out = Mask2d::zeros(m.height, m.width);
    for (std::int64_t y = 0; y < m.height; ++y)
        for (std::int64_t x = 0; x < m.width; ++x) {
            for (const auto& [dy, dx] : offs) {
                const std::int64_t sy = y + dy, sx = x + dx;
                if (sy < 0 || sy >= m.height || sx < 0 || sx >= m.width) continue;
                if (m.at(sy, sx)) {
                    out.set(y, x, 1);
                    break;
                }
            }
        }
    return out;
}

Mask2d erode_disk(const Mask2d& m, int radius) {
    if (radius <= 0) return m;
    const auto offs = disk_offsets(radius);
    Mask2d out = Mask2d::zeros(m.height, m.width);
    for (std::int64_t y = 0; y < m.height; ++y)
        for (std::int64_t x = 0; x < m.width; ++x) {
            bool all = true;
            for (const auto& [dy, dx] : offs) {
                const std::int64_t sy = y + dy, sx = x + dx;
                if (sy < 0 || sy >= m.height || sx < 0 || sx >= m.width || !m.at(sy, sx)) {
                    all = false;
                    break;
                }
            }
            if (all) out.set(y, x, 1);
        }
    return out;
}

// ---------------------------------------------------------------------------
// configs
// ---------------------------------------------------------------------------

void PerturbConfig::validate() const {
    if (radius_min < 0 || radius_max < radius_min)
        throw ConfigError("perturb radius range must satisfy 0 <= min <= max");
    if (shift_max < 0) throw ConfigError("shift_max must be nonnegative");
    if (drop_prob < 0 || drop_prob > 1 || blob_prob < 0 || blob_prob > 1)
        throw ConfigError("probabilities must lie in [0,1]");
    if (blob_count_max < 0 || blob_size_min < 1 || blob_size_max < blob_size_min)
        throw ConfigError("blob ranges must be nonempty");
}

void SceneConfig::validate() const {
    if (height < 32 || width < 32 || height % 16 != 0 || width % 16 != 0)
        throw ConfigError("canvas extents must be >= 32 and divisible by 16");
    if (min_buildings < 1 || max_buildings < min_buildings)
        throw ConfigError("building count range must be nonempty and start at >= 1");
    if (min_building_area < 1) throw ConfigError("min_building_area must be positive");
    if (bg_base_min < 0 || bg_base_max > 1 || bg_base_max < bg_base_min)
        throw ConfigError("background intensity range must be a subrange of [0,1]");
    if (contrast_min <= 0 || noise_amp < 0)
        throw ConfigError("contrast must be positive and noise nonnegative");
    perturb.validate();
}

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& what) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key())) throw FormatError(what + ": unknown key '" + it.key() + "'");
}

PerturbConfig perturb_from_json(const json& j) {
    reject_unknown(j,
                   {"radius_min", "radius_max", "shift_max", "drop_prob", "blob_prob",
                    "blob_count_max", "blob_size_min", "blob_size_max"},
                   "perturb config");
    PerturbConfig p;
    if (j.contains("radius_min")) p.radius_min = j.at("radius_min").get<int>();
    if (j.contains("radius_max")) p.radius_max = j.at("radius_max").get<int>();
    if (j.contains("shift_max")) p.shift_max = j.at("shift_max").get<int>();
    if (j.contains("drop_prob")) p.drop_prob = j.at("drop_prob").get<double>();
    if (j.contains("blob_prob")) p.blob_prob = j.at("blob_prob").get<double>();
    if (j.contains("blob_count_max")) p.blob_count_max = j.at("blob_count_max").get<int>();
    if (j.contains("blob_size_min")) p.blob_size_min = j.at("blob_size_min").get<int>();
    if (j.contains("blob_size_max")) p.blob_size_max = j.at("blob_size_max").get<int>();
    return p;
}

json perturb_to_json(const PerturbConfig& p) {
    return json{{"radius_min", p.radius_min},       {"radius_max", p.radius_max},
                {"shift_max", p.shift_max},         {"drop_prob", p.drop_prob},
                {"blob_prob", p.blob_prob},         {"blob_count_max", p.blob_count_max},
                {"blob_size_min", p.blob_size_min}, {"blob_size_max", p.blob_size_max}};
}

}  // namespace

SceneConfig SceneConfig::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("scene config: ") + e.what());
    }
    reject_unknown(j,
                   {"height", "width", "min_buildings", "max_buildings", "min_building_area",
                    "bg_base_min", "bg_base_max", "contrast_min", "noise_amp", "perturb",
                    "master_seed"},
                   "scene config");
    SceneConfig cfg;
    if (j.contains("height")) cfg.height = j.at("height").get<std::int64_t>();
    if (j.contains("width")) cfg.width = j.at("width").get<std::int64_t>();
    if (j.contains("min_buildings")) cfg.min_buildings = j.at("min_buildings").get<int>();
    if (j.contains("max_buildings")) cfg.max_buildings = j.at("max_buildings").get<int>();
    if (j.contains("min_building_area"))
        cfg.min_building_area = j.at("min_building_area").get<std::int64_t>();
    if (j.contains("bg_base_min")) cfg.bg_base_min = j.at("bg_base_min").get<double>();
    if (j.contains("bg_base_max")) cfg.bg_base_max = j.at("bg_base_max").get<double>();
    if (j.contains("contrast_min")) cfg.contrast_min = j.at("contrast_min").get<double>();
    if (j.contains("noise_amp")) cfg.noise_amp = j.at("noise_amp").get<double>();
    if (j.contains("perturb")) cfg.perturb = perturb_from_json(j.at("perturb"));
    if (j.contains("master_seed")) cfg.master_seed = j.at("master_seed").get<std::uint64_t>();
    cfg.validate();
    return cfg;
}

SceneConfig SceneConfig::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open scene config '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_json_text(text);
}

std::string SceneConfig::to_json_text() const {
    json j{{"height", height},
           {"width", width},
           {"min_buildings", min_buildings},
           {"max_buildings", max_buildings},
           {"min_building_area", min_building_area},
           {"bg_base_min", bg_base_min},
           {"bg_base_max", bg_base_max},
           {"contrast_min", contrast_min},
           {"noise_amp", noise_amp},
           {"perturb", perturb_to_json(perturb)},
           {"master_seed", master_seed}};
    return j.dump(2);
}

// ---------------------------------------------------------------------------
// ground truth derivation
// ---------------------------------------------------------------------------

TensorPtr<float> sqa_ground_truth(const TensorPtr<float>& seg_mask,
                                  const TensorPtr<float>& gt_mask) {
    if (seg_mask->dims != gt_mask->dims)
        throw ShapeError("sqa_ground_truth: mask shapes differ, " +
                         shape_str<float>(seg_mask->dims) + " vs " +
                         shape_str<float>(gt_mask->dims));
    const std::size_t rank = seg_mask->rank();
    if (rank != 2 && !(rank == 3 && seg_mask->dim(0) == 1))
        throw ShapeError("sqa_ground_truth: masks must be [H,W] or [1,H,W]");
    auto labels = make_tensor<float>({seg_mask->dim(rank - 2), seg_mask->dim(rank - 1)});
    for (std::size_t i = 0; i < labels->data.size(); ++i) {
        const float s = seg_mask->data[i], g = gt_mask->data[i];
        if ((s != 0.0f && s != 1.0f) || (g != 0.0f && g != 1.0f))
            throw UsageError("sqa_ground_truth: masks must be binary");
        if (g == 1.0f && s == 0.0f)
            labels->data[i] = float(1);  // missed
        else if (s == 1.0f && g == 0.0f)
            labels->data[i] = float(2);  // mistaken
    }
    return labels;
}

// ---------------------------------------------------------------------------
// perturbation
// ---------------------------------------------------------------------------

namespace {

// Deterministic scanline connected components, 8-connected.
std::vector<Mask2d> connected_components(const Mask2d& m) {
    std::vector<std::int32_t> label(m.v.size(), -1);
    std::vector<Mask2d> comps;
    std::vector<std::int64_t> stack;
    for (std::int64_t y = 0; y < m.height; ++y)
        for (std::int64_t x = 0; x < m.width; ++x) {
            const std::int64_t start = y * m.width + x;
            if (!m.v[std::size_t(start)] || label[std::size_t(start)] >= 0) continue;
            const auto id = std::int32_t(comps.size());
            comps.push_back(Mask2d::zeros(m.height, m.width));
            stack.assign(1, start);
            label[std::size_t(start)] = id;
            while (!stack.empty()) {
                const std::int64_t p = stack.back();
                stack.pop_back();
                comps[std::size_t(id)].v[std::size_t(p)] = 1;
                const std::int64_t py = p / m.width, px = p % m.width;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const std::int64_t ny = py + dy, nx = px + dx;
                        if (ny < 0 || ny >= m.height || nx < 0 || nx >= m.width) continue;
                        const std::int64_t np = ny * m.width + nx;
                        if (m.v[std::size_t(np)] && label[std::size_t(np)] < 0) {
                            label[std::size_t(np)] = id;
                            stack.push_back(np);
                        }
                    }
            }
        }
    return comps;
}

Mask2d shift_mask(const Mask2d& m, int dx, int dy) {
    if (dx == 0 && dy == 0) return m;
    Mask2d out = Mask2d::zeros(m.height, m.width);
    for (std::int64_t y = 0; y < m.height; ++y)
        for (std::int64_t x = 0; x < m.width; ++x) {
            if (!m.at(y, x)) continue;
            const std::int64_t ny = y + dy, nx = x + dx;
            if (ny >= 0 && ny < m.height && nx >= 0 && nx < m.width) out.set(ny, nx, 1);
        }
    return out;
}

}  // namespace

Mask2d perturb_mask(const Mask2d& gt, std::uint64_t seed, const PerturbConfig& cfg,
                    std::vector<PerturbRecord>* records) {
    cfg.validate();
    Rng rng = Rng::for_stream(seed, 0x9e27);
    Mask2d out = Mask2d::zeros(gt.height, gt.width);

    for (const auto& comp : connected_components(gt)) {
        PerturbRecord rec;
        rec.dropped = rng.bernoulli(cfg.drop_prob);
        const int radius = int(rng.uniform_int(cfg.radius_min, cfg.radius_max));
        rec.morph_radius = radius == 0 ? 0 : (rng.bernoulli(0.5) ? radius : -radius);
        rec.shift_x = int(rng.uniform_int(-cfg.shift_max, cfg.shift_max));
        rec.shift_y = int(rng.uniform_int(-cfg.shift_max, cfg.shift_max));
        if (records) records->push_back(rec);
        if (rec.dropped) continue;

        Mask2d piece = comp;
        if (rec.morph_radius > 0)
            piece = dilate_disk(piece, rec.morph_radius);
        else if (rec.morph_radius < 0)
            piece = erode_disk(piece, -rec.morph_radius);
        piece = shift_mask(piece, rec.shift_x, rec.shift_y);
        for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] |= piece.v[i];
    }

    if (rng.bernoulli(cfg.blob_prob)) {
        const int blobs = int(rng.uniform_int(1, std::max(1, cfg.blob_count_max)));
        for (int b = 0; b < blobs; ++b) {
            const auto bw = rng.uniform_int(cfg.blob_size_min, cfg.blob_size_max);
            const auto bh = rng.uniform_int(cfg.blob_size_min, cfg.blob_size_max);
            const auto x0 = rng.uniform_int(0, std::max<std::int64_t>(0, gt.width - bw));
            const auto y0 = rng.uniform_int(0, std::max<std::int64_t>(0, gt.height - bh));
            for (std::int64_t y = y0; y < std::min(gt.height, y0 + bh); ++y)
                for (std::int64_t x = x0; x < std::min(gt.width, x0 + bw); ++x)
                    out.set(y, x, 1);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// scene generation
// ---------------------------------------------------------------------------

namespace {

struct RotRect {
    double cx, cy, hw, hh, cosa, sina;

    bool contains(double px, double py) const {
        const double dx = px - cx, dy = py - cy;
        const double u = dx * cosa + dy * sina;
        const double v = -dx * sina + dy * cosa;
        return std::abs(u) <= hw && std::abs(v) <= hh;
    }
};

Mask2d render_rect(const RotRect& r, std::int64_t height, std::int64_t width) {
    Mask2d m = Mask2d::zeros(height, width);
    const double reach = std::hypot(r.hw, r.hh);
    const auto y0 = std::max<std::int64_t>(0, std::int64_t(std::floor(r.cy - reach)));
    const auto y1 = std::min<std::int64_t>(height - 1, std::int64_t(std::ceil(r.cy + reach)));
    const auto x0 = std::max<std::int64_t>(0, std::int64_t(std::floor(r.cx - reach)));
    const auto x1 = std::min<std::int64_t>(width - 1, std::int64_t(std::ceil(r.cx + reach)));
    for (std::int64_t y = y0; y <= y1; ++y)
        for (std::int64_t x = x0; x <= x1; ++x)
            if (r.contains(double(x) + 0.5, double(y) + 0.5)) m.set(y, x, 1);
    return m;
}

// Smooth background: bilinear value noise over a coarse grid.
std::vector<float> value_noise(Rng& rng, std::int64_t height, std::int64_t width, double lo,
                               double hi) {
    const std::int64_t grid = 5;
    std::vector<double> knots(std::size_t(grid * grid));
    for (auto& k : knots) k = rng.uniform(lo, hi);
    std::vector<float> out(std::size_t(height * width));
    for (std::int64_t y = 0; y < height; ++y)
        for (std::int64_t x = 0; x < width; ++x) {
            const double gy = double(y) / double(height - 1) * double(grid - 1);
            const double gx = double(x) / double(width - 1) * double(grid - 1);
            const auto y0 = std::min<std::int64_t>(std::int64_t(gy), grid - 2);
            const auto x0 = std::min<std::int64_t>(std::int64_t(gx), grid - 2);
            const double fy = gy - double(y0), fx = gx - double(x0);
            const double v00 = knots[std::size_t(y0 * grid + x0)];
            const double v01 = knots[std::size_t(y0 * grid + x0 + 1)];
            const double v10 = knots[std::size_t((y0 + 1) * grid + x0)];
            const double v11 = knots[std::size_t((y0 + 1) * grid + x0 + 1)];
            out[std::size_t(y * width + x)] =
                float((1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11));
        }
    return out;
}

}  // namespace

SqaTriplet generate_scene(const SceneConfig& cfg, std::uint64_t index) {
    cfg.validate();
    Rng rng = Rng::for_stream(cfg.master_seed, index);
    const std::int64_t H = cfg.height, W = cfg.width;

    SqaTriplet t;
    t.image = make_tensor<float>({3, H, W});
    t.gt_mask = make_tensor<float>({1, H, W});

    Mask2d gt = Mask2d::zeros(H, W);
    Mask2d occupied = Mask2d::zeros(H, W);  // dilated footprints keep instances separated
    const int target = int(rng.uniform_int(cfg.min_buildings, cfg.max_buildings));

    int placed = 0;
    const int max_attempts = 200 * target;
    for (int attempt = 0; attempt < max_attempts && placed < target; ++attempt) {
        const double min_side = std::sqrt(double(cfg.min_building_area));
        RotRect r;
        const double w = rng.uniform(min_side, min_side * 2.8);
        const double h = rng.uniform(min_side, min_side * 2.8);
        r.hw = w / 2.0;
        r.hh = h / 2.0;
        r.cx = rng.uniform(r.hw + 1.0, double(W) - r.hw - 1.0);
        r.cy = rng.uniform(r.hh + 1.0, double(H) - r.hh - 1.0);
        const double angle = rng.uniform(0.0, 3.14159265358979323846);
        r.cosa = std::cos(angle);
        r.sina = std::sin(angle);

        Mask2d piece = render_rect(r, H, W);
        std::int64_t area = 0;
        bool clash = false;
        for (std::size_t i = 0; i < piece.v.size(); ++i) {
            if (!piece.v[i]) continue;
            ++area;
            if (occupied.v[i]) clash = true;
        }
        if (clash || area < cfg.min_building_area) continue;

        BuildingInstance inst;
        inst.cx = r.cx;
        inst.cy = r.cy;
        inst.w = w;
        inst.h = h;
        inst.angle = angle;
        inst.intensity = 0.0;  // assigned below
        inst.area = area;
        t.buildings.push_back(inst);
        for (std::size_t i = 0; i < piece.v.size(); ++i) gt.v[i] |= piece.v[i];
        const Mask2d sep = dilate_disk(piece, 2);
        for (std::size_t i = 0; i < sep.v.size(); ++i) occupied.v[i] |= sep.v[i];
        ++placed;
    }
    if (placed < cfg.min_buildings)
        throw UsageError("scene generation: could not place " +
                         std::to_string(cfg.min_buildings) + " buildings after bounded retries");

    // paint: smooth background, contrasting buildings, per-pixel noise
    const auto bg = value_noise(rng, H, W, cfg.bg_base_min, cfg.bg_base_max);
    std::vector<float> base(bg.begin(), bg.end());
    for (auto& inst : t.buildings) {
        const double bright = rng.bernoulli(0.5) ? 1.0 : -1.0;
        const double level = rng.uniform(cfg.contrast_min, cfg.contrast_min + 0.3);
        inst.intensity = bright * level;
    }
    // rasterize instance intensities (instances do not overlap)
    for (const auto& inst : t.buildings) {
        RotRect r{inst.cx, inst.cy, inst.w / 2.0, inst.h / 2.0, std::cos(inst.angle),
                  std::sin(inst.angle)};
        Mask2d piece = render_rect(r, H, W);
        for (std::int64_t i = 0; i < H * W; ++i)
            if (piece.v[std::size_t(i)]) {
                const double v = double(bg[std::size_t(i)]) + inst.intensity;
                base[std::size_t(i)] = float(std::min(std::max(v, 0.02), 0.98));
            }
    }
    for (std::int64_t i = 0; i < H * W; ++i) {
        t.gt_mask->data[std::size_t(i)] = float(gt.v[std::size_t(i)]);
        for (int c = 0; c < 3; ++c) {
            const double chan_tint = 1.0 + 0.06 * double(c - 1);
            const double noise = rng.uniform(-cfg.noise_amp, cfg.noise_amp);
            const double v = double(base[std::size_t(i)]) * chan_tint + noise;
            t.image->data[std::size_t(c * H * W + i)] = float(std::min(std::max(v, 0.0), 1.0));
        }
    }

    const Mask2d seg =
        perturb_mask(gt, cfg.master_seed * 0x51ed270b + index, cfg.perturb, &t.perturbations);
    t.seg_mask = make_tensor<float>({1, H, W});
    for (std::int64_t i = 0; i < H * W; ++i)
        t.seg_mask->data[std::size_t(i)] = float(seg.v[std::size_t(i)]);
    t.qa_labels = sqa_ground_truth(t.seg_mask, t.gt_mask);
    return t;
}

// ---------------------------------------------------------------------------
// datasets on disk
// ---------------------------------------------------------------------------

std::string fnv1a_file_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path + "' for hashing");
    std::uint64_t h = 1469598103934665603ULL;
    char c;
    while (in.get(c)) {
        h ^= std::uint8_t(c);
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

Dataset write_dataset(const std::string& dir, const SceneConfig& cfg, std::int64_t count) {
    if (count < 1) throw UsageError("dataset must contain at least one scene");
    fs::create_directories(dir);
    Dataset ds;
    ds.dir = dir;
    ds.scene_cfg = cfg;
    for (std::int64_t i = 0; i < count; ++i) {
        const auto t = generate_scene(cfg, std::uint64_t(i));
        char stem[32];
        std::snprintf(stem, sizeof(stem), "scene_%05lld", static_cast<long long>(i));
        DatasetEntry e;
        e.index = std::uint64_t(i);
        e.image = std::string(stem) + ".ppm";
        e.mask = std::string(stem) + "_mask.pgm";
        e.labels = std::string(stem) + "_labels.pgm";
        write_ppm(dir + "/" + e.image, image_to_ppm(t.image));
        write_pgm(dir + "/" + e.mask, mask_to_pgm(t.seg_mask));
        write_pgm(dir + "/" + e.labels, labels_to_pgm(t.qa_labels));
        e.image_hash = fnv1a_file_hash(dir + "/" + e.image);
        e.mask_hash = fnv1a_file_hash(dir + "/" + e.mask);
        e.labels_hash = fnv1a_file_hash(dir + "/" + e.labels);
        ds.entries.push_back(std::move(e));
    }

    json j;
    j["scene_config"] = json::parse(cfg.to_json_text());
    j["count"] = count;
    json scenes = json::array();
    for (const auto& e : ds.entries) {
        json s{{"index", e.index},         {"image", e.image},
               {"mask", e.mask},           {"labels", e.labels},
               {"image_hash", e.image_hash}, {"mask_hash", e.mask_hash},
               {"labels_hash", e.labels_hash}};
        scenes.push_back(std::move(s));
    }
    j["scenes"] = std::move(scenes);
    std::ofstream out(dir + "/manifest.json", std::ios::trunc);
    out << j.dump(2) << "\n";
    if (!out) throw FormatError("short write to manifest.json");
    return ds;
}

Dataset load_manifest(const std::string& dir) {
    std::ifstream in(dir + "/manifest.json");
    if (!in) throw FormatError("cannot open '" + dir + "/manifest.json'");
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("manifest: ") + e.what());
    }
    Dataset ds;
    ds.dir = dir;
    ds.scene_cfg = SceneConfig::from_json_text(j.at("scene_config").dump());
    for (const auto& s : j.at("scenes")) {
        DatasetEntry e;
        e.index = s.at("index").get<std::uint64_t>();
        e.image = s.at("image").get<std::string>();
        e.mask = s.at("mask").get<std::string>();
        e.labels = s.at("labels").get<std::string>();
        e.image_hash = s.value("image_hash", "");
        e.mask_hash = s.value("mask_hash", "");
        e.labels_hash = s.value("labels_hash", "");
        ds.entries.push_back(std::move(e));
    }
    if (ds.entries.empty()) throw FormatError("manifest lists no scenes");
    return ds;
}

SqaTriplet load_triplet(const Dataset& ds, std::size_t i) {
    const auto& e = ds.entries.at(i);
    SqaTriplet t;
    t.image = ppm_to_image(read_ppm(ds.dir + "/" + e.image));
    t.seg_mask = pgm_to_mask(read_pgm(ds.dir + "/" + e.mask));
    t.qa_labels = pgm_to_labels(read_pgm(ds.dir + "/" + e.labels));
    return t;
}

}  // namespace sqa
