#include "sqa/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "sqa/gradcheck.hpp"
#include "sqa/netpbm.hpp"
#include "sqa/trainer.hpp"

namespace sqa {

namespace {

namespace fs = std::filesystem;

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    out << text;
    if (!out) throw FormatError("short write to '" + path + "'");
    if (!text.empty() && text.back() != '\n') {
        std::ofstream app(path, std::ios::app);
        app << "\n";
    }
}

SqaModel build_model(const std::string& config_path) {
    const ModelConfig cfg =
        config_path.empty() ? ModelConfig{} : ModelConfig::from_json_file(config_path);
    return SqaModel::build(cfg);
}

void load_model_weights(SqaModel& model, const std::string& path) {
    assign_weights(load_weights(path), model.named_tensors());
}

LossConfig load_loss_config(const std::string& path) {
    if (path.empty()) return LossConfig{};
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open loss config '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return LossConfig::from_json_text(text);
}

struct CliOptions {
    std::string scene_config, model_config, loss_config;
    std::string data_dir, eval_dir, out_path, log_path, json_path, csv_path, overlays_dir;
    std::string weights, vit_weights, image_path, mask_path, seg_path, gt_path, overlay_path;
    std::string predictor = "model";
    std::int64_t count = 64;
    std::int64_t height = 64, width = 64;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int epochs = 10, batch = 8, trials = 10;
    float lr = 1e-3f;
    int threads = 0;
};

int cmd_gen_data(const CliOptions& o) {
    SceneConfig cfg = o.scene_config.empty() ? SceneConfig{}
                                             : SceneConfig::from_json_file(o.scene_config);
    if (o.seed_set) cfg.master_seed = o.seed;
    const auto ds = write_dataset(o.out_path, cfg, o.count);
    std::cout << "wrote " << ds.entries.size() << " scenes to " << o.out_path << "\n";
    return 0;
}

int cmd_train(const CliOptions& o) {
    auto model = build_model(o.model_config);
    if (!o.vit_weights.empty()) {
        // replace the seeded frozen stand-in with stored features
        std::vector<NamedTensor> stored, dest;
        for (auto& nt : load_weights(o.vit_weights))
            if (nt.name.rfind("vit.", 0) == 0) stored.push_back(nt);
        for (auto& nt : model.named_tensors())
            if (nt.name.rfind("vit.", 0) == 0) dest.push_back(nt);
        assign_weights(stored, dest);
    }
    const auto train_set = load_all(load_manifest(o.data_dir));
    std::vector<SqaTriplet> eval_set;
    if (!o.eval_dir.empty()) eval_set = load_all(load_manifest(o.eval_dir));

    TrainConfig tcfg;
    tcfg.epochs = o.epochs;
    tcfg.batch_size = o.batch;
    tcfg.lr = o.lr;
    tcfg.seed = o.seed_set ? o.seed : model.cfg.seed;
    tcfg.eval_each_epoch = !eval_set.empty();
    tcfg.eval_threads = o.threads;
    const auto result = train(model, train_set, eval_set.empty() ? nullptr : &eval_set,
                              load_loss_config(o.loss_config), tcfg);

    if (!o.out_path.empty()) save_weights(o.out_path, model.named_tensors());
    if (!o.log_path.empty()) write_text(o.log_path, result.log_json);
    std::cout << "trained " << model.cfg.ablation_name() << " for " << o.epochs
              << " epochs; final loss " << result.epochs.back().train_loss << "\n";
    return 0;
}

int cmd_eval(const CliOptions& o) {
    const auto ds = load_manifest(o.data_dir);
    const auto items = load_all(ds);
    MetricsReport report;
    SqaModel model;
    const bool use_model = o.predictor == "model";
    if (use_model) {
        model = build_model(o.model_config);
        load_model_weights(model, o.weights);
        report = evaluate(model, items, o.threads);
    } else if (o.predictor == "background") {
        report = evaluate_all_background(items);
    } else {
        throw UsageError("predictor must be 'model' or 'background'");
    }

    if (!o.json_path.empty()) write_text(o.json_path, report.to_json());
    if (!o.csv_path.empty()) write_text(o.csv_path, report.to_csv());
    if (!o.overlays_dir.empty()) {
        fs::create_directories(o.overlays_dir);
        for (std::size_t i = 0; i < items.size(); ++i) {
            std::vector<std::uint8_t> pred;
            if (use_model) {
                Batch b = stack_triplets({&items[i]});
                pred = argmax_labels(model.forward(nullptr, b.image, b.mask, false).logits);
            } else {
                pred.assign(items[i].qa_labels->data.size(), kBackground);
            }
            const auto overlay = render_overlay(pred, items[i].image->dim(1),
                                                items[i].image->dim(2), items[i].image);
            write_ppm(o.overlays_dir + "/" + fs::path(ds.entries[i].image).stem().string() +
                          "_overlay.ppm",
                      overlay);
        }
    }
    std::cout << report.to_csv();
    return 0;
}

int cmd_infer(const CliOptions& o) {
    auto model = build_model(o.model_config);
    load_model_weights(model, o.weights);
    SqaTriplet t;
    t.image = ppm_to_image(read_ppm(o.image_path));
    t.seg_mask = pgm_to_mask(read_pgm(o.mask_path));
    t.qa_labels = make_tensor<float>({t.image->dim(1), t.image->dim(2)});
    Batch b = stack_triplets({&t});
    const auto pred = argmax_labels(model.forward(nullptr, b.image, b.mask, false).logits);

    auto labels = make_tensor<float>({t.image->dim(1), t.image->dim(2)});
    for (std::size_t i = 0; i < pred.size(); ++i) labels->data[i] = float(pred[i]);
    write_pgm(o.out_path, labels_to_pgm(labels));
    if (!o.overlay_path.empty())
        write_ppm(o.overlay_path,
                  render_overlay(pred, t.image->dim(1), t.image->dim(2), t.image));
    std::cout << "wrote " << o.out_path << "\n";
    return 0;
}

int cmd_diff_masks(const CliOptions& o) {
    const auto seg = pgm_to_mask(read_pgm(o.seg_path));
    const auto gt = pgm_to_mask(read_pgm(o.gt_path));
    const auto labels = sqa_ground_truth(seg, gt);
    write_pgm(o.out_path, labels_to_pgm(labels));
    if (!o.overlay_path.empty()) {
        TensorPtr<float> image;
        if (!o.image_path.empty()) image = ppm_to_image(read_ppm(o.image_path));
        write_ppm(o.overlay_path, render_overlay(labels_to_bytes(labels), labels->dim(0),
                                                 labels->dim(1), image));
    }
    std::cout << "wrote " << o.out_path << "\n";
    return 0;
}

int cmd_gradcheck(const CliOptions& o) {
    const auto results =
        run_gradcheck_suite(o.seed_set ? o.seed : 7, o.trials, 1e-5, 1e-6);
    const bool ok = report_gradcheck(std::cout, results);
    std::cout << (ok ? "gradcheck: all ops within tolerance\n"
                     : "gradcheck: TOLERANCE EXCEEDED\n");
    return ok ? 0 : 1;
}

int cmd_count(const CliOptions& o) {
    const ModelConfig cfg =
        o.model_config.empty() ? ModelConfig{} : ModelConfig::from_json_file(o.model_config);
    const auto cost = count_params_flops(cfg, o.height, o.width);
    const auto plan = plan_shapes(cfg, o.height, o.width);
    std::cout << "config: " << cfg.ablation_name() << "\n"
              << "trainable params: " << cost.trainable_params << "\n"
              << "frozen params:    " << cost.frozen_params << "\n"
              << "total params:     " << cost.total_params() << "\n"
              << "macs @" << o.height << "x" << o.width << ":  " << cost.macs << "\n";
    for (int i = 0; i < 4; ++i)
        std::cout << "N" << (i + 1) << ": channels=" << plan.neck[std::size_t(i)].channels
                  << " h=" << plan.neck[std::size_t(i)].h << " w=" << plan.neck[std::size_t(i)].w
                  << "\n";
    return 0;
}

}  // namespace

int cli_dispatch(int argc, const char* const* argv) {
    CLI::App app{"segmentation quality assessment toolkit"};
    app.require_subcommand(1);
    CliOptions o;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic scene dataset");
    gen->add_option("--config", o.scene_config, "scene config JSON");
    gen->add_option("--out", o.out_path, "output directory")->required();
    gen->add_option("--count", o.count, "number of scenes");
    gen->add_option("--seed", o.seed, "master seed override")->each([&](const std::string&) {
        o.seed_set = true;
    });

    auto* tr = app.add_subcommand("train", "train a model on a generated dataset");
    tr->add_option("--model", o.model_config, "model config JSON");
    tr->add_option("--data", o.data_dir, "training dataset directory")->required();
    tr->add_option("--eval-data", o.eval_dir, "optional eval dataset for per-epoch metrics");
    tr->add_option("--loss", o.loss_config, "loss config JSON");
    tr->add_option("--out", o.out_path, "output weight file");
    tr->add_option("--log", o.log_path, "output training log JSON");
    tr->add_option("--epochs", o.epochs, "training epochs");
    tr->add_option("--batch", o.batch, "batch size");
    tr->add_option("--lr", o.lr, "learning rate");
    tr->add_option("--seed", o.seed, "shuffle seed")->each([&](const std::string&) {
        o.seed_set = true;
    });
    tr->add_option("--threads", o.threads, "eval threads");
    tr->add_option("--vit-weights", o.vit_weights, "frozen backbone weights (vit.* tensors)");

    auto* ev = app.add_subcommand("eval", "evaluate a model over a dataset");
    ev->add_option("--model", o.model_config, "model config JSON");
    ev->add_option("--weights", o.weights, "weight file");
    ev->add_option("--data", o.data_dir, "dataset directory")->required();
    ev->add_option("--json", o.json_path, "metrics report JSON path");
    ev->add_option("--csv", o.csv_path, "metrics report CSV path");
    ev->add_option("--overlays", o.overlays_dir, "directory for QA overlays");
    ev->add_option("--predictor", o.predictor, "'model' or 'background'");
    ev->add_option("--threads", o.threads, "eval threads");

    auto* in = app.add_subcommand("infer", "assess one segmentation result");
    in->add_option("--model", o.model_config, "model config JSON");
    in->add_option("--weights", o.weights, "weight file")->required();
    in->add_option("--image", o.image_path, "input image PPM")->required();
    in->add_option("--mask", o.mask_path, "segmentation mask PGM")->required();
    in->add_option("--out", o.out_path, "output QA label map PGM")->required();
    in->add_option("--overlay", o.overlay_path, "optional overlay PPM");

    auto* dm = app.add_subcommand("diff-masks", "derive QA labels from two masks");
    dm->add_option("--seg", o.seg_path, "segmentation mask PGM")->required();
    dm->add_option("--gt", o.gt_path, "ground-truth mask PGM")->required();
    dm->add_option("--out", o.out_path, "output QA label map PGM")->required();
    dm->add_option("--overlay", o.overlay_path, "optional overlay PPM");
    dm->add_option("--image", o.image_path, "optional image for overlay background");

    auto* gc = app.add_subcommand("gradcheck", "run the finite-difference gradient suite");
    gc->add_option("--seed", o.seed, "base seed")->each([&](const std::string&) {
        o.seed_set = true;
    });
    gc->add_option("--trials", o.trials, "trials per op");

    auto* ct = app.add_subcommand("count", "report parameter and MAC totals");
    ct->add_option("--model", o.model_config, "model config JSON");
    ct->add_option("--height", o.height, "input height");
    ct->add_option("--width", o.width, "input width");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
        std::cerr << "error: " << e.what() << "\n\n" << app.help() << std::flush;
        return 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(o);
        if (tr->parsed()) return cmd_train(o);
        if (ev->parsed()) return cmd_eval(o);
        if (in->parsed()) return cmd_infer(o);
        if (dm->parsed()) return cmd_diff_masks(o);
        if (gc->parsed()) return cmd_gradcheck(o);
        if (ct->parsed()) return cmd_count(o);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace sqa
