#include <CLI11.hpp>

#include "hoidet/data.hpp"
#include "hoidet/evaluation.hpp"
#include "hoidet/inference.hpp"
#include "hoidet/label_space.hpp"
#include "hoidet/png_io.hpp"
#include "hoidet/training.hpp"
#include "hoidet/vlkt.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

int run_selftest(uint64_t seed);

namespace {

namespace fs = std::filesystem;
using namespace hoidet;

struct Common {
    std::string config_path;
    int64_t seed = -1;  // negative: keep the configured seed
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config_path, "run configuration JSON")
        ->check(CLI::ExistingFile);
    cmd->add_option("--seed", c.seed, "override the configured seed");
}

data::RunConfig load_config(const Common& c) {
    data::RunConfig cfg;
    if (!c.config_path.empty()) cfg = data::load_runconfig(c.config_path);
    if (c.seed >= 0) {
        cfg.seed = uint64_t(c.seed);
        cfg.gen.seed = uint64_t(c.seed);
    }
    return cfg;
}

// Datasets are self-contained: the manifest names a label-space file stored
// next to it (falling back to GENHOI_DATA_DIR resolution for foreign paths).
LabelSpace space_for_manifest(const data::DatasetManifest& m, const std::string& dir) {
    if (m.label_space_path.empty())
        throw std::runtime_error("manifest names no label space");
    fs::path p = m.label_space_path;
    if (!p.is_absolute() && fs::exists(fs::path(dir) / p))
        return load_label_space((fs::path(dir) / p).string());
    return load_label_space(data::resolve_data_path(m.label_space_path));
}

struct Dataset {
    std::string dir;
    data::DatasetManifest manifest;
    LabelSpace ls;
};

Dataset open_dataset(const std::string& dir_arg) {
    Dataset d;
    d.dir = data::resolve_data_path(dir_arg);
    std::string manifest_path = (fs::path(d.dir) / "manifest.json").string();
    auto unchecked = data::load_manifest(manifest_path, nullptr);
    d.ls = space_for_manifest(unchecked, d.dir);
    d.manifest = data::load_manifest(manifest_path, &d.ls);
    return d;
}

std::unique_ptr<vlkt::EmbeddingProvider> make_provider(const data::RunConfig& cfg) {
    if (!cfg.text_keys_path.empty())
        return std::make_unique<vlkt::FileTextProvider>(
            data::resolve_data_path(cfg.text_keys_path),
            data::resolve_data_path(cfg.text_matrix_path));
    return std::make_unique<vlkt::SyntheticTextProvider>(cfg.seed, cfg.model.c_t);
}

void attach_train_counts(LabelSpace& ls, const std::string& train_dir) {
    if (train_dir.empty()) return;
    fs::path manifest = fs::path(data::resolve_data_path(train_dir)) / "manifest.json";
    if (!fs::exists(manifest)) return;
    auto m = data::load_manifest(manifest.string(), nullptr);
    ls.train_counts = data::counts_from_manifest(m, ls.n_hoi());
}

std::vector<infer::ImageDetections> detect_dataset(const GenModel& model, const Dataset& d,
                                                   const data::RunConfig& cfg) {
    std::vector<infer::ImageDetections> all;
    all.reserve(d.manifest.images.size());
    for (const auto& rec : d.manifest.images) {
        auto img = read_png((fs::path(d.dir) / rec.file).string());
        auto dets = infer::detect(model, img, d.ls, cfg.topk, cfg.nms_iou_threshold);
        if (cfg.detection_score_min > 0.0) {
            std::vector<infer::Detection> kept;
            for (auto& x : dets)
                if (x.score > cfg.detection_score_min) kept.push_back(x);
            dets = std::move(kept);
        }
        all.push_back({rec.image_id, std::move(dets)});
    }
    return all;
}

std::string format_map(double v) {
    if (!std::isfinite(v)) return "n/a";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const Common& common, const std::string& out_arg, int images, int image_size,
                 double exponent, const std::string& label_space_arg) {
    auto cfg = load_config(common);
    std::string out = out_arg.empty() ? cfg.dataset_dir : out_arg;
    std::string ls_path = label_space_arg.empty() ? cfg.label_space_path : label_space_arg;

    auto spec = cfg.gen;
    if (images > 0) spec.n_images = images;
    if (image_size > 0) spec.image_size = image_size;
    if (exponent >= 0) spec.long_tail_exponent = exponent;

    auto ls = load_label_space(data::resolve_data_path(ls_path));
    auto rules = data::make_default_rules(ls);

    fs::create_directories(out);
    save_label_space(ls, (fs::path(out) / "label_space.json").string());
    auto res = data::generate_dataset(ls, rules, spec, out, "label_space.json");

    int64_t rare = 0;
    for (auto c : res.hoi_counts)
        if (c > 0 && c < 10) ++rare;
    std::printf("gen-data: %zu images under %s (%zu rejected placements, %lld rare categories)\n",
                res.manifest.images.size(), out.c_str(), res.rejected.size(),
                static_cast<long long>(rare));
    return 0;
}

int cmd_make_split(const Common& common, const std::string& setting, int n_unseen,
                   const std::string& data_arg, const std::string& out,
                   std::vector<int> unseen_objects, std::vector<int> unseen_verbs) {
    auto cfg = load_config(common);

    LabelSpace ls;
    std::vector<int64_t> counts;
    std::string data_dir = data_arg.empty() ? cfg.dataset_dir : data_arg;
    if (fs::exists(fs::path(data::resolve_data_path(data_dir)) / "manifest.json")) {
        auto d = open_dataset(data_dir);
        ls = d.ls;
        counts = data::counts_from_manifest(d.manifest, ls.n_hoi());
    } else {
        ls = load_label_space(data::resolve_data_path(cfg.label_space_path));
        counts = ls.train_counts;
    }

    ZeroShotParams params;
    params.n_unseen = n_unseen;
    params.unseen_objects = std::move(unseen_objects);
    params.unseen_verbs = std::move(unseen_verbs);
    params.seed = cfg.seed;

    auto split = make_zero_shot_split(ls, setting_from_name(setting), params, counts);
    if (!out.empty()) {
        fs::create_directories(fs::path(out).parent_path().empty()
                                   ? fs::path(".")
                                   : fs::path(out).parent_path());
        save_split(split, out);
    }
    std::printf("make-split: %s with %zu seen / %zu unseen (%zu rare) -> %s\n",
                setting_name(split.setting).c_str(), split.seen.size(), split.unseen.size(),
                split.rare.size(), out.empty() ? "(not saved)" : out.c_str());
    return 0;
}

int cmd_export_prompts(const Common& common, const std::string& label_space_arg,
                       const std::string& out_dir_arg) {
    auto cfg = load_config(common);
    std::string ls_path = label_space_arg.empty() ? cfg.label_space_path : label_space_arg;
    std::string out_dir = out_dir_arg.empty() ? cfg.run_dir : out_dir_arg;
    auto ls = load_label_space(data::resolve_data_path(ls_path));

    fs::create_directories(out_dir);
    auto write_lines = [&](const std::string& name, const std::vector<std::string>& lines) {
        std::ofstream out(fs::path(out_dir) / name);
        if (!out) throw std::runtime_error("cannot write " + name + " under " + out_dir);
        for (const auto& l : lines) out << l << "\n";
    };

    auto hoi = vlkt::hoi_prompts(ls);
    auto obj = vlkt::object_prompts(ls);
    write_lines("hoi_prompts.txt", hoi);
    write_lines("object_prompts.txt", obj);

    // one combined key list covering everything a file-backed provider will
    // be asked for, including the empty-scene teacher prompt
    auto all = hoi;
    all.insert(all.end(), obj.begin(), obj.end());
    all.push_back(data::kBackgroundPrompt);
    write_lines("prompts_all.txt", all);

    std::printf("export-prompts: %zu interaction + %zu object prompts under %s\n", hoi.size(),
                obj.size(), out_dir.c_str());
    return 0;
}

int cmd_import_embeddings(const Common&, const std::string& keys_path,
                          const std::string& matrix_path, const std::string& out_dir,
                          const std::string& name) {
    std::ifstream keys_in(keys_path);
    if (!keys_in) throw std::runtime_error("cannot open keys file " + keys_path);
    std::vector<std::string> keys;
    for (std::string line; std::getline(keys_in, line);) keys.push_back(line);

    auto m = vlkt::load_embedding_matrix(matrix_path);
    if (m.rows != keys.size())
        throw std::runtime_error("keys/matrix mismatch: " + std::to_string(keys.size()) +
                                 " keys vs " + std::to_string(m.rows) + " rows");
    size_t fixed = vlkt::renormalize_rows(m);

    fs::create_directories(out_dir);
    std::string out_keys = (fs::path(out_dir) / (name + "_keys.txt")).string();
    std::string out_matrix = (fs::path(out_dir) / (name + "_embeddings.emb")).string();
    {
        std::ofstream out(out_keys);
        if (!out) throw std::runtime_error("cannot write " + out_keys);
        for (const auto& k : keys) out << k << "\n";
    }
    vlkt::save_embedding_matrix(m, out_matrix);

    // round trip through the keyed store proves the pair is usable
    vlkt::KeyedEmbeddings store(out_keys, out_matrix);
    std::printf("import-embeddings: %zu x %d (%zu rows renormalized) -> %s, %s\n", m.rows,
                store.dim(), fixed, out_keys.c_str(), out_matrix.c_str());
    return 0;
}

int cmd_train(const Common& common, const std::string& data_arg, const std::string& out_arg,
              int epochs, int batch_size, const std::string& split_arg, bool no_augment) {
    auto cfg = load_config(common);
    if (!data_arg.empty()) cfg.dataset_dir = data_arg;
    if (!out_arg.empty()) cfg.run_dir = out_arg;
    if (epochs > 0) cfg.epochs = epochs;
    if (batch_size > 0) cfg.batch_size = batch_size;
    if (!split_arg.empty()) cfg.split_path = split_arg;
    if (no_augment) cfg.augment = false;

    auto d = open_dataset(cfg.dataset_dir);
    auto provider = make_provider(cfg);

    std::optional<vlkt::KeyedEmbeddings> teachers;
    if (!cfg.teacher_keys_path.empty())
        teachers.emplace(data::resolve_data_path(cfg.teacher_keys_path),
                         data::resolve_data_path(cfg.teacher_matrix_path));

    auto samples = data::load_samples(d.manifest, d.dir, d.ls, provider.get(),
                                      teachers ? &*teachers : nullptr);

    SplitSpec split;
    if (!cfg.split_path.empty()) split = load_split(data::resolve_data_path(cfg.split_path));

    auto model = build_model(cfg.model, d.ls, provider.get(), cfg.seed);

    fs::create_directories(cfg.run_dir);
    auto cfg_json = data::runconfig_to_json(cfg);
    {
        std::ofstream out(fs::path(cfg.run_dir) / "config.json");
        out << cfg_json.dump(2) << "\n";
    }

    train::TrainConfig tc;
    tc.epochs = cfg.epochs;
    tc.batch_size = cfg.batch_size;
    tc.seed = cfg.seed;
    tc.loss = cfg.loss;
    tc.optim = cfg.optim;
    tc.metrics_path = (fs::path(cfg.run_dir) / "metrics.ndjson").string();
    tc.checkpoint_path = (fs::path(cfg.run_dir) / "model.ghck").string();
    tc.checkpoint_metadata = {{"config", cfg_json},
                              {"config_hash", data::config_hash(cfg_json)},
                              {"dataset", d.dir},
                              {"split", cfg.split_path}};
    tc.split = cfg.split_path.empty() ? nullptr : &split;

    train::AugmentFn augment = nullptr;
    if (cfg.augment) {
        // keyed teachers stay as imported; only synthesized ones track the
        // augmented labels
        const vlkt::EmbeddingProvider* aug_provider = teachers ? nullptr : provider.get();
        augment = data::make_augmenter(d.ls, data::make_default_rules(d.ls), aug_provider);
    }

    auto stats = train::train(model, samples, d.ls, tc, augment);
    std::printf("train: %d steps over %d epochs, final loss %.4f, checkpoint %s\n", stats.steps,
                cfg.epochs, stats.loss_curve.empty() ? 0.0 : stats.loss_curve.back(),
                tc.checkpoint_path.c_str());
    return 0;
}

int cmd_eval(const Common& common, const std::string& data_arg, const std::string& ckpt_arg,
             const std::string& out_arg, const std::string& csv_arg,
             const std::string& split_arg, const std::string& train_data_arg, int topk,
             double nms) {
    auto cfg = load_config(common);
    if (!data_arg.empty()) cfg.eval_dataset_dir = data_arg;
    if (!split_arg.empty()) cfg.split_path = split_arg;
    if (!train_data_arg.empty()) cfg.dataset_dir = train_data_arg;
    if (topk > 0) cfg.topk = topk;
    if (nms > 0) cfg.nms_iou_threshold = nms;

    std::string eval_dir = cfg.eval_dataset_dir.empty() ? cfg.dataset_dir : cfg.eval_dataset_dir;
    auto d = open_dataset(eval_dir);

    std::string ckpt = ckpt_arg.empty() ? (fs::path(cfg.run_dir) / "model.ghck").string()
                                        : ckpt_arg;
    auto loaded = load_checkpoint(data::resolve_data_path(ckpt), d.ls);

    // rarity comes from the training set when it is around
    if (eval_dir != cfg.dataset_dir) attach_train_counts(d.ls, cfg.dataset_dir);
    if (d.ls.train_counts.empty())
        d.ls.train_counts = data::counts_from_manifest(d.manifest, d.ls.n_hoi());

    SplitSpec split;
    const SplitSpec* sp = nullptr;
    if (!cfg.split_path.empty()) {
        split = load_split(data::resolve_data_path(cfg.split_path));
        sp = &split;
    }

    auto dets = detect_dataset(loaded.model, d, cfg);
    auto report = eval::evaluate(dets, d.manifest, d.ls, sp);

    auto j = eval::report_to_json(report, d.ls);
    auto cfg_json = data::runconfig_to_json(cfg);
    j["config_hash"] = data::config_hash(cfg_json);
    j["checkpoint_config_hash"] = loaded.metadata.value("config_hash", "");
    j["n_images"] = d.manifest.images.size();

    std::string out = out_arg.empty() ? (fs::path(cfg.run_dir) / "report.json").string()
                                      : out_arg;
    if (auto parent = fs::path(out).parent_path(); !parent.empty())
        fs::create_directories(parent);
    std::ofstream out_stream(out);
    if (!out_stream) throw std::runtime_error("cannot write report to " + out);
    out_stream << j.dump(2) << "\n";
    if (!csv_arg.empty()) eval::save_report_csv(report, d.ls, csv_arg);

    std::printf("eval: map_full %s, rare %s, nonrare %s", format_map(report.map_full).c_str(),
                format_map(report.map_rare).c_str(), format_map(report.map_nonrare).c_str());
    if (sp)
        std::printf(", seen %s, unseen %s", format_map(report.map_seen).c_str(),
                    format_map(report.map_unseen).c_str());
    std::printf(" -> %s\n", out.c_str());
    return 0;
}

int cmd_infer(const Common& common, const std::string& data_arg, const std::string& ckpt_arg,
              const std::string& out_arg, bool render, const std::string& render_dir_arg,
              int topk, double nms) {
    auto cfg = load_config(common);
    if (topk > 0) cfg.topk = topk;
    if (nms > 0) cfg.nms_iou_threshold = nms;

    std::string data_dir = data_arg.empty()
                               ? (cfg.eval_dataset_dir.empty() ? cfg.dataset_dir
                                                               : cfg.eval_dataset_dir)
                               : data_arg;
    auto d = open_dataset(data_dir);

    std::string ckpt = ckpt_arg.empty() ? (fs::path(cfg.run_dir) / "model.ghck").string()
                                        : ckpt_arg;
    auto loaded = load_checkpoint(data::resolve_data_path(ckpt), d.ls);

    auto dets = detect_dataset(loaded.model, d, cfg);

    std::string out = out_arg.empty() ? (fs::path(cfg.run_dir) / "detections.json").string()
                                      : out_arg;
    if (auto parent = fs::path(out).parent_path(); !parent.empty())
        fs::create_directories(parent);
    infer::save_detections(dets, out);

    size_t total = 0;
    for (const auto& im : dets) total += im.dets.size();

    if (render) {
        std::string render_dir = render_dir_arg.empty()
                                     ? (fs::path(cfg.run_dir) / "renders").string()
                                     : render_dir_arg;
        fs::create_directories(render_dir);
        for (size_t i = 0; i < d.manifest.images.size(); ++i) {
            const auto& rec = d.manifest.images[i];
            auto img = read_png((fs::path(d.dir) / rec.file).string());
            write_png((fs::path(render_dir) / (rec.image_id + ".png")).string(),
                      infer::render_detections(img, dets[i].dets));
        }
        std::printf("infer: %zu detections over %zu images -> %s (renders under %s)\n", total,
                    dets.size(), out.c_str(), render_dir.c_str());
    } else {
        std::printf("infer: %zu detections over %zu images -> %s\n", total, dets.size(),
                    out.c_str());
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"genhoi: synthetic human-object interaction detection toolkit"};
    app.require_subcommand(1);

    Common common;

    auto* gen = app.add_subcommand("gen-data", "render a synthetic dataset");
    add_common(gen, common);
    std::string gen_out, gen_ls;
    int gen_images = -1, gen_size = -1;
    double gen_exponent = -1;
    gen->add_option("--out", gen_out, "dataset directory");
    gen->add_option("--images", gen_images, "number of images");
    gen->add_option("--image-size", gen_size, "canvas size in pixels");
    gen->add_option("--exponent", gen_exponent, "long-tail exponent");
    gen->add_option("--label-space", gen_ls, "label space JSON");

    auto* split_cmd = app.add_subcommand("make-split", "build a zero-shot or rarity split");
    add_common(split_cmd, common);
    std::string split_setting = "NF-UC", split_data, split_out;
    int split_n_unseen = 3;
    std::vector<int> split_uo, split_uv;
    split_cmd->add_option("--setting", split_setting, "RF-UC, NF-UC, UO, or UV");
    split_cmd->add_option("--n-unseen", split_n_unseen, "unseen category budget");
    split_cmd->add_option("--data", split_data, "dataset directory for train counts");
    split_cmd->add_option("--out", split_out, "split JSON path");
    split_cmd->add_option("--unseen-objects", split_uo, "explicit object ids for UO");
    split_cmd->add_option("--unseen-verbs", split_uv, "explicit verb ids for UV");

    auto* prompts = app.add_subcommand("export-prompts", "write classifier prompt files");
    add_common(prompts, common);
    std::string prompts_ls, prompts_out;
    prompts->add_option("--label-space", prompts_ls, "label space JSON");
    prompts->add_option("--out-dir", prompts_out, "output directory");

    auto* imp = app.add_subcommand("import-embeddings", "validate and store embedding files");
    add_common(imp, common);
    std::string imp_keys, imp_matrix, imp_out = ".", imp_name = "text";
    imp->add_option("--keys", imp_keys, "one key per line")->required()->check(CLI::ExistingFile);
    imp->add_option("--matrix", imp_matrix, "EMB1 matrix file")
        ->required()
        ->check(CLI::ExistingFile);
    imp->add_option("--out-dir", imp_out, "output directory");
    imp->add_option("--name", imp_name, "store base name (text or teacher)");

    auto* train_cmd = app.add_subcommand("train", "train a model on a dataset");
    add_common(train_cmd, common);
    std::string train_data, train_out, train_split;
    int train_epochs = -1, train_batch = -1;
    bool train_no_augment = false;
    train_cmd->add_option("--data", train_data, "dataset directory");
    train_cmd->add_option("--out", train_out, "run directory for artifacts");
    train_cmd->add_option("--epochs", train_epochs, "training epochs");
    train_cmd->add_option("--batch-size", train_batch, "batch size");
    train_cmd->add_option("--split", train_split, "zero-shot split JSON");
    train_cmd->add_flag("--no-augment", train_no_augment, "disable augmentation");

    auto* eval_cmd = app.add_subcommand("eval", "run detection and score mAP");
    add_common(eval_cmd, common);
    std::string eval_data, eval_ckpt, eval_out, eval_csv, eval_split, eval_train_data;
    int eval_topk = -1;
    double eval_nms = -1;
    eval_cmd->add_option("--data", eval_data, "evaluation dataset directory");
    eval_cmd->add_option("--checkpoint", eval_ckpt, "model checkpoint");
    eval_cmd->add_option("--out", eval_out, "report JSON path");
    eval_cmd->add_option("--csv", eval_csv, "per-category CSV path");
    eval_cmd->add_option("--split", eval_split, "zero-shot split JSON");
    eval_cmd->add_option("--train-data", eval_train_data, "training set for rarity counts");
    eval_cmd->add_option("--topk", eval_topk, "detections kept per image");
    eval_cmd->add_option("--nms", eval_nms, "triplet NMS IoU threshold");

    auto* infer_cmd = app.add_subcommand("infer", "write detections for a dataset");
    add_common(infer_cmd, common);
    std::string infer_data, infer_ckpt, infer_out, infer_render_dir;
    bool infer_render = false;
    int infer_topk = -1;
    double infer_nms = -1;
    infer_cmd->add_option("--data", infer_data, "dataset directory");
    infer_cmd->add_option("--checkpoint", infer_ckpt, "model checkpoint");
    infer_cmd->add_option("--out", infer_out, "detections JSON path");
    infer_cmd->add_flag("--render", infer_render, "write annotated images");
    infer_cmd->add_option("--render-dir", infer_render_dir, "directory for annotated images");
    infer_cmd->add_option("--topk", infer_topk, "detections kept per image");
    infer_cmd->add_option("--nms", infer_nms, "triplet NMS IoU threshold");

    auto* selftest = app.add_subcommand("selftest", "run the built-in oracle suites");
    add_common(selftest, common);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed())
            return cmd_gen_data(common, gen_out, gen_images, gen_size, gen_exponent, gen_ls);
        if (split_cmd->parsed())
            return cmd_make_split(common, split_setting, split_n_unseen, split_data, split_out,
                                  split_uo, split_uv);
        if (prompts->parsed()) return cmd_export_prompts(common, prompts_ls, prompts_out);
        if (imp->parsed())
            return cmd_import_embeddings(common, imp_keys, imp_matrix, imp_out, imp_name);
        if (train_cmd->parsed())
            return cmd_train(common, train_data, train_out, train_epochs, train_batch,
                             train_split, train_no_augment);
        if (eval_cmd->parsed())
            return cmd_eval(common, eval_data, eval_ckpt, eval_out, eval_csv, eval_split,
                            eval_train_data, eval_topk, eval_nms);
        if (infer_cmd->parsed())
            return cmd_infer(common, infer_data, infer_ckpt, infer_out, infer_render,
                             infer_render_dir, infer_topk, infer_nms);
        if (selftest->parsed()) return run_selftest(common.seed >= 0 ? uint64_t(common.seed) : 7);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "genhoi: %s\n", e.what());
        return 1;
    }
    return 0;
}
