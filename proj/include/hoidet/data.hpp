#pragma once

#include "hoidet/gen_model.hpp"
#include "hoidet/label_space.hpp"
#include "hoidet/rng.hpp"
#include "hoidet/training.hpp"
#include "hoidet/vlkt.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace hoidet::data {

// ---------------------------------------------------------------------------
// Dataset manifest (pixel-corner boxes, PNG files referenced by relative path)

struct Annotation {
    std::array<double, 4> human_box{};   // x1, y1, x2, y2 in pixels
    std::array<double, 4> object_box{};
    int object_id = 0;
    std::vector<int> hoi_ids;

    bool operator==(const Annotation&) const = default;
};

struct ImageRecord {
    std::string image_id;
    std::string file;  // relative to the manifest directory
    int width = 0, height = 0;
    std::vector<Annotation> annotations;

    bool operator==(const ImageRecord&) const = default;
};

struct DatasetManifest {
    std::string label_space_path;
    std::vector<ImageRecord> images;

    bool operator==(const DatasetManifest&) const = default;
};

void save_manifest(const DatasetManifest& m, const std::string& path);

// Loads and validates: finite in-bounds boxes with positive area, known ids,
// and each hoi_id's triplet object matching the annotation's object_id.
// Degenerate boxes are an error. `ls` may be null to skip label checks.
DatasetManifest load_manifest(const std::string& path, const LabelSpace* ls);

// $GENHOI_DATA_DIR, when set, is the root for relative dataset paths.
std::string resolve_data_path(const std::string& path);

std::vector<int64_t> counts_from_manifest(const DatasetManifest& m, int n_hoi);

// ---------------------------------------------------------------------------
// Verb geometry rules. Every verb of the label space maps to one predicate on
// the (human, object) box pair; an annotation's hoi_ids are exactly the
// triplets of its object whose verb predicate holds. All predicates are
// mirror-symmetric, so horizontal flips keep labels sound.

enum class VerbPredicate {
    Overlap,        // intersection / object area >= 0.25
    Above,          // disjoint, human center above, x-ranges aligned
    Beside,         // disjoint, horizontal gap within [0, 0.15 W], y centers near
    Far,            // disjoint, center distance >= 0.5 W
    NoInteraction,  // none of the four above holds
};

struct VerbRule {
    int verb_id = 0;
    VerbPredicate kind = VerbPredicate::NoInteraction;
    bool hflip_symmetric = true;
};

// Rules for the toy verb vocabulary (hold/lift/kick/watch + no_interaction).
// Unknown verb names are an error.
std::vector<VerbRule> make_default_rules(const LabelSpace& ls);

bool predicate_holds(VerbPredicate kind, const std::array<double, 4>& human,
                     const std::array<double, 4>& object, int width, int height);

// hoi ids of `object_id` whose verb predicate holds for this box pair.
std::vector<int> label_pair(const std::array<double, 4>& human,
                            const std::array<double, 4>& object, int object_id,
                            const LabelSpace& ls, const std::vector<VerbRule>& rules,
                            int width, int height);

// ---------------------------------------------------------------------------
// Scene generation

struct GenSpec {
    int n_images = 100;
    int image_size = 64;
    double long_tail_exponent = 1.0;  // triplet id k drawn with weight (k+1)^-e
    double two_pair_prob = 0.25;
    int retry_budget = 200;
    uint64_t seed = 0;
};

GenSpec genspec_from_json(const nlohmann::json& j);
nlohmann::json genspec_to_json(const GenSpec& s);

struct GenResult {
    DatasetManifest manifest;
    std::vector<int64_t> hoi_counts;
    std::vector<std::string> rejected;  // placement failures past the budget
};

// Renders glyph scenes under `out_dir` (PNGs in images/, manifest.json at the
// root) and returns the manifest. Deterministic in spec.seed; images use
// per-index derived seeds. Pass an empty out_dir to skip writing files.
GenResult generate_dataset(const LabelSpace& ls, const std::vector<VerbRule>& rules,
                           const GenSpec& spec, const std::string& out_dir,
                           const std::string& label_space_path);

// Rasterizes one annotated scene (person + object glyphs on a light ground).
Image render_scene(const ImageRecord& rec, const LabelSpace& ls);

// ---------------------------------------------------------------------------
// Teacher embeddings for the mimic loss

inline constexpr const char* kBackgroundPrompt = "A photo of an empty scene";

// normalize(mean of embed_text(hoi prompt) over every GT hoi id in the
// image); the background prompt when there are none.
std::vector<double> synthetic_teacher(const ImageRecord& rec, const LabelSpace& ls,
                                      const vlkt::EmbeddingProvider& provider);

// ---------------------------------------------------------------------------
// Training-sample assembly and augmentation

// Reads each image's PNG, converts boxes to normalized center form, and
// attaches teacher embeddings (from `teachers` keyed by image_id when given,
// otherwise synthesized from the provider; skipped entirely when `provider`
// and `teachers` are both null).
std::vector<train::TrainSample> load_samples(const DatasetManifest& m,
                                             const std::string& manifest_dir,
                                             const LabelSpace& ls,
                                             const vlkt::EmbeddingProvider* provider,
                                             const vlkt::KeyedEmbeddings* teachers);

// Same assembly but rendering scenes on the fly instead of reading PNGs.
std::vector<train::TrainSample> render_samples(const DatasetManifest& m, const LabelSpace& ls,
                                               const vlkt::EmbeddingProvider* provider,
                                               const vlkt::KeyedEmbeddings* teachers);

// Horizontal flip (p=0.5) plus ±10% scale jitter about the image center.
// Labels are re-evaluated from the transformed boxes and the teacher is
// recomputed from the surviving labels when a provider is available.
train::AugmentFn make_augmenter(const LabelSpace& ls, const std::vector<VerbRule>& rules,
                                const vlkt::EmbeddingProvider* provider);

// ---------------------------------------------------------------------------
// Run configuration (one JSON file drives every CLI subcommand)

struct RunConfig {
    ModelConfig model;
    train::LossOptions loss;
    train::OptimConfig optim;
    int epochs = 10;
    int batch_size = 4;
    uint64_t seed = 0;
    GenSpec gen;

    std::string label_space_path = "data/toy_label_space.json";
    std::string dataset_dir = "runs/train_data";
    std::string eval_dataset_dir;  // empty: evaluate on dataset_dir
    std::string run_dir = "runs/run";
    std::string split_path;        // zero-shot SplitSpec JSON, empty for none

    // external embedding stores (empty: synthetic provider, seed-derived)
    std::string text_keys_path, text_matrix_path;        // classifier init
    std::string teacher_keys_path, teacher_matrix_path;  // per-image teachers

    bool augment = true;
    int topk = 100;
    double nms_iou_threshold = 0.7;
    double detection_score_min = 0.0;  // drop detections at or below
};

RunConfig runconfig_from_json(const nlohmann::json& j);
nlohmann::json runconfig_to_json(const RunConfig& c);
RunConfig load_runconfig(const std::string& path);

// FNV-1a over the canonical JSON dump, as a fixed-width hex string. Recorded
// in checkpoints and reports so artifacts can be traced to their config.
std::string config_hash(const nlohmann::json& canonical);

}  // namespace hoidet::data
