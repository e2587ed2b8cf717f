#pragma once

#include "hoidet/label_space.hpp"
#include "hoidet/nn.hpp"
#include "hoidet/vlkt.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace hoidet {

// RGB raster in [0,1], interleaved by pixel (h*w*3).
struct Image {
    int h = 0, w = 0;
    std::vector<float> hwc;

    float& at(int y, int x, int c) { return hwc[(y * w + x) * 3 + c]; }
    float at(int y, int x, int c) const { return hwc[(y * w + x) * 3 + c]; }
};

struct ModelConfig {
    int n_q = 16;              // queries per set
    int channels = 64;         // C_e == C_q
    int n_layers = 3;          // decoder layers per branch
    int enc_layers = 2;
    int heads = 4;
    int backbone_channels = 16;
    int image_size = 64;
    int c_t = 64;              // classifier embedding dim
    std::string classifier_mode = "triplet";  // "triplet" | "verb"
    bool use_pge = true;
    bool use_ige = true;
    bool use_object_text = true;
    bool use_interaction_text = true;
    double theta_obj = 100.0;
    double theta_inter = 100.0;
    bool freeze_text_classifiers = false;  // zero-shot mode

    void validate() const;
};

ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json model_config_to_json(const ModelConfig& cfg);

// Per-decoder-layer features: instance branch halves, the interaction queries
// assembled from them, and the interaction branch outputs. p_a holds the
// interaction features projected into the c_t classifier space (triplet mode
// only; empty in verb mode, which has no such space).
struct LayerOutputs {
    std::vector<ag::Value> v_h, v_o, q_a, v_a, p_a;
};

// Per-layer head outputs. Boxes are [N_q,4] in normalized center form;
// object logits are [N_q, N_o+1] with the no-object column last; interaction
// logits are [N_q, N_a] in triplet mode (restricted to active rows at train
// time) or [N_q, n_verbs] in verb mode.
struct PredictionSet {
    std::vector<ag::Value> human_boxes, object_boxes, object_logits, inter_logits;
};

struct ForwardResult {
    PredictionSet preds;
    LayerOutputs layers;
};

struct GenModel {
    ModelConfig cfg;
    int n_objects = 0, n_hoi = 0, n_verbs = 0;
    nn::ParamStore params;

    std::vector<nn::ConvLayer> backbone;
    nn::ConvLayer proj;
    std::vector<nn::EncoderLayer> encoder;

    ag::Value q_h, q_o, p_q;  // p-GE on: two query sets plus shared positions
    ag::Value q_u;            // p-GE off: single unified set
    ag::Value e_a;            // i-GE off: learnable interaction embedding

    std::vector<nn::DecoderLayer> inst_dec, inter_dec;
    nn::Mlp human_box_head, object_box_head;
    nn::Linear obj_proj, inter_proj, verb_head;
    ag::Value no_obj_row;  // [1, c_t], scored like a classifier row

    vlkt::Classifier obj_cls, inter_cls;

    bool verb_mode() const { return cfg.classifier_mode == "verb"; }
};

// Builds and initializes a model. The provider seeds the classifier rows from
// prompt text; pass nullptr (or disable the use_*_text switches) for random
// unit-row classifiers.
GenModel build_model(const ModelConfig& cfg, const LabelSpace& ls,
                     const vlkt::EmbeddingProvider* provider, uint64_t seed);

// Sinusoidal 2D positions for an hp x wp token grid, [hp*wp, channels].
ag::Value sine_positions(int hp, int wp, int channels);

ag::Value image_to_planes(const Image& img);

// Eq. 1: [Q_h + P_q ; Q_o + P_q], or the duplicated unified set without p-GE.
ag::Value build_instance_queries(const GenModel& m);

// Eq. 2: elementwise (V_h + V_o) / 2; without i-GE, the learnable embedding
// (plus P_q when present).
ag::Value make_interaction_queries(const GenModel& m, const ag::Value& v_h, const ag::Value& v_o);

ForwardResult forward(const GenModel& m, const Image& img);

// Checkpoints: magic "GHCK", embedded config JSON (model config plus caller
// metadata), then named float32 payloads in parameter-store order.
void save_checkpoint(const GenModel& m, const std::string& path,
                     const nlohmann::json& metadata);
struct LoadedCheckpoint {
    GenModel model;
    nlohmann::json metadata;
};
LoadedCheckpoint load_checkpoint(const std::string& path, const LabelSpace& ls);

}  // namespace hoidet
