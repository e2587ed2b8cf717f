#pragma once

#include "hoidet/gen_model.hpp"
#include "hoidet/label_space.hpp"
#include "hoidet/rng.hpp"
#include "hoidet/vlkt.hpp"

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace hoidet::train {

struct LossWeights {
    double lambda_b = 2.5;
    double lambda_u = 1.0;
    double lambda_c_o = 1.0;
    double lambda_c_a = 1.0;
    double lambda_mimic = 20.0;
};

struct FocalParams {
    double alpha = 0.25;
    double gamma = 2.0;
};

// One annotated ground-truth pair; boxes in normalized center form.
struct GtInstance {
    std::array<double, 4> human_box{};
    std::array<double, 4> object_box{};
    int object_id = 0;
    std::vector<int> hoi_ids;
};

struct TrainSample {
    std::string image_id;
    Image image;
    std::vector<GtInstance> gts;
    std::vector<double> teacher;  // unit-norm, may be empty when mimic is off
};

struct MatchResult {
    std::vector<std::pair<int, int>> pairs;  // (query index, gt index)
    std::vector<int> unmatched_queries;
};

// Minimum-cost assignment of every ground truth to a distinct query.
// cost[q][g]; requires N_q >= G and finite entries. Ties resolve to the
// lexicographically smallest (query(gt0), query(gt1), ...) vector.
MatchResult hungarian_match(const std::vector<std::vector<double>>& cost);

// Per-image targets translated to classifier column space (triplet columns,
// restricted to active rows in zero-shot training, or verb columns).
struct PreparedTargets {
    std::vector<GtInstance> gts;                 // after any seen-filtering
    std::vector<std::vector<int>> label_cols;    // per gt, positive columns
    int n_cols = 0;
};

// col_of_hoi[h] = column index for hoi id h, or -1 when the category is not
// trained (zero-shot unseen).
PreparedTargets prepare_targets(const std::vector<GtInstance>& gts,
                                const std::vector<int>& col_of_hoi, int n_cols,
                                const LabelSpace& ls, bool verb_mode);

// Eq. 5 for a single (query, gt) cell, evaluated on plain values.
double pair_cost(const double* human_box, const double* object_box, const double* object_logits,
                 int n_object_logits, const double* inter_logits, const PreparedTargets& t,
                 int gt_index, const LossWeights& w, const FocalParams& fp);

std::vector<std::vector<double>> build_cost_matrix(const ForwardResult& r, int layer,
                                                   const PreparedTargets& t,
                                                   const LossWeights& w, const FocalParams& fp);

struct LossBreakdown {
    // per decoder layer
    std::vector<double> l_box, l_giou, l_obj_ce, l_inter_focal;
    double l_mimic = 0.0;
    double total_value = 0.0;
    ag::Value total;  // graph root for backward
};

struct LossOptions {
    LossWeights weights;
    FocalParams focal;
    double no_object_weight = 0.1;
    bool use_mimic = true;
    vlkt::MimicNorm mimic_norm = vlkt::MimicNorm::L1;
};

LossBreakdown compute_losses(const ForwardResult& r, const PreparedTargets& t,
                             const std::vector<MatchResult>& match_per_layer,
                             const LossOptions& opt, const std::vector<double>& teacher);

struct OptimConfig {
    double lr = 1e-4;
    double lr_classifier = 1e-5;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 0.1;
};

// AdamW with decoupled weight decay over the trainable parameters of a store.
// Classifier embedding rows ("*classifier.weight") form a low-lr group.
// Frozen parameters are never touched.
class AdamW {
  public:
    AdamW(nn::ParamStore& params, OptimConfig cfg);
    void step(double lr_scale);
    double clip_gradients();  // returns the pre-clip global norm
    double last_grad_norm() const { return last_norm_; }

  private:
    struct Slot {
        ag::Value p;
        std::vector<double> m, v;
        double lr;
    };
    std::vector<Slot> slots_;
    OptimConfig cfg_;
    int64_t t_ = 0;
    double last_norm_ = 0.0;
};

struct TrainConfig {
    int epochs = 10;
    int batch_size = 4;
    uint64_t seed = 0;
    LossOptions loss;
    OptimConfig optim;
    std::string metrics_path;     // NDJSON, empty to disable
    std::string checkpoint_path;  // written at the end, empty to disable
    nlohmann::json checkpoint_metadata;
    const SplitSpec* split = nullptr;  // zero-shot: train on seen ids only
};

using AugmentFn = std::function<TrainSample(const TrainSample&, Rng&)>;

struct TrainStats {
    int steps = 0;
    std::vector<double> loss_curve;  // per optimizer step
};

TrainStats train(GenModel& model, const std::vector<TrainSample>& dataset, const LabelSpace& ls,
                 const TrainConfig& cfg, const AugmentFn& augment = nullptr);

}  // namespace hoidet::train
