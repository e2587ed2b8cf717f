#pragma once

#include "hoidet/gen_model.hpp"
#include "hoidet/label_space.hpp"

#include <json.hpp>

#include <array>
#include <string>
#include <vector>

namespace hoidet::infer {

// One scored human-object-interaction hypothesis. Boxes are pixel-space
// corners (x1,y1,x2,y2); hoi_id determines object_id through the label
// space's expansion map.
struct Detection {
    std::array<double, 4> human_box{};
    std::array<double, 4> object_box{};
    int object_id = 0;
    int hoi_id = 0;
    double score = 0.0;

    bool operator==(const Detection&) const = default;
};

// Triplet score composition: out[i][h] = s_a[i][h] + e[i][h]^2 with e the
// object probability gathered onto each triplet's object. s_a is [N_q,N_a]
// sigmoid scores, s_o is [N_q,N_o] softmax probabilities over real objects.
std::vector<double> compose_scores(const std::vector<double>& s_a,
                                   const std::vector<double>& s_o, int n_q,
                                   const LabelSpace& ls);

// Global top-K over all (query, hoi) cells, ties broken by (query, hoi).
// Boxes arrive as normalized center form [N_q,4] and leave as pixel corners.
std::vector<Detection> select_topk(const std::vector<double>& composed,
                                   const std::vector<double>& human_boxes,
                                   const std::vector<double>& object_boxes, int n_q,
                                   const LabelSpace& ls, int k, int img_w, int img_h);

// Greedy non-maximum suppression within each hoi_id: a detection is dropped
// when both its human and object IoU against an already-kept higher-scoring
// detection of the same hoi_id exceed iou_threshold.
std::vector<Detection> triplet_nms(std::vector<Detection> dets, double iou_threshold);

// Full post-processing pass over one image: forward, last-layer heads,
// composition, top-K, NMS. The model must carry its full classifier rows
// (zero-shot models widen back after training).
std::vector<Detection> detect(const GenModel& model, const Image& img, const LabelSpace& ls,
                              int k, double iou_threshold);

// Detections file: a flat JSON array of records with their image ids.
struct ImageDetections {
    std::string image_id;
    std::vector<Detection> dets;
};

void save_detections(const std::vector<ImageDetections>& all, const std::string& path);
std::vector<ImageDetections> load_detections(const std::string& path);

nlohmann::json detection_to_json(const Detection& d, const std::string& image_id);

// Copy of the image with detection outlines burned in (humans in one color,
// objects in another), for the CLI's render flag.
Image render_detections(const Image& img, const std::vector<Detection>& dets);

}  // namespace hoidet::infer
