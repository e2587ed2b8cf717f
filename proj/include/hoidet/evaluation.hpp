#pragma once

#include "hoidet/data.hpp"
#include "hoidet/inference.hpp"
#include "hoidet/label_space.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace hoidet::eval {

// One ground-truth pair of one HOI category, exploded from a multi-label
// annotation. Boxes are pixel corners like detections.
struct GtPair {
    std::array<double, 4> human_box{}, object_box{};
    int hoi_id = 0;
};

// Matches a detection against the unused ground truth of its own category
// that maximizes the smaller of the two IoUs, provided both exceed 0.5.
// Returns the matched index or none; the caller marks the pair used.
std::optional<size_t> match_detection(const infer::Detection& det,
                                      const std::vector<GtPair>& gts,
                                      const std::vector<char>& used);

// Area under the precision-recall curve with the precision envelope (each
// precision replaced by the maximum at equal or higher recall), recall
// denominated by n_gt. The flag sequence must already be sorted by score
// descending.
double average_precision(const std::vector<char>& is_tp, int64_t n_gt);

struct EvalReport {
    std::vector<double> per_hoi_ap;  // NaN where the category has no GT
    std::vector<int64_t> counts;     // GT pair totals per category
    double map_full = 0.0;
    // aggregates that need rarity or split information stay NaN without it
    double map_rare = 0.0, map_nonrare = 0.0;
    double map_seen = 0.0, map_unseen = 0.0;
};

// Full mAP protocol: per category, detections across the whole dataset are
// ranked by score and matched greedily; each GT pair is claimed at most
// once. Aggregates are unweighted means over their category sets, skipping
// categories with zero GT. Rare/non-rare come from the split when present,
// otherwise from the label space's train counts.
EvalReport evaluate(const std::vector<infer::ImageDetections>& dets,
                    const data::DatasetManifest& gt, const LabelSpace& ls,
                    const SplitSpec* split = nullptr);

nlohmann::json report_to_json(const EvalReport& r, const LabelSpace& ls);
void save_report_json(const EvalReport& r, const LabelSpace& ls, const std::string& path);
void save_report_csv(const EvalReport& r, const LabelSpace& ls, const std::string& path);

}  // namespace hoidet::eval
