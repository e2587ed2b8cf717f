#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace hoidet {

struct ObjectRec {
    int id = 0;
    std::string name;
    std::string article;  // "a" or "an", used by the prompt templates
};

struct VerbRec {
    int id = 0;
    std::string name;
    std::string gerund;  // stored explicitly; English -ing rules are irregular
    bool is_no_interaction = false;
};

struct TripletRec {
    int id = 0;
    int verb_id = 0;
    int object_id = 0;
};

// The HOI taxonomy: object and verb vocabularies plus the set of valid
// (verb, object) triplet categories. Immutable once built.
struct LabelSpace {
    std::vector<ObjectRec> objects;
    std::vector<VerbRec> verbs;
    std::vector<TripletRec> triplets;
    std::vector<int> expansion_map;      // hoi id -> object id
    std::vector<int64_t> train_counts;   // optional per-hoi instance counts

    int n_objects() const { return static_cast<int>(objects.size()); }
    int n_verbs() const { return static_cast<int>(verbs.size()); }
    int n_hoi() const { return static_cast<int>(triplets.size()); }
    bool has_counts() const { return !train_counts.empty(); }
};

LabelSpace build_label_space(std::vector<ObjectRec> objects, std::vector<VerbRec> verbs,
                             std::vector<TripletRec> triplets);

// out[h] = scores[expansion_map[h]]; plain copy-paste of object scores onto
// the triplet axis.
std::vector<double> expand_object_scores(const std::vector<double>& object_scores,
                                         const LabelSpace& ls);

// rare = categories with fewer than 10 training instances.
struct RaritySplit {
    std::vector<int> rare;
    std::vector<int> non_rare;
};
RaritySplit rare_split(const std::vector<int64_t>& train_counts);

enum class ZeroShotSetting { RF_UC, NF_UC, UO, UV };

std::string setting_name(ZeroShotSetting s);
ZeroShotSetting setting_from_name(const std::string& name);

struct SplitSpec {
    ZeroShotSetting setting = ZeroShotSetting::RF_UC;
    std::vector<int> seen;      // sorted hoi ids
    std::vector<int> unseen;    // sorted hoi ids
    std::vector<int> rare;      // from train counts, when available
    std::vector<int> non_rare;
};

struct ZeroShotParams {
    int n_unseen = 0;                 // RF-UC / NF-UC, or sampled UO/UV sizes
    std::vector<int> unseen_objects;  // UO: explicit object ids
    std::vector<int> unseen_verbs;    // UV: explicit verb ids
    uint64_t seed = 0;                // used only when UO/UV lists are sampled
};

SplitSpec make_zero_shot_split(const LabelSpace& ls, ZeroShotSetting setting,
                               const ZeroShotParams& params,
                               const std::vector<int64_t>& train_counts);

// JSON round trips. The label-space file carries objects/verbs/triplets and
// optional train_counts; split files carry the setting plus seen/unseen ids.
LabelSpace load_label_space(const std::string& path);
void save_label_space(const LabelSpace& ls, const std::string& path);
SplitSpec load_split(const std::string& path);
void save_split(const SplitSpec& split, const std::string& path);

}  // namespace hoidet
