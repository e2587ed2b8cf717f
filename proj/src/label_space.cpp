#include "hoidet/label_space.hpp"

#include "hoidet/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>
#include <unordered_set>

using nlohmann::json;

namespace hoidet {

namespace {

template <typename T>
void check_ids_and_names(const std::vector<T>& recs, const char* kind) {
    if (recs.empty()) throw std::runtime_error(std::string(kind) + " list is empty");
    std::unordered_set<std::string> names;
    for (size_t i = 0; i < recs.size(); ++i) {
        if (recs[i].id != static_cast<int>(i))
            throw std::runtime_error(std::string(kind) + " ids must be contiguous from 0; got id " +
                                     std::to_string(recs[i].id) + " at position " + std::to_string(i));
        if (!names.insert(recs[i].name).second)
            throw std::runtime_error("duplicate " + std::string(kind) + " name: " + recs[i].name);
    }
}

std::vector<int> sorted(std::vector<int> v) {
    std::sort(v.begin(), v.end());
    return v;
}

}  // namespace

LabelSpace build_label_space(std::vector<ObjectRec> objects, std::vector<VerbRec> verbs,
                             std::vector<TripletRec> triplets) {
    check_ids_and_names(objects, "object");
    check_ids_and_names(verbs, "verb");
    if (triplets.empty()) throw std::runtime_error("triplet list is empty");

    std::set<std::pair<int, int>> pairs;
    for (size_t i = 0; i < triplets.size(); ++i) {
        const auto& t = triplets[i];
        if (t.id != static_cast<int>(i))
            throw std::runtime_error("triplet ids must be contiguous from 0; got id " +
                                     std::to_string(t.id));
        if (t.verb_id < 0 || t.verb_id >= static_cast<int>(verbs.size()))
            throw std::runtime_error("triplet " + std::to_string(t.id) + " references unknown verb id " +
                                     std::to_string(t.verb_id));
        if (t.object_id < 0 || t.object_id >= static_cast<int>(objects.size()))
            throw std::runtime_error("triplet " + std::to_string(t.id) +
                                     " references unknown object id " + std::to_string(t.object_id));
        if (!pairs.insert({t.verb_id, t.object_id}).second)
            throw std::runtime_error("duplicate (verb,object) pair in triplet " + std::to_string(t.id));
    }

    LabelSpace ls;
    ls.objects = std::move(objects);
    ls.verbs = std::move(verbs);
    ls.triplets = std::move(triplets);
    ls.expansion_map.reserve(ls.triplets.size());
    for (const auto& t : ls.triplets) ls.expansion_map.push_back(t.object_id);
    return ls;
}

std::vector<double> expand_object_scores(const std::vector<double>& object_scores,
                                         const LabelSpace& ls) {
    if (static_cast<int>(object_scores.size()) != ls.n_objects())
        throw std::runtime_error("expected " + std::to_string(ls.n_objects()) +
                                 " object scores, got " + std::to_string(object_scores.size()));
    std::vector<double> out(ls.n_hoi());
    for (int h = 0; h < ls.n_hoi(); ++h) out[h] = object_scores[ls.expansion_map[h]];
    return out;
}

RaritySplit rare_split(const std::vector<int64_t>& train_counts) {
    RaritySplit rs;
    for (size_t h = 0; h < train_counts.size(); ++h) {
        (train_counts[h] < 10 ? rs.rare : rs.non_rare).push_back(static_cast<int>(h));
    }
    return rs;
}

std::string setting_name(ZeroShotSetting s) {
    switch (s) {
        case ZeroShotSetting::RF_UC: return "RF-UC";
        case ZeroShotSetting::NF_UC: return "NF-UC";
        case ZeroShotSetting::UO: return "UO";
        case ZeroShotSetting::UV: return "UV";
    }
    throw std::runtime_error("bad setting");
}

ZeroShotSetting setting_from_name(const std::string& name) {
    if (name == "RF-UC") return ZeroShotSetting::RF_UC;
    if (name == "NF-UC") return ZeroShotSetting::NF_UC;
    if (name == "UO") return ZeroShotSetting::UO;
    if (name == "UV") return ZeroShotSetting::UV;
    throw std::runtime_error("unknown zero-shot setting: " + name);
}

namespace {

// n_unseen lowest (rare_first) or highest counts, ties by ascending hoi id.
std::vector<int> pick_by_count(const std::vector<int64_t>& counts, int n_unseen, bool rare_first) {
    if (n_unseen < 0 || n_unseen > static_cast<int>(counts.size()))
        throw std::runtime_error("n_unseen out of range");
    std::vector<int> ids(counts.size());
    std::iota(ids.begin(), ids.end(), 0);
    std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) {
        if (counts[a] != counts[b]) return rare_first ? counts[a] < counts[b] : counts[a] > counts[b];
        return a < b;
    });
    ids.resize(n_unseen);
    return ids;
}

std::vector<int> sample_ids(int universe, int want, uint64_t seed, const std::vector<bool>& allowed) {
    std::vector<int> pool;
    for (int i = 0; i < universe; ++i)
        if (allowed.empty() || allowed[i]) pool.push_back(i);
    if (want > static_cast<int>(pool.size()))
        throw std::runtime_error("cannot sample " + std::to_string(want) + " ids from pool of " +
                                 std::to_string(pool.size()));
    Rng rng(mix_seed(seed, fnv1a64("zero-shot-sample")));
    for (int i = 0; i < want; ++i) {
        int j = i + static_cast<int>(rng.uniform_int(pool.size() - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(want);
    return pool;
}

}  // namespace

SplitSpec make_zero_shot_split(const LabelSpace& ls, ZeroShotSetting setting,
                               const ZeroShotParams& params,
                               const std::vector<int64_t>& train_counts) {
    SplitSpec spec;
    spec.setting = setting;

    std::vector<bool> is_unseen(ls.n_hoi(), false);
    switch (setting) {
        case ZeroShotSetting::RF_UC:
        case ZeroShotSetting::NF_UC: {
            if (static_cast<int>(train_counts.size()) != ls.n_hoi())
                throw std::runtime_error("UC splits need one train count per hoi category");
            auto ids = pick_by_count(train_counts, params.n_unseen,
                                     setting == ZeroShotSetting::RF_UC);
            for (int h : ids) is_unseen[h] = true;
            break;
        }
        case ZeroShotSetting::UO: {
            auto obj_ids = params.unseen_objects;
            if (obj_ids.empty() && params.n_unseen > 0) {
                obj_ids = sample_ids(ls.n_objects(), params.n_unseen, params.seed, {});
            }
            std::vector<bool> unseen_obj(ls.n_objects(), false);
            for (int o : obj_ids) {
                if (o < 0 || o >= ls.n_objects())
                    throw std::runtime_error("unseen object id " + std::to_string(o) +
                                             " not in label space");
                unseen_obj[o] = true;
            }
            for (const auto& t : ls.triplets)
                if (unseen_obj[t.object_id]) is_unseen[t.id] = true;
            break;
        }
        case ZeroShotSetting::UV: {
            auto verb_ids = params.unseen_verbs;
            if (verb_ids.empty() && params.n_unseen > 0) {
                // Random selection never picks the no-interaction verb: holding
                // out "no interaction with X" is not a transferable action.
                std::vector<bool> allowed(ls.n_verbs(), true);
                for (const auto& v : ls.verbs)
                    if (v.is_no_interaction) allowed[v.id] = false;
                verb_ids = sample_ids(ls.n_verbs(), params.n_unseen, params.seed, allowed);
            }
            std::vector<bool> unseen_verb(ls.n_verbs(), false);
            for (int v : verb_ids) {
                if (v < 0 || v >= ls.n_verbs())
                    throw std::runtime_error("unseen verb id " + std::to_string(v) +
                                             " not in label space");
                unseen_verb[v] = true;
            }
            for (const auto& t : ls.triplets)
                if (unseen_verb[t.verb_id]) is_unseen[t.id] = true;
            break;
        }
    }

    for (int h = 0; h < ls.n_hoi(); ++h)
        (is_unseen[h] ? spec.unseen : spec.seen).push_back(h);

    if (static_cast<int>(train_counts.size()) == ls.n_hoi()) {
        auto rs = rare_split(train_counts);
        spec.rare = std::move(rs.rare);
        spec.non_rare = std::move(rs.non_rare);
    }
    return spec;
}

LabelSpace load_label_space(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open label space file: " + path);
    json j;
    in >> j;

    std::vector<ObjectRec> objects;
    for (const auto& o : j.at("objects"))
        objects.push_back({o.at("id").get<int>(), o.at("name").get<std::string>(),
                           o.at("article").get<std::string>()});
    std::vector<VerbRec> verbs;
    for (const auto& v : j.at("verbs"))
        verbs.push_back({v.at("id").get<int>(), v.at("name").get<std::string>(),
                         v.value("gerund", std::string()), v.value("is_no_interaction", false)});
    std::vector<TripletRec> triplets;
    for (const auto& t : j.at("triplets"))
        triplets.push_back({t.at("id").get<int>(), t.at("verb_id").get<int>(),
                            t.at("object_id").get<int>()});

    auto ls = build_label_space(std::move(objects), std::move(verbs), std::move(triplets));
    if (j.contains("train_counts")) {
        ls.train_counts = j.at("train_counts").get<std::vector<int64_t>>();
        if (static_cast<int>(ls.train_counts.size()) != ls.n_hoi())
            throw std::runtime_error("train_counts length does not match triplet count");
    }
    return ls;
}

void save_label_space(const LabelSpace& ls, const std::string& path) {
    json j;
    for (const auto& o : ls.objects)
        j["objects"].push_back({{"id", o.id}, {"name", o.name}, {"article", o.article}});
    for (const auto& v : ls.verbs)
        j["verbs"].push_back({{"id", v.id},
                              {"name", v.name},
                              {"gerund", v.gerund},
                              {"is_no_interaction", v.is_no_interaction}});
    for (const auto& t : ls.triplets)
        j["triplets"].push_back({{"id", t.id}, {"verb_id", t.verb_id}, {"object_id", t.object_id}});
    if (ls.has_counts()) j["train_counts"] = ls.train_counts;

    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write label space file: " + path);
    out << j.dump(1) << "\n";
}

SplitSpec load_split(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open split file: " + path);
    json j;
    in >> j;
    SplitSpec s;
    s.setting = setting_from_name(j.at("setting").get<std::string>());
    s.seen = sorted(j.at("seen").get<std::vector<int>>());
    s.unseen = sorted(j.at("unseen").get<std::vector<int>>());
    if (j.contains("rare")) s.rare = sorted(j.at("rare").get<std::vector<int>>());
    if (j.contains("non_rare")) s.non_rare = sorted(j.at("non_rare").get<std::vector<int>>());
    return s;
}

void save_split(const SplitSpec& split, const std::string& path) {
    json j;
    j["setting"] = setting_name(split.setting);
    j["seen"] = split.seen;
    j["unseen"] = split.unseen;
    if (!split.rare.empty() || !split.non_rare.empty()) {
        j["rare"] = split.rare;
        j["non_rare"] = split.non_rare;
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write split file: " + path);
    out << j.dump(1) << "\n";
}

}  // namespace hoidet
