#include <doctest.h>

#include "hoidet/label_space.hpp"
#include "hoidet/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <set>

using namespace hoidet;

namespace {

LabelSpace toy_crossed(int n_verbs, int n_objects) {
    std::vector<ObjectRec> objects;
    for (int i = 0; i < n_objects; ++i) objects.push_back({i, "obj" + std::to_string(i), "a"});
    std::vector<VerbRec> verbs;
    for (int i = 0; i < n_verbs; ++i)
        verbs.push_back({i, "verb" + std::to_string(i), "verbing" + std::to_string(i), false});
    std::vector<TripletRec> triplets;
    int id = 0;
    for (int v = 0; v < n_verbs; ++v)
        for (int o = 0; o < n_objects; ++o) triplets.push_back({id++, v, o});
    return build_label_space(objects, verbs, triplets);
}

std::string fixture_path(const char* name) {
    return std::string(HOIDET_SOURCE_DIR) + "/data/" + name;
}

}  // namespace

TEST_CASE("build_label_space validates") {
    auto singleton = build_label_space({{0, "apple", "an"}}, {{0, "eat", "eating", false}},
                                       {{0, 0, 0}});
    CHECK(singleton.expansion_map == std::vector<int>{0});
    CHECK(singleton.n_hoi() == 1);

    // dangling verb id
    std::vector<VerbRec> five;
    for (int i = 0; i < 5; ++i) five.push_back({i, "v" + std::to_string(i), "ving", false});
    CHECK_THROWS_WITH_AS(build_label_space({{0, "apple", "an"}}, five, {{0, 99, 0}}),
                         doctest::Contains("verb id 99"), std::runtime_error);

    // duplicate object name
    CHECK_THROWS_WITH_AS(
        build_label_space({{0, "apple", "an"}, {1, "apple", "an"}}, five, {{0, 0, 0}}),
        doctest::Contains("duplicate"), std::runtime_error);

    // duplicate (verb, object) pair
    CHECK_THROWS_WITH_AS(build_label_space({{0, "apple", "an"}}, five, {{0, 1, 0}, {1, 1, 0}}),
                         doctest::Contains("duplicate (verb,object)"), std::runtime_error);
}

TEST_CASE("expand_object_scores copy-pastes by object id") {
    auto ls = build_label_space({{0, "A", "a"}, {1, "B", "a"}},
                                {{0, "v1", "v1ing", false}, {1, "v2", "v2ing", false}},
                                {{0, 0, 0}, {1, 1, 0}, {2, 0, 1}});
    auto out = expand_object_scores({0.8, 0.5}, ls);
    CHECK(out == std::vector<double>{0.8, 0.8, 0.5});
    CHECK_THROWS_AS(expand_object_scores({0.8}, ls), std::runtime_error);

    // permuting the input scores permutes outputs consistently with the map
    auto swapped = expand_object_scores({0.5, 0.8}, ls);
    for (int h = 0; h < ls.n_hoi(); ++h) {
        int o = ls.expansion_map[h];
        CHECK(swapped[h] == (o == 0 ? 0.5 : 0.8));
    }
}

TEST_CASE("rare_split boundaries") {
    auto rs = rare_split({0, 9, 10});
    CHECK(rs.rare == std::vector<int>{0, 1});
    CHECK(rs.non_rare == std::vector<int>{2});
    CHECK(rare_split({10, 10, 10}).rare.empty());
}

TEST_CASE("uc splits order by count with id tie-break") {
    auto ls = toy_crossed(2, 3);  // 6 triplets
    std::vector<int64_t> counts{5, 1, 1, 9, 0, 7};
    auto rf = make_zero_shot_split(ls, ZeroShotSetting::RF_UC, {.n_unseen = 3}, counts);
    CHECK(rf.unseen == std::vector<int>{1, 2, 4});  // counts 1,1,0; tie 1<2
    auto nf = make_zero_shot_split(ls, ZeroShotSetting::NF_UC, {.n_unseen = 3}, counts);
    CHECK(nf.unseen == std::vector<int>{0, 3, 5});
    std::vector<int> inter;
    std::set_intersection(rf.unseen.begin(), rf.unseen.end(), nf.unseen.begin(), nf.unseen.end(),
                          std::back_inserter(inter));
    CHECK(inter.empty());
}

TEST_CASE("uv on a fully crossed toy space") {
    auto ls = toy_crossed(5, 4);
    auto spec = make_zero_shot_split(ls, ZeroShotSetting::UV, {.unseen_verbs = {1, 3}},
                                     std::vector<int64_t>(20, 50));
    CHECK(spec.unseen.size() == 8);
    CHECK(spec.seen.size() == 12);
}

TEST_CASE("splits partition the id set on random taxonomies") {
    Rng rng(99);
    for (int trial = 0; trial < 5; ++trial) {
        int nv = 3 + static_cast<int>(rng.uniform_int(4));
        int no = 2 + static_cast<int>(rng.uniform_int(4));
        auto ls = toy_crossed(nv, no);
        std::vector<int64_t> counts(ls.n_hoi());
        for (auto& c : counts) c = static_cast<int64_t>(rng.uniform_int(40));

        std::vector<SplitSpec> specs;
        specs.push_back(make_zero_shot_split(ls, ZeroShotSetting::RF_UC, {.n_unseen = 2}, counts));
        specs.push_back(make_zero_shot_split(ls, ZeroShotSetting::NF_UC, {.n_unseen = 2}, counts));
        specs.push_back(make_zero_shot_split(
            ls, ZeroShotSetting::UO, {.n_unseen = 1, .seed = 7 + trial}, counts));
        specs.push_back(make_zero_shot_split(
            ls, ZeroShotSetting::UV, {.n_unseen = 1, .seed = 7 + trial}, counts));
        for (const auto& s : specs) {
            std::set<int> all(s.seen.begin(), s.seen.end());
            all.insert(s.unseen.begin(), s.unseen.end());
            CHECK(static_cast<int>(all.size()) == ls.n_hoi());
            CHECK(static_cast<int>(s.seen.size() + s.unseen.size()) == ls.n_hoi());
            CHECK(static_cast<int>(s.rare.size() + s.non_rare.size()) == ls.n_hoi());
        }
    }
}

TEST_CASE("hico fixture cardinalities") {
    auto ls = load_label_space(fixture_path("hico_label_space.json"));
    CHECK(ls.n_hoi() == 600);
    CHECK(ls.n_objects() == 80);
    CHECK(ls.n_verbs() == 117);
    REQUIRE(ls.has_counts());

    auto rs = rare_split(ls.train_counts);
    CHECK(rs.rare.size() == 138);

    auto rf = make_zero_shot_split(ls, ZeroShotSetting::RF_UC, {.n_unseen = 120}, ls.train_counts);
    CHECK(rf.unseen.size() == 120);
    CHECK(rf.seen.size() == 480);
    auto nf = make_zero_shot_split(ls, ZeroShotSetting::NF_UC, {.n_unseen = 120}, ls.train_counts);
    CHECK(nf.unseen.size() == 120);
    CHECK(nf.seen.size() == 480);

    std::ifstream pre_in(fixture_path("hico_zero_shot_presets.json"));
    REQUIRE(pre_in.good());
    nlohmann::json pre;
    pre_in >> pre;
    auto uo = make_zero_shot_split(
        ls, ZeroShotSetting::UO, {.unseen_objects = pre.at("uo_objects").get<std::vector<int>>()},
        ls.train_counts);
    CHECK(uo.unseen.size() == 100);
    CHECK(uo.seen.size() == 500);
    auto uv = make_zero_shot_split(
        ls, ZeroShotSetting::UV, {.unseen_verbs = pre.at("uv_verbs").get<std::vector<int>>()},
        ls.train_counts);
    CHECK(uv.unseen.size() == 84);
    CHECK(uv.seen.size() == 516);
}

TEST_CASE("label space and split json round trips") {
    auto ls = toy_crossed(3, 2);
    ls.train_counts.assign(ls.n_hoi(), 4);
    std::string lp = "test_ls_roundtrip.json";
    save_label_space(ls, lp);
    auto back = load_label_space(lp);
    CHECK(back.n_hoi() == ls.n_hoi());
    CHECK(back.verbs[1].gerund == ls.verbs[1].gerund);
    CHECK(back.train_counts == ls.train_counts);

    auto spec = make_zero_shot_split(back, ZeroShotSetting::NF_UC, {.n_unseen = 2},
                                     back.train_counts);
    std::string sp = "test_split_roundtrip.json";
    save_split(spec, sp);
    auto spec2 = load_split(sp);
    CHECK(spec2.setting == spec.setting);
    CHECK(spec2.seen == spec.seen);
    CHECK(spec2.unseen == spec.unseen);
    std::remove(lp.c_str());
    std::remove(sp.c_str());
}
