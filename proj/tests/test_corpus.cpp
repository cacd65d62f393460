#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "cigli/corpus.hpp"
#include "support/caption_fuzz.hpp"

using namespace cigli::corpus;
using nlohmann::json;

namespace {

std::string line(const std::string& id, const std::string& sentence, const std::string& label) {
  return json{{"identifier", id}, {"sentence", sentence}, {"label", label}, {"left_image", id + "-0.png"},
              {"right_image", id + "-1.png"}}
      .dump();
}

DataPoint point(const std::string& id, const std::string& caption, bool label) {
  DataPoint dp;
  dp.identifier = id;
  dp.caption = caption;
  dp.label = label;
  return dp;
}

std::vector<std::string> ids(const Dataset& ds) {
  std::vector<std::string> out;
  for (const auto& p : ds.points) out.push_back(p.identifier);
  return out;
}

}  // namespace

TEST_CASE("golden caption corpus") {
  std::ifstream in(std::string(CIGLI_TEST_DATA_DIR) + "/golden_captions.json");
  REQUIRE(in);
  const json golden = json::parse(in);
  REQUIRE(golden.size() == 30);
  for (const auto& g : golden) {
    const auto caption = g["caption"].get<std::string>();
    CAPTURE(caption);
    const FilterDecision d = filter_caption(caption);
    CHECK(d.qualified == g["qualified"].get<bool>());
    if (g["rule"].is_null()) {
      CHECK_FALSE(d.matched_rule.has_value());
    } else {
      REQUIRE(d.matched_rule.has_value());
      CHECK(*d.matched_rule == g["rule"].get<std::string>());
    }
    CHECK(d.qualified == (d.matched_rule && is_include_rule(*d.matched_rule)));
  }
}

TEST_CASE("filter examples") {
  CHECK(filter_caption("There are two dogs in total").qualified);
  CHECK(*filter_caption("There are two dogs in total").matched_rule == "aggregate_count");
  CHECK(*filter_caption("One image features puppies next to an adult dog").matched_rule == "disjunctive_placement");
  CHECK_FALSE(filter_caption("The right image contains exactly one gorilla").qualified);
  CHECK_THROWS_AS(filter_caption(""), CorpusError);
  CHECK_THROWS_AS(filter_caption("   \t "), CorpusError);
  CHECK(filter_caption("there ARE two\tdogs   IN total") .qualified);
}

TEST_CASE("synthetic caption forms") {
  CHECK(filter_caption("there are exactly three circles in total").qualified);
  CHECK(filter_caption("there is exactly one square in total").qualified);
  CHECK(filter_caption("one image has no triangles while the other has four triangles").qualified);
  CHECK_FALSE(filter_caption("the left image contains exactly three circles").qualified);
}

TEST_CASE("load_nlvr2_jsonl") {
  SUBCASE("three well-formed lines") {
    const auto r = parse_nlvr2_jsonl(line("a-0", "x y", "True") + "\n" + line("b-0", "z", "False") + "\n" +
                                     line("c-0", "w", "True") + "\n");
    CHECK(r.dataset.points.size() == 3);
    CHECK(r.errors.empty());
    CHECK(ids(r.dataset) == std::vector<std::string>{"a-0", "b-0", "c-0"});
    CHECK(r.dataset.points[1].label == false);
  }
  SUBCASE("empty file warns") {
    const auto r = parse_nlvr2_jsonl("");
    CHECK(r.dataset.points.empty());
    CHECK(r.warnings.size() == 1);
  }
  SUBCASE("boolean labels and image fallbacks") {
    const auto r = parse_nlvr2_jsonl(R"({"identifier":"dev-850-0-1","sentence":"s","label":true})");
    REQUIRE(r.dataset.points.size() == 1);
    CHECK(r.dataset.points[0].label);
    CHECK(r.dataset.points[0].left_image == "dev-850-0-img0.png");
    CHECK(r.dataset.points[0].right_image == "dev-850-0-img1.png");
  }
  SUBCASE("missing sentence rejects only that line") {
    std::string text;
    for (int i = 0; i < 12; ++i) text += line("id-" + std::to_string(i), "two dogs", "True") + "\n";
    text += R"({"identifier":"bad","label":"True"})" "\n";
    const auto r = parse_nlvr2_jsonl(text);
    CHECK(r.dataset.points.size() == 12);
    REQUIRE(r.errors.size() == 1);
    CHECK(r.errors[0].line == 13);
    CHECK(r.errors[0].message.find("sentence") != std::string::npos);
  }
  SUBCASE("more than 10% malformed is a file error") {
    std::string text = line("a", "s", "True") + "\nnot json\n" + line("b", "s", "maybe") + "\n";
    CHECK_THROWS_AS(parse_nlvr2_jsonl(text), CorpusError);
  }
  SUBCASE("duplicate identifiers keep the first") {
    const auto r = parse_nlvr2_jsonl(line("a", "first", "True") + "\n" + line("a", "second", "True") + "\n");
    REQUIRE(r.dataset.points.size() == 1);
    CHECK(r.dataset.points[0].caption == "first");
    CHECK(r.duplicates == 1);
  }
  SUBCASE("extra keys pass through") {
    const auto r = parse_nlvr2_jsonl(R"({"identifier":"a","sentence":"s","label":"True","template_id":"aggregate"})");
    CHECK(r.dataset.points[0].extra["template_id"] == "aggregate");
  }
}

TEST_CASE("load from file") {
  const auto path = std::filesystem::temp_directory_path() / "cigli_corpus_test.jsonl";
  {
    std::ofstream out(path);
    out << line("x-1", "There are two dogs in total", "True") << "\n";
  }
  CHECK(load_nlvr2_jsonl(path).dataset.points.size() == 1);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_nlvr2_jsonl(path), CorpusError);
}

TEST_CASE("build_cigli_dataset truth table") {
  Dataset raw;
  raw.points = {point("tq", "There are two dogs in total", true), point("tu", "A dog is running", true),
                point("fq", "There are two dogs in total", false), point("fu", "A dog is running", false)};
  const auto out = build_cigli_dataset(raw);
  CHECK(ids(out.dataset) == std::vector<std::string>{"tq"});
  CHECK(out.stats.kept == 1);
  CHECK(out.stats.dropped_false == 2);
  CHECK(out.stats.dropped_unqualified == 1);
  CHECK(out.stats.dropped() == 3);
  CHECK(out.stats.per_rule.at("aggregate_count") == 1);
  CHECK(out.stats.per_rule.at("none") == 1);
  CHECK(out.dataset.provenance == Provenance::nlvr2_filtered);
  CHECK(out.dataset.points[0].extra["matched_rule"] == "aggregate_count");
}

TEST_CASE("build_cigli_dataset edge cases") {
  Dataset all_false;
  for (int i = 0; i < 5; ++i) all_false.points.push_back(point("f" + std::to_string(i), "There are two dogs in total", false));
  const auto out = build_cigli_dataset(all_false);
  CHECK(out.dataset.points.empty());
  CHECK(out.stats.dropped_false == 5);

  const auto empty = build_cigli_dataset(Dataset{});
  CHECK(empty.dataset.points.empty());
  CHECK(empty.stats.total_in == 0);

  Dataset unusable;
  unusable.points.push_back(point("e", " ", true));
  CHECK(build_cigli_dataset(unusable).stats.dropped_unusable == 1);
}

TEST_CASE("filter properties on fuzzed captions") {
  const Dataset raw = cigli::testing::fuzz_dataset(1000, 99);
  const auto once = build_cigli_dataset(raw);
  const auto twice = build_cigli_dataset(once.dataset);
  CHECK(ids(once.dataset) == ids(twice.dataset));
  CHECK(ids(build_cigli_dataset(raw).dataset) == ids(once.dataset));
  CHECK(build_cigli_dataset(raw).stats.to_json() == once.stats.to_json());
  for (const auto& p : once.dataset.points) CHECK(p.label);
  CHECK(once.stats.kept > 0);
  CHECK(once.stats.dropped_unqualified > 0);

  // Appending points never removes a kept one.
  Dataset grown = raw;
  const Dataset extra = cigli::testing::fuzz_dataset(200, 7);
  grown.points.insert(grown.points.end(), extra.points.begin(), extra.points.end());
  const auto grown_ids = ids(build_cigli_dataset(grown).dataset);
  for (const auto& id : ids(once.dataset))
    CHECK(std::find(grown_ids.begin(), grown_ids.end(), id) != grown_ids.end());
}

TEST_CASE("split_train_val is deterministic and partitions") {
  const Dataset raw = cigli::testing::fuzz_dataset(2000, 5);
  const auto [train, val] = split_train_val(raw, 0.05, 11);
  CHECK(train.points.size() + val.points.size() == raw.points.size());
  CHECK(val.points.size() > 60);
  CHECK(val.points.size() < 140);
  const auto [train2, val2] = split_train_val(raw, 0.05, 11);
  CHECK(ids(val) == ids(val2));
  const auto [train3, val3] = split_train_val(raw, 0.05, 12);
  CHECK(ids(val) != ids(val3));
}

TEST_CASE("jsonl output carries matched_rule") {
  DataPoint dp = point("a", "There are two dogs in total", true);
  const FilterDecision d = filter_qualified(dp);
  const json j = to_json(dp, &d);
  CHECK(j["matched_rule"] == "aggregate_count");
  CHECK(j["label"] == "True");
  const auto r = parse_nlvr2_jsonl(j.dump());
  CHECK(r.dataset.points[0].caption == dp.caption);
}
