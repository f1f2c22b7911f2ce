#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "support.hpp"

using namespace erratlas;
using namespace testing_support;

namespace {

// Raw edge maps straight from the bundled CSV.
struct RawGraph {
  std::map<std::string, std::set<std::string>> parents;
  std::map<std::string, std::set<std::string>> children;

  RawGraph() {
    std::ifstream in(asset_dir() / "hypernyms.csv");
    std::string line;
    while (std::getline(in, line)) {
      const auto comma = line.find(',');
      const auto c = line.substr(0, comma);
      const auto p = line.substr(comma + 1);
      parents[c].insert(p);
      children[p].insert(c);
    }
  }

  std::set<std::string> ancestors(const std::string& s) const {
    std::set<std::string> out;
    std::vector<std::string> todo{s};
    while (!todo.empty()) {
      auto x = todo.back();
      todo.pop_back();
      auto it = parents.find(x);
      if (it == parents.end()) continue;
      for (const auto& p : it->second) {
        if (out.insert(p).second) todo.push_back(p);
      }
    }
    return out;
  }
};

std::vector<std::string> as_strings(const std::vector<SynsetId>& ids) {
  std::vector<std::string> out;
  for (const auto& i : ids) out.push_back(i.str());
  return out;
}

bool has(const std::vector<SynsetId>& v, const std::string& id) {
  return std::find(v.begin(), v.end(), SynsetId(id)) != v.end();
}

}  // namespace

TEST(LabelSpace, BundledShape) {
  const auto& s = bundled_space();
  EXPECT_EQ(s.size(), 1000u);
  const auto g = s.group_counts();
  EXPECT_EQ(g[0], 410u);
  EXPECT_EQ(g[1], 522u);
  EXPECT_EQ(g[2], 68u);
}

TEST(LabelSpace, BundledSuperclassStats) {
  const auto st = superclass_stats(bundled_space());
  EXPECT_EQ(st.count, 161u);
  EXPECT_EQ(st.min_size, 2u);
  EXPECT_EQ(st.max_size, 31u);
  EXPECT_NEAR(st.mean_size, 6.7, 0.05);
  EXPECT_EQ(st.median_size, 4.0);
  EXPECT_EQ(st.unclassified, 74u);
  EXPECT_EQ(st.per_group[0].count, 50u);
  EXPECT_NEAR(st.per_group[0].mean_size, 9.8, 0.05);
  EXPECT_EQ(st.per_group[1].count, 101u);
  EXPECT_NEAR(st.per_group[1].mean_size, 5.3, 0.05);
}

TEST(LabelSpace, StatsMatchRawJsonRecount) {
  const auto labels = nlohmann::json::parse(io::read_file(asset_dir() / "labels.json"));
  const auto supers = nlohmann::json::parse(io::read_file(asset_dir() / "superclasses.json"));
  std::map<std::string, std::string> group;
  for (const auto& c : labels) group[c["id"]] = c["group"];
  std::vector<std::size_t> sizes;
  std::set<std::string> covered;
  std::map<std::string, std::pair<std::size_t, std::size_t>> per_group;  // count, total size
  for (const auto& [name, members] : supers.items()) {
    sizes.push_back(members.size());
    std::set<std::string> groups;
    for (const auto& m : members) {
      covered.insert(m.get<std::string>());
      groups.insert(group.at(m.get<std::string>()));
    }
    for (const auto& g : groups) {
      per_group[g].first += 1;
      per_group[g].second += members.size();
    }
  }
  const auto st = superclass_stats(bundled_space());
  std::size_t total = 0;
  for (auto s : sizes) total += s;
  EXPECT_EQ(st.count, sizes.size());
  EXPECT_DOUBLE_EQ(st.mean_size, double(total) / double(sizes.size()));
  EXPECT_EQ(st.unclassified, labels.size() - covered.size());
  EXPECT_EQ(st.per_group[0].count, per_group["organism"].first);
  EXPECT_DOUBLE_EQ(st.per_group[1].mean_size, double(per_group["artifact"].second) / per_group["artifact"].first);
}

TEST(LabelSpace, EmptyCatalogueLeavesEveryClassUnclassified) {
  const auto m = load_manifest(asset_dir() / "manifest.json");
  const auto s = LabelSpace::load({m.require("labels"), m.resolve("overlap"), {}, m.resolve("hypernyms")}, {true});
  const auto st = superclass_stats(s);
  EXPECT_EQ(st.count, 0u);
  EXPECT_EQ(st.unclassified, 1000u);
}

TEST(LabelSpace, TuskerOverlapIsDirected) {
  const auto& s = bundled_space();
  EXPECT_TRUE(s.is_overlap_correct("n02504458", "n01871265"));
  EXPECT_FALSE(s.is_overlap_correct("n01871265", "n02504458"));
}

TEST(LabelSpace, OverlapIsReflexive) {
  const auto& s = bundled_space();
  for (ClassIndex c = 0; c < s.size(); ++c) EXPECT_TRUE(s.is_overlap_correct(c, c));
  EXPECT_EQ(s.accepted_pairs().size(), 1001u);
}

TEST(LabelSpace, OverlapEquivalenceIsSymmetric) {
  OverlapSpec ov;
  ov.equivalent.emplace_back(S("n00000010"), S("n00000011"));
  ov.contains.push_back({S("n00000012"), {S("n00000010")}});
  const auto s = make_space({{"n00000010", Group::Other}, {"n00000011", Group::Other}, {"n00000012", Group::Other}},
                            {}, {}, ov);
  EXPECT_TRUE(s.is_overlap_correct("n00000010", "n00000011"));
  EXPECT_TRUE(s.is_overlap_correct("n00000011", "n00000010"));
  EXPECT_TRUE(s.is_overlap_correct("n00000010", "n00000012"));
  EXPECT_FALSE(s.is_overlap_correct("n00000012", "n00000010"));
  EXPECT_FALSE(s.is_overlap_correct("n00000011", "n00000012"));
}

TEST(LabelSpace, SharesSuperclassExamples) {
  const auto& s = bundled_space();
  EXPECT_TRUE(s.shares_superclass("n03110669", "n03394916"));  // cornet, French horn
  EXPECT_TRUE(s.shares_superclass("n02096585", "n02110958"));  // Boston bull, pug
  EXPECT_TRUE(s.shares_superclass("n02096585", "n02085620"));  // Boston bull, Chihuahua
  EXPECT_FALSE(s.shares_superclass("n02110958", "n02085620"));  // pug, Chihuahua
  EXPECT_FALSE(s.shares_superclass("n01440764", "n09256479"));  // tench, coral reef
  const auto boston = s.index_of("n02096585");
  EXPECT_EQ(s.superclasses_of(boston).size(), 2u);
}

TEST(LabelSpace, UnknownSynsetQueries) {
  const auto& s = bundled_space();
  try {
    s.shares_superclass("n99999999", "n01440764");
    FAIL() << "expected UnknownSynset";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::UnknownSynset);
  }
  EXPECT_THROW(s.direct_siblings("n99999999"), Error);
  EXPECT_FALSE(s.in_vocabulary("n02605316"));  // butterfly fish: a graph node, not a class
  EXPECT_TRUE(s.in_vocabulary("n02606052"));
}

TEST(LabelSpace, RockBeautySiblingsAndAncestors) {
  const auto& s = bundled_space();
  const auto sib = s.direct_siblings("n02606052");
  EXPECT_TRUE(has(sib, "n02605703"));  // chaetodon
  EXPECT_TRUE(has(sib, "n02605936"));  // angelfish
  EXPECT_FALSE(has(sib, "n02606052"));

  const auto anc = s.ancestors_below_common("n02606052", "n09256479");
  EXPECT_TRUE(has(anc, "n02605316"));   // butterfly fish
  EXPECT_TRUE(has(anc, "n02554730"));   // percoid fish
  EXPECT_FALSE(has(anc, "n00002684"));  // physical object
  EXPECT_FALSE(has(anc, "n00001740"));  // entity
  EXPECT_TRUE(s.ancestors_below_common("n02606052", "n02606052").empty());
}

TEST(LabelSpace, SiblingsMatchRawEdgesEverywhere) {
  const auto& s = bundled_space();
  RawGraph raw;
  for (const auto& c : s.classes()) {
    std::set<std::string> expected;
    for (const auto& p : raw.parents[c.id.str()]) {
      for (const auto& ch : raw.children[p]) {
        if (ch != c.id.str()) expected.insert(ch);
      }
    }
    const auto got = as_strings(s.direct_siblings(c.id.str()));
    ASSERT_EQ(std::set<std::string>(got.begin(), got.end()), expected) << c.id.str();
  }
}

TEST(LabelSpace, AncestorsBelowCommonMatchSetDifference) {
  const auto& s = bundled_space();
  RawGraph raw;
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> pick(0, s.size() - 1);
  for (int i = 0; i < 400; ++i) {
    const auto a = s.id(static_cast<ClassIndex>(pick(rng))).str();
    const auto b = s.id(static_cast<ClassIndex>(pick(rng))).str();
    auto shared = raw.ancestors(b);
    shared.insert(b);
    std::set<std::string> expected;
    for (const auto& x : raw.ancestors(a)) {
      if (!shared.contains(x)) expected.insert(x);
    }
    const auto got = as_strings(s.ancestors_below_common(a, b));
    ASSERT_EQ(std::set<std::string>(got.begin(), got.end()), expected) << a << " vs " << b;
    ASSERT_TRUE(std::is_sorted(got.begin(), got.end()));
  }
}

TEST(LabelSpace, ChainFixture) {
  // a -> b -> c -> root, d -> root
  const auto s = make_space({{"n00000001", Group::Other}, {"n00000004", Group::Other}}, {},
                            {{"n00000001", "n00000002"},
                             {"n00000002", "n00000003"},
                             {"n00000003", "n00000009"},
                             {"n00000004", "n00000009"}});
  EXPECT_EQ(as_strings(s.ancestors_below_common("n00000001", "n00000004")),
            (std::vector<std::string>{"n00000002", "n00000003"}));
  EXPECT_TRUE(s.direct_siblings("n00000001").empty());  // only child of b
  EXPECT_EQ(as_strings(s.direct_siblings("n00000004")), (std::vector<std::string>{"n00000003"}));
}

TEST(LabelSpace, TwoParentsGiveUnionOfSiblings) {
  // x has parents p and q; p has children x, y; q has children x, z, w.
  const auto s = make_space({{"n00000001", Group::Other}}, {},
                            {{"n00000001", "n00000010"},
                             {"n00000001", "n00000011"},
                             {"n00000002", "n00000010"},
                             {"n00000003", "n00000011"},
                             {"n00000004", "n00000011"}});
  EXPECT_EQ(as_strings(s.direct_siblings("n00000001")),
            (std::vector<std::string>{"n00000002", "n00000003", "n00000004"}));
}

TEST(LabelSpace, MultiParentAncestorsUseDagDifference) {
  // x -> p -> r, x -> q -> r, anchor y -> q
  const auto s = make_space({{"n00000001", Group::Other}, {"n00000005", Group::Other}}, {},
                            {{"n00000001", "n00000002"},
                             {"n00000001", "n00000003"},
                             {"n00000002", "n00000009"},
                             {"n00000003", "n00000009"},
                             {"n00000005", "n00000003"}});
  EXPECT_EQ(as_strings(s.ancestors_below_common("n00000001", "n00000005")), (std::vector<std::string>{"n00000002"}));
}

TEST(LabelSpace, ValidationErrors) {
  auto expect_kind = [](auto&& fn, ErrorKind kind) {
    try {
      fn();
      ADD_FAILURE() << "no error raised";
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), kind) << e.what();
    }
  };
  const std::vector<std::pair<std::string, Group>> two = {{"n00000001", Group::Other}, {"n00000002", Group::Other}};
  expect_kind([&] { make_space(two, {{"s", {"n00000001", "n00000099"}}}); }, ErrorKind::Validation);
  expect_kind([&] { make_space(two, {{"s", {"n00000001"}}}); }, ErrorKind::Validation);
  expect_kind([&] { make_space(two, {{"s", {"n00000001", "n00000001"}}}); }, ErrorKind::Validation);
  expect_kind([&] { make_space(two, {}, {{"n00000001", "n00000002"}, {"n00000002", "n00000001"}}); },
              ErrorKind::Validation);
  expect_kind([&] { make_space({{"n00000001", Group::Other}, {"n00000001", Group::Other}}, {}); },
              ErrorKind::Validation);
  OverlapSpec ov;
  ov.contains.push_back({S("n00000001"), {S("n00000077")}});
  expect_kind([&] { make_space(two, {}, {}, ov); }, ErrorKind::Validation);
  expect_kind(
      [&] {
        std::vector<ClassInfo> infos{{S("n00000001"), "a", Group::Organism}};
        LabelSpace::build(infos, {}, {}, {{S("n00000001"), S("n00000002")}}, {true});
      },
      ErrorKind::Validation);
}

TEST(LabelSpace, MalformedFilesAreParseErrors) {
  TempDir dir("ls");
  io::write_file(dir / "labels.json", "[{\"id\": \"n00000001\", \"name\": \"a\", \"group\": \"other\"}");
  try {
    LabelSpace::load({dir / "labels.json", {}, {}, {}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Parse);
  }
  io::write_file(dir / "labels.json", "[{\"id\": \"x0001\", \"name\": \"a\", \"group\": \"other\"}]");
  EXPECT_THROW(LabelSpace::load({dir / "labels.json", {}, {}, {}}), Error);
  io::write_file(dir / "labels.json", "[{\"id\": \"n00000001\", \"name\": \"a\", \"group\": \"plant\"}]");
  EXPECT_THROW(LabelSpace::load({dir / "labels.json", {}, {}, {}}), Error);
}

TEST(LabelSpace, StrictModeRejectsWrongGroupSplit) {
  TempDir dir("strict");
  auto labels = nlohmann::json::parse(io::read_file(asset_dir() / "labels.json"));
  labels[0]["group"] = labels[0]["group"] == "other" ? "artifact" : "other";
  io::write_file(dir / "labels.json", labels.dump());
  try {
    LabelSpace::load({dir / "labels.json", {}, {}, asset_dir() / "hypernyms.csv"}, {true});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Validation);
  }
  EXPECT_NO_THROW(LabelSpace::load({dir / "labels.json", {}, {}, asset_dir() / "hypernyms.csv"}, {false}));
}
