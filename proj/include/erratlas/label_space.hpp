#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <queue>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "erratlas/csv.hpp"
#include "erratlas/error.hpp"
#include "erratlas/synset.hpp"

namespace erratlas {

using ClassIndex = std::uint32_t;

enum class Group { Organism, Artifact, Other };

inline constexpr std::array<Group, 3> kGroups = {Group::Organism, Group::Artifact, Group::Other};

constexpr std::string_view to_string(Group g) {
  switch (g) {
    case Group::Organism: return "organism";
    case Group::Artifact: return "artifact";
    case Group::Other: return "other";
  }
  return "other";
}

inline Group parse_group(std::string_view s) {
  if (s == "organism") return Group::Organism;
  if (s == "artifact") return Group::Artifact;
  if (s == "other") return Group::Other;
  fail(ErrorKind::Parse, "unknown group '" + std::string(s) + "'");
}

struct ClassInfo {
  SynsetId id;
  std::string name;
  Group group = Group::Other;
};

struct Superclass {
  std::string name;
  std::vector<ClassIndex> members;  // sorted
};

// Raw overlap mapping as stored on disk, before expansion to accepted pairs.
struct OverlapSpec {
  std::vector<std::pair<SynsetId, SynsetId>> equivalent;
  struct Containment {
    SynsetId superset;
    std::vector<SynsetId> subsets;
  };
  std::vector<Containment> contains;
};

// WordNet hypernym subgraph. Multiple parents are allowed; cycles are not.
class HypernymGraph {
 public:
  using Node = std::uint32_t;

  HypernymGraph() = default;

  // Edges are (child, parent). Throws ValidationError on a cycle.
  static HypernymGraph from_edges(const std::vector<std::pair<SynsetId, SynsetId>>& edges) {
    HypernymGraph g;
    for (const auto& [child, parent] : edges) {
      const Node c = g.intern(child);
      const Node p = g.intern(parent);
      if (std::find(g.parents_[c].begin(), g.parents_[c].end(), p) == g.parents_[c].end()) {
        g.parents_[c].push_back(p);
        g.children_[p].push_back(c);
      }
    }
    for (auto& ps : g.parents_) std::sort(ps.begin(), ps.end());
    for (auto& cs : g.children_) std::sort(cs.begin(), cs.end());
    g.check_acyclic();
    return g;
  }

  Node intern(const SynsetId& id) {
    auto [it, inserted] = index_.try_emplace(id.str(), static_cast<Node>(ids_.size()));
    if (inserted) {
      ids_.push_back(id);
      parents_.emplace_back();
      children_.emplace_back();
    }
    return it->second;
  }

  std::size_t size() const noexcept { return ids_.size(); }
  bool contains(std::string_view id) const { return index_.contains(std::string(id)); }

  Node node(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) fail(ErrorKind::UnknownSynset, std::string(id) + " is not in the hypernym graph");
    return it->second;
  }

  const SynsetId& id(Node n) const { return ids_.at(n); }
  const std::vector<Node>& parents(Node n) const { return parents_.at(n); }
  const std::vector<Node>& children(Node n) const { return children_.at(n); }

  // Strict ancestors (excludes n itself).
  std::vector<bool> ancestor_mask(Node n) const {
    std::vector<bool> seen(ids_.size(), false);
    std::vector<Node> stack(parents_[n].begin(), parents_[n].end());
    while (!stack.empty()) {
      const Node x = stack.back();
      stack.pop_back();
      if (seen[x]) continue;
      seen[x] = true;
      for (Node p : parents_[x]) {
        if (!seen[p]) stack.push_back(p);
      }
    }
    return seen;
  }

  std::vector<SynsetId> ancestors(std::string_view id) const {
    return collect(ancestor_mask(node(id)));
  }

  std::vector<SynsetId> collect(const std::vector<bool>& mask) const {
    std::vector<SynsetId> out;
    for (Node i = 0; i < mask.size(); ++i) {
      if (mask[i]) out.push_back(ids_[i]);
    }
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  void check_acyclic() const {
    std::vector<std::size_t> pending(ids_.size());
    std::queue<Node> ready;
    for (Node i = 0; i < ids_.size(); ++i) {
      pending[i] = parents_[i].size();
      if (pending[i] == 0) ready.push(i);
    }
    std::size_t visited = 0;
    while (!ready.empty()) {
      const Node x = ready.front();
      ready.pop();
      ++visited;
      for (Node c : children_[x]) {
        if (--pending[c] == 0) ready.push(c);
      }
    }
    if (visited != ids_.size()) {
      for (Node i = 0; i < ids_.size(); ++i) {
        if (pending[i] != 0) fail(ErrorKind::Validation, "hypernym graph has a cycle through " + ids_[i].str());
      }
    }
  }

  std::vector<SynsetId> ids_;
  std::unordered_map<std::string, Node> index_;
  std::vector<std::vector<Node>> parents_;
  std::vector<std::vector<Node>> children_;
};

struct LabelSpaceFiles {
  std::filesystem::path labels;
  std::filesystem::path overlap;
  std::filesystem::path superclasses;
  std::filesystem::path hypernyms;
};

struct LabelSpaceOptions {
  // Enforce the ImageNet-1k shape: 1000 classes split 410/522/68 and every
  // class attached to the hypernym graph.
  bool strict_imagenet = false;
};

class LabelSpace {
 public:
  static LabelSpace build(std::vector<ClassInfo> classes, const OverlapSpec& overlap,
                          const std::map<std::string, std::vector<SynsetId>>& superclasses,
                          const std::vector<std::pair<SynsetId, SynsetId>>& hypernym_edges,
                          LabelSpaceOptions options = {}) {
    LabelSpace s;
    s.classes_ = std::move(classes);
    for (ClassIndex i = 0; i < s.classes_.size(); ++i) {
      if (!s.index_.try_emplace(s.classes_[i].id.str(), i).second) {
        fail(ErrorKind::Validation, "duplicate class " + s.classes_[i].id.str());
      }
    }

    for (ClassIndex i = 0; i < s.classes_.size(); ++i) s.accepts_.insert(key(i, i));
    for (const auto& [a, b] : overlap.equivalent) {
      const ClassIndex ia = s.checked(a, "overlap file");
      const ClassIndex ib = s.checked(b, "overlap file");
      s.accepts_.insert(key(ia, ib));
      s.accepts_.insert(key(ib, ia));
    }
    for (const auto& c : overlap.contains) {
      const ClassIndex sup = s.checked(c.superset, "overlap file");
      for (const auto& sub : c.subsets) s.accepts_.insert(key(s.checked(sub, "overlap file"), sup));
    }

    s.memberships_.resize(s.classes_.size());
    for (const auto& [name, ids] : superclasses) {
      Superclass sc{name, {}};
      for (const auto& id : ids) sc.members.push_back(s.checked(id, "superclass '" + name + "'"));
      std::sort(sc.members.begin(), sc.members.end());
      if (std::adjacent_find(sc.members.begin(), sc.members.end()) != sc.members.end()) {
        fail(ErrorKind::Validation, "superclass '" + name + "' lists a class twice");
      }
      if (sc.members.size() < 2) fail(ErrorKind::Validation, "superclass '" + name + "' has fewer than 2 members");
      const auto sc_index = static_cast<std::uint32_t>(s.superclasses_.size());
      for (ClassIndex m : sc.members) s.memberships_[m].push_back(sc_index);
      s.superclasses_.push_back(std::move(sc));
    }

    s.graph_ = HypernymGraph::from_edges(hypernym_edges);
    for (const auto& c : s.classes_) {
      if (options.strict_imagenet && !s.graph_.contains(c.id.str())) {
        fail(ErrorKind::Validation, "class " + c.id.str() + " has no hypernym path");
      }
      s.graph_.intern(c.id);
    }

    if (options.strict_imagenet) {
      const auto counts = s.group_counts();
      if (s.classes_.size() != 1000 || counts[0] != 410 || counts[1] != 522 || counts[2] != 68) {
        fail(ErrorKind::Validation,
             "ImageNet label space must have 1000 classes split 410/522/68, got " +
                 std::to_string(s.classes_.size()) + " (" + std::to_string(counts[0]) + "/" +
                 std::to_string(counts[1]) + "/" + std::to_string(counts[2]) + ")");
      }
    }
    return s;
  }

  static LabelSpace load(const LabelSpaceFiles& files, LabelSpaceOptions options = {}) {
    try {
      return load_unchecked(files, options);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::Parse, e.what());
    }
  }

 private:
  static LabelSpace load_unchecked(const LabelSpaceFiles& files, LabelSpaceOptions options) {
    std::vector<ClassInfo> classes;
    for (const auto& entry : read_json(files.labels)) {
      classes.push_back(ClassInfo{parse_id(entry.at("id"), files.labels), entry.at("name").get<std::string>(),
                                  parse_group(entry.at("group").get<std::string>())});
    }

    OverlapSpec overlap;
    if (!files.overlap.empty()) {
      const auto j = read_json(files.overlap);
      for (const auto& pair : j.value("equivalent", nlohmann::json::array())) {
        if (pair.size() != 2) fail(ErrorKind::Parse, files.overlap.string() + ": equivalence must be a pair");
        overlap.equivalent.emplace_back(parse_id(pair[0], files.overlap), parse_id(pair[1], files.overlap));
      }
      for (const auto& c : j.value("contains", nlohmann::json::array())) {
        OverlapSpec::Containment entry{parse_id(c.at("superset"), files.overlap), {}};
        for (const auto& sub : c.at("subsets")) entry.subsets.push_back(parse_id(sub, files.overlap));
        overlap.contains.push_back(std::move(entry));
      }
    }

    std::map<std::string, std::vector<SynsetId>> superclasses;
    if (!files.superclasses.empty()) {
      const auto j = read_json(files.superclasses);
      for (const auto& [name, ids] : j.items()) {
        auto& members = superclasses[name];
        for (const auto& id : ids) members.push_back(parse_id(id, files.superclasses));
      }
    }

    std::vector<std::pair<SynsetId, SynsetId>> edges;
    if (!files.hypernyms.empty()) {
      for (const auto& row : io::read_csv(files.hypernyms, 2)) {
        edges.emplace_back(SynsetId(row.fields[0]), SynsetId(row.fields[1]));
      }
    }
    return build(std::move(classes), overlap, superclasses, edges, options);
  }

 public:
  std::size_t size() const noexcept { return classes_.size(); }
  const std::vector<ClassInfo>& classes() const noexcept { return classes_; }
  const ClassInfo& info(ClassIndex i) const { return classes_.at(i); }
  const SynsetId& id(ClassIndex i) const { return classes_.at(i).id; }
  Group group(ClassIndex i) const { return classes_.at(i).group; }

  std::optional<ClassIndex> find(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  ClassIndex index_of(std::string_view id) const {
    if (auto i = find(id)) return *i;
    fail(ErrorKind::UnknownSynset, std::string(id) + " is not a class of the label space");
  }

  bool in_vocabulary(std::string_view id) const { return index_.contains(std::string(id)); }

  std::array<std::size_t, 3> group_counts() const {
    std::array<std::size_t, 3> counts{};
    for (const auto& c : classes_) ++counts[static_cast<std::size_t>(c.group)];
    return counts;
  }

  // True iff predicting `pred` is accepted for an image whose label is `gt`
  // (pred names a superset of, or is equivalent to, gt). Not symmetric.
  bool is_overlap_correct(ClassIndex gt, ClassIndex pred) const { return accepts_.contains(key(gt, pred)); }
  bool is_overlap_correct(std::string_view gt, std::string_view pred) const {
    return is_overlap_correct(index_of(gt), index_of(pred));
  }

  std::vector<std::pair<SynsetId, SynsetId>> accepted_pairs() const {
    std::vector<std::pair<SynsetId, SynsetId>> out;
    for (auto k : accepts_) out.emplace_back(id(static_cast<ClassIndex>(k >> 32)), id(static_cast<ClassIndex>(k)));
    std::sort(out.begin(), out.end());
    return out;
  }

  const std::vector<Superclass>& superclasses() const noexcept { return superclasses_; }
  const std::vector<std::uint32_t>& superclasses_of(ClassIndex c) const { return memberships_.at(c); }

  // Superclasses containing both a and b, in catalogue (name) order.
  std::vector<std::uint32_t> shared_superclasses(ClassIndex a, ClassIndex b) const {
    std::vector<std::uint32_t> out;
    const auto& ma = memberships_.at(a);
    const auto& mb = memberships_.at(b);
    std::set_intersection(ma.begin(), ma.end(), mb.begin(), mb.end(), std::back_inserter(out));
    return out;
  }

  bool shares_superclass(ClassIndex a, ClassIndex b) const { return !shared_superclasses(a, b).empty(); }
  bool shares_superclass(std::string_view a, std::string_view b) const {
    return shares_superclass(index_of(a), index_of(b));
  }

  // Every class sharing at least one superclass with c, including c itself
  // when c belongs to any superclass.
  std::vector<ClassIndex> superclass_mates(ClassIndex c) const {
    std::vector<ClassIndex> out;
    for (auto sc : memberships_.at(c)) {
      out.insert(out.end(), superclasses_[sc].members.begin(), superclasses_[sc].members.end());
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  const HypernymGraph& hypernyms() const noexcept { return graph_; }

  std::vector<SynsetId> direct_siblings(std::string_view s) const {
    const auto n = graph_.node(s);
    std::vector<SynsetId> out;
    for (auto p : graph_.parents(n)) {
      for (auto c : graph_.children(p)) {
        if (c != n) out.push_back(graph_.id(c));
      }
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  // Strict ancestors of pred that are not ancestors-or-self of anchor. On a
  // tree this is the path from pred up to, excluding, the first common ancestor.
  std::vector<SynsetId> ancestors_below_common(std::string_view pred, std::string_view anchor) const {
    auto mask = graph_.ancestor_mask(graph_.node(pred));
    const auto anchor_node = graph_.node(anchor);
    const auto shared = graph_.ancestor_mask(anchor_node);
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (shared[i]) mask[i] = false;
    }
    mask[anchor_node] = false;
    return graph_.collect(mask);
  }

 private:
  static std::uint64_t key(ClassIndex a, ClassIndex b) { return (std::uint64_t{a} << 32) | b; }

  static nlohmann::json read_json(const std::filesystem::path& path) {
    try {
      return nlohmann::json::parse(io::read_file(path));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::Parse, path.string() + ": " + e.what());
    }
  }

  static SynsetId parse_id(const nlohmann::json& j, const std::filesystem::path& source) {
    if (!j.is_string()) fail(ErrorKind::Parse, source.string() + ": synset id must be a string");
    return SynsetId(j.get<std::string>());
  }

  ClassIndex checked(const SynsetId& id, const std::string& where) const {
    auto it = index_.find(id.str());
    if (it == index_.end()) fail(ErrorKind::Validation, where + " references unknown synset " + id.str());
    return it->second;
  }

  std::vector<ClassInfo> classes_;
  std::unordered_map<std::string, ClassIndex> index_;
  std::unordered_set<std::uint64_t> accepts_;
  std::vector<Superclass> superclasses_;
  std::vector<std::vector<std::uint32_t>> memberships_;
  HypernymGraph graph_;
};

struct SuperclassStats {
  struct PerGroup {
    std::size_t count = 0;
    double mean_size = 0.0;
  };
  std::size_t count = 0;
  std::size_t min_size = 0;
  std::size_t max_size = 0;
  double mean_size = 0.0;
  double median_size = 0.0;
  std::size_t unclassified = 0;
  // A superclass counts towards a group when at least one member is in it.
  std::array<PerGroup, 3> per_group{};
};

inline SuperclassStats superclass_stats(const LabelSpace& space) {
  SuperclassStats st;
  std::vector<std::size_t> sizes;
  std::array<std::size_t, 3> group_total{};
  for (const auto& sc : space.superclasses()) {
    sizes.push_back(sc.members.size());
    std::array<bool, 3> present{};
    for (auto m : sc.members) present[static_cast<std::size_t>(space.group(m))] = true;
    for (std::size_t g = 0; g < 3; ++g) {
      if (present[g]) {
        ++st.per_group[g].count;
        group_total[g] += sc.members.size();
      }
    }
  }
  for (std::size_t g = 0; g < 3; ++g) {
    if (st.per_group[g].count) st.per_group[g].mean_size = double(group_total[g]) / double(st.per_group[g].count);
  }
  for (ClassIndex c = 0; c < space.size(); ++c) {
    if (space.superclasses_of(c).empty()) ++st.unclassified;
  }
  st.count = sizes.size();
  if (sizes.empty()) return st;
  std::sort(sizes.begin(), sizes.end());
  st.min_size = sizes.front();
  st.max_size = sizes.back();
  std::size_t total = 0;
  for (auto s : sizes) total += s;
  st.mean_size = double(total) / double(sizes.size());
  const std::size_t mid = sizes.size() / 2;
  st.median_size = sizes.size() % 2 ? double(sizes[mid]) : (sizes[mid - 1] + sizes[mid]) / 2.0;
  return st;
}

}  // namespace erratlas
