#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "erratlas/csv.hpp"
#include "erratlas/label_space.hpp"

namespace erratlas {

// Unordered label pair, stored with a < b by synset id.
struct CooccurrencePair {
  SynsetId a;
  SynsetId b;
  std::size_t count = 0;

  friend bool operator==(const CooccurrencePair&, const CooccurrencePair&) = default;
};

struct PairMiningResult {
  std::size_t raw_pair_count = 0;
  std::size_t multi_label_image_count = 0;
  std::size_t missing_exclusions = 0;  // excluded ids absent from the label map
  std::vector<CooccurrencePair> pairs;  // sorted by (a, b)
};

// Mines candidate spurious-correlation pairs. Every non-excluded image with L
// >= 2 distinct labels contributes its L(L-1)/2 unordered pairs; pairs seen in
// only one image, or whose labels share a superclass, are dropped.
inline PairMiningResult extract_pairs(const std::map<ImageId, std::vector<ClassIndex>>& real_labels,
                                      const std::set<ImageId>& excluded, const LabelSpace& space) {
  PairMiningResult res;
  for (const auto& img : excluded) {
    if (!real_labels.contains(img)) ++res.missing_exclusions;
  }
  std::map<std::pair<SynsetId, SynsetId>, std::size_t> counts;
  for (const auto& [img, labels] : real_labels) {
    if (excluded.contains(img)) continue;
    std::vector<SynsetId> ids;
    for (auto l : labels) ids.push_back(space.id(l));
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    if (ids.size() < 2) continue;
    ++res.multi_label_image_count;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      for (std::size_t j = i + 1; j < ids.size(); ++j) {
        ++counts[{ids[i], ids[j]}];
        ++res.raw_pair_count;
      }
    }
  }
  for (const auto& [key, count] : counts) {
    if (count < 2) continue;
    if (space.shares_superclass(space.index_of(key.first.str()), space.index_of(key.second.str()))) continue;
    res.pairs.push_back(CooccurrencePair{key.first, key.second, count});
  }
  return res;
}

class PairSet {
 public:
  PairSet() = default;
  explicit PairSet(std::vector<CooccurrencePair> pairs) : pairs_(std::move(pairs)) {
    for (const auto& p : pairs_) lookup_.insert(join(p.a, p.b));
  }

  bool contains(const SynsetId& x, const SynsetId& y) const {
    return x < y ? lookup_.contains(join(x, y)) : lookup_.contains(join(y, x));
  }

  const std::vector<CooccurrencePair>& pairs() const noexcept { return pairs_; }
  bool empty() const noexcept { return pairs_.empty(); }

 private:
  static std::string join(const SynsetId& a, const SynsetId& b) { return a.str() + "," + b.str(); }

  std::vector<CooccurrencePair> pairs_;
  std::unordered_set<std::string> lookup_;
};

inline bool is_spurious(const SynsetId& pred, const std::vector<SynsetId>& gt_labels, const PairSet& pairs) {
  return std::any_of(gt_labels.begin(), gt_labels.end(), [&](const SynsetId& g) { return pairs.contains(pred, g); });
}

inline std::string pairs_to_csv(const std::vector<CooccurrencePair>& pairs) {
  io::CsvWriter w;
  w.row("a", "b", "count");
  for (const auto& p : pairs) w.row(p.a.str(), p.b.str(), p.count);
  return w.str();
}

inline std::vector<CooccurrencePair> read_pairs_csv(const std::filesystem::path& path, const LabelSpace& space) {
  std::vector<CooccurrencePair> out;
  for (const auto& r : io::read_csv(path, 3, {"a", "b", "count"})) {
    SynsetId a(r.fields[0]);
    SynsetId b(r.fields[1]);
    space.index_of(a.str());
    space.index_of(b.str());
    if (!(a < b)) fail(ErrorKind::Validation, path.string() + ":" + std::to_string(r.line) + ": pair not ordered a < b");
    std::size_t count = 0;
    try {
      count = std::stoul(r.fields[2]);
    } catch (const std::exception&) {
      fail(ErrorKind::Parse, path.string() + ":" + std::to_string(r.line) + ": bad count");
    }
    out.push_back(CooccurrencePair{std::move(a), std::move(b), count});
  }
  return out;
}

}  // namespace erratlas
