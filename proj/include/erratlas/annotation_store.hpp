#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "erratlas/csv.hpp"
#include "erratlas/error.hpp"
#include "erratlas/label_space.hpp"

namespace erratlas {

enum class Verdict { Correct, Wrong, Unclear };

inline Verdict parse_verdict(std::string_view s) {
  if (s == "correct") return Verdict::Correct;
  if (s == "wrong") return Verdict::Wrong;
  if (s == "unclear") return Verdict::Unclear;
  fail(ErrorKind::Parse, "unknown verdict '" + std::string(s) + "'");
}

constexpr std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::Correct: return "correct";
    case Verdict::Wrong: return "wrong";
    case Verdict::Unclear: return "unclear";
  }
  return "wrong";
}

struct ImageAnnotation {
  ImageId image;
  ClassIndex original_label = 0;
  std::vector<std::pair<ClassIndex, Verdict>> verdicts;  // sorted by label
  bool problematic = false;

  std::optional<Verdict> verdict_for(ClassIndex label) const {
    auto it = std::lower_bound(verdicts.begin(), verdicts.end(), label,
                               [](const auto& v, ClassIndex l) { return v.first < l; });
    if (it == verdicts.end() || it->first != label) return std::nullopt;
    return it->second;
  }
};

struct VerdictRow {
  ImageId image;
  SynsetId label;
  Verdict verdict;
};

struct AnnotationFiles {
  std::filesystem::path ground_truth;      // image_id,label_id
  std::filesystem::path multilabel;        // image_id,label_id,verdict (optional)
  std::filesystem::path problematic;       // one image id per line (optional)
  std::filesystem::path non_prototypical;  // one image id per line (optional)
  std::filesystem::path real_labels;       // image_id,label_id (optional)
};

class AnnotationStore {
 public:
  struct Input {
    std::vector<std::pair<ImageId, SynsetId>> ground_truth;
    std::vector<VerdictRow> verdicts;
    std::vector<ImageId> problematic;
    std::vector<ImageId> non_prototypical;
    std::vector<std::pair<ImageId, SynsetId>> real_labels;
    bool has_multilabel = true;
  };

  static AnnotationStore build(const LabelSpace& space, const Input& in) {
    AnnotationStore st;
    st.has_multilabel_ = in.has_multilabel;
    for (const auto& [img, label] : in.ground_truth) {
      if (img.empty()) fail(ErrorKind::Parse, "empty image id");
      ImageAnnotation a;
      a.image = img;
      a.original_label = space.index_of(label.str());
      if (!st.images_.emplace(img, std::move(a)).second) fail(ErrorKind::DuplicateImage, img);
    }
    for (const auto& row : in.verdicts) {
      auto it = st.images_.find(row.image);
      if (it == st.images_.end()) fail(ErrorKind::UnknownImage, "verdict for unannotated image " + row.image);
      it->second.verdicts.emplace_back(space.index_of(row.label.str()), row.verdict);
    }
    for (auto& [img, a] : st.images_) {
      std::sort(a.verdicts.begin(), a.verdicts.end(),
                [](const auto& x, const auto& y) { return x.first < y.first; });
      auto dup = std::adjacent_find(a.verdicts.begin(), a.verdicts.end(),
                                    [](const auto& x, const auto& y) { return x.first == y.first; });
      if (dup != a.verdicts.end()) {
        fail(ErrorKind::DuplicateVerdict, img + " has two verdicts for " + space.id(dup->first).str());
      }
    }
    for (const auto& img : in.problematic) {
      auto it = st.images_.find(img);
      if (it == st.images_.end()) {
        ++st.ignored_problematic_;
        continue;
      }
      it->second.problematic = true;
    }
    for (const auto& img : in.non_prototypical) {
      if (!st.images_.contains(img)) {
        fail(ErrorKind::Validation, "non-prototypical image " + img + " is not in the evaluation set");
      }
      st.non_prototypical_.insert(img);
    }
    for (const auto& [img, label] : in.real_labels) {
      st.real_labels_[img].push_back(space.index_of(label.str()));
    }
    for (auto& [img, labels] : st.real_labels_) {
      std::sort(labels.begin(), labels.end());
      labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
    }
    return st;
  }

  static AnnotationStore load(const AnnotationFiles& files, const LabelSpace& space) {
    Input in;
    for (const auto& r : io::read_csv(files.ground_truth, 2, {"image_id", "label_id"})) {
      in.ground_truth.emplace_back(r.fields[0], SynsetId(r.fields[1]));
    }
    in.has_multilabel = !files.multilabel.empty();
    if (in.has_multilabel) {
      for (const auto& r : io::read_csv(files.multilabel, 3, {"image_id", "label_id", "verdict"})) {
        in.verdicts.push_back(VerdictRow{r.fields[0], SynsetId(r.fields[1]), parse_verdict(r.fields[2])});
      }
    }
    if (!files.problematic.empty()) in.problematic = io::read_list(files.problematic);
    if (!files.non_prototypical.empty()) in.non_prototypical = io::read_list(files.non_prototypical);
    if (!files.real_labels.empty()) {
      for (const auto& r : io::read_csv(files.real_labels, 2, {"image_id", "label_id"})) {
        in.real_labels.emplace_back(r.fields[0], SynsetId(r.fields[1]));
      }
    }
    return build(space, in);
  }

  const std::map<ImageId, ImageAnnotation>& images() const noexcept { return images_; }

  const ImageAnnotation* find(const ImageId& img) const {
    auto it = images_.find(img);
    return it == images_.end() ? nullptr : &it->second;
  }

  const ImageAnnotation& at(const ImageId& img) const {
    if (const auto* a = find(img)) return *a;
    fail(ErrorKind::UnknownImage, img);
  }

  bool has_multilabel() const noexcept { return has_multilabel_; }

  // Labels counted as correct for the image: every label with a Correct or
  // Unclear verdict, plus the original label unless it is explicitly Wrong.
  std::vector<ClassIndex> correct_label_set(const ImageId& img) const {
    const auto& a = at(img);
    std::vector<ClassIndex> out;
    for (const auto& [label, verdict] : a.verdicts) {
      if (verdict != Verdict::Wrong) out.push_back(label);
    }
    if (a.verdict_for(a.original_label) != Verdict::Wrong) out.push_back(a.original_label);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  bool is_problematic(const ImageId& img) const { return at(img).problematic; }

  std::size_t usable_count() const {
    return static_cast<std::size_t>(
        std::count_if(images_.begin(), images_.end(), [](const auto& kv) { return !kv.second.problematic; }));
  }

  bool is_non_prototypical(const ImageId& img) const { return non_prototypical_.contains(img); }
  const std::set<ImageId>& non_prototypical() const noexcept { return non_prototypical_; }

  const std::map<ImageId, std::vector<ClassIndex>>& real_labels() const noexcept { return real_labels_; }

  // Problematic ids that did not match any annotated image.
  std::size_t ignored_problematic() const noexcept { return ignored_problematic_; }

 private:
  std::map<ImageId, ImageAnnotation> images_;
  std::set<ImageId> non_prototypical_;
  std::map<ImageId, std::vector<ClassIndex>> real_labels_;
  std::size_t ignored_problematic_ = 0;
  bool has_multilabel_ = true;
};

}  // namespace erratlas
