#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <exception>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "erratlas/annotation_store.hpp"
#include "erratlas/cooccurrence.hpp"
#include "erratlas/csv.hpp"
#include "erratlas/embedding_index.hpp"
#include "erratlas/label_space.hpp"

namespace erratlas {

// Ascending severity. The cascade assigns the first (least severe) match.
enum class Category {
  OverlapCorrect,
  MultiLabelCorrect,
  FineGrained,
  FineGrainedOOV,
  NonPrototypical,
  SpuriousCorrelation,
  ModelFailure,
};

inline constexpr std::array<Category, 7> kCategories = {
    Category::OverlapCorrect,  Category::MultiLabelCorrect,   Category::FineGrained, Category::FineGrainedOOV,
    Category::NonPrototypical, Category::SpuriousCorrelation, Category::ModelFailure,
};

constexpr std::string_view to_string(Category c) {
  switch (c) {
    case Category::OverlapCorrect: return "overlap_correct";
    case Category::MultiLabelCorrect: return "multi_label_correct";
    case Category::FineGrained: return "fine_grained";
    case Category::FineGrainedOOV: return "fine_grained_oov";
    case Category::NonPrototypical: return "non_prototypical";
    case Category::SpuriousCorrelation: return "spurious_correlation";
    case Category::ModelFailure: return "model_failure";
  }
  return "model_failure";
}

// Accepts the canonical names and the column labels used in expert tables
// ("FG", "FG OOV", "Non-prot.", "Spur. Corr.", "Model failures", ...).
inline Category parse_category(std::string_view text) {
  std::string key;
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c))) key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  static const std::map<std::string, Category> aliases = {
      {"overlapcorrect", Category::OverlapCorrect},
      {"overlap", Category::OverlapCorrect},
      {"classoverlap", Category::OverlapCorrect},
      {"multilabelcorrect", Category::MultiLabelCorrect},
      {"multilabel", Category::MultiLabelCorrect},
      {"finegrained", Category::FineGrained},
      {"fg", Category::FineGrained},
      {"finegrainedoov", Category::FineGrainedOOV},
      {"fgoov", Category::FineGrainedOOV},
      {"nonprototypical", Category::NonPrototypical},
      {"nonprot", Category::NonPrototypical},
      {"spuriouscorrelation", Category::SpuriousCorrelation},
      {"spuriouscorrelations", Category::SpuriousCorrelation},
      {"spurcorr", Category::SpuriousCorrelation},
      {"spurious", Category::SpuriousCorrelation},
      {"modelfailure", Category::ModelFailure},
      {"modelfailures", Category::ModelFailure},
  };
  auto it = aliases.find(key);
  if (it == aliases.end()) fail(ErrorKind::CategoryMismatch, "unknown error category '" + std::string(text) + "'");
  return it->second;
}

enum class DatasetMode { ImageNet, ImageNetA };

inline DatasetMode parse_mode(std::string_view s) {
  if (s == "imagenet") return DatasetMode::ImageNet;
  if (s == "imagenet-a") return DatasetMode::ImageNetA;
  fail(ErrorKind::Parse, "unknown dataset mode '" + std::string(s) + "'");
}

constexpr std::string_view to_string(DatasetMode m) { return m == DatasetMode::ImageNet ? "imagenet" : "imagenet-a"; }

// Where a ground-truth anchor label came from.
enum class AnchorSource { Original, Correct, Unclear };

constexpr std::string_view to_string(AnchorSource s) {
  switch (s) {
    case AnchorSource::Original: return "original";
    case AnchorSource::Correct: return "correct";
    case AnchorSource::Unclear: return "unclear";
  }
  return "original";
}

struct OverlapEvidence {
  SynsetId matched_gt;
};
struct MultiLabelEvidence {
  SynsetId matched_label;
};
struct FineGrainedEvidence {
  std::string shared_superclass;
  SynsetId matched_label;
  AnchorSource matched_verdict = AnchorSource::Original;
};
struct OovEvidence {
  std::vector<std::string> neighbor_ids;
  std::string matched_superclass;
  SynsetId best_proposal;
  bool best_is_oov = true;
};
struct NonPrototypicalEvidence {};
struct SpuriousEvidence {
  SynsetId pair_a;
  SynsetId pair_b;
  SynsetId matched_label;
  AnchorSource matched_verdict = AnchorSource::Original;
};
struct FailureEvidence {};

// Alternative index equals the Category value.
using Evidence = std::variant<OverlapEvidence, MultiLabelEvidence, FineGrainedEvidence, OovEvidence,
                              NonPrototypicalEvidence, SpuriousEvidence, FailureEvidence>;

struct ErrorRecord {
  std::string model;
  ImageId image;
  SynsetId predicted;
  Category category = Category::ModelFailure;
  Evidence evidence;
};

inline nlohmann::json evidence_json(const Evidence& ev) {
  using nlohmann::json;
  return std::visit(
      [](const auto& e) -> json {
        using T = std::decay_t<decltype(e)>;
        if constexpr (std::is_same_v<T, OverlapEvidence>) {
          return {{"matched_gt", e.matched_gt.str()}};
        } else if constexpr (std::is_same_v<T, MultiLabelEvidence>) {
          return {{"matched_label", e.matched_label.str()}};
        } else if constexpr (std::is_same_v<T, FineGrainedEvidence>) {
          return {{"shared_superclass", e.shared_superclass},
                  {"matched_label", e.matched_label.str()},
                  {"matched_verdict", std::string(to_string(e.matched_verdict))}};
        } else if constexpr (std::is_same_v<T, OovEvidence>) {
          return {{"neighbor_ids", e.neighbor_ids},
                  {"matched_superclass", e.matched_superclass},
                  {"best_proposal", e.best_proposal.str()},
                  {"best_is_oov", e.best_is_oov}};
        } else if constexpr (std::is_same_v<T, SpuriousEvidence>) {
          return {{"pair", {e.pair_a.str(), e.pair_b.str()}},
                  {"matched_label", e.matched_label.str()},
                  {"matched_verdict", std::string(to_string(e.matched_verdict))}};
        } else {
          return json::object();
        }
      },
      ev);
}

inline AnchorSource parse_anchor_source(const std::string& s) {
  if (s == "original") return AnchorSource::Original;
  if (s == "correct") return AnchorSource::Correct;
  if (s == "unclear") return AnchorSource::Unclear;
  fail(ErrorKind::Parse, "unknown anchor source '" + s + "'");
}

inline Evidence evidence_from_json(Category c, const nlohmann::json& j) {
  auto sid = [&](const char* key) { return SynsetId(j.at(key).get<std::string>()); };
  switch (c) {
    case Category::OverlapCorrect: return OverlapEvidence{sid("matched_gt")};
    case Category::MultiLabelCorrect: return MultiLabelEvidence{sid("matched_label")};
    case Category::FineGrained:
      return FineGrainedEvidence{j.at("shared_superclass").get<std::string>(), sid("matched_label"),
                                 parse_anchor_source(j.at("matched_verdict").get<std::string>())};
    case Category::FineGrainedOOV:
      return OovEvidence{j.at("neighbor_ids").get<std::vector<std::string>>(),
                         j.at("matched_superclass").get<std::string>(), sid("best_proposal"),
                         j.at("best_is_oov").get<bool>()};
    case Category::NonPrototypical: return NonPrototypicalEvidence{};
    case Category::SpuriousCorrelation: {
      const auto& pair = j.at("pair");
      return SpuriousEvidence{SynsetId(pair.at(0).get<std::string>()), SynsetId(pair.at(1).get<std::string>()),
                              sid("matched_label"), parse_anchor_source(j.at("matched_verdict").get<std::string>())};
    }
    case Category::ModelFailure: return FailureEvidence{};
  }
  return FailureEvidence{};
}

// Reference (training) images with their training labels, row-aligned.
struct ReferenceIndex {
  EmbeddingMatrix embeddings;
  std::vector<ClassIndex> labels;

  // Labels come from `explicit_labels` when given, otherwise from the id
  // prefix before the first '_' (ImageNet train naming: n01440764_10026.JPEG).
  static ReferenceIndex build(EmbeddingMatrix embeddings, const LabelSpace& space,
                              const std::map<std::string, SynsetId>* explicit_labels = nullptr) {
    ReferenceIndex ref{std::move(embeddings), {}};
    ref.labels.reserve(ref.embeddings.size());
    for (const auto& id : ref.embeddings.ids()) {
      if (explicit_labels) {
        auto it = explicit_labels->find(id);
        if (it == explicit_labels->end()) fail(ErrorKind::Validation, "reference image " + id + " has no label");
        ref.labels.push_back(space.index_of(it->second.str()));
      } else {
        ref.labels.push_back(space.index_of(id.substr(0, id.find('_'))));
      }
    }
    return ref;
  }
};

struct CascadeConfig {
  std::size_t k_neighbors = 10;
  DatasetMode mode = DatasetMode::ImageNet;
  // Order of the explanation stages after the two "not an error" stages.
  std::vector<Category> explanation_order = {Category::FineGrained, Category::FineGrainedOOV,
                                             Category::NonPrototypical, Category::SpuriousCorrelation};
};

struct CascadeContext {
  const LabelSpace* space = nullptr;
  const AnnotationStore* store = nullptr;
  const ReferenceIndex* reference = nullptr;
  const EmbeddingMatrix* eval_embeddings = nullptr;
  const EmbeddingMatrix* text_embeddings = nullptr;
  const PairSet* pairs = nullptr;
  CascadeConfig config;
};

struct Anchor {
  ClassIndex label;
  AnchorSource source;
};

// Ground-truth anchors for the explanation stages: the original label first,
// then (ImageNet mode) every other Correct/Unclear multi-label by synset id.
inline std::vector<Anchor> ground_truth_anchors(const ImageId& img, const CascadeContext& ctx) {
  const auto& a = ctx.store->at(img);
  std::vector<Anchor> out;
  if (ctx.config.mode == DatasetMode::ImageNetA) {
    out.push_back({a.original_label, AnchorSource::Original});
    return out;
  }
  std::vector<Anchor> extra;
  for (auto label : ctx.store->correct_label_set(img)) {
    if (label == a.original_label) {
      out.push_back({label, AnchorSource::Original});
    } else {
      extra.push_back({label, a.verdict_for(label) == Verdict::Unclear ? AnchorSource::Unclear : AnchorSource::Correct});
    }
  }
  const auto& space = *ctx.space;
  std::sort(extra.begin(), extra.end(), [&](const Anchor& x, const Anchor& y) { return space.id(x.label) < space.id(y.label); });
  out.insert(out.end(), extra.begin(), extra.end());
  return out;
}

// Proposal labels for the open-world check: the prediction's superclass
// mates, its direct WordNet siblings, and its ancestors that are not
// ancestors of the anchor label.
inline std::vector<SynsetId> oov_proposals(ClassIndex pred, ClassIndex anchor, const LabelSpace& space) {
  std::vector<SynsetId> out;
  for (auto c : space.superclass_mates(pred)) out.push_back(space.id(c));
  auto siblings = space.direct_siblings(space.id(pred).str());
  out.insert(out.end(), siblings.begin(), siblings.end());
  auto ancestors = space.ancestors_below_common(space.id(pred).str(), space.id(anchor).str());
  out.insert(out.end(), ancestors.begin(), ancestors.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

namespace detail {

inline std::optional<Evidence> fine_grained_stage(ClassIndex pred, const std::vector<Anchor>& anchors,
                                                  const LabelSpace& space) {
  for (const auto& g : anchors) {
    auto shared = space.shared_superclasses(pred, g.label);
    if (!shared.empty()) {
      return FineGrainedEvidence{space.superclasses()[shared.front()].name, space.id(g.label), g.source};
    }
  }
  return std::nullopt;
}

inline std::optional<Evidence> oov_stage(const ImageId& img, ClassIndex pred, const CascadeContext& ctx) {
  const auto& space = *ctx.space;
  // A prediction outside every superclass can never pass the neighbor gate;
  // no embedding is needed to decide that.
  if (space.superclasses_of(pred).empty()) return std::nullopt;
  if (!ctx.reference || !ctx.eval_embeddings || !ctx.text_embeddings) {
    fail(ErrorKind::MissingEmbedding, "embedding tables are required for the fine-grained OOV stage");
  }
  if (!ctx.eval_embeddings->contains(img)) fail(ErrorKind::MissingEmbedding, "no evaluation embedding for " + img);
  const auto query = ctx.eval_embeddings->vector(img);
  const auto neighbors = knn(query, ctx.reference->embeddings, ctx.config.k_neighbors);

  std::optional<std::string> matched;
  for (const auto& n : neighbors) {
    auto shared = space.shared_superclasses(ctx.reference->labels[n.row], pred);
    if (!shared.empty()) {
      matched = space.superclasses()[shared.front()].name;
      break;
    }
  }
  if (!matched) return std::nullopt;

  const auto anchor = ctx.store->at(img).original_label;
  const auto scored = score_proposals(query, oov_proposals(pred, anchor, space), *ctx.text_embeddings);
  if (space.in_vocabulary(scored.best.str())) return std::nullopt;

  OovEvidence ev;
  for (const auto& n : neighbors) ev.neighbor_ids.push_back(n.id);
  ev.matched_superclass = *matched;
  ev.best_proposal = scored.best;
  ev.best_is_oov = true;
  return ev;
}

inline std::optional<Evidence> spurious_stage(ClassIndex pred, const std::vector<Anchor>& anchors,
                                              const CascadeContext& ctx) {
  if (!ctx.pairs) return std::nullopt;
  const auto& space = *ctx.space;
  const auto& p = space.id(pred);
  for (const auto& g : anchors) {
    const auto& gid = space.id(g.label);
    if (ctx.pairs->contains(p, gid)) {
      return p < gid ? SpuriousEvidence{p, gid, gid, g.source} : SpuriousEvidence{gid, p, gid, g.source};
    }
  }
  return std::nullopt;
}

}  // namespace detail

// Classifies one prediction. Returns nullopt when the prediction is top-1
// correct; otherwise the least severe matching category with its evidence.
inline std::optional<ErrorRecord> classify(const std::string& model, const ImageId& img, const SynsetId& predicted,
                                           const CascadeContext& ctx) {
  const auto& space = *ctx.space;
  const auto& annotation = ctx.store->at(img);
  if (annotation.problematic) fail(ErrorKind::InvalidArgument, img + " is flagged problematic");
  const ClassIndex pred = space.index_of(predicted.str());
  const ClassIndex original = annotation.original_label;
  if (pred == original) return std::nullopt;

  const bool imagenet = ctx.config.mode == DatasetMode::ImageNet;
  auto record = [&](Category c, Evidence ev) {
    return ErrorRecord{model, img, predicted, c, std::move(ev)};
  };

  const auto correct = imagenet ? ctx.store->correct_label_set(img) : std::vector<ClassIndex>{};

  // Overlapping class definitions: pred names a superset or an equivalent of
  // the original label (or of a different correct multi-label).
  if (space.is_overlap_correct(original, pred)) return record(Category::OverlapCorrect, OverlapEvidence{space.id(original)});
  {
    std::vector<ClassIndex> others;
    for (auto g : correct) {
      if (g != pred && g != original) others.push_back(g);
    }
    std::sort(others.begin(), others.end(), [&](auto x, auto y) { return space.id(x) < space.id(y); });
    for (auto g : others) {
      if (space.is_overlap_correct(g, pred)) return record(Category::OverlapCorrect, OverlapEvidence{space.id(g)});
    }
  }

  if (imagenet && std::binary_search(correct.begin(), correct.end(), pred)) {
    return record(Category::MultiLabelCorrect, MultiLabelEvidence{predicted});
  }

  const auto anchors = ground_truth_anchors(img, ctx);
  for (auto stage : ctx.config.explanation_order) {
    std::optional<Evidence> ev;
    switch (stage) {
      case Category::FineGrained: ev = detail::fine_grained_stage(pred, anchors, space); break;
      case Category::FineGrainedOOV: ev = detail::oov_stage(img, pred, ctx); break;
      case Category::NonPrototypical:
        if (ctx.store->is_non_prototypical(img)) ev = NonPrototypicalEvidence{};
        break;
      case Category::SpuriousCorrelation: ev = detail::spurious_stage(pred, anchors, ctx); break;
      default: fail(ErrorKind::InvalidArgument, "stage " + std::string(to_string(stage)) + " cannot be reordered");
    }
    if (ev) return record(stage, std::move(*ev));
  }
  return record(Category::ModelFailure, FailureEvidence{});
}

using Predictions = std::map<ImageId, SynsetId>;

struct SkippedImage {
  ImageId image;
  ErrorKind kind;
  std::string message;
};

struct ModelClassification {
  std::string model;
  std::vector<ErrorRecord> records;  // sorted by image id
  std::vector<SkippedImage> skipped;
  std::size_t evaluated = 0;  // non-problematic annotated images with a prediction
  std::size_t correct = 0;
  std::size_t missing_predictions = 0;
  std::size_t unknown_images = 0;
  std::size_t problematic_ignored = 0;
  std::array<std::size_t, 7> counts{};
  std::array<std::array<std::size_t, 7>, 3> group_counts{};  // [group][category]
};

// Batch driver. Per-image embedding gaps are soft failures (recorded in
// `skipped`); anything else propagates. Output order is independent of `jobs`.
inline ModelClassification classify_model(const std::string& model, const Predictions& predictions,
                                          const CascadeContext& ctx, std::size_t jobs = 1) {
  ModelClassification out;
  out.model = model;
  const auto& space = *ctx.space;
  std::vector<std::pair<const ImageId*, const SynsetId*>> work;
  for (const auto& [img, pred] : predictions) {
    const auto* a = ctx.store->find(img);
    if (!a) {
      ++out.unknown_images;
      continue;
    }
    space.index_of(pred.str());
    if (a->problematic) {
      ++out.problematic_ignored;
      continue;
    }
    work.emplace_back(&img, &pred);
  }
  for (const auto& [img, a] : ctx.store->images()) {
    if (!a.problematic && !predictions.contains(img)) ++out.missing_predictions;
  }
  out.evaluated = work.size();

  struct Slot {
    std::optional<ErrorRecord> record;
    std::optional<SkippedImage> skipped;
  };
  std::vector<Slot> slots(work.size());
  jobs = std::max<std::size_t>(1, std::min(jobs, work.size()));
  std::vector<std::exception_ptr> errors(jobs);
  auto run = [&](std::size_t w) {
    try {
      for (std::size_t i = w; i < work.size(); i += jobs) {
        try {
          slots[i].record = classify(model, *work[i].first, *work[i].second, ctx);
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::MissingEmbedding && e.kind() != ErrorKind::MissingTextEmbedding) throw;
          slots[i].skipped = SkippedImage{*work[i].first, e.kind(), e.what()};
        }
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (jobs == 1) {
    run(0);
  } else {
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < jobs; ++w) workers.emplace_back(run, w);
    for (auto& t : workers) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i].skipped) {
      out.skipped.push_back(std::move(*slots[i].skipped));
    } else if (slots[i].record) {
      const auto c = static_cast<std::size_t>(slots[i].record->category);
      const auto g = static_cast<std::size_t>(space.group(ctx.store->at(*work[i].first).original_label));
      ++out.counts[c];
      ++out.group_counts[g][c];
      out.records.push_back(std::move(*slots[i].record));
    } else {
      ++out.correct;
    }
  }
  return out;
}

inline std::string records_to_csv(const std::vector<ErrorRecord>& records) {
  io::CsvWriter w;
  w.row("model", "image_id", "predicted", "category", "evidence_json");
  for (const auto& r : records) {
    w.row(r.model, r.image, r.predicted.str(), to_string(r.category), evidence_json(r.evidence).dump());
  }
  return w.str();
}

inline std::vector<ErrorRecord> read_records_csv(const std::filesystem::path& path) {
  std::vector<ErrorRecord> out;
  for (const auto& row : io::read_csv(path, 5, {"model", "image_id", "predicted", "category", "evidence_json"})) {
    ErrorRecord r;
    r.model = row.fields[0];
    r.image = row.fields[1];
    r.predicted = SynsetId(row.fields[2]);
    r.category = parse_category(row.fields[3]);
    try {
      r.evidence = evidence_from_json(r.category, nlohmann::json::parse(row.fields[4]));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::Parse, path.string() + ":" + std::to_string(row.line) + ": " + e.what());
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline Predictions read_predictions_csv(const std::filesystem::path& path) {
  Predictions out;
  for (const auto& row : io::read_csv(path, 2, {"image_id", "predicted_synset"})) {
    if (!out.emplace(row.fields[0], SynsetId(row.fields[1])).second) {
      fail(ErrorKind::DuplicateImage, path.string() + ": two predictions for " + row.fields[0]);
    }
  }
  return out;
}

inline std::string predictions_to_csv(const Predictions& predictions) {
  io::CsvWriter w;
  w.row("image_id", "predicted_synset");
  for (const auto& [img, pred] : predictions) w.row(img, pred.str());
  return w.str();
}

}  // namespace erratlas
