#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>
#include <nlohmann/json.hpp>

#include "erratlas/annotation_store.hpp"
#include "erratlas/cascade.hpp"
#include "erratlas/csv.hpp"
#include "erratlas/label_space.hpp"

namespace erratlas {

// Fraction of non-problematic annotated images whose prediction equals the
// original label. Predictions for unknown images are ignored.
inline double top1_accuracy(const Predictions& predictions, const AnnotationStore& store, const LabelSpace& space) {
  std::size_t total = 0;
  std::size_t hits = 0;
  for (const auto& [img, pred] : predictions) {
    const auto* a = store.find(img);
    if (!a || a->problematic) continue;
    ++total;
    if (space.id(a->original_label) == pred) ++hits;
  }
  if (total == 0) fail(ErrorKind::EmptyEvaluationSet, "no non-problematic image has a prediction");
  return double(hits) / double(total);
}

// Mean class-wise accuracy where a prediction is correct if it is in the
// image's correct label set. Classes are keyed by original label; classes
// without an evaluated image do not enter the mean.
inline double multi_label_accuracy(const Predictions& predictions, const AnnotationStore& store,
                                   const LabelSpace& space) {
  std::map<ClassIndex, std::pair<std::size_t, std::size_t>> per_class;  // hits, total
  for (const auto& [img, pred] : predictions) {
    const auto* a = store.find(img);
    if (!a || a->problematic) continue;
    auto& [hits, total] = per_class[a->original_label];
    ++total;
    const auto labels = store.correct_label_set(img);
    const auto p = space.find(pred.str());
    if (p && std::binary_search(labels.begin(), labels.end(), *p)) ++hits;
  }
  if (per_class.empty()) fail(ErrorKind::EmptyEvaluationSet, "no non-problematic image has a prediction");
  double sum = 0.0;
  for (const auto& [c, ht] : per_class) sum += double(ht.first) / double(ht.second);
  return sum / double(per_class.size());
}

// ---------------------------------------------------------------- model metadata

enum class ArchitectureFamily { CNN, Transformer, MLP, Hybrid, Other };

inline ArchitectureFamily parse_architecture(std::string_view s) {
  std::string k;
  for (char c : s) k.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (k == "cnn") return ArchitectureFamily::CNN;
  if (k == "transformer") return ArchitectureFamily::Transformer;
  if (k == "mlp") return ArchitectureFamily::MLP;
  if (k == "hybrid") return ArchitectureFamily::Hybrid;
  if (k == "other") return ArchitectureFamily::Other;
  fail(ErrorKind::Parse, "unknown architecture family '" + std::string(s) + "'");
}

constexpr std::string_view to_string(ArchitectureFamily a) {
  switch (a) {
    case ArchitectureFamily::CNN: return "CNN";
    case ArchitectureFamily::Transformer: return "Transformer";
    case ArchitectureFamily::MLP: return "MLP";
    case ArchitectureFamily::Hybrid: return "Hybrid";
    case ArchitectureFamily::Other: return "Other";
  }
  return "Other";
}

struct ModelMeta {
  std::string name;
  ArchitectureFamily architecture_family = ArchitectureFamily::Other;
  std::uint64_t param_count = 1;
  std::string pretrain_dataset;
  std::uint64_t pretrain_size_images = 1;
};

inline std::map<std::string, ModelMeta> read_models_manifest(const std::filesystem::path& path) {
  std::map<std::string, ModelMeta> out;
  try {
    for (const auto& j : nlohmann::json::parse(io::read_file(path))) {
      ModelMeta m;
      m.name = j.at("name").get<std::string>();
      m.architecture_family = parse_architecture(j.at("architecture_family").get<std::string>());
      m.param_count = j.at("param_count").get<std::uint64_t>();
      m.pretrain_dataset = j.at("pretrain_dataset").get<std::string>();
      m.pretrain_size_images = j.at("pretrain_size_images").get<std::uint64_t>();
      if (m.param_count == 0 || m.pretrain_size_images == 0) {
        fail(ErrorKind::Validation, "model " + m.name + ": param_count and pretrain_size_images must be positive");
      }
      if (!out.emplace(m.name, m).second) fail(ErrorKind::Validation, "duplicate model " + m.name);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, path.string() + ": " + e.what());
  }
  return out;
}

inline std::string models_manifest_json(const std::vector<ModelMeta>& metas) {
  auto arr = nlohmann::json::array();
  for (const auto& m : metas) {
    arr.push_back({{"name", m.name},
                   {"architecture_family", std::string(to_string(m.architecture_family))},
                   {"param_count", m.param_count},
                   {"pretrain_dataset", m.pretrain_dataset},
                   {"pretrain_size_images", m.pretrain_size_images}});
  }
  return arr.dump(1) + "\n";
}

enum class SizeBucket { Small, Medium, Large, XLarge };

constexpr std::string_view to_string(SizeBucket b) {
  switch (b) {
    case SizeBucket::Small: return "small";
    case SizeBucket::Medium: return "medium";
    case SizeBucket::Large: return "large";
    case SizeBucket::XLarge: return "xlarge";
  }
  return "small";
}

// Lower bounds are inclusive, except XLarge which starts strictly above its bound.
struct SizeThresholds {
  std::uint64_t medium_from = 5'000'000;
  std::uint64_t large_from = 100'000'000;
  std::uint64_t xlarge_above = 500'000'000;
};

inline SizeBucket size_bucket(const ModelMeta& meta, const SizeThresholds& t = {}) {
  const auto n = meta.pretrain_size_images;
  if (n < t.medium_from) return SizeBucket::Small;
  if (n < t.large_from) return SizeBucket::Medium;
  if (n <= t.xlarge_above) return SizeBucket::Large;
  return SizeBucket::XLarge;
}

// ---------------------------------------------------------------- aggregation

// Report groups: the three label groups plus "all".
inline constexpr std::size_t kReportGroups = 4;

constexpr std::string_view report_group_name(std::size_t g) {
  return g < 3 ? to_string(kGroups[g]) : std::string_view("all");
}

struct CategoryCell {
  std::size_t count = 0;
  std::size_t denominator = 0;
  double portion = 0.0;
  bool zero_denominator = true;
};

struct ModelReport {
  std::string model;
  ModelMeta meta;
  SizeBucket bucket = SizeBucket::Small;
  double top1_acc = 0.0;
  double mla = 0.0;
  bool mla_available = true;
  std::array<std::size_t, kReportGroups> top1_errors{};
  std::array<std::size_t, kReportGroups> multi_label_errors{};
  std::array<std::array<CategoryCell, 7>, kReportGroups> cells{};  // [group][category]
  double mlf_portion_of_mle = 0.0;
  double mlf_portion_of_top1 = 0.0;
};

// Stages 1-2 are relative to top-1 errors; stages 3-7 to multi-label errors
// (ImageNet mode) or top-1 errors (ImageNet-A mode, which has no multi-label step).
inline bool uses_top1_denominator(Category c, DatasetMode mode) {
  return c == Category::OverlapCorrect || c == Category::MultiLabelCorrect || mode == DatasetMode::ImageNetA;
}

inline CategoryCell make_cell(std::size_t count, std::size_t denominator) {
  CategoryCell cell{count, denominator, 0.0, denominator == 0};
  if (denominator) cell.portion = double(count) / double(denominator);
  return cell;
}

inline std::vector<ModelReport> aggregate(const std::map<std::string, std::vector<ErrorRecord>>& records,
                                          const std::map<std::string, Predictions>& predictions,
                                          const std::map<std::string, ModelMeta>& metas, const AnnotationStore& store,
                                          const LabelSpace& space, DatasetMode mode,
                                          const SizeThresholds& thresholds = {}) {
  std::vector<ModelReport> out;
  static const std::vector<ErrorRecord> kNoRecords;
  for (const auto& [model, preds] : predictions) {
    auto meta = metas.find(model);
    if (meta == metas.end()) fail(ErrorKind::MissingMeta, "no metadata for model " + model);
    ModelReport rep;
    rep.model = model;
    rep.meta = meta->second;
    rep.bucket = size_bucket(rep.meta, thresholds);
    rep.top1_acc = top1_accuracy(preds, store, space);
    rep.mla_available = mode == DatasetMode::ImageNet && store.has_multilabel();
    rep.mla = rep.mla_available ? multi_label_accuracy(preds, store, space) : rep.top1_acc;

    for (const auto& [img, pred] : preds) {
      const auto* a = store.find(img);
      if (!a || a->problematic || space.id(a->original_label) == pred) continue;
      ++rep.top1_errors[static_cast<std::size_t>(space.group(a->original_label))];
      ++rep.top1_errors[3];
    }

    std::array<std::array<std::size_t, 7>, kReportGroups> counts{};
    auto rit = records.find(model);
    for (const auto& r : rit == records.end() ? kNoRecords : rit->second) {
      const auto g = static_cast<std::size_t>(space.group(store.at(r.image).original_label));
      const auto c = static_cast<std::size_t>(r.category);
      ++counts[g][c];
      ++counts[3][c];
    }
    for (std::size_t g = 0; g < kReportGroups; ++g) {
      for (std::size_t c = static_cast<std::size_t>(Category::FineGrained); c < 7; ++c) {
        rep.multi_label_errors[g] += counts[g][c];
      }
      for (std::size_t c = 0; c < 7; ++c) {
        const auto cat = static_cast<Category>(c);
        rep.cells[g][c] = make_cell(counts[g][c], uses_top1_denominator(cat, mode) ? rep.top1_errors[g]
                                                                                     : rep.multi_label_errors[g]);
      }
    }
    const auto failures = counts[3][static_cast<std::size_t>(Category::ModelFailure)];
    rep.mlf_portion_of_mle = make_cell(failures, rep.multi_label_errors[3]).portion;
    rep.mlf_portion_of_top1 = make_cell(failures, rep.top1_errors[3]).portion;
    out.push_back(std::move(rep));
  }
  return out;
}

inline std::string report_to_csv(const std::vector<ModelReport>& reports) {
  io::CsvWriter w;
  w.row("model", "group", "category", "count", "denominator", "portion", "zero_denominator");
  for (const auto& r : reports) {
    for (std::size_t g = 0; g < kReportGroups; ++g) {
      for (std::size_t c = 0; c < 7; ++c) {
        const auto& cell = r.cells[g][c];
        w.row(r.model, report_group_name(g), to_string(static_cast<Category>(c)), cell.count, cell.denominator,
              cell.portion, int(cell.zero_denominator));
      }
    }
  }
  return w.str();
}

inline std::string models_summary_csv(const std::vector<ModelReport>& reports) {
  io::CsvWriter w;
  w.row("model", "architecture_family", "param_count", "pretrain_dataset", "pretrain_size_images", "size_bucket",
        "top1_acc", "mla", "mla_available", "top1_errors", "multi_label_errors", "mlf_portion_of_mle",
        "mlf_portion_of_top1");
  for (const auto& r : reports) {
    w.row(r.model, to_string(r.meta.architecture_family), r.meta.param_count, r.meta.pretrain_dataset,
          r.meta.pretrain_size_images, to_string(r.bucket), r.top1_acc, r.mla, int(r.mla_available), r.top1_errors[3],
          r.multi_label_errors[3], r.mlf_portion_of_mle, r.mlf_portion_of_top1);
  }
  return w.str();
}

// ---------------------------------------------------------------- expert comparison

struct ExpertLabel {
  std::string model;
  ImageId image;
  Category category;
};

inline std::vector<ExpertLabel> read_expert_csv(const std::filesystem::path& path) {
  std::vector<ExpertLabel> out;
  for (const auto& r : io::read_csv(path, 3, {"model", "image_id", "category"})) {
    out.push_back(ExpertLabel{r.fields[0], r.fields[1], parse_category(r.fields[2])});
  }
  return out;
}

// Rows: expert category; columns: automatic category.
struct ConfusionMatrix {
  std::array<std::array<std::size_t, 7>, 7> cells{};
  std::array<std::size_t, 7> row_totals{};
  std::array<std::size_t, 7> column_totals{};
  std::size_t total = 0;
  std::size_t unmatched = 0;  // expert entries with no automatic record

  std::size_t at(Category expert, Category automatic) const {
    return cells[static_cast<std::size_t>(expert)][static_cast<std::size_t>(automatic)];
  }
};

inline ConfusionMatrix compare_categorizations(const std::vector<ErrorRecord>& automatic,
                                               const std::vector<ExpertLabel>& expert) {
  std::map<std::pair<std::string, ImageId>, Category> auto_by_key;
  for (const auto& r : automatic) auto_by_key[{r.model, r.image}] = r.category;
  ConfusionMatrix m;
  std::set<std::pair<std::string, ImageId>> seen;
  for (const auto& e : expert) {
    if (!seen.insert({e.model, e.image}).second) {
      fail(ErrorKind::Validation, "expert file lists " + e.model + "/" + e.image + " twice");
    }
    auto it = auto_by_key.find({e.model, e.image});
    if (it == auto_by_key.end()) {
      ++m.unmatched;
      continue;
    }
    const auto row = static_cast<std::size_t>(e.category);
    const auto col = static_cast<std::size_t>(it->second);
    ++m.cells[row][col];
    ++m.row_totals[row];
    ++m.column_totals[col];
    ++m.total;
  }
  return m;
}

inline std::string confusion_to_csv(const ConfusionMatrix& m) {
  io::CsvWriter w;
  w.row("expert", "overlap_correct", "multi_label_correct", "fine_grained", "fine_grained_oov", "non_prototypical",
        "spurious_correlation", "model_failure", "total");
  auto emit = [&](std::string_view name, const std::array<std::size_t, 7>& v, std::size_t total) {
    w.row(name, v[0], v[1], v[2], v[3], v[4], v[5], v[6], total);
  };
  for (std::size_t r = 0; r < 7; ++r) emit(to_string(static_cast<Category>(r)), m.cells[r], m.row_totals[r]);
  emit("total", m.column_totals, m.total);
  return w.str();
}

// ---------------------------------------------------------------- trend fits

struct FitPoint {
  double x = 0.0;
  double y = 0.0;
};

struct BandPoint {
  double x = 0.0;
  double y = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

struct FitSegment {
  std::size_t n = 0;
  double x_min = 0.0;
  double x_max = 0.0;
  double slope = 0.0;
  double intercept = 0.0;
  double residual_se = 0.0;  // sqrt(SSE / (n - 2))
  double t_quantile = 0.0;   // two-sided 95%, n - 2 degrees of freedom
  double x_mean = 0.0;
  double sxx = 0.0;
  std::vector<BandPoint> band;

  // 95% confidence interval for the mean response at x.
  BandPoint at(double x) const {
    const double y = intercept + slope * x;
    const double half = t_quantile * residual_se * std::sqrt(1.0 / double(n) + (x - x_mean) * (x - x_mean) / sxx);
    return {x, y, y - half, y + half};
  }
};

struct TrendFit {
  std::vector<FitSegment> segments;
};

inline FitSegment fit_segment(const std::vector<FitPoint>& pts, std::size_t grid_points) {
  if (pts.size() < 3) fail(ErrorKind::InvalidArgument, "a fit segment needs at least 3 points");
  FitSegment s;
  s.n = pts.size();
  double sx = 0.0;
  double sy = 0.0;
  s.x_min = pts.front().x;
  s.x_max = pts.front().x;
  for (const auto& p : pts) {
    sx += p.x;
    sy += p.y;
    s.x_min = std::min(s.x_min, p.x);
    s.x_max = std::max(s.x_max, p.x);
  }
  s.x_mean = sx / double(s.n);
  const double y_mean = sy / double(s.n);
  double sxy = 0.0;
  for (const auto& p : pts) {
    s.sxx += (p.x - s.x_mean) * (p.x - s.x_mean);
    sxy += (p.x - s.x_mean) * (p.y - y_mean);
  }
  // The mean of identical values can round away from them, so test the inputs.
  if (s.x_min == s.x_max || !(s.sxx > 0.0)) fail(ErrorKind::DegenerateFit, "all x values are equal");
  s.slope = sxy / s.sxx;
  s.intercept = y_mean - s.slope * s.x_mean;
  double sse = 0.0;
  for (const auto& p : pts) {
    const double r = p.y - (s.intercept + s.slope * p.x);
    sse += r * r;
  }
  s.residual_se = std::sqrt(sse / double(s.n - 2));
  s.t_quantile = boost::math::quantile(boost::math::students_t(double(s.n - 2)), 0.975);
  const std::size_t grid = std::max<std::size_t>(grid_points, 2);
  for (std::size_t i = 0; i < grid; ++i) {
    const double x = s.x_min + (s.x_max - s.x_min) * double(i) / double(grid - 1);
    s.band.push_back(s.at(x));
  }
  return s;
}

// Ordinary least squares with equal weights. With split_at, points with
// x < split_at and x >= split_at are fitted independently.
inline TrendFit trend_fit(const std::vector<FitPoint>& points, std::optional<double> split_at = std::nullopt,
                          std::size_t grid_points = 21) {
  TrendFit fit;
  if (!split_at) {
    fit.segments.push_back(fit_segment(points, grid_points));
    return fit;
  }
  std::vector<FitPoint> below;
  std::vector<FitPoint> above;
  for (const auto& p : points) (p.x < *split_at ? below : above).push_back(p);
  fit.segments.push_back(fit_segment(below, grid_points));
  fit.segments.push_back(fit_segment(above, grid_points));
  return fit;
}

struct NamedFit {
  std::string series;
  TrendFit fit;
};

inline std::string fits_to_csv(const std::vector<NamedFit>& fits) {
  io::CsvWriter w;
  w.row("series", "segment", "slope", "intercept", "x", "y", "band_lo", "band_hi");
  for (const auto& f : fits) {
    for (std::size_t s = 0; s < f.fit.segments.size(); ++s) {
      const auto& seg = f.fit.segments[s];
      for (const auto& b : seg.band) w.row(f.series, s, seg.slope, seg.intercept, b.x, b.y, b.lo, b.hi);
    }
  }
  return w.str();
}

}  // namespace erratlas
