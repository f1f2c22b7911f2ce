#pragma once

#include <glob.h>

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "erratlas/annotation_store.hpp"
#include "erratlas/cascade.hpp"
#include "erratlas/cooccurrence.hpp"
#include "erratlas/embedding_index.hpp"
#include "erratlas/label_space.hpp"
#include "erratlas/manifest.hpp"
#include "erratlas/metrics.hpp"

namespace erratlas {

// Everything a manifest points at, loaded and validated.
struct Assets {
  AssetManifest manifest;
  DatasetMode mode = DatasetMode::ImageNet;
  LabelSpace space;
  std::optional<AnnotationStore> store;
  std::optional<ReferenceIndex> reference;
  std::optional<EmbeddingMatrix> eval_embeddings;
  std::optional<EmbeddingMatrix> text_embeddings;
  std::vector<std::string> warnings;

  const AnnotationStore& annotations() const {
    if (!store) fail(ErrorKind::Validation, "manifest has no 'ground_truth' annotations");
    return *store;
  }
};

inline Assets load_assets(const AssetManifest& manifest, std::optional<DatasetMode> mode_override = std::nullopt) {
  Assets a;
  a.manifest = manifest;
  a.mode = mode_override.value_or(manifest.mode);
  a.space = LabelSpace::load({manifest.require("labels"), manifest.resolve("overlap"), manifest.resolve("superclasses"),
                              manifest.resolve("hypernyms")},
                             {manifest.strict_imagenet});

  if (manifest.has("synset_names")) {
    for (const auto& r : io::read_csv(manifest.resolve("synset_names"), 2)) {
      if (!a.space.hypernyms().contains(SynsetId(r.fields[0]).str())) {
        a.warnings.push_back("synset_names lists " + r.fields[0] + " which is not in the hypernym graph");
      }
    }
  }

  if (manifest.has("ground_truth")) {
    AnnotationFiles files;
    files.ground_truth = manifest.resolve("ground_truth");
    if (a.mode == DatasetMode::ImageNet) {
      files.multilabel = manifest.resolve("multilabel");
      if (files.multilabel.empty()) a.warnings.push_back("imagenet mode without a multilabel file");
    } else if (manifest.has("multilabel")) {
      a.warnings.push_back("imagenet-a mode ignores the multilabel file");
    }
    files.problematic = manifest.resolve("problematic");
    files.non_prototypical = manifest.resolve("non_prototypical");
    files.real_labels = manifest.resolve("real_labels");
    a.store = AnnotationStore::load(files, a.space);
    if (a.store->ignored_problematic()) {
      a.warnings.push_back(std::to_string(a.store->ignored_problematic()) +
                           " problematic ids are not in the evaluation set");
    }
  } else {
    for (auto key : {"multilabel", "problematic", "non_prototypical", "real_labels"}) {
      if (manifest.has(key)) fail(ErrorKind::Validation, std::string("'") + key + "' requires 'ground_truth'");
    }
  }

  auto pair_of = [&](std::string_view bin, std::string_view ids) -> std::optional<EmbeddingMatrix> {
    if (manifest.has(bin) != manifest.has(ids)) {
      fail(ErrorKind::Validation, "manifest must give both '" + std::string(bin) + "' and '" + std::string(ids) + "'");
    }
    if (!manifest.has(bin)) return std::nullopt;
    return load_embeddings(manifest.resolve(bin), manifest.resolve(ids));
  };
  if (auto ref = pair_of("ref_embeddings", "ref_ids")) {
    if (manifest.has("ref_labels")) {
      std::map<std::string, SynsetId> labels;
      for (const auto& r : io::read_csv(manifest.resolve("ref_labels"), 2, {"image_id", "label_id"})) {
        labels.emplace(r.fields[0], SynsetId(r.fields[1]));
      }
      a.reference = ReferenceIndex::build(std::move(*ref), a.space, &labels);
    } else {
      a.reference = ReferenceIndex::build(std::move(*ref), a.space);
    }
  }
  a.eval_embeddings = pair_of("eval_embeddings", "eval_ids");
  a.text_embeddings = pair_of("text_embeddings", "text_ids");

  if (a.reference && a.eval_embeddings && a.reference->embeddings.dim() != a.eval_embeddings->dim()) {
    fail(ErrorKind::DimensionMismatch, "reference and evaluation embeddings differ in dimension");
  }
  if (a.text_embeddings && a.eval_embeddings && a.text_embeddings->dim() != a.eval_embeddings->dim()) {
    fail(ErrorKind::DimensionMismatch, "text and evaluation embeddings differ in dimension");
  }
  if (a.text_embeddings) {
    std::size_t missing = 0;
    for (std::uint32_t n = 0; n < a.space.hypernyms().size(); ++n) {
      if (!a.text_embeddings->contains(a.space.hypernyms().id(n).str())) ++missing;
    }
    if (missing) a.warnings.push_back(std::to_string(missing) + " hypernym-graph synsets have no text embedding");
  }
  return a;
}

// Images excluded from pair mining: the explicit list when given, otherwise
// every image of the evaluation set.
inline std::set<ImageId> pair_exclusions(const Assets& a) {
  if (a.manifest.has("pair_exclusions")) {
    auto ids = io::read_list(a.manifest.resolve("pair_exclusions"));
    return {ids.begin(), ids.end()};
  }
  std::set<ImageId> out;
  for (const auto& [img, ann] : a.annotations().images()) out.insert(img);
  return out;
}

inline PairMiningResult mine_pairs(const Assets& a) {
  if (!a.manifest.has("real_labels")) fail(ErrorKind::Validation, "manifest has no 'real_labels' file");
  return extract_pairs(a.annotations().real_labels(), pair_exclusions(a), a.space);
}

inline PairSet pairs_for_classification(Assets& a) {
  if (a.manifest.has("pairs")) return PairSet(read_pairs_csv(a.manifest.resolve("pairs"), a.space));
  if (a.manifest.has("real_labels")) return PairSet(mine_pairs(a).pairs);
  a.warnings.push_back("no pairs or real_labels file: spurious-correlation stage never fires");
  return {};
}

inline CascadeContext make_context(const Assets& a, const PairSet& pairs, std::size_t k_neighbors = 10) {
  CascadeContext ctx;
  ctx.space = &a.space;
  ctx.store = &a.annotations();
  ctx.reference = a.reference ? &*a.reference : nullptr;
  ctx.eval_embeddings = a.eval_embeddings ? &*a.eval_embeddings : nullptr;
  ctx.text_embeddings = a.text_embeddings ? &*a.text_embeddings : nullptr;
  ctx.pairs = &pairs;
  ctx.config.mode = a.mode;
  ctx.config.k_neighbors = k_neighbors;
  return ctx;
}

// Expands a glob (or a directory, meaning every *.csv inside) to sorted paths.
inline std::vector<std::filesystem::path> expand_glob(const std::string& pattern) {
  std::string pat = pattern;
  if (std::filesystem::is_directory(pat)) pat = (std::filesystem::path(pat) / "*.csv").string();
  glob_t g{};
  std::vector<std::filesystem::path> out;
  const int rc = ::glob(pat.c_str(), 0, nullptr, &g);
  if (rc == 0) {
    for (std::size_t i = 0; i < g.gl_pathc; ++i) out.emplace_back(g.gl_pathv[i]);
  }
  globfree(&g);
  if (rc != 0 && rc != GLOB_NOMATCH) fail(ErrorKind::Io, "glob failed for " + pattern);
  std::sort(out.begin(), out.end());
  return out;
}

// Model name = file name without its extension.
inline std::map<std::string, Predictions> load_prediction_files(const std::vector<std::filesystem::path>& files) {
  std::map<std::string, Predictions> out;
  for (const auto& f : files) {
    const auto model = f.stem().string();
    if (!out.emplace(model, read_predictions_csv(f)).second) fail(ErrorKind::Validation, "duplicate model " + model);
  }
  return out;
}

struct ClassifyRun {
  std::vector<ModelClassification> models;
};

inline std::string summary_to_csv(const std::vector<ModelClassification>& models) {
  io::CsvWriter w;
  w.row("model", "evaluated", "correct", "overlap_correct", "multi_label_correct", "fine_grained", "fine_grained_oov",
        "non_prototypical", "spurious_correlation", "model_failure", "skipped", "missing_predictions",
        "unknown_images", "problematic_ignored");
  for (const auto& m : models) {
    w.row(m.model, m.evaluated, m.correct, m.counts[0], m.counts[1], m.counts[2], m.counts[3], m.counts[4],
          m.counts[5], m.counts[6], m.skipped.size(), m.missing_predictions, m.unknown_images, m.problematic_ignored);
  }
  return w.str();
}

inline nlohmann::json provenance_json(const Assets& a, const std::string& command) {
  return {{"command", command},
          {"manifest_sha256", a.manifest.sha256},
          {"dataset_mode", std::string(to_string(a.mode))},
          {"embedding_provenance", a.manifest.embedding_provenance},
          {"unclear_labels_anchor", true}};
}

// Classifies every model and writes <model>.records.csv, errors.csv,
// summary.csv and provenance.json into out_dir. Output bytes do not depend on jobs.
inline ClassifyRun run_classify(Assets& a, const std::map<std::string, Predictions>& predictions,
                                const std::filesystem::path& out_dir, std::size_t jobs, std::size_t k_neighbors = 10) {
  const auto pairs = pairs_for_classification(a);
  const auto ctx = make_context(a, pairs, k_neighbors);
  ClassifyRun run;
  io::CsvWriter errors;
  errors.row("model", "image_id", "error", "message");
  for (const auto& [model, preds] : predictions) {
    auto result = classify_model(model, preds, ctx, jobs);
    io::write_file(out_dir / (model + ".records.csv"), records_to_csv(result.records));
    for (const auto& s : result.skipped) errors.row(model, s.image, to_string(s.kind), s.message);
    run.models.push_back(std::move(result));
  }
  io::write_file(out_dir / "errors.csv", errors.str());
  io::write_file(out_dir / "summary.csv", summary_to_csv(run.models));
  auto prov = provenance_json(a, "classify");
  prov["k_neighbors"] = k_neighbors;
  prov["pair_count"] = pairs.pairs().size();
  io::write_file(out_dir / "provenance.json", prov.dump(1) + "\n");
  return run;
}

inline std::map<std::string, std::vector<ErrorRecord>> load_records_dir(const std::filesystem::path& dir) {
  std::map<std::string, std::vector<ErrorRecord>> out;
  for (const auto& f : expand_glob((dir / "*.records.csv").string())) {
    for (auto& r : read_records_csv(f)) out[r.model].push_back(std::move(r));
  }
  return out;
}

struct ReportOptions {
  std::optional<double> split_at;
  SizeThresholds thresholds;
};

struct ReportRun {
  std::vector<ModelReport> reports;
  std::vector<NamedFit> fits;
  std::vector<std::string> skipped_series;
};

// Writes report.csv, models.csv, fits.csv and report_meta.json. Fits regress
// each (group, category) portion, and the model-failure portion of MLE, on
// MLA (top-1 in ImageNet-A mode) with one point per model.
inline ReportRun run_report(const Assets& a, const std::map<std::string, std::vector<ErrorRecord>>& records,
                            const std::map<std::string, Predictions>& predictions,
                            const std::map<std::string, ModelMeta>& metas, const std::filesystem::path& out_dir,
                            const ReportOptions& opts = {}) {
  ReportRun run;
  run.reports = aggregate(records, predictions, metas, a.annotations(), a.space, a.mode, opts.thresholds);

  auto try_fit = [&](const std::string& series, const std::vector<FitPoint>& pts) {
    try {
      auto fit = trend_fit(pts, opts.split_at);
      run.fits.push_back(NamedFit{series, std::move(fit)});
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::InvalidArgument && e.kind() != ErrorKind::DegenerateFit) throw;
      run.skipped_series.push_back(series + ": " + e.what());
    }
  };
  for (std::size_t g = 0; g < kReportGroups; ++g) {
    for (std::size_t c = 0; c < 7; ++c) {
      std::vector<FitPoint> pts;
      for (const auto& r : run.reports) pts.push_back({r.mla, r.cells[g][c].portion});
      try_fit(std::string(report_group_name(g)) + "/" + std::string(to_string(static_cast<Category>(c))), pts);
    }
  }
  {
    std::vector<FitPoint> pts;
    for (const auto& r : run.reports) pts.push_back({r.mla, r.mlf_portion_of_mle});
    try_fit("all/mlf_portion_of_mle", pts);
  }

  io::write_file(out_dir / "report.csv", report_to_csv(run.reports));
  io::write_file(out_dir / "models.csv", models_summary_csv(run.reports));
  io::write_file(out_dir / "fits.csv", fits_to_csv(run.fits));
  auto meta = provenance_json(a, "report");
  meta["fit_weighting"] = "equal";
  meta["fit_x"] = a.mode == DatasetMode::ImageNet ? "mla" : "top1_acc";
  meta["confidence"] = 0.95;
  if (opts.split_at) meta["split_at"] = *opts.split_at;
  meta["size_thresholds"] = {{"medium_from", opts.thresholds.medium_from},
                             {"large_from", opts.thresholds.large_from},
                             {"xlarge_above", opts.thresholds.xlarge_above}};
  meta["skipped_series"] = run.skipped_series;
  io::write_file(out_dir / "report_meta.json", meta.dump(1) + "\n");
  return run;
}

// Human-readable validation summary.
inline std::string describe_assets(const Assets& a) {
  std::ostringstream os;
  const auto counts = a.space.group_counts();
  os << "mode: " << to_string(a.mode) << "\n";
  os << "classes: " << a.space.size() << " (organism " << counts[0] << ", artifact " << counts[1] << ", other "
     << counts[2] << ")\n";
  os << "hypernym graph: " << a.space.hypernyms().size() << " synsets\n";
  const auto st = superclass_stats(a.space);
  os.setf(std::ios::fixed);
  os.precision(1);
  os << "superclasses: " << st.count << " (sizes " << st.min_size << "-" << st.max_size << ", mean " << st.mean_size
     << ", median " << st.median_size << "), unclassified classes: " << st.unclassified << "\n";
  for (std::size_t g = 0; g < 3; ++g) {
    os << "  superclasses with " << to_string(kGroups[g]) << ": " << st.per_group[g].count << " (mean size "
       << st.per_group[g].mean_size << ")\n";
  }
  if (a.store) {
    os << "evaluation images: " << a.store->images().size() << " (" << a.store->usable_count() << " usable)\n";
    os << "non-prototypical images: " << a.store->non_prototypical().size() << "\n";
    os << "real-label images: " << a.store->real_labels().size() << "\n";
  }
  if (a.reference) os << "reference embeddings: " << a.reference->embeddings.size() << " x " << a.reference->embeddings.dim() << "\n";
  if (a.eval_embeddings) os << "evaluation embeddings: " << a.eval_embeddings->size() << " x " << a.eval_embeddings->dim() << "\n";
  if (a.text_embeddings) os << "text embeddings: " << a.text_embeddings->size() << " x " << a.text_embeddings->dim() << "\n";
  for (const auto& w : a.warnings) os << "warning: " << w << "\n";
  return os.str();
}

}  // namespace erratlas
